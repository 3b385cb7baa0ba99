#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "uatest/metrics.hpp"

namespace uatest {

struct StatConfig {
    double conf = 0.95;
    /// Contexts with at most this many rows use permutation tests and
    /// bootstrap intervals instead of asymptotic approximations.
    std::size_t small_sample = 1000;
    std::size_t permutations = 1000;
    std::size_t bootstraps = 1000;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const StatConfig&) const = default;
};

enum class TestMethod { Asymptotic, Resampling };

std::string_view to_string(TestMethod method);
TestMethod parse_method(std::string_view text);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(const Interval& other) const { return lo <= other.lo && other.hi <= hi; }
    double width() const { return hi - lo; }
    bool operator==(const Interval&) const = default;
};

/// Recipe for an interval at an arbitrary confidence level, retained so the
/// multiple-testing pass can widen intervals after the fact.
struct IntervalModel {
    enum class Kind { Wald, FisherZ, LogRatio, Percentile };

    Kind kind = Kind::Wald;
    double estimate = 0.0;
    /// Wald: estimate; FisherZ: atanh(r); LogRatio: log(1 + ratio).
    double center = 0.0;
    double scale = 0.0;
    double lower_limit = -1.0;
    double upper_limit = 1.0;
    /// Sorted bootstrap replicates (Percentile only).
    std::vector<double> replicates;

    Interval at(double level) const;
};

struct TestedMetric {
    MetricValue value;
    std::size_t n = 0;
    Interval ci;
    double p_value = 1.0;
    TestMethod method = TestMethod::Asymptotic;
    Interval corrected_ci;
    double corrected_p = 1.0;
    IntervalModel model;

    /// Compares reported quantities; the interval recipe is not compared.
    bool operator==(const TestedMetric& o) const {
        return value == o.value && n == o.n && ci == o.ci && p_value == o.p_value && method == o.method &&
               corrected_ci == o.corrected_ci && corrected_p == o.corrected_p;
    }
};

/// p-value and interval for `spec` on `sample`.
TestedMetric test_metric(const AssociationSample& sample, const MetricSpec& spec, const StatConfig& cfg);
TestedMetric test_metric(const DatasetView& view, std::string_view protected_attr, std::string_view output_attr,
                         const MetricSpec& spec, const StatConfig& cfg);

/// Large-sample p-value on a table: G-test (G = 2 N MI) for NMI, pooled
/// two-proportion z-test for DIFF and RATIO.
double asymptotic_p_value(const MetricSpec& spec, const CountMatrix& counts);
/// Two-sided t-test of zero correlation.
double correlation_p_value(double r, std::size_t n);

using Statistic = std::function<std::optional<double>(const AssociationSample&)>;

/// Monte Carlo permutation test. Shuffles the protected column (within strata
/// for conditioned samples) and returns (1 + #{|stat_perm| >= |stat_obs|}) /
/// (1 + n_perm). Permutations on which the statistic is undefined count as
/// extreme.
double permutation_p(const Statistic& statistic, const AssociationSample& sample, std::size_t n_perm,
                     std::uint64_t seed);

/// Exact permutation p-value for an unconditioned 2x2 table: the permutation
/// distribution of the protected labels with both margins fixed is
/// hypergeometric, so the tail is summed rather than sampled.
double exact_permutation_p(const MetricSpec& spec, const CountMatrix& counts);

/// Percentile-bootstrap replicates from row resamples with replacement.
/// Undefined resamples are redrawn up to 10 times, then skipped; throws
/// MetricError("unstable context") when more than half are skipped.
std::vector<double> bootstrap_replicates(const Statistic& statistic, const AssociationSample& sample,
                                         std::size_t n_boot, std::uint64_t seed);
Interval bootstrap_ci(const Statistic& statistic, const AssociationSample& sample, std::size_t n_boot, double conf,
                      std::uint64_t seed);

/// Holm step-down adjusted p-values, in input order.
std::vector<double> holm_bonferroni(std::span<const double> pvalues);

/// Fill corrected_p (Holm over the family) and corrected_ci (Bonferroni level
/// 1 - (1 - conf) / m) for every member.
void apply_corrections(std::span<TestedMetric> family, double conf);
/// Only the interval half of apply_corrections.
void corrected_cis(std::span<TestedMetric> family, double conf);

/// Two-sided normal quantile helper: z such that P(|Z| <= z) = level.
double normal_two_sided_quantile(double level);

} // namespace uatest
