#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "uatest/dataset.hpp"

namespace uatest {

enum class MetricKind { Diff, Ratio, Nmi, Corr, Reg };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric(std::string_view text);

/// DIFF, RATIO and CORR carry a direction; NMI and REG scores do not.
constexpr bool is_signed(MetricKind kind) {
    return kind == MetricKind::Diff || kind == MetricKind::Ratio || kind == MetricKind::Corr;
}

/// A metric together with its binding choices. For DIFF/RATIO the value is
/// Pr(target | group_a) - Pr(target | group_b) (resp. ratio - 1), with all
/// three given as category positions.
struct MetricSpec {
    MetricKind kind = MetricKind::Nmi;
    std::optional<std::string> conditioning;
    std::int32_t target = 1;
    std::int32_t group_a = 0;
    std::int32_t group_b = 1;

    bool operator==(const MetricSpec&) const = default;
};

/// "NMI", or "COND-DIFF" when conditioned on an explanatory attribute.
std::string metric_label(const MetricSpec& spec);

struct MetricValue {
    MetricKind kind = MetricKind::Nmi;
    double estimate = 0.0;

    bool operator==(const MetricValue&) const = default;
};

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Cross-tabulation with outputs on rows and protected groups on columns.
struct ContingencyTable {
    CountMatrix counts;
    std::vector<std::string> output_labels;
    std::vector<std::string> protected_labels;

    std::int64_t total() const { return counts.sum(); }
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> row_totals() const { return counts.rowwise().sum(); }
    Eigen::Matrix<std::int64_t, 1, Eigen::Dynamic> column_totals() const { return counts.colwise().sum(); }
    ContingencyTable transposed() const;

    bool operator==(const ContingencyTable&) const = default;
};

/// Both attributes must be categorical (or ordinal).
ContingencyTable contingency(const DatasetView& view, std::string_view protected_attr, std::string_view output_attr);

MetricValue mutual_information(const ContingencyTable& table, bool normalized);
MetricValue binary_difference(const ContingencyTable& table, std::int32_t target, std::int32_t group_a,
                              std::int32_t group_b);
MetricValue binary_ratio(const ContingencyTable& table, std::int32_t target, std::int32_t group_a,
                         std::int32_t group_b);
MetricValue pearson_correlation(std::span<const double> x, std::span<const double> y);

// Non-throwing variants used inside search and resampling loops; nullopt when
// the metric is undefined on the input.
std::optional<double> try_mutual_information(const CountMatrix& counts, bool normalized);
std::optional<double> try_difference(const CountMatrix& counts, std::int32_t target, std::int32_t a, std::int32_t b);
std::optional<double> try_ratio(const CountMatrix& counts, std::int32_t target, std::int32_t a, std::int32_t b);
std::optional<double> try_pearson(std::span<const double> x, std::span<const double> y);

/// Penalized logistic model Pr[S=1 | b] = logistic(b0 + sum_i beta_i b_i).
struct RegressionScores {
    std::vector<std::string> labels;
    double intercept = 0.0;
    Eigen::VectorXd coefficients;
    Eigen::VectorXd std_errors;
    int iterations = 0;

    /// |beta_i| / stderr_i, the per-label ranking score.
    Eigen::VectorXd scores() const { return coefficients.cwiseAbs().cwiseQuotient(std_errors); }
    /// Label positions sorted by descending score (ties by position).
    std::vector<std::size_t> ranking() const;
};

/// Fit by IRLS with L2 penalty `l2` on the label coefficients (intercept
/// unpenalized); stops after 100 iterations or when no coefficient moves by
/// more than 1e-8. `indicators` is n x d with 0/1 entries; `protected_group`
/// holds 0/1 per row.
RegressionScores logistic_label_scores(const Eigen::MatrixXd& indicators, std::span<const std::int32_t> protected_group,
                                       double l2 = 1e-3, std::vector<std::string> labels = {});

/// Label-set output: each category string lists labels separated by ';'.
/// Returns the label alphabet (first-appearance order) and an n x d 0/1 matrix
/// over the view's rows.
struct LabelIndicators {
    std::vector<std::string> labels;
    Eigen::MatrixXd indicators;
};
LabelIndicators label_indicators(const DatasetView& view, std::string_view output_attr, char separator = ';');

// --- Samples ---------------------------------------------------------------------

/// Compact per-row copy of the protected/output pair (and optional explanatory
/// strata) for one view. Discrete codes feed DIFF/RATIO/NMI; scalar values
/// feed CORR (binary discrete attributes are coded 0/1 there).
struct AssociationSample {
    std::vector<std::int32_t> s;
    std::vector<std::int32_t> o;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<std::int32_t> strata;
    std::int32_t s_levels = 0;
    std::int32_t o_levels = 0;
    std::int32_t strata_levels = 0;
    std::vector<std::string> s_labels;
    std::vector<std::string> o_labels;
    std::vector<std::string> strata_labels;

    std::size_t size() const { return s.empty() ? x.size() : s.size(); }
    bool scalar() const { return s.empty(); }
    bool conditioned() const { return !strata.empty(); }

    /// Rows at `idx`, repetitions allowed.
    template <typename Index>
    AssociationSample gather(std::span<const Index> idx) const;

    CountMatrix counts() const;
    ContingencyTable table() const;
};

/// Missing values must already be removed from the view.
AssociationSample make_sample(const DatasetView& view, std::string_view protected_attr, std::string_view output_attr,
                              const MetricSpec& spec);

constexpr std::size_t kMinStratum = 10;

/// Point estimate of `spec` on the sample. Conditioned samples aggregate
/// per-stratum estimates (size-weighted mean over strata of at least
/// `min_stratum` rows).
std::optional<double> try_estimate(const MetricSpec& spec, const AssociationSample& sample,
                                   std::size_t min_stratum = kMinStratum);
double estimate(const MetricSpec& spec, const AssociationSample& sample, std::size_t min_stratum = kMinStratum);

struct StratumValue {
    std::string label;
    std::size_t size = 0;
    std::optional<double> value;
    /// False when below the minimum stratum size or the metric is undefined.
    bool included = false;
};

struct ConditionalValue {
    MetricValue aggregate;
    std::vector<StratumValue> strata;
};

ConditionalValue conditional_metric(const AssociationSample& sample, const MetricSpec& spec,
                                    std::size_t min_stratum = kMinStratum);
ConditionalValue conditional_metric(const DatasetView& view, std::string_view protected_attr,
                                    std::string_view output_attr, MetricSpec spec, std::string_view explanatory,
                                    std::size_t min_stratum = kMinStratum);

// --- implementation details --------------------------------------------------------

template <typename Index>
AssociationSample AssociationSample::gather(std::span<const Index> idx) const {
    AssociationSample out;
    out.s_levels = s_levels;
    out.o_levels = o_levels;
    out.strata_levels = strata_levels;
    out.s_labels = s_labels;
    out.o_labels = o_labels;
    out.strata_labels = strata_labels;
    auto pick = [&](const auto& from, auto& to) {
        if (from.empty()) return;
        to.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) to[i] = from[static_cast<std::size_t>(idx[i])];
    };
    pick(s, out.s);
    pick(o, out.o);
    pick(x, out.x);
    pick(y, out.y);
    pick(strata, out.strata);
    return out;
}

} // namespace uatest
