#include "uatest/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "uatest/random.hpp"

namespace uatest {

namespace {

constexpr std::size_t kMaxRedraws = 10;

double upper_normal(double z) {
    return boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>{}, z));
}

/// Linear-interpolation (type 7) quantile of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Statistic statistic_for(const MetricSpec& spec) {
    return [spec](const AssociationSample& s) { return try_estimate(spec, s); };
}

bool extreme(std::optional<double> v, double observed) {
    if (!v) return true;
    const double a = std::abs(*v);
    return a >= observed - 1e-12 * std::max(1.0, observed);
}

/// Row resampling of an unconditioned discrete sample is a multinomial draw
/// over the contingency cells; this draws whole tables directly.
std::vector<double> table_bootstrap(const MetricSpec& spec, const CountMatrix& counts, std::size_t n_boot,
                                    std::uint64_t seed) {
    const auto n = counts.sum();
    const Eigen::Index cells = counts.size();
    Rng rng(seed);
    std::vector<double> reps;
    reps.reserve(n_boot);
    std::size_t skipped = 0;
    CountMatrix draw(counts.rows(), counts.cols());
    auto one = [&]() -> std::optional<double> {
        std::int64_t remaining = n;
        double mass = 1.0;
        for (Eigen::Index k = 0; k < cells; ++k) {
            const double p = static_cast<double>(counts.data()[k]) / static_cast<double>(n);
            std::int64_t x = 0;
            if (k == cells - 1) {
                x = remaining;
            } else if (remaining > 0 && p > 0.0) {
                const double q = std::clamp(p / mass, 0.0, 1.0);
                x = std::binomial_distribution<std::int64_t>(remaining, q)(rng);
            }
            draw.data()[k] = x;
            remaining -= x;
            mass -= p;
        }
        switch (spec.kind) {
        case MetricKind::Nmi: return try_mutual_information(draw, true);
        case MetricKind::Diff: return try_difference(draw, spec.target, spec.group_a, spec.group_b);
        case MetricKind::Ratio: return try_ratio(draw, spec.target, spec.group_a, spec.group_b);
        default: return std::nullopt;
        }
    };
    for (std::size_t b = 0; b < n_boot; ++b) {
        std::optional<double> v;
        for (std::size_t attempt = 0; attempt <= kMaxRedraws && !v; ++attempt) v = one();
        if (v) reps.push_back(*v);
        else ++skipped;
    }
    if (2 * skipped > n_boot) throw MetricError("unstable context: most bootstrap resamples are degenerate");
    std::sort(reps.begin(), reps.end());
    return reps;
}

IntervalModel percentile_model(double estimate, std::vector<double> replicates, const MetricSpec& spec) {
    IntervalModel m;
    m.kind = IntervalModel::Kind::Percentile;
    m.estimate = estimate;
    m.center = estimate;
    m.replicates = std::move(replicates);
    m.lower_limit = spec.kind == MetricKind::Nmi ? 0.0 : (spec.kind == MetricKind::Ratio ? -1.0 : -1.0);
    m.upper_limit = spec.kind == MetricKind::Ratio ? std::numeric_limits<double>::infinity() : 1.0;
    return m;
}

} // namespace

void StatConfig::validate() const {
    if (!(conf > 0.0 && conf < 1.0)) throw UsageError("confidence level must lie in (0, 1)");
    if (permutations < 100) throw UsageError("permutation count must be at least 100");
    if (bootstraps < 100) throw UsageError("bootstrap count must be at least 100");
}

std::string_view to_string(TestMethod method) {
    return method == TestMethod::Asymptotic ? "asymptotic" : "permutation+bootstrap";
}

TestMethod parse_method(std::string_view text) {
    if (text == "asymptotic") return TestMethod::Asymptotic;
    if (text == "permutation+bootstrap") return TestMethod::Resampling;
    throw DataError(fmt::format("unknown test method '{}'", text));
}

double normal_two_sided_quantile(double level) {
    return boost::math::quantile(boost::math::normal_distribution<double>{}, 0.5 + 0.5 * level);
}

Interval IntervalModel::at(double level) const {
    Interval out;
    switch (kind) {
    case Kind::Wald: {
        const double z = normal_two_sided_quantile(level);
        out = {center - z * scale, center + z * scale};
        break;
    }
    case Kind::FisherZ: {
        const double z = normal_two_sided_quantile(level);
        out = {std::tanh(center - z * scale), std::tanh(center + z * scale)};
        break;
    }
    case Kind::LogRatio: {
        const double z = normal_two_sided_quantile(level);
        out = {std::exp(center - z * scale) - 1.0, std::exp(center + z * scale) - 1.0};
        break;
    }
    case Kind::Percentile: {
        const double alpha = 1.0 - level;
        out = {quantile_sorted(replicates, alpha / 2.0), quantile_sorted(replicates, 1.0 - alpha / 2.0)};
        // Percentile intervals of biased statistics (NMI near zero) can miss
        // the point estimate; keep it inside.
        out.lo = std::min(out.lo, estimate);
        out.hi = std::max(out.hi, estimate);
        break;
    }
    }
    out.lo = std::clamp(out.lo, lower_limit, upper_limit);
    out.hi = std::clamp(out.hi, lower_limit, upper_limit);
    return out;
}

double asymptotic_p_value(const MetricSpec& spec, const CountMatrix& counts) {
    const double n = static_cast<double>(counts.sum());
    switch (spec.kind) {
    case MetricKind::Nmi: {
        const auto mi = try_mutual_information(counts, false);
        if (!mi) return 1.0;
        const auto rows = (counts.rowwise().sum().array() > 0).count();
        const auto cols = (counts.colwise().sum().array() > 0).count();
        const double dof = static_cast<double>((rows - 1) * (cols - 1));
        return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(dof), 2.0 * n * *mi));
    }
    case MetricKind::Diff:
    case MetricKind::Ratio: {
        if (counts.rows() != 2 || counts.cols() != 2) throw MetricError("DIFF and RATIO need a binary protected attribute and a binary output");
        const double na = static_cast<double>(counts.col(spec.group_a).sum());
        const double nb = static_cast<double>(counts.col(spec.group_b).sum());
        if (na == 0.0 || nb == 0.0) return 1.0;
        const double xa = static_cast<double>(counts(spec.target, spec.group_a));
        const double xb = static_cast<double>(counts(spec.target, spec.group_b));
        const double pooled = (xa + xb) / (na + nb);
        const double se0 = std::sqrt(pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb));
        return se0 > 0.0 ? std::min(1.0, 2.0 * upper_normal(std::abs(xa / na - xb / nb) / se0)) : 1.0;
    }
    default: throw MetricError("asymptotic table test supports DIFF, RATIO and NMI");
    }
}

double correlation_p_value(double r, std::size_t n) {
    if (n < 3) return 1.0;
    if (std::abs(r) >= 1.0) return 0.0;
    const double df = static_cast<double>(n) - 2.0;
    const double tstat = r * std::sqrt(df / (1.0 - r * r));
    return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(df), std::abs(tstat)));
}

// --- Resampling ---------------------------------------------------------------------

double permutation_p(const Statistic& statistic, const AssociationSample& sample, std::size_t n_perm,
                     std::uint64_t seed) {
    if (n_perm < 100) throw UsageError("permutation count must be at least 100");
    const auto observed_v = statistic(sample);
    if (!observed_v) throw MetricError("statistic undefined on the observed sample");
    const double observed = std::abs(*observed_v);

    AssociationSample perm = sample;
    // Shuffle groups: whole sample, or one group per explanatory stratum.
    std::vector<std::vector<std::size_t>> groups;
    if (sample.conditioned()) {
        groups.resize(static_cast<std::size_t>(sample.strata_levels));
        for (std::size_t i = 0; i < sample.strata.size(); ++i)
            groups[static_cast<std::size_t>(sample.strata[i])].push_back(i);
    }
    Rng rng(seed);
    auto shuffle_column = [&](auto& column) {
        if (groups.empty()) {
            std::shuffle(column.begin(), column.end(), rng);
            return;
        }
        for (const auto& g : groups) {
            for (std::size_t i = g.size(); i > 1; --i) {
                const auto j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
                std::swap(column[g[i - 1]], column[g[j]]);
            }
        }
    };
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n_perm; ++k) {
        if (perm.scalar()) shuffle_column(perm.x);
        else shuffle_column(perm.s);
        if (extreme(statistic(perm), observed)) ++hits;
    }
    return static_cast<double>(1 + hits) / static_cast<double>(1 + n_perm);
}

double exact_permutation_p(const MetricSpec& spec, const CountMatrix& counts) {
    if (counts.rows() != 2 || counts.cols() != 2) throw MetricError("exact permutation test needs a 2x2 table");
    const auto evaluate = [&](const CountMatrix& c) -> std::optional<double> {
        switch (spec.kind) {
        case MetricKind::Nmi: return try_mutual_information(c, true);
        case MetricKind::Diff: return try_difference(c, spec.target, spec.group_a, spec.group_b);
        case MetricKind::Ratio: return try_ratio(c, spec.target, spec.group_a, spec.group_b);
        default: throw MetricError("exact permutation test supports DIFF, RATIO and NMI");
        }
    };
    const auto observed_v = evaluate(counts);
    if (!observed_v) throw MetricError("statistic undefined on the observed table");
    const double observed = std::abs(*observed_v);

    // Hold the output row margin and protected column margin fixed; the
    // count in cell (0, 0) is hypergeometric.
    const std::int64_t n = counts.sum();
    const std::int64_t row0 = counts.row(0).sum();
    const std::int64_t col0 = counts.col(0).sum();
    const auto lchoose = [](double a, double b) { return std::lgamma(a + 1) - std::lgamma(b + 1) - std::lgamma(a - b + 1); };
    const double denom = lchoose(static_cast<double>(n), static_cast<double>(col0));
    const std::int64_t lo = std::max<std::int64_t>(0, col0 - (n - row0));
    const std::int64_t hi = std::min(row0, col0);
    double p = 0.0;
    CountMatrix c(2, 2);
    for (std::int64_t x = lo; x <= hi; ++x) {
        c(0, 0) = x;
        c(1, 0) = col0 - x;
        c(0, 1) = row0 - x;
        c(1, 1) = n - row0 - col0 + x;
        if (!extreme(evaluate(c), observed)) continue;
        p += std::exp(lchoose(static_cast<double>(row0), static_cast<double>(x)) +
                      lchoose(static_cast<double>(n - row0), static_cast<double>(col0 - x)) - denom);
    }
    return std::clamp(p, 0.0, 1.0);
}

std::vector<double> bootstrap_replicates(const Statistic& statistic, const AssociationSample& sample,
                                         std::size_t n_boot, std::uint64_t seed) {
    if (n_boot < 100) throw UsageError("bootstrap count must be at least 100");
    const std::size_t n = sample.size();
    if (n == 0) throw MetricError("cannot bootstrap an empty sample");
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> idx(n);
    std::vector<double> reps;
    reps.reserve(n_boot);
    std::size_t skipped = 0;
    for (std::size_t b = 0; b < n_boot; ++b) {
        std::optional<double> v;
        for (std::size_t attempt = 0; attempt <= kMaxRedraws && !v; ++attempt) {
            for (auto& i : idx) i = pick(rng);
            v = statistic(sample.gather(std::span<const std::size_t>(idx)));
        }
        if (v) reps.push_back(*v);
        else ++skipped;
    }
    if (2 * skipped > n_boot) throw MetricError("unstable context: most bootstrap resamples are degenerate");
    std::sort(reps.begin(), reps.end());
    return reps;
}

Interval bootstrap_ci(const Statistic& statistic, const AssociationSample& sample, std::size_t n_boot, double conf,
                      std::uint64_t seed) {
    const auto reps = bootstrap_replicates(statistic, sample, n_boot, seed);
    const double alpha = 1.0 - conf;
    return {quantile_sorted(reps, alpha / 2.0), quantile_sorted(reps, 1.0 - alpha / 2.0)};
}

// --- Testing -------------------------------------------------------------------------

TestedMetric test_metric(const AssociationSample& sample, const MetricSpec& spec, const StatConfig& cfg) {
    cfg.validate();
    // Conditioning on a single stratum is the unconditional test.
    if (sample.conditioned() &&
        std::all_of(sample.strata.begin(), sample.strata.end(), [&](auto v) { return v == sample.strata.front(); })) {
        AssociationSample flat = sample;
        flat.strata.clear();
        flat.strata_levels = 0;
        flat.strata_labels.clear();
        MetricSpec plain = spec;
        plain.conditioning.reset();
        return test_metric(flat, plain, cfg);
    }
    TestedMetric t;
    t.n = sample.size();
    t.value = {spec.kind, estimate(spec, sample)};
    const auto perm_seed = derive_seed(cfg.seed, 1);
    const auto boot_seed = derive_seed(cfg.seed, 2);
    const auto statistic = statistic_for(spec);
    const bool discrete = !sample.scalar();

    if (sample.conditioned() || t.n <= cfg.small_sample) {
        t.method = TestMethod::Resampling;
        if (discrete && !sample.conditioned() && sample.s_levels == 2 && sample.o_levels == 2)
            t.p_value = exact_permutation_p(spec, sample.counts());
        else
            t.p_value = permutation_p(statistic, sample, cfg.permutations, perm_seed);
        auto reps = discrete && !sample.conditioned()
                        ? table_bootstrap(spec, sample.counts(), cfg.bootstraps, boot_seed)
                        : bootstrap_replicates(statistic, sample, cfg.bootstraps, boot_seed);
        t.model = percentile_model(t.value.estimate, std::move(reps), spec);
    } else {
        t.method = TestMethod::Asymptotic;
        const double n = static_cast<double>(t.n);
        switch (spec.kind) {
        case MetricKind::Nmi: {
            const auto counts = sample.counts();
            t.p_value = asymptotic_p_value(spec, counts);
            t.model = percentile_model(t.value.estimate, table_bootstrap(spec, counts, cfg.bootstraps, boot_seed), spec);
            break;
        }
        case MetricKind::Diff:
        case MetricKind::Ratio: {
            const auto c = sample.counts();
            const double na = static_cast<double>(c.col(spec.group_a).sum());
            const double nb = static_cast<double>(c.col(spec.group_b).sum());
            const double xa = static_cast<double>(c(spec.target, spec.group_a));
            const double xb = static_cast<double>(c(spec.target, spec.group_b));
            const double pa = xa / na;
            const double pb = xb / nb;
            t.p_value = asymptotic_p_value(spec, c);
            if (spec.kind == MetricKind::Diff) {
                t.model.kind = IntervalModel::Kind::Wald;
                t.model.center = t.value.estimate;
                t.model.scale = std::sqrt(pa * (1.0 - pa) / na + pb * (1.0 - pb) / nb);
            } else if (xa > 0.0) {
                t.model.kind = IntervalModel::Kind::LogRatio;
                t.model.center = std::log(pa / pb);
                t.model.scale = std::sqrt((1.0 - pa) / xa + (1.0 - pb) / xb);
                t.model.upper_limit = std::numeric_limits<double>::infinity();
            } else {
                t.model = percentile_model(t.value.estimate, table_bootstrap(spec, c, cfg.bootstraps, boot_seed), spec);
            }
            t.model.estimate = t.value.estimate;
            break;
        }
        case MetricKind::Corr: {
            const double r = t.value.estimate;
            t.p_value = correlation_p_value(r, t.n);
            t.model.kind = IntervalModel::Kind::FisherZ;
            t.model.estimate = r;
            t.model.center = std::atanh(std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15));
            t.model.scale = 1.0 / std::sqrt(n - 3.0);
            break;
        }
        case MetricKind::Reg: throw MetricError("REG is not tested directly");
        }
    }
    t.p_value = std::clamp(t.p_value, 0.0, 1.0);
    t.ci = t.model.at(cfg.conf);
    t.corrected_ci = t.ci;
    t.corrected_p = t.p_value;
    return t;
}

TestedMetric test_metric(const DatasetView& view, std::string_view protected_attr, std::string_view output_attr,
                         const MetricSpec& spec, const StatConfig& cfg) {
    return test_metric(make_sample(view, protected_attr, output_attr, spec), spec, cfg);
}

// --- Multiple testing ---------------------------------------------------------------

std::vector<double> holm_bonferroni(std::span<const double> pvalues) {
    const std::size_t m = pvalues.size();
    for (double p : pvalues)
        if (!(p >= 0.0 && p <= 1.0)) throw UsageError("p-values must lie in [0, 1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
    std::vector<double> adjusted(m);
    double running = 0.0;
    for (std::size_t rank = 0; rank < m; ++rank) {
        const double scaled = std::min(1.0, static_cast<double>(m - rank) * pvalues[order[rank]]);
        running = std::max(running, scaled);
        adjusted[order[rank]] = running;
    }
    return adjusted;
}

void corrected_cis(std::span<TestedMetric> family, double conf) {
    if (family.empty()) return;
    const double level = 1.0 - (1.0 - conf) / static_cast<double>(family.size());
    for (auto& t : family) {
        t.corrected_ci = family.size() == 1 ? t.ci : t.model.at(level);
        // Keep the corrected interval a superset even when interpolation
        // between sparse replicates would shrink it.
        t.corrected_ci.lo = std::min(t.corrected_ci.lo, t.ci.lo);
        t.corrected_ci.hi = std::max(t.corrected_ci.hi, t.ci.hi);
    }
}

void apply_corrections(std::span<TestedMetric> family, double conf) {
    std::vector<double> raw;
    raw.reserve(family.size());
    for (const auto& t : family) raw.push_back(t.p_value);
    const auto adjusted = holm_bonferroni(raw);
    for (std::size_t i = 0; i < family.size(); ++i) family[i].corrected_p = adjusted[i];
    corrected_cis(family, conf);
}

} // namespace uatest
