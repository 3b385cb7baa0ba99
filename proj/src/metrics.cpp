#include "uatest/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <fmt/format.h>

namespace uatest {

std::string_view to_string(MetricKind kind) {
    switch (kind) {
    case MetricKind::Diff: return "DIFF";
    case MetricKind::Ratio: return "RATIO";
    case MetricKind::Nmi: return "NMI";
    case MetricKind::Corr: return "CORR";
    case MetricKind::Reg: return "REG";
    }
    return "NMI";
}

MetricKind parse_metric(std::string_view text) {
    std::string t(text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::toupper(c); });
    if (t == "DIFF") return MetricKind::Diff;
    if (t == "RATIO") return MetricKind::Ratio;
    if (t == "NMI") return MetricKind::Nmi;
    if (t == "CORR") return MetricKind::Corr;
    if (t == "REG") return MetricKind::Reg;
    throw UsageError(fmt::format("unknown metric '{}'", text));
}

std::string metric_label(const MetricSpec& spec) {
    std::string base(to_string(spec.kind));
    return spec.conditioning ? "COND-" + base : base;
}

ContingencyTable ContingencyTable::transposed() const {
    return {counts.transpose(), protected_labels, output_labels};
}

ContingencyTable contingency(const DatasetView& view, std::string_view protected_attr, std::string_view output_attr) {
    const auto& d = view.data();
    const auto& sa = d.attribute(protected_attr);
    const auto& oa = d.attribute(output_attr);
    if (!sa.is_discrete() || !oa.is_discrete())
        throw DataError(fmt::format("contingency requires categorical attributes ('{}', '{}')", sa.name, oa.name));
    const auto& sc = d.column(protected_attr).codes;
    const auto& oc = d.column(output_attr).codes;
    ContingencyTable t;
    t.counts = CountMatrix::Zero(static_cast<Eigen::Index>(oa.categories.size()),
                                 static_cast<Eigen::Index>(sa.categories.size()));
    t.output_labels = oa.categories;
    t.protected_labels = sa.categories;
    for (auto r : view.rows()) {
        if (sc[r] < 0 || oc[r] < 0) continue;
        ++t.counts(oc[r], sc[r]);
    }
    return t;
}

// --- Frequency metrics ------------------------------------------------------------

namespace {

double entropy(const Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>& marginal, double n) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < marginal.size(); ++i) {
        if (marginal(i) == 0) continue;
        const double p = static_cast<double>(marginal(i)) / n;
        h -= p * std::log(p);
    }
    return h;
}

bool binary_table(const CountMatrix& c, std::int32_t target, std::int32_t a, std::int32_t b) {
    return c.rows() == 2 && c.cols() == 2 && target >= 0 && target < 2 && a >= 0 && a < 2 && b >= 0 && b < 2 && a != b;
}

} // namespace

std::optional<double> try_mutual_information(const CountMatrix& counts, bool normalized) {
    const auto n_int = counts.sum();
    if (n_int <= 0) return std::nullopt;
    const double n = static_cast<double>(n_int);
    const Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> rows = counts.rowwise().sum();
    const Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> cols = counts.colwise().sum().transpose();
    if ((rows.array() > 0).count() < 2 || (cols.array() > 0).count() < 2) return std::nullopt;
    double mi = 0.0;
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        for (Eigen::Index j = 0; j < counts.cols(); ++j) {
            const auto nij = counts(i, j);
            if (nij == 0) continue;
            const double v = static_cast<double>(nij);
            mi += (v / n) * std::log(v * n / (static_cast<double>(rows(i)) * static_cast<double>(cols(j))));
        }
    }
    mi = std::max(0.0, mi);
    if (!normalized) return mi;
    const double h = std::min(entropy(rows, n), entropy(cols, n));
    return std::clamp(mi / h, 0.0, 1.0);
}

std::optional<double> try_difference(const CountMatrix& c, std::int32_t target, std::int32_t a, std::int32_t b) {
    if (!binary_table(c, target, a, b)) return std::nullopt;
    const auto na = c.col(a).sum();
    const auto nb = c.col(b).sum();
    if (na == 0 || nb == 0) return std::nullopt;
    return static_cast<double>(c(target, a)) / static_cast<double>(na) -
           static_cast<double>(c(target, b)) / static_cast<double>(nb);
}

std::optional<double> try_ratio(const CountMatrix& c, std::int32_t target, std::int32_t a, std::int32_t b) {
    if (!binary_table(c, target, a, b)) return std::nullopt;
    const auto na = c.col(a).sum();
    const auto nb = c.col(b).sum();
    if (na == 0 || nb == 0 || c(target, b) == 0) return std::nullopt;
    const double pa = static_cast<double>(c(target, a)) / static_cast<double>(na);
    const double pb = static_cast<double>(c(target, b)) / static_cast<double>(nb);
    return pa / pb - 1.0;
}

MetricValue mutual_information(const ContingencyTable& table, bool normalized) {
    auto v = try_mutual_information(table.counts, normalized);
    if (!v) throw MetricError("no variation: mutual information needs two non-empty rows and columns");
    return {MetricKind::Nmi, *v};
}

MetricValue binary_difference(const ContingencyTable& table, std::int32_t target, std::int32_t group_a,
                              std::int32_t group_b) {
    if (!binary_table(table.counts, target, group_a, group_b))
        throw MetricError("difference metric requires a 2x2 table and two distinct groups");
    auto v = try_difference(table.counts, target, group_a, group_b);
    if (!v) throw MetricError("empty group column");
    return {MetricKind::Diff, *v};
}

MetricValue binary_ratio(const ContingencyTable& table, std::int32_t target, std::int32_t group_a,
                         std::int32_t group_b) {
    if (!binary_table(table.counts, target, group_a, group_b))
        throw MetricError("ratio metric requires a 2x2 table and two distinct groups");
    auto v = try_ratio(table.counts, target, group_a, group_b);
    if (!v) throw MetricError("undefined ratio: reference group proportion is zero");
    return {MetricKind::Ratio, *v};
}

// --- Correlation ----------------------------------------------------------------------

std::optional<double> try_pearson(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 3) return std::nullopt;
    const auto [xlo, xhi] = std::minmax_element(x.begin(), x.end());
    const auto [ylo, yhi] = std::minmax_element(y.begin(), y.end());
    if (*xlo == *xhi || *ylo == *yhi) return std::nullopt;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

MetricValue pearson_correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw MetricError("correlation columns differ in length");
    if (x.size() < 3) throw MetricError("correlation needs at least three rows");
    auto v = try_pearson(x, y);
    if (!v) throw MetricError("constant column: correlation undefined");
    return {MetricKind::Corr, *v};
}

// --- Regression -----------------------------------------------------------------------

std::vector<std::size_t> RegressionScores::ranking() const {
    const Eigen::VectorXd s = scores();
    std::vector<std::size_t> order(static_cast<std::size_t>(s.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return s(static_cast<Eigen::Index>(a)) > s(static_cast<Eigen::Index>(b));
    });
    return order;
}

namespace {

double penalized_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& beta, double l2) {
    const Eigen::VectorXd eta = x * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        // log(1 + e^eta) computed without overflow
        const double e = eta(i);
        const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
        ll += y(i) * e - softplus;
    }
    return ll - 0.5 * l2 * beta.tail(beta.size() - 1).squaredNorm();
}

} // namespace

RegressionScores logistic_label_scores(const Eigen::MatrixXd& indicators, std::span<const std::int32_t> protected_group,
                                       double l2, std::vector<std::string> labels) {
    const Eigen::Index n = indicators.rows();
    const Eigen::Index d = indicators.cols();
    if (d < 1) throw MetricError("regression needs at least one label");
    if (static_cast<std::size_t>(n) != protected_group.size()) throw MetricError("label matrix and protected column differ in length");
    if (!(l2 > 0.0)) throw MetricError("regression penalty must be positive");
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto g = protected_group[static_cast<std::size_t>(i)];
        if (g != 0 && g != 1) throw MetricError("regression requires a binary protected attribute");
        y(i) = g;
    }
    if (y.sum() == 0.0 || y.sum() == static_cast<double>(n))
        throw MetricError("no variation: protected attribute takes a single value");
    if (labels.empty())
        for (Eigen::Index j = 0; j < d; ++j) labels.push_back(fmt::format("label{}", j));

    Eigen::MatrixXd x(n, d + 1);
    x.col(0).setOnes();
    x.rightCols(d) = indicators;
    Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, l2);
    penalty(0) = 0.0;

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
    Eigen::MatrixXd hessian(d + 1, d + 1);
    auto curvature = [&](const Eigen::VectorXd& b, Eigen::VectorXd& grad) {
        const Eigen::VectorXd eta = x * b;
        Eigen::VectorXd p(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double e = eta(i);
            p(i) = e >= 0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
        }
        const Eigen::VectorXd w = p.array() * (1.0 - p.array());
        grad = x.transpose() * (y - p) - penalty.cwiseProduct(b);
        hessian = x.transpose() * w.asDiagonal() * x;
        hessian.diagonal() += penalty;
    };

    RegressionScores out;
    out.labels = std::move(labels);
    Eigen::VectorXd grad(d + 1);
    double ll = penalized_loglik(x, y, beta, l2);
    for (int it = 1; it <= 100; ++it) {
        out.iterations = it;
        curvature(beta, grad);
        Eigen::VectorXd step = hessian.ldlt().solve(grad);
        // Step halving keeps every iterate an ascent step on the penalized likelihood.
        double scale = 1.0;
        Eigen::VectorXd next = beta + step;
        double next_ll = penalized_loglik(x, y, next, l2);
        while (next_ll < ll - 1e-12 && scale > 1e-6) {
            scale *= 0.5;
            next = beta + scale * step;
            next_ll = penalized_loglik(x, y, next, l2);
        }
        const double moved = (next - beta).cwiseAbs().maxCoeff();
        beta = next;
        ll = next_ll;
        if (moved < 1e-8) break;
    }
    curvature(beta, grad);
    const Eigen::MatrixXd cov = hessian.ldlt().solve(Eigen::MatrixXd::Identity(d + 1, d + 1));
    out.intercept = beta(0);
    out.coefficients = beta.tail(d);
    out.std_errors = cov.diagonal().tail(d).cwiseMax(0.0).cwiseSqrt();
    return out;
}

LabelIndicators label_indicators(const DatasetView& view, std::string_view output_attr, char separator) {
    const auto& d = view.data();
    const auto& a = d.attribute(output_attr);
    if (a.kind != AttributeKind::Categorical)
        throw DataError(fmt::format("label-set output '{}' must be categorical text", a.name));
    // Parse each distinct category once.
    std::vector<std::vector<std::size_t>> per_category(a.categories.size());
    LabelIndicators out;
    std::unordered_map<std::string, std::size_t> index;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(' ');
        if (b == std::string::npos) return std::string{};
        const auto e = s.find_last_not_of(' ');
        return s.substr(b, e - b + 1);
    };
    // First-appearance order over the rows of the view.
    std::vector<bool> parsed(a.categories.size(), false);
    const auto& codes = d.column(output_attr).codes;
    for (auto r : view.rows()) {
        const auto code = codes[r];
        if (code < 0) throw DataError(fmt::format("missing label set in '{}'", a.name));
        const auto c = static_cast<std::size_t>(code);
        if (parsed[c]) continue;
        parsed[c] = true;
        std::string text = a.categories[c];
        std::size_t start = 0;
        while (start <= text.size()) {
            auto end = text.find(separator, start);
            if (end == std::string::npos) end = text.size();
            auto label = trim(text.substr(start, end - start));
            if (!label.empty()) {
                auto [it, inserted] = index.emplace(label, out.labels.size());
                if (inserted) out.labels.push_back(label);
                per_category[c].push_back(it->second);
            }
            start = end + 1;
        }
    }
    out.indicators = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(view.size()),
                                           static_cast<Eigen::Index>(out.labels.size()));
    Eigen::Index i = 0;
    for (auto r : view.rows()) {
        for (auto l : per_category[static_cast<std::size_t>(codes[r])]) out.indicators(i, static_cast<Eigen::Index>(l)) = 1.0;
        ++i;
    }
    return out;
}

// --- Samples ----------------------------------------------------------------------------

CountMatrix AssociationSample::counts() const {
    CountMatrix c = CountMatrix::Zero(o_levels, s_levels);
    for (std::size_t i = 0; i < s.size(); ++i) ++c(o[i], s[i]);
    return c;
}

ContingencyTable AssociationSample::table() const {
    if (scalar()) throw MetricError("contingency table requires discrete protected and output attributes");
    return {counts(), o_labels, s_labels};
}

AssociationSample make_sample(const DatasetView& view, std::string_view protected_attr, std::string_view output_attr,
                              const MetricSpec& spec) {
    const auto& d = view.data();
    const auto& sa = d.attribute(protected_attr);
    const auto& oa = d.attribute(output_attr);
    AssociationSample out;
    const auto rows = view.rows();
    auto scalar_of = [&](const AttributeSchema& a, std::string_view name, std::vector<double>& dst) {
        const auto& col = d.column(name);
        dst.resize(rows.size());
        if (a.kind == AttributeKind::Continuous) {
            for (std::size_t i = 0; i < rows.size(); ++i) dst[i] = col.values[rows[i]];
        } else if (a.kind == AttributeKind::Ordinal || a.categories.size() == 2) {
            for (std::size_t i = 0; i < rows.size(); ++i) dst[i] = col.codes[rows[i]];
        } else {
            throw MetricError(fmt::format("CORR requires a scalar or binary attribute; '{}' has {} categories", a.name,
                                          a.categories.size()));
        }
    };
    auto codes_of = [&](const AttributeSchema& a, std::string_view name, std::vector<std::int32_t>& dst) {
        if (!a.is_discrete())
            throw MetricError(fmt::format("{} requires a categorical attribute; '{}' is continuous",
                                          to_string(spec.kind), a.name));
        const auto& col = d.column(name);
        dst.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) dst[i] = col.codes[rows[i]];
    };
    if (spec.kind == MetricKind::Corr) {
        scalar_of(sa, protected_attr, out.x);
        scalar_of(oa, output_attr, out.y);
    } else if (spec.kind == MetricKind::Reg) {
        throw MetricError("REG is evaluated on label sets, not on a protected/output pair");
    } else {
        codes_of(sa, protected_attr, out.s);
        codes_of(oa, output_attr, out.o);
        out.s_levels = static_cast<std::int32_t>(sa.categories.size());
        out.o_levels = static_cast<std::int32_t>(oa.categories.size());
        out.s_labels = sa.categories;
        out.o_labels = oa.categories;
    }
    if (spec.conditioning) {
        const auto& ea = d.attribute(*spec.conditioning);
        if (!ea.is_discrete())
            throw MetricError(fmt::format("explanatory attribute '{}' must be categorical", ea.name));
        const auto& col = d.column(*spec.conditioning);
        out.strata.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) out.strata[i] = col.codes[rows[i]];
        out.strata_levels = static_cast<std::int32_t>(ea.categories.size());
        out.strata_labels = ea.categories;
    }
    for (auto v : out.s)
        if (v < 0) throw DataError("sample contains missing protected values");
    for (auto v : out.o)
        if (v < 0) throw DataError("sample contains missing output values");
    for (auto v : out.strata)
        if (v < 0) throw DataError("sample contains missing explanatory values");
    return out;
}

namespace {

std::optional<double> unconditional(const MetricSpec& spec, const AssociationSample& sample) {
    switch (spec.kind) {
    case MetricKind::Nmi: return try_mutual_information(sample.counts(), true);
    case MetricKind::Diff: return try_difference(sample.counts(), spec.target, spec.group_a, spec.group_b);
    case MetricKind::Ratio: return try_ratio(sample.counts(), spec.target, spec.group_a, spec.group_b);
    case MetricKind::Corr: return try_pearson(sample.x, sample.y);
    case MetricKind::Reg: return std::nullopt;
    }
    return std::nullopt;
}

std::optional<double> from_counts(const MetricSpec& spec, const CountMatrix& c) {
    switch (spec.kind) {
    case MetricKind::Nmi: return try_mutual_information(c, true);
    case MetricKind::Diff: return try_difference(c, spec.target, spec.group_a, spec.group_b);
    case MetricKind::Ratio: return try_ratio(c, spec.target, spec.group_a, spec.group_b);
    default: return std::nullopt;
    }
}

} // namespace

ConditionalValue conditional_metric(const AssociationSample& sample, const MetricSpec& spec, std::size_t min_stratum) {
    if (!sample.conditioned()) throw MetricError("conditional metric requires an explanatory attribute");
    const auto levels = static_cast<std::size_t>(sample.strata_levels);
    ConditionalValue out;
    out.aggregate.kind = spec.kind;
    out.strata.resize(levels);
    std::vector<std::size_t> sizes(levels, 0);
    for (auto k : sample.strata) ++sizes[static_cast<std::size_t>(k)];

    if (sample.scalar()) {
        std::vector<std::vector<double>> xs(levels), ys(levels);
        for (std::size_t i = 0; i < sample.x.size(); ++i) {
            const auto k = static_cast<std::size_t>(sample.strata[i]);
            xs[k].push_back(sample.x[i]);
            ys[k].push_back(sample.y[i]);
        }
        for (std::size_t k = 0; k < levels; ++k)
            if (sizes[k] >= 2) out.strata[k].value = try_pearson(xs[k], ys[k]);
    } else {
        std::vector<CountMatrix> tables(levels, CountMatrix::Zero(sample.o_levels, sample.s_levels));
        for (std::size_t i = 0; i < sample.s.size(); ++i)
            ++tables[static_cast<std::size_t>(sample.strata[i])](sample.o[i], sample.s[i]);
        for (std::size_t k = 0; k < levels; ++k)
            if (sizes[k] >= 2) out.strata[k].value = from_counts(spec, tables[k]);
    }

    std::size_t kept = 0;
    for (std::size_t k = 0; k < levels; ++k) {
        auto& st = out.strata[k];
        st.label = sample.strata_labels.empty() ? std::to_string(k) : sample.strata_labels[k];
        st.size = sizes[k];
        st.included = st.value.has_value() && sizes[k] >= std::max<std::size_t>(min_stratum, 2);
        if (st.included) kept += sizes[k];
    }
    if (kept == 0) throw MetricError("no stratum meets the minimum stratum size");
    double agg = 0.0;
    for (const auto& st : out.strata)
        if (st.included) agg += (static_cast<double>(st.size) / static_cast<double>(kept)) * *st.value;
    out.aggregate.estimate = agg;
    return out;
}

ConditionalValue conditional_metric(const DatasetView& view, std::string_view protected_attr,
                                    std::string_view output_attr, MetricSpec spec, std::string_view explanatory,
                                    std::size_t min_stratum) {
    spec.conditioning = std::string(explanatory);
    return conditional_metric(make_sample(view, protected_attr, output_attr, spec), spec, min_stratum);
}

std::optional<double> try_estimate(const MetricSpec& spec, const AssociationSample& sample, std::size_t min_stratum) {
    if (!sample.conditioned()) return unconditional(spec, sample);
    try {
        return conditional_metric(sample, spec, min_stratum).aggregate.estimate;
    } catch (const MetricError&) {
        return std::nullopt;
    }
}

double estimate(const MetricSpec& spec, const AssociationSample& sample, std::size_t min_stratum) {
    if (sample.conditioned()) return conditional_metric(sample, spec, min_stratum).aggregate.estimate;
    switch (spec.kind) {
    case MetricKind::Nmi: return mutual_information(sample.table(), true).estimate;
    case MetricKind::Diff: return binary_difference(sample.table(), spec.target, spec.group_a, spec.group_b).estimate;
    case MetricKind::Ratio: return binary_ratio(sample.table(), spec.target, spec.group_a, spec.group_b).estimate;
    case MetricKind::Corr: return pearson_correlation(sample.x, sample.y).estimate;
    case MetricKind::Reg: break;
    }
    throw MetricError("REG has no single point estimate");
}

} // namespace uatest
