#include "uatest/investigations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "uatest/random.hpp"

namespace uatest {

namespace {

bool is_binary(const AttributeSchema& a) { return a.is_discrete() && a.categories.size() == 2; }
bool is_scalar(const AttributeSchema& a) { return a.kind != AttributeKind::Categorical; }

std::int32_t category_code(const AttributeSchema& a, const std::optional<std::string>& label, std::int32_t fallback) {
    if (!label) return fallback;
    const auto code = a.code_of(*label);
    if (code < 0) throw UsageError(fmt::format("attribute '{}' has no category '{}'", a.name, *label));
    return code;
}

std::vector<std::string> resolve_contextual(const InvestigationSpec& spec, const Dataset& data) {
    std::vector<std::string> out = spec.contextual;
    if (out.empty())
        for (const auto& a : data.schema())
            if (a.role == Role::Contextual) out.push_back(a.name);
    for (const auto& name : out) {
        (void)data.index_of(name);
        const bool clash = std::find(spec.protected_attrs.begin(), spec.protected_attrs.end(), name) !=
                               spec.protected_attrs.end() ||
                           name == spec.output || (spec.explanatory && name == *spec.explanatory) ||
                           (spec.ground_truth && name == *spec.ground_truth);
        if (clash) throw UsageError(fmt::format("attribute '{}' cannot be contextual and play another role", name));
    }
    return out;
}

/// Labels whose indicator columns prepare_dataset added, in column order.
std::vector<std::string> prepared_labels(const Dataset& data, std::string_view output) {
    const std::string prefix = std::string(output) + "[";
    std::vector<std::string> out;
    for (const auto& a : data.schema())
        if (a.name.size() > prefix.size() + 1 && a.name.starts_with(prefix) && a.name.back() == ']')
            out.push_back(a.name.substr(prefix.size(), a.name.size() - prefix.size() - 1));
    return out;
}

void check_spec(const InvestigationSpec& spec) {
    if (spec.protected_attrs.empty()) throw UsageError("at least one protected attribute is required");
    if (spec.output.empty()) throw UsageError("an output attribute is required");
    if (spec.kind == InvestigationKind::Discovery && spec.top_k == 0) throw UsageError("top_k must be at least 1");
    if (spec.kind == InvestigationKind::ErrorProfiling && !spec.ground_truth)
        throw UsageError("error profiling needs a ground-truth attribute");
    spec.tree.validate();
    spec.stats.validate();
}

std::vector<double> five_numbers(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double h = (static_cast<double>(v.size()) - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

struct Task {
    std::size_t section = 0;
    Context context;
    std::optional<std::size_t> node;
    DatasetView view;
};

struct TaskResult {
    std::optional<Finding> finding;
    std::string note;
};

/// Test one context; with `strata`, also test each explanatory stratum.
Finding test_context(const Task& task, const ReportSection& section, const MetricSpec& spec, const StatConfig& cfg,
                     bool strata, const Dataset& data) {
    const auto sample = make_sample(task.view, section.protected_attr, section.output_attr, spec);
    Finding f;
    f.context = task.context;
    f.context_text = describe(task.context, &data);
    f.size = task.view.size();
    f.protected_attr = section.protected_attr;
    f.output_name = section.output_name;
    f.label = section.label;
    f.spec = spec;
    f.node = task.node;
    f.tested = test_metric(sample, spec, cfg);
    if (sample.scalar()) {
        f.deciles = decile_summaries(sample.x, sample.y);
    } else {
        f.table = sample.table();
    }
    const bool several = std::any_of(sample.strata.begin(), sample.strata.end(),
                                     [&](auto v) { return v != sample.strata.front(); });
    if (strata && spec.conditioning && several) {
        MetricSpec plain = spec;
        plain.conditioning.reset();
        for (std::int32_t level = 0; level < sample.strata_levels; ++level) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < sample.strata.size(); ++i)
                if (sample.strata[i] == level) idx.push_back(i);
            if (idx.size() < kMinStratum) continue;
            const auto sub = sample.gather(std::span<const std::size_t>(idx));
            AssociationSample flat = sub;
            flat.strata.clear();
            flat.strata_levels = 0;
            flat.strata_labels.clear();
            StratumFinding sf;
            sf.label = sample.strata_labels[static_cast<std::size_t>(level)];
            sf.size = idx.size();
            StatConfig sub_cfg = cfg;
            sub_cfg.seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(level));
            try {
                sf.tested = test_metric(flat, plain, sub_cfg);
            } catch (const MetricError&) {
                continue;
            }
            if (!flat.scalar()) sf.table = flat.table();
            f.strata.push_back(std::move(sf));
        }
    }
    return f;
}

/// Run the tasks, record drops, apply corrections over the whole family.
void run_family(std::vector<Task>& tasks, ReportModel& report, const StatConfig& cfg, bool strata,
                const std::optional<std::string>& conditioning, const Dataset& data) {
    std::vector<TaskResult> results(tasks.size());
    parallel_for(tasks.size(), [&](std::size_t i) {
        const auto& task = tasks[i];
        const auto& section = report.sections[task.section];
        MetricSpec spec = section.spec;
        spec.conditioning = conditioning;
        StatConfig c = cfg;
        c.seed = derive_seed(cfg.seed, i);
        try {
            results[i].finding = test_context(task, section, spec, c, strata, data);
        } catch (const MetricError& e) {
            if (task.context.empty()) throw;
            results[i].note = fmt::format("context '{}' dropped: {}", describe(task.context, &data), e.what());
        }
    });

    std::vector<TestedMetric> family;
    for (const auto& r : results) {
        if (!r.finding) continue;
        family.push_back(r.finding->tested);
        for (const auto& s : r.finding->strata) family.push_back(s.tested);
    }
    apply_corrections(family, cfg.conf);
    std::size_t k = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        auto& r = results[i];
        if (!r.finding) {
            report.notes.push_back(r.note);
            continue;
        }
        r.finding->tested = family[k++];
        for (auto& s : r.finding->strata) s.tested = family[k++];
        auto& section = report.sections[tasks[i].section];
        if (r.finding->is_global()) section.global = std::move(*r.finding);
        else section.subpopulations.push_back(std::move(*r.finding));
    }
    report.family_size = family.size();
}

ReportModel empty_report(const InvestigationSpec& spec) {
    ReportModel r;
    r.kind = spec.kind;
    r.protected_attrs = spec.protected_attrs;
    r.output = spec.output;
    r.explanatory = spec.explanatory;
    r.conf = spec.stats.conf;
    return r;
}

ReportSection section_for(const TrainedTree& tree) {
    ReportSection s;
    s.protected_attr = tree.protected_attr;
    s.output_attr = tree.output_attr;
    s.output_name = tree.output_name;
    s.label = tree.label;
    s.spec = tree.spec;
    return s;
}

bool is_prefix(const Context& ancestor, const Context& ctx) {
    return ancestor.size() < ctx.size() && std::equal(ancestor.begin(), ancestor.end(), ctx.begin());
}

std::vector<std::string> missing_guard(const ReportSection& s, const std::optional<std::string>& e) {
    std::vector<std::string> attrs{s.protected_attr, s.output_attr};
    if (e) attrs.push_back(*e);
    return attrs;
}

} // namespace

std::string_view to_string(InvestigationKind kind) {
    switch (kind) {
    case InvestigationKind::Testing: return "testing";
    case InvestigationKind::Discovery: return "discovery";
    case InvestigationKind::ErrorProfiling: return "error-profile";
    }
    return "";
}

InvestigationKind parse_investigation(std::string_view text) {
    if (text == "testing") return InvestigationKind::Testing;
    if (text == "discovery") return InvestigationKind::Discovery;
    if (text == "error-profile") return InvestigationKind::ErrorProfiling;
    throw DataError(fmt::format("unknown investigation '{}'", text));
}

std::string_view to_string(ErrorKind kind) { return kind == ErrorKind::Absolute ? "absolute" : "zero_one"; }

ErrorKind parse_error_kind(std::string_view text) {
    if (text == "absolute") return ErrorKind::Absolute;
    if (text == "zero_one") return ErrorKind::ZeroOne;
    throw UsageError(fmt::format("unknown error function '{}' (expected absolute or zero_one)", text));
}

Column compute_error(const Dataset& data, std::string_view prediction, std::string_view truth, ErrorKind kind) {
    const auto& pa = data.attribute(prediction);
    const auto& ta = data.attribute(truth);
    const auto& pc = data.column(prediction);
    const auto& tc = data.column(truth);
    Column out;
    const auto n = static_cast<RowIndex>(data.rows());
    if (kind == ErrorKind::Absolute) {
        if (pa.kind != AttributeKind::Continuous || ta.kind != AttributeKind::Continuous)
            throw MetricError("absolute error needs continuous prediction and ground-truth attributes");
        out.values.resize(n);
        for (RowIndex r = 0; r < n; ++r) out.values[r] = std::abs(pc.values[r] - tc.values[r]);
        return out;
    }
    out.codes.resize(n);
    for (RowIndex r = 0; r < n; ++r) {
        if (pc.missing(r) || tc.missing(r)) {
            out.codes[r] = -1;
            continue;
        }
        if (pa.is_discrete() != ta.is_discrete())
            throw MetricError("zero_one error needs prediction and ground truth of the same type");
        const bool equal = pa.is_discrete() ? pa.categories[static_cast<std::size_t>(pc.codes[r])] ==
                                                  ta.categories[static_cast<std::size_t>(tc.codes[r])]
                                            : pc.values[r] == tc.values[r];
        out.codes[r] = equal ? 0 : 1;
    }
    return out;
}

std::string error_column_name(std::string_view output) { return fmt::format("{}_error", output); }

std::string label_column_name(std::string_view output, std::string_view label) {
    return fmt::format("{}[{}]", output, label);
}

std::shared_ptr<const Dataset> prepare_dataset(const InvestigationSpec& spec, std::shared_ptr<const Dataset> data) {
    check_spec(spec);
    switch (spec.kind) {
    case InvestigationKind::Testing: return data;
    case InvestigationKind::ErrorProfiling: {
        auto column = compute_error(*data, spec.output, *spec.ground_truth, spec.error);
        AttributeSchema schema{error_column_name(spec.output), AttributeKind::Continuous, Role::Output, {}};
        if (spec.error == ErrorKind::ZeroOne) {
            schema.kind = AttributeKind::Categorical;
            schema.categories = {"0", "1"};
        }
        return std::make_shared<const Dataset>(data->with_column(std::move(schema), std::move(column)));
    }
    case InvestigationKind::Discovery: {
        const auto li = label_indicators(DatasetView(data), spec.output);
        const auto& out_col = data->column(spec.output);
        Dataset d = *data;
        for (std::size_t j = 0; j < li.labels.size(); ++j) {
            Column c;
            c.codes.resize(data->rows());
            for (RowIndex r = 0; r < data->rows(); ++r)
                c.codes[r] = out_col.missing(r) ? -1 : static_cast<std::int32_t>(li.indicators(r, static_cast<Eigen::Index>(j)));
            d = d.with_column({label_column_name(spec.output, li.labels[j]), AttributeKind::Categorical, Role::Ignored,
                               {"0", "1"}},
                              std::move(c));
        }
        return std::make_shared<const Dataset>(std::move(d));
    }
    }
    return data;
}

MetricKind select_metric(const AttributeSchema& s, const AttributeSchema& o) {
    if (s.is_discrete() && o.is_discrete()) return is_binary(s) && is_binary(o) ? MetricKind::Diff : MetricKind::Nmi;
    if ((is_scalar(s) || is_binary(s)) && (is_scalar(o) || is_binary(o))) return MetricKind::Corr;
    throw MetricError(fmt::format("no association metric fits protected '{}' ({}) and output '{}' ({})", s.name,
                                  to_string(s.kind), o.name, to_string(o.kind)));
}

MetricSpec bind_metric(const InvestigationSpec& spec, const Dataset& data, std::string_view protected_attr,
                       std::string_view output_attr, std::optional<MetricKind> kind) {
    const auto& s = data.attribute(protected_attr);
    const auto& o = data.attribute(output_attr);
    MetricSpec m;
    m.kind = kind ? *kind : select_metric(s, o);
    if (m.kind == MetricKind::Diff || m.kind == MetricKind::Ratio) {
        if (!is_binary(s) || !is_binary(o))
            throw MetricError(fmt::format("{} needs binary protected and output attributes ('{}' has {} categories, "
                                          "'{}' has {})",
                                          to_string(m.kind), s.name, s.categories.size(), o.name, o.categories.size()));
        const bool raw_output = spec.kind == InvestigationKind::Testing;
        m.target = category_code(o, raw_output ? spec.target : std::nullopt, 1);
        m.group_a = category_code(s, spec.group_a, 0);
        m.group_b = category_code(s, spec.group_b, m.group_a == 0 ? 1 : 0);
        if (m.group_a == m.group_b) throw UsageError("group_a and group_b must differ");
    } else if (m.kind == MetricKind::Corr) {
        if (!(is_scalar(s) || is_binary(s)) || !(is_scalar(o) || is_binary(o)))
            throw MetricError("CORR needs scalar or binary protected and output attributes");
    } else if (m.kind == MetricKind::Nmi) {
        if (!s.is_discrete() || !o.is_discrete()) throw MetricError("NMI needs categorical protected and output attributes");
    } else {
        throw MetricError("REG ranks labels in Discovery and cannot be tested directly");
    }
    return m;
}

double Finding::effect_lower_bound() const {
    const auto& ci = tested.corrected_ci;
    if (is_signed(spec.kind)) return std::max({0.0, ci.lo, -ci.hi});
    return ci.lo;
}

std::vector<DecileSummary> decile_summaries(std::span<const double> x, std::span<const double> y) {
    std::vector<DecileSummary> out;
    const std::size_t n = x.size();
    if (n == 0) return out;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    const std::size_t groups = std::min<std::size_t>(10, n);
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t lo = g * n / groups;
        const std::size_t hi = (g + 1) * n / groups;
        std::vector<double> ys;
        for (std::size_t k = lo; k < hi; ++k) ys.push_back(y[order[k]]);
        const auto f = five_numbers(std::move(ys));
        out.push_back({x[order[lo]], x[order[hi - 1]], hi - lo, {f[0], f[1], f[2], f[3], f[4]}});
    }
    return out;
}

TrainResult train(const InvestigationSpec& spec, const DatasetView& train_view) {
    check_spec(spec);
    const auto& data = train_view.data();
    const auto contextual = resolve_contextual(spec, data);
    TrainResult result;
    result.spec = spec;

    auto grow = [&](TrainedTree t) {
        const auto tree = find_contexts(train_view, t.protected_attr, t.output_attr, t.spec, contextual, spec.tree);
        result.evaluations += tree.evaluations;
        for (const auto& node : tree.nodes) {
            t.contexts.push_back(node.predicates);
            t.parents.push_back(node.parent);
            t.train_sizes.push_back(node.size);
        }
        result.trees.push_back(std::move(t));
    };

    for (const auto& s : spec.protected_attrs) {
        if (spec.kind == InvestigationKind::Discovery) {
            const auto& sa = data.attribute(s);
            if (!is_binary(sa)) throw MetricError(fmt::format("discovery needs a binary protected attribute; '{}' is not", s));
            const auto labels = prepared_labels(data, spec.output);
            if (labels.empty()) throw DataError(fmt::format("output '{}' holds no labels (dataset not prepared?)", spec.output));
            std::vector<std::string> guard{s, spec.output};
            const auto view = drop_missing(train_view, guard);
            const auto rows = view.rows();
            Eigen::MatrixXd b(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(labels.size()));
            for (std::size_t j = 0; j < labels.size(); ++j) {
                const auto& col = data.column(label_column_name(spec.output, labels[j]));
                for (std::size_t i = 0; i < rows.size(); ++i)
                    b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col.codes[rows[i]];
            }
            std::vector<std::int32_t> group(rows.size());
            const auto& scol = data.column(s);
            for (std::size_t i = 0; i < rows.size(); ++i) group[i] = scol.codes[rows[i]];
            const auto fit = logistic_label_scores(b, group, 1e-3, labels);
            const auto order = fit.ranking();
            const auto scores = fit.scores();
            std::vector<LabelScore> kept;
            for (std::size_t k = 0; k < std::min(spec.top_k, order.size()); ++k) {
                const auto j = static_cast<Eigen::Index>(order[k]);
                kept.push_back({labels[order[k]], fit.coefficients(j), fit.std_errors(j), scores(j)});
            }
            for (const auto& ls : kept) {
                TrainedTree t;
                t.protected_attr = s;
                t.output_attr = label_column_name(spec.output, ls.label);
                t.output_name = ls.label;
                t.label = ls.label;
                t.spec = bind_metric(spec, data, s, t.output_attr, MetricKind::Diff);
                grow(std::move(t));
            }
            result.label_rankings.emplace_back(s, std::move(kept));
            continue;
        }
        TrainedTree t;
        t.protected_attr = s;
        t.output_attr = spec.kind == InvestigationKind::ErrorProfiling ? error_column_name(spec.output) : spec.output;
        t.output_name = t.output_attr;
        t.spec = bind_metric(spec, data, s, t.output_attr, spec.metric);
        grow(std::move(t));
    }
    return result;
}

ReportModel validate(const TrainResult& trained, const DatasetView& test) {
    const auto& spec = trained.spec;
    ReportModel report = empty_report(spec);
    report.label_rankings = trained.label_rankings;
    std::vector<Task> tasks;
    for (const auto& tree : trained.trees) {
        report.sections.push_back(section_for(tree));
        const std::size_t section = report.sections.size() - 1;
        const auto base = drop_missing(test, missing_guard(report.sections.back(), spec.explanatory));
        if (base.empty()) throw DataError("test set holds no rows with the protected and output values");
        for (std::size_t k = 0; k < tree.contexts.size(); ++k) {
            auto view = select(base, tree.contexts[k]);
            if (k > 0 && view.size() * 2 < spec.tree.min_size) {
                report.notes.push_back(fmt::format("context '{}' dropped: {} test rows (minimum {})",
                                                   describe(tree.contexts[k], &test.data()), view.size(),
                                                   (spec.tree.min_size + 1) / 2));
                continue;
            }
            tasks.push_back({section, tree.contexts[k], k, std::move(view)});
        }
    }
    run_family(tasks, report, spec.stats, false, spec.explanatory, test.data());
    return report;
}

ReportModel filter_and_rank(ReportModel report) {
    for (auto& section : report.sections) {
        std::vector<std::size_t> order(section.subpopulations.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return section.subpopulations[a].context.size() < section.subpopulations[b].context.size();
        });
        std::vector<const Finding*> survivors;
        if (section.global.significant(report.conf)) survivors.push_back(&section.global);
        std::vector<std::size_t> kept;
        for (const auto i : order) {
            const auto& f = section.subpopulations[i];
            if (!f.significant(report.conf)) continue;
            const double lb = f.effect_lower_bound();
            const bool beats = std::all_of(survivors.begin(), survivors.end(), [&](const Finding* a) {
                return !(a->is_global() || is_prefix(a->context, f.context)) || lb > a->effect_lower_bound();
            });
            if (!beats) continue;
            survivors.push_back(&f);
            kept.push_back(i);
        }
        std::sort(kept.begin(), kept.end());
        std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
            return section.subpopulations[a].effect_lower_bound() > section.subpopulations[b].effect_lower_bound();
        });
        std::vector<Finding> ranked;
        for (const auto i : kept) ranked.push_back(section.subpopulations[i]);
        for (std::size_t r = 0; r < ranked.size(); ++r) ranked[r].rank = r + 1;
        section.global.rank = 0;
        section.subpopulations = std::move(ranked);
    }
    return report;
}

ReportModel investigate(const InvestigationSpec& spec, DataSource& source) {
    const auto trained = train(spec, source.train());
    return filter_and_rank(validate(trained, source.next_test_set()));
}

ReportModel debug_with_explanatory(const TrainResult& trained, const ReportModel& prior, std::string_view explanatory,
                                   DataSource& source) {
    const auto& spec = trained.spec;
    const auto& data = source.full().data();
    const auto& ea = data.attribute(explanatory);
    if (!ea.is_discrete()) throw MetricError(fmt::format("explanatory attribute '{}' must be categorical", ea.name));
    for (const auto& s : prior.sections)
        if (s.protected_attr == explanatory || s.output_attr == explanatory)
            throw UsageError(fmt::format("attribute '{}' cannot be explanatory and protected or output", explanatory));
    const auto test = source.next_test_set();

    ReportModel report = prior;
    report.explanatory = std::string(explanatory);
    report.notes.clear();
    std::vector<Task> tasks;
    const std::optional<std::string> e{std::string(explanatory)};
    for (std::size_t k = 0; k < prior.sections.size(); ++k) {
        auto& section = report.sections[k];
        std::vector<Finding> previous{section.global};
        previous.insert(previous.end(), section.subpopulations.begin(), section.subpopulations.end());
        section.subpopulations.clear();
        const auto base = drop_missing(test, missing_guard(section, e));
        for (const auto& f : previous) {
            auto view = select(base, f.context);
            if (!f.is_global() && view.size() * 2 < spec.tree.min_size) {
                report.notes.push_back(fmt::format("context '{}' dropped: {} test rows (minimum {})", f.context_text,
                                                   view.size(), (spec.tree.min_size + 1) / 2));
                continue;
            }
            tasks.push_back({k, f.context, f.node, std::move(view)});
        }
    }
    run_family(tasks, report, spec.stats, true, e, data);
    return filter_and_rank(std::move(report));
}

} // namespace uatest
