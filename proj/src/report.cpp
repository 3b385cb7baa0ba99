#include "uatest/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace uatest {

namespace {

// --- text ----------------------------------------------------------------------------

std::string metric_name(const MetricSpec& spec) {
    std::string base;
    switch (spec.kind) {
    case MetricKind::Nmi: base = "norm. mutual information"; break;
    case MetricKind::Diff: base = "difference of proportions"; break;
    case MetricKind::Ratio: base = "ratio of proportions minus one"; break;
    case MetricKind::Corr: base = "Pearson correlation"; break;
    case MetricKind::Reg: base = "logistic regression"; break;
    }
    if (spec.conditioning) base = "conditional " + base;
    return fmt::format("{} ({})", base, metric_label(spec));
}

std::string bound(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{:.4f}", v);
}

std::string stat_line(const MetricSpec& spec, const TestedMetric& t) {
    return fmt::format("p-value = {} ; {} = [{}, {}]", format_p_value(t.corrected_p), metric_label(spec),
                       bound(t.corrected_ci.lo), bound(t.corrected_ci.hi));
}

/// Aligned text grid; the first column is left-aligned, the rest right-aligned.
/// `rules` lists row positions preceded by a horizontal rule.
std::string grid(const std::vector<std::vector<std::string>>& rows, const std::vector<std::size_t>& rules,
                 std::string_view indent) {
    std::vector<std::size_t> width;
    for (const auto& row : rows) {
        width.resize(std::max(width.size(), row.size()));
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    std::string out;
    auto rule = [&] {
        out += indent;
        for (std::size_t c = 0; c < width.size(); ++c) {
            if (c) out += "-+-";
            out += std::string(width[c], '-');
        }
        out += "\n";
    };
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (std::find(rules.begin(), rules.end(), r) != rules.end()) rule();
        out += indent;
        std::string line;
        for (std::size_t c = 0; c < width.size(); ++c) {
            const std::string cell = c < rows[r].size() ? rows[r][c] : "";
            if (c) line += " | ";
            line += c == 0 ? fmt::format("{:<{}}", cell, width[c]) : fmt::format("{:>{}}", cell, width[c]);
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

std::string render_table(const ContingencyTable& t, std::string_view output_name, std::string_view indent) {
    const auto rows = t.counts.rows();
    const auto cols = t.counts.cols();
    std::vector<std::vector<std::string>> g;
    std::vector<std::string> header{std::string(output_name)};
    for (const auto& l : t.protected_labels) header.push_back(l);
    header.push_back("Total");
    g.push_back(header);

    std::vector<std::vector<int>> col_pct(static_cast<std::size_t>(cols));
    for (Eigen::Index c = 0; c < cols; ++c) {
        std::vector<std::int64_t> v(static_cast<std::size_t>(rows));
        for (Eigen::Index r = 0; r < rows; ++r) v[static_cast<std::size_t>(r)] = t.counts(r, c);
        col_pct[static_cast<std::size_t>(c)] = rounded_percentages(v);
    }
    const auto row_tot = t.row_totals();
    const auto col_tot = t.column_totals();
    std::vector<std::int64_t> rt(row_tot.data(), row_tot.data() + rows);
    std::vector<std::int64_t> ct(col_tot.data(), col_tot.data() + cols);
    const auto row_pct = rounded_percentages(rt);
    const auto tot_pct = rounded_percentages(ct);

    for (Eigen::Index r = 0; r < rows; ++r) {
        std::vector<std::string> line{t.output_labels[static_cast<std::size_t>(r)]};
        for (Eigen::Index c = 0; c < cols; ++c)
            line.push_back(fmt::format("{} ({}%)", t.counts(r, c), col_pct[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)]));
        line.push_back(fmt::format("{} ({}%)", rt[static_cast<std::size_t>(r)], row_pct[static_cast<std::size_t>(r)]));
        g.push_back(line);
    }
    std::vector<std::string> total{"Total"};
    for (Eigen::Index c = 0; c < cols; ++c)
        total.push_back(fmt::format("{} ({}%)", ct[static_cast<std::size_t>(c)], tot_pct[static_cast<std::size_t>(c)]));
    total.push_back(fmt::format("{} ({}%)", t.total(), t.total() > 0 ? 100 : 0));
    g.push_back(total);
    return grid(g, {1, static_cast<std::size_t>(rows) + 1}, indent);
}

std::string render_deciles(const std::vector<DecileSummary>& deciles, std::string_view protected_attr,
                           std::string_view output_name, std::string_view indent) {
    std::vector<std::vector<std::string>> g;
    g.push_back({fmt::format("{} decile range", protected_attr), "n", fmt::format("{} min", output_name), "q1", "median",
                 "q3", "max"});
    for (const auto& d : deciles) {
        std::vector<std::string> line{fmt::format("[{:.4g}, {:.4g}]", d.s_lo, d.s_hi), std::to_string(d.n)};
        for (const double v : d.o) line.push_back(fmt::format("{:.4g}", v));
        g.push_back(line);
    }
    return grid(g, {1}, indent);
}

std::string binding_text(const MetricSpec& spec, const Finding& global, std::string_view protected_attr,
                         std::string_view output_name) {
    if ((spec.kind != MetricKind::Diff && spec.kind != MetricKind::Ratio) || !global.table) return "";
    const auto& t = *global.table;
    const auto label = [](const std::vector<std::string>& v, std::int32_t i) {
        return i >= 0 && static_cast<std::size_t>(i) < v.size() ? v[static_cast<std::size_t>(i)] : std::string("?");
    };
    const auto o = label(t.output_labels, spec.target);
    const auto a = label(t.protected_labels, spec.group_a);
    const auto b = label(t.protected_labels, spec.group_b);
    const std::string op = spec.kind == MetricKind::Diff ? " - " : " / ";
    std::string text = fmt::format("Pr({}={} | {}={}){}Pr({}={} | {}={})", output_name, o, protected_attr, a, op,
                                   output_name, o, protected_attr, b);
    if (spec.kind == MetricKind::Ratio) text += " - 1";
    return text;
}

void render_body(std::string& out, const Finding& f, const ReportSection& s, double conf) {
    out += fmt::format("{}\n", stat_line(f.spec, f.tested));
    if (f.is_global() && !f.significant(conf)) out += fmt::format("Not significant at the {:g}% level.\n", 100.0 * conf);
    if (f.table) {
        out += "\n";
        out += render_table(*f.table, s.output_name, "");
    } else if (!f.deciles.empty()) {
        out += "\n";
        out += render_deciles(f.deciles, s.protected_attr, s.output_name, "");
    }
    for (const auto& st : f.strata) {
        MetricSpec plain = f.spec;
        plain.conditioning.reset();
        out += fmt::format("\n* {}={}: Population of size {}:\n", f.spec.conditioning.value_or("stratum"), st.label,
                           group_thousands(st.size));
        out += fmt::format("    {}\n", stat_line(plain, st.tested));
        if (st.table) {
            out += "\n";
            out += render_table(*st.table, s.output_name, "    ");
        }
    }
}

// --- JSON ----------------------------------------------------------------------------

Json num(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double get_num(const Json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    throw DataError(fmt::format("expected a number, got {}", j.dump()));
}

template <typename T>
Json opt(const std::optional<T>& v) {
    return v ? Json(*v) : Json(nullptr);
}

std::optional<std::string> opt_string(const Json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<std::string>();
}

Json interval(const Interval& i) { return Json::array({num(i.lo), num(i.hi)}); }
Interval interval_from(const Json& j) { return {get_num(j.at(0)), get_num(j.at(1))}; }

Json to_json(const MetricSpec& m) {
    return {{"kind", to_string(m.kind)}, {"conditioning", opt(m.conditioning)}, {"target", m.target},
            {"group_a", m.group_a}, {"group_b", m.group_b}};
}

MetricSpec metric_from(const Json& j) {
    MetricSpec m;
    m.kind = parse_metric(j.at("kind").get<std::string>());
    m.conditioning = opt_string(j.at("conditioning"));
    m.target = j.at("target").get<std::int32_t>();
    m.group_a = j.at("group_a").get<std::int32_t>();
    m.group_b = j.at("group_b").get<std::int32_t>();
    return m;
}

Json to_json(const TestedMetric& t) {
    return {{"metric", to_string(t.value.kind)}, {"estimate", num(t.value.estimate)}, {"n", t.n},
            {"ci", interval(t.ci)}, {"p_value", num(t.p_value)}, {"method", to_string(t.method)},
            {"corrected_ci", interval(t.corrected_ci)}, {"corrected_p", num(t.corrected_p)}};
}

TestedMetric tested_from(const Json& j) {
    TestedMetric t;
    t.value.kind = parse_metric(j.at("metric").get<std::string>());
    t.value.estimate = get_num(j.at("estimate"));
    t.n = j.at("n").get<std::size_t>();
    t.ci = interval_from(j.at("ci"));
    t.p_value = get_num(j.at("p_value"));
    t.method = parse_method(j.at("method").get<std::string>());
    t.corrected_ci = interval_from(j.at("corrected_ci"));
    t.corrected_p = get_num(j.at("corrected_p"));
    return t;
}

Json to_json(const ContingencyTable& t) {
    Json counts = Json::array();
    for (Eigen::Index r = 0; r < t.counts.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < t.counts.cols(); ++c) row.push_back(t.counts(r, c));
        counts.push_back(row);
    }
    return {{"output_labels", t.output_labels}, {"protected_labels", t.protected_labels}, {"counts", counts}};
}

ContingencyTable table_from(const Json& j) {
    ContingencyTable t;
    t.output_labels = j.at("output_labels").get<std::vector<std::string>>();
    t.protected_labels = j.at("protected_labels").get<std::vector<std::string>>();
    const auto& counts = j.at("counts");
    t.counts = CountMatrix::Zero(static_cast<Eigen::Index>(t.output_labels.size()),
                                 static_cast<Eigen::Index>(t.protected_labels.size()));
    if (counts.size() != t.output_labels.size()) throw DataError("contingency table shape mismatch");
    for (std::size_t r = 0; r < counts.size(); ++r) {
        if (counts[r].size() != t.protected_labels.size()) throw DataError("contingency table shape mismatch");
        for (std::size_t c = 0; c < counts[r].size(); ++c)
            t.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = counts[r][c].get<std::int64_t>();
    }
    return t;
}

Json to_json(const Finding& f) {
    Json deciles = Json::array();
    for (const auto& d : f.deciles) {
        Json o = Json::array();
        for (const double v : d.o) o.push_back(num(v));
        deciles.push_back({{"s_lo", num(d.s_lo)}, {"s_hi", num(d.s_hi)}, {"n", d.n}, {"o", o}});
    }
    Json strata = Json::array();
    for (const auto& s : f.strata)
        strata.push_back({{"label", s.label},
                          {"size", s.size},
                          {"tested", to_json(s.tested)},
                          {"table", s.table ? to_json(*s.table) : Json(nullptr)}});
    return {{"rank", f.rank},
            {"context", to_json(f.context)},
            {"context_text", f.context_text},
            {"size", f.size},
            {"protected", f.protected_attr},
            {"output", f.output_name},
            {"label", opt(f.label)},
            {"metric", to_json(f.spec)},
            {"tested", to_json(f.tested)},
            {"table", f.table ? to_json(*f.table) : Json(nullptr)},
            {"deciles", deciles},
            {"strata", strata},
            {"node", opt(f.node)}};
}

Finding finding_from(const Json& j) {
    Finding f;
    f.rank = j.at("rank").get<std::size_t>();
    f.context = context_from_json(j.at("context"));
    f.context_text = j.at("context_text").get<std::string>();
    f.size = j.at("size").get<std::size_t>();
    f.protected_attr = j.at("protected").get<std::string>();
    f.output_name = j.at("output").get<std::string>();
    f.label = opt_string(j.at("label"));
    f.spec = metric_from(j.at("metric"));
    f.tested = tested_from(j.at("tested"));
    if (!j.at("table").is_null()) f.table = table_from(j.at("table"));
    for (const auto& d : j.at("deciles")) {
        DecileSummary s;
        s.s_lo = get_num(d.at("s_lo"));
        s.s_hi = get_num(d.at("s_hi"));
        s.n = d.at("n").get<std::size_t>();
        for (std::size_t k = 0; k < 5; ++k) s.o[k] = get_num(d.at("o").at(k));
        f.deciles.push_back(s);
    }
    for (const auto& s : j.at("strata")) {
        StratumFinding sf;
        sf.label = s.at("label").get<std::string>();
        sf.size = s.at("size").get<std::size_t>();
        sf.tested = tested_from(s.at("tested"));
        if (!s.at("table").is_null()) sf.table = table_from(s.at("table"));
        f.strata.push_back(std::move(sf));
    }
    if (!j.at("node").is_null()) f.node = j.at("node").get<std::size_t>();
    return f;
}

Json to_json(const std::vector<std::pair<std::string, std::vector<LabelScore>>>& rankings) {
    Json out = Json::array();
    for (const auto& [s, labels] : rankings) {
        Json list = Json::array();
        for (const auto& l : labels)
            list.push_back({{"label", l.label}, {"coefficient", num(l.coefficient)}, {"std_error", num(l.std_error)},
                            {"score", num(l.score)}});
        out.push_back({{"protected", s}, {"labels", list}});
    }
    return out;
}

std::vector<std::pair<std::string, std::vector<LabelScore>>> rankings_from(const Json& j) {
    std::vector<std::pair<std::string, std::vector<LabelScore>>> out;
    for (const auto& r : j) {
        std::vector<LabelScore> labels;
        for (const auto& l : r.at("labels"))
            labels.push_back({l.at("label").get<std::string>(), get_num(l.at("coefficient")),
                              get_num(l.at("std_error")), get_num(l.at("score"))});
        out.emplace_back(r.at("protected").get<std::string>(), std::move(labels));
    }
    return out;
}

} // namespace

std::string format_p_value(double p) {
    if (p < 1e-300) return "<1e-300";
    return fmt::format("{:.2e}", p);
}

std::string group_thousands(std::uint64_t n) {
    auto digits = std::to_string(n);
    for (auto i = static_cast<std::ptrdiff_t>(digits.size()) - 3; i > 0; i -= 3)
        digits.insert(static_cast<std::size_t>(i), ",");
    return digits;
}

std::vector<int> rounded_percentages(std::span<const std::int64_t> counts) {
    std::vector<int> out(counts.size(), 0);
    const auto total = std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
    if (total <= 0) return out;
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double exact = 100.0 * static_cast<double>(counts[i]) / static_cast<double>(total);
        out[i] = static_cast<int>(std::floor(exact));
        assigned += out[i];
        remainders.emplace_back(exact - out[i], i);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < 100 && k < remainders.size(); ++k, ++assigned) ++out[remainders[k].second];
    return out;
}

std::string render_text(const ReportModel& report) {
    std::string out;
    for (const auto& [s, labels] : report.label_rankings) {
        out += fmt::format("Labels ranked by association with S={} (logistic regression, top {}):\n", s, labels.size());
        std::vector<std::vector<std::string>> g{{"label", "coefficient", "std. error", "score"}};
        for (const auto& l : labels)
            g.push_back({l.label, fmt::format("{:.4f}", l.coefficient), fmt::format("{:.4f}", l.std_error),
                         fmt::format("{:.2f}", l.score)});
        out += grid(g, {1}, "");
        out += "\n";
    }
    for (std::size_t k = 0; k < report.sections.size(); ++k) {
        const auto& s = report.sections[k];
        if (k) out += "\n";
        const auto& spec = s.global.spec;
        if (spec.conditioning) {
            out += fmt::format("Report of associations of O={} on S={},\n", s.output_name, s.protected_attr);
            out += fmt::format("conditioned on explanatory attribute E={}:\n", *spec.conditioning);
        } else {
            out += fmt::format("Report of associations of O={} on S={}:\n", s.output_name, s.protected_attr);
        }
        out += fmt::format("Association metric: {}.\n", metric_name(spec));
        if (const auto b = binding_text(spec, s.global, s.protected_attr, s.output_name); !b.empty())
            out += fmt::format("{} = {}\n", metric_label(spec), b);
        out += "\n";
        out += fmt::format("Global Population of size {}\n", group_thousands(s.global.size));
        render_body(out, s.global, s, report.conf);
        for (const auto& f : s.subpopulations) {
            out += fmt::format("\n{}. Subpopulation of size {}\n", f.rank, group_thousands(f.size));
            out += fmt::format("Context = {}\n", f.context_text);
            render_body(out, f, s, report.conf);
        }
    }
    out += fmt::format("\nCorrections applied over a family of {} {} at confidence {:g}.\n", report.family_size,
                       report.family_size == 1 ? "hypothesis" : "hypotheses", report.conf);
    if (!report.notes.empty()) {
        out += "\nNotes:\n";
        for (const auto& n : report.notes) out += fmt::format("- {}\n", n);
    }
    return out;
}

Json to_json(const Context& context) {
    Json out = Json::array();
    for (const auto& p : context) {
        std::string op = "in";
        if (p.op == ContextPredicate::Op::LessEqual) op = "<=";
        if (p.op == ContextPredicate::Op::Greater) op = ">";
        Json j{{"attribute", p.attribute}, {"op", op}};
        if (p.op == ContextPredicate::Op::OneOf) j["values"] = p.values;
        else j["threshold"] = num(p.threshold);
        out.push_back(j);
    }
    return out;
}

Context context_from_json(const Json& j) {
    Context out;
    for (const auto& p : j) {
        const auto attr = p.at("attribute").get<std::string>();
        const auto op = p.at("op").get<std::string>();
        if (op == "in") out.push_back(ContextPredicate::one_of(attr, p.at("values").get<std::vector<std::string>>()));
        else if (op == "<=") out.push_back(ContextPredicate::at_most(attr, get_num(p.at("threshold"))));
        else if (op == ">") out.push_back(ContextPredicate::above(attr, get_num(p.at("threshold"))));
        else throw DataError(fmt::format("unknown predicate operator '{}'", op));
    }
    return out;
}

Json to_json(const ReportModel& report) {
    Json sections = Json::array();
    for (const auto& s : report.sections) {
        Json subs = Json::array();
        for (const auto& f : s.subpopulations) subs.push_back(to_json(f));
        sections.push_back({{"protected", s.protected_attr},
                            {"output_attr", s.output_attr},
                            {"output", s.output_name},
                            {"label", opt(s.label)},
                            {"metric", to_json(s.spec)},
                            {"global", to_json(s.global)},
                            {"subpopulations", subs}});
    }
    return {{"investigation", to_string(report.kind)},
            {"protected", report.protected_attrs},
            {"output", report.output},
            {"explanatory", opt(report.explanatory)},
            {"conf", num(report.conf)},
            {"family_size", report.family_size},
            {"label_rankings", to_json(report.label_rankings)},
            {"sections", sections},
            {"notes", report.notes}};
}

ReportModel report_from_json(const Json& j) {
    try {
        ReportModel r;
        r.kind = parse_investigation(j.at("investigation").get<std::string>());
        r.protected_attrs = j.at("protected").get<std::vector<std::string>>();
        r.output = j.at("output").get<std::string>();
        r.explanatory = opt_string(j.at("explanatory"));
        r.conf = get_num(j.at("conf"));
        r.family_size = j.at("family_size").get<std::size_t>();
        r.label_rankings = rankings_from(j.at("label_rankings"));
        for (const auto& s : j.at("sections")) {
            ReportSection sec;
            sec.protected_attr = s.at("protected").get<std::string>();
            sec.output_attr = s.at("output_attr").get<std::string>();
            sec.output_name = s.at("output").get<std::string>();
            sec.label = opt_string(s.at("label"));
            sec.spec = metric_from(s.at("metric"));
            sec.global = finding_from(s.at("global"));
            for (const auto& f : s.at("subpopulations")) sec.subpopulations.push_back(finding_from(f));
            r.sections.push_back(std::move(sec));
        }
        r.notes = j.at("notes").get<std::vector<std::string>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed report document: {}", e.what()));
    }
}

std::string render_json(const ReportModel& report) { return to_json(report).dump(2) + "\n"; }

ReportModel parse_json(std::string_view text) {
    try {
        return report_from_json(Json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed report document: {}", e.what()));
    }
}

Json to_json(const InvestigationSpec& spec) {
    return {{"kind", to_string(spec.kind)},
            {"protected", spec.protected_attrs},
            {"contextual", spec.contextual},
            {"explanatory", opt(spec.explanatory)},
            {"output", spec.output},
            {"metric", spec.metric ? Json(std::string(to_string(*spec.metric))) : Json(nullptr)},
            {"top_k", spec.top_k},
            {"ground_truth", opt(spec.ground_truth)},
            {"error", to_string(spec.error)},
            {"target", opt(spec.target)},
            {"group_a", opt(spec.group_a)},
            {"group_b", opt(spec.group_b)},
            {"tree",
             {{"min_size", spec.tree.min_size},
              {"max_depth", spec.tree.max_depth},
              {"quantiles", spec.tree.quantiles},
              {"split_alpha", num(spec.tree.split_alpha)}}},
            {"stats",
             {{"conf", num(spec.stats.conf)},
              {"small_sample", spec.stats.small_sample},
              {"permutations", spec.stats.permutations},
              {"bootstraps", spec.stats.bootstraps},
              {"seed", spec.stats.seed}}}};
}

InvestigationSpec spec_from_json(const Json& j) {
    try {
        InvestigationSpec s;
        s.kind = parse_investigation(j.at("kind").get<std::string>());
        s.protected_attrs = j.at("protected").get<std::vector<std::string>>();
        s.contextual = j.at("contextual").get<std::vector<std::string>>();
        s.explanatory = opt_string(j.at("explanatory"));
        s.output = j.at("output").get<std::string>();
        if (!j.at("metric").is_null()) s.metric = parse_metric(j.at("metric").get<std::string>());
        s.top_k = j.at("top_k").get<std::size_t>();
        s.ground_truth = opt_string(j.at("ground_truth"));
        s.error = parse_error_kind(j.at("error").get<std::string>());
        s.target = opt_string(j.at("target"));
        s.group_a = opt_string(j.at("group_a"));
        s.group_b = opt_string(j.at("group_b"));
        const auto& t = j.at("tree");
        s.tree.min_size = t.at("min_size").get<std::size_t>();
        s.tree.max_depth = t.at("max_depth").get<std::size_t>();
        s.tree.quantiles = t.at("quantiles").get<std::size_t>();
        s.tree.split_alpha = get_num(t.at("split_alpha"));
        const auto& st = j.at("stats");
        s.stats.conf = get_num(st.at("conf"));
        s.stats.small_sample = st.at("small_sample").get<std::size_t>();
        s.stats.permutations = st.at("permutations").get<std::size_t>();
        s.stats.bootstraps = st.at("bootstraps").get<std::size_t>();
        s.stats.seed = st.at("seed").get<std::uint64_t>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed investigation spec: {}", e.what()));
    }
}

Json to_json(const TrainResult& trained) {
    Json trees = Json::array();
    for (const auto& t : trained.trees) {
        Json contexts = Json::array();
        for (const auto& c : t.contexts) contexts.push_back(to_json(c));
        Json parents = Json::array();
        for (const auto& p : t.parents) parents.push_back(opt(p));
        trees.push_back({{"protected", t.protected_attr},
                         {"output_attr", t.output_attr},
                         {"output", t.output_name},
                         {"label", opt(t.label)},
                         {"metric", to_json(t.spec)},
                         {"contexts", contexts},
                         {"parents", parents},
                         {"train_sizes", t.train_sizes}});
    }
    return {{"spec", to_json(trained.spec)},
            {"trees", trees},
            {"label_rankings", to_json(trained.label_rankings)},
            {"evaluations", trained.evaluations}};
}

TrainResult train_result_from_json(const Json& j) {
    try {
        TrainResult r;
        r.spec = spec_from_json(j.at("spec"));
        for (const auto& t : j.at("trees")) {
            TrainedTree tree;
            tree.protected_attr = t.at("protected").get<std::string>();
            tree.output_attr = t.at("output_attr").get<std::string>();
            tree.output_name = t.at("output").get<std::string>();
            tree.label = opt_string(t.at("label"));
            tree.spec = metric_from(t.at("metric"));
            for (const auto& c : t.at("contexts")) tree.contexts.push_back(context_from_json(c));
            for (const auto& p : t.at("parents"))
                tree.parents.push_back(p.is_null() ? std::nullopt : std::optional<std::size_t>(p.get<std::size_t>()));
            tree.train_sizes = t.at("train_sizes").get<std::vector<std::size_t>>();
            r.trees.push_back(std::move(tree));
        }
        r.label_rankings = rankings_from(j.at("label_rankings"));
        r.evaluations = j.at("evaluations").get<std::size_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed training state: {}", e.what()));
    }
}

} // namespace uatest
