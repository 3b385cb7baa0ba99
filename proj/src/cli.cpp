#include "uatest/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "uatest/random.hpp"
#include "uatest/report.hpp"
#include "uatest/synth.hpp"

namespace uatest {

namespace {

constexpr int kStateVersion = 1;

struct InvestigationOptions {
    std::string data;
    std::string schema;
    std::vector<std::string> protected_attrs;
    std::vector<std::string> context;
    std::string output;
    std::string explanatory;
    std::string metric;
    std::string ground_truth;
    std::string error = "absolute";
    std::string target;
    std::string group_a;
    std::string group_b;
    double conf = StatConfig{}.conf;
    std::size_t budget = 1;
    double train_fraction = 0.5;
    std::size_t max_depth = TreeParams{}.max_depth;
    std::size_t min_size = TreeParams{}.min_size;
    double split_alpha = TreeParams{}.split_alpha;
    std::size_t top_k = InvestigationSpec{}.top_k;
};

struct OutputOptions {
    std::string format = "text";
    std::string out;
    std::string state;
    std::uint64_t seed = 0;
    unsigned threads = 0;
    CLI::Option* seed_option = nullptr;
};

void add_output_options(CLI::App& cmd, OutputOptions& o, bool with_state) {
    cmd.add_option("--format", o.format, "Report format")->check(CLI::IsMember({"text", "json"}));
    cmd.add_option("--out", o.out, "Write the report to this file instead of stdout");
    if (with_state) cmd.add_option("--state", o.state, "Investigation state file");
    o.seed_option = cmd.add_option("--seed", o.seed, "Master seed (falls back to UATEST_SEED, then 0)");
    cmd.add_option("--threads", o.threads, "Worker cap; 0 uses every core");
}

void add_investigation_options(CLI::App& cmd, InvestigationOptions& o, InvestigationKind kind) {
    cmd.add_option("--data", o.data, "CSV data file")->required();
    cmd.add_option("--schema", o.schema, "JSON schema sidecar with kinds, roles and categories");
    cmd.add_option("--protected", o.protected_attrs, "Protected attributes (default: schema role)")->delimiter(',');
    cmd.add_option("--output", o.output, "Output attribute (default: schema role)");
    cmd.add_option("--context", o.context, "Contextual attributes (default: schema role)")->delimiter(',');
    cmd.add_option("--explanatory", o.explanatory, "Explanatory attribute to condition on");
    cmd.add_option("--metric", o.metric, "Metric override: NMI, DIFF, RATIO or CORR");
    cmd.add_option("--conf", o.conf, "Confidence level")->check(CLI::Range(0.5, 0.9999));
    cmd.add_option("--budget", o.budget, "Number of held-out test sets (adaptive investigations)")
        ->check(CLI::PositiveNumber);
    cmd.add_option("--train-fraction", o.train_fraction, "Share of rows used for training");
    cmd.add_option("--max-depth", o.max_depth, "Maximum context depth");
    cmd.add_option("--min-size", o.min_size, "Minimum context size");
    cmd.add_option("--split-alpha", o.split_alpha, "Training significance level a part needs to beat its parent");
    cmd.add_option("--target", o.target, "DIFF/RATIO output category (default: second)");
    cmd.add_option("--group-a", o.group_a, "DIFF/RATIO first protected category (default: first)");
    cmd.add_option("--group-b", o.group_b, "DIFF/RATIO second protected category (default: second)");
    if (kind == InvestigationKind::Discovery) cmd.add_option("--top-k", o.top_k, "Labels kept per protected attribute");
    if (kind == InvestigationKind::ErrorProfiling) {
        cmd.add_option("--ground-truth", o.ground_truth, "Ground-truth attribute")->required();
        cmd.add_option("--error", o.error, "Error measure")->check(CLI::IsMember({"absolute", "zero_one"}));
    }
}

std::uint64_t resolve_seed(const OutputOptions& o) {
    if (o.seed_option && o.seed_option->count() > 0) return o.seed;
    const char* env = std::getenv("UATEST_SEED");
    if (!env || !*env) return 0;
    const std::string text(env);
    std::size_t used = 0;
    std::uint64_t value = 0;
    try {
        value = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.front() == '-') throw UsageError(fmt::format("UATEST_SEED '{}' is not a seed", text));
    return value;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw DataError(fmt::format("cannot write '{}'", path.string()));
}

void emit(const std::string& text, const OutputOptions& o, std::ostream& out) {
    if (o.out.empty()) out << text;
    else write_file(o.out, text);
}

/// FNV-1a over the file bytes; detects data edits between runs.
std::string fingerprint(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ull;
    return fmt::format("{:016x}", h);
}

struct LoadedData {
    std::shared_ptr<const Dataset> data;
    std::string fingerprint;
};

LoadedData load(const std::string& data_path, const std::string& schema_path) {
    SchemaHints hints;
    if (!schema_path.empty()) hints = load_schema_hints(schema_path);
    const auto bytes = read_file(data_path);
    return {std::make_shared<const Dataset>(parse_csv(bytes, hints)), fingerprint(bytes)};
}

std::vector<std::string> with_role(const Dataset& data, Role role) {
    std::vector<std::string> out;
    for (const auto& a : data.schema())
        if (a.role == role) out.push_back(a.name);
    return out;
}

std::optional<std::string> non_empty(const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

InvestigationSpec build_spec(InvestigationKind kind, const InvestigationOptions& o, const Dataset& data,
                             std::uint64_t seed) {
    InvestigationSpec spec;
    spec.kind = kind;
    spec.protected_attrs = o.protected_attrs.empty() ? with_role(data, Role::Protected) : o.protected_attrs;
    if (spec.protected_attrs.empty()) throw UsageError("no protected attribute: pass --protected or declare one in the schema");
    if (o.output.empty()) {
        const auto outputs = with_role(data, Role::Output);
        if (outputs.size() != 1) throw UsageError("pass --output or declare exactly one output in the schema");
        spec.output = outputs.front();
    } else {
        spec.output = o.output;
    }
    spec.contextual = o.context;
    spec.explanatory = non_empty(o.explanatory);
    if (!o.metric.empty()) spec.metric = parse_metric(o.metric);
    spec.top_k = o.top_k;
    spec.ground_truth = non_empty(o.ground_truth);
    spec.error = parse_error_kind(o.error);
    spec.target = non_empty(o.target);
    spec.group_a = non_empty(o.group_a);
    spec.group_b = non_empty(o.group_b);
    spec.tree.min_size = o.min_size;
    spec.tree.max_depth = o.max_depth;
    spec.tree.split_alpha = o.split_alpha;
    spec.stats.conf = o.conf;
    spec.stats.seed = derive_seed(seed, 1);
    return spec;
}

std::string render(const ReportModel& report, const std::string& format) {
    return format == "json" ? render_json(report) : render_text(report);
}

struct State {
    std::string data;
    std::optional<std::string> schema;
    std::size_t rows = 0;
    std::string fingerprint;
    std::size_t budget = 1;
    double train_fraction = 0.5;
    std::uint64_t seed = 0;
    std::size_t consumed = 0;
    TrainResult trained;
    ReportModel report;
};

Json state_to_json(const State& s) {
    return {{"version", kStateVersion},
            {"data", s.data},
            {"schema", s.schema ? Json(*s.schema) : Json(nullptr)},
            {"rows", s.rows},
            {"fingerprint", s.fingerprint},
            {"budget", s.budget},
            {"train_fraction", s.train_fraction},
            {"seed", s.seed},
            {"consumed", s.consumed},
            {"trained", to_json(s.trained)},
            {"report", to_json(s.report)}};
}

State state_from_file(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw UsageError(fmt::format("no saved state at '{}': run testing, discovery or error-profile with --state first", path));
    try {
        const auto j = Json::parse(read_file(path));
        if (j.at("version").get<int>() != kStateVersion) throw DataError(fmt::format("unsupported state version in '{}'", path));
        State s;
        s.data = j.at("data").get<std::string>();
        if (!j.at("schema").is_null()) s.schema = j.at("schema").get<std::string>();
        s.rows = j.at("rows").get<std::size_t>();
        s.fingerprint = j.at("fingerprint").get<std::string>();
        s.budget = j.at("budget").get<std::size_t>();
        s.train_fraction = j.at("train_fraction").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.consumed = j.at("consumed").get<std::size_t>();
        s.trained = train_result_from_json(j.at("trained"));
        s.report = report_from_json(j.at("report"));
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed state file '{}': {}", path, e.what()));
    }
}

std::string absolute(const std::string& path) { return std::filesystem::absolute(path).lexically_normal().string(); }

void run_investigation(InvestigationKind kind, const InvestigationOptions& o, const OutputOptions& out_opts,
                       std::ostream& out) {
    set_max_threads(out_opts.threads);
    const auto seed = resolve_seed(out_opts);
    const auto loaded = load(o.data, o.schema);
    const auto spec = build_spec(kind, o, *loaded.data, seed);
    const auto prepared = prepare_dataset(spec, loaded.data);
    auto source = make_datasource(prepared, o.budget, o.train_fraction, seed, spec.tree.min_size);
    const auto trained = train(spec, source.train());
    const auto report = filter_and_rank(validate(trained, source.next_test_set()));

    if (!out_opts.state.empty()) {
        State s;
        s.data = absolute(o.data);
        if (!o.schema.empty()) s.schema = absolute(o.schema);
        s.rows = loaded.data->rows();
        s.fingerprint = loaded.fingerprint;
        s.budget = o.budget;
        s.train_fraction = o.train_fraction;
        s.seed = seed;
        s.consumed = source.consumed();
        s.trained = trained;
        s.report = report;
        write_file(out_opts.state, state_to_json(s).dump(2) + "\n");
    }
    emit(render(report, out_opts.format), out_opts, out);
}

void run_debug(const std::string& explanatory_flag, const OutputOptions& o, std::ostream& out) {
    set_max_threads(o.threads);
    if (o.state.empty()) throw UsageError("debug needs --state from a prior investigation");
    auto state = state_from_file(o.state);
    const auto loaded = load(state.data, state.schema.value_or(""));
    if (loaded.data->rows() != state.rows || loaded.fingerprint != state.fingerprint)
        throw DataError(fmt::format("data file '{}' changed since the saved investigation", state.data));

    std::string explanatory = explanatory_flag;
    if (explanatory.empty()) {
        const auto declared = with_role(*loaded.data, Role::Explanatory);
        if (declared.size() != 1) throw UsageError("pass --explanatory or declare exactly one in the schema");
        explanatory = declared.front();
    }
    const auto prepared = prepare_dataset(state.trained.spec, loaded.data);
    auto source = make_datasource(prepared, state.budget, state.train_fraction, state.seed,
                                  state.trained.spec.tree.min_size);
    source.set_consumed(state.consumed);
    const auto report = debug_with_explanatory(state.trained, state.report, explanatory, source);
    state.consumed = source.consumed();
    write_file(o.state, state_to_json(state).dump(2) + "\n");
    emit(render(report, o.format), o, out);
}

} // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Statistical auditing of unwarranted associations between protected attributes and outputs", "uatest"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    InvestigationOptions testing_opts, discovery_opts, error_opts;
    OutputOptions testing_out, discovery_out, error_out, debug_out;
    auto* testing = app.add_subcommand("testing", "Test association of protected attributes with an output");
    add_investigation_options(*testing, testing_opts, InvestigationKind::Testing);
    add_output_options(*testing, testing_out, true);
    auto* discovery = app.add_subcommand("discovery", "Find output labels associated with protected attributes");
    add_investigation_options(*discovery, discovery_opts, InvestigationKind::Discovery);
    add_output_options(*discovery, discovery_out, true);
    auto* error_profile = app.add_subcommand("error-profile", "Test association of prediction errors with protected attributes");
    add_investigation_options(*error_profile, error_opts, InvestigationKind::ErrorProfiling);
    add_output_options(*error_profile, error_out, true);

    std::string explanatory;
    auto* debug = app.add_subcommand("debug", "Re-test a saved investigation conditioned on an explanatory attribute");
    debug->add_option("--explanatory", explanatory, "Explanatory attribute (default: schema role)");
    add_output_options(*debug, debug_out, true);

    BenchConfig bench_cfg;
    OutputOptions bench_out;
    auto* bench = app.add_subcommand("bench", "Planted-disparity detection benchmark; CSV output");
    bench->add_option("--n", bench_cfg.n, "Population size");
    bench->add_option("--plants", bench_cfg.plants, "Planted contexts per run");
    bench->add_option("--delta", bench_cfg.delta, "Half-effect inside plants")->check(CLI::Range(0.0, 0.5));
    bench->add_option("--plant-size", bench_cfg.plant_size, "Target expected plant size");
    bench->add_option("--runs", bench_cfg.runs, "Runs, each with its own derived seed");
    bench->add_option("--conf", bench_cfg.conf, "Confidence level")->check(CLI::Range(0.5, 0.9999));
    bench->add_option("--min-size", bench_cfg.min_size, "Minimum context size");
    bench->add_option("--max-depth", bench_cfg.max_depth, "Maximum context depth");
    bench->add_option("--out", bench_out.out, "Write CSV to this file instead of stdout");
    bench_out.seed_option = bench->add_option("--seed", bench_out.seed, "Master seed (falls back to UATEST_SEED, then 0)");
    bench->add_option("--threads", bench_out.threads, "Worker cap; 0 uses every core");

    ComparisonConfig cmp_cfg;
    OutputOptions cmp_out;
    auto* cmp = app.add_subcommand("tree-vs-itemsets", "Guided tree versus exhaustive itemset search; CSV output");
    cmp->add_option("--n", cmp_cfg.n, "Population size");
    cmp->add_option("--attributes", cmp_cfg.attributes, "Binary contextual attributes");
    cmp->add_option("--min-size", cmp_cfg.min_size, "Minimum context size");
    cmp->add_option("--max-depth", cmp_cfg.max_depth, "Maximum context depth");
    cmp->add_option("--split-alpha", cmp_cfg.split_alpha, "Tree split significance level");
    cmp->add_option("--sample-factor", cmp_cfg.sample_factor, "Random itemset budget as a multiple of the tree's");
    cmp->add_option("--out", cmp_out.out, "Write CSV to this file instead of stdout");
    cmp_out.seed_option = cmp->add_option("--seed", cmp_out.seed, "Master seed (falls back to UATEST_SEED, then 0)");
    cmp->add_option("--threads", cmp_out.threads, "Worker cap; 0 uses every core");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        // Subcommand help arrives here as well, formatted by the subcommand.
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            app.exit(e, out, err);
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        err << "Run with --help for usage.\n";
        return kExitUsage;
    }

    try {
        if (testing->parsed()) run_investigation(InvestigationKind::Testing, testing_opts, testing_out, out);
        else if (discovery->parsed()) run_investigation(InvestigationKind::Discovery, discovery_opts, discovery_out, out);
        else if (error_profile->parsed())
            run_investigation(InvestigationKind::ErrorProfiling, error_opts, error_out, out);
        else if (debug->parsed()) run_debug(explanatory, debug_out, out);
        else if (bench->parsed()) {
            set_max_threads(bench_out.threads);
            bench_cfg.seed = resolve_seed(bench_out);
            std::ostringstream csv;
            write_bench_csv(csv, run_bench(bench_cfg));
            emit(csv.str(), bench_out, out);
        } else if (cmp->parsed()) {
            set_max_threads(cmp_out.threads);
            cmp_cfg.seed = resolve_seed(cmp_out);
            std::ostringstream csv;
            write_comparison_csv(csv, compare_tree_itemsets(cmp_cfg));
            emit(csv.str(), cmp_out, out);
        }
    } catch (const BudgetExhausted& e) {
        err << "error: " << e.what() << "\n";
        return kExitBudget;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

} // namespace uatest
