#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "uatest/cli.hpp"
#include "uatest/report.hpp"
#include "uatest/synth.hpp"

using namespace uatest;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result call(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch() {
    const auto dir = fs::temp_directory_path() / "uatest_cli_test";
    fs::create_directories(dir);
    return dir;
}

/// Standard synthetic population with two planted states, written as CSV.
std::string planted_csv() {
    const auto path = (scratch() / "planted.csv").string();
    if (fs::exists(path)) return path;
    const auto pop = PopulationSpec::standard(20000);
    const std::vector<PlantSpec> plants{{{ContextPredicate::one_of("state", {"s03"})}, 0.3},
                                        {{ContextPredicate::one_of("state", {"s07"})}, 0.3}};
    std::ofstream out(path);
    write_csv(out, generate(pop, plants, 11));
    return path;
}

std::vector<std::string> testing_args(const std::string& data) {
    return {"testing", "--data", data, "--protected", "income", "--output", "output", "--context", "state,race,gender",
            "--seed", "1"};
}

std::string read(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const std::string kData = std::string(UATEST_DATA_DIR) + "/berkeley.csv";
const std::string kSchema = std::string(UATEST_DATA_DIR) + "/berkeley.schema.json";

} // namespace

TEST_CASE("testing writes a text report") {
    const auto r = call(testing_args(planted_csv()));
    CHECK(r.code == kExitOk);
    CHECK(r.err.empty());
    CHECK(r.out.rfind("Report of associations of O=output on S=income:", 0) == 0);
    CHECK(r.out.find("Context = state: s03\n") != std::string::npos);
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
    auto args = testing_args(planted_csv());
    args.insert(args.end(), {"--threads", "1"});
    const auto one = call(args);
    args.back() = "4";
    const auto four = call(args);
    CHECK(one.code == 0);
    CHECK(one.out == four.out);
    CHECK(call(args).out == four.out);
}

TEST_CASE("UATEST_SEED is the seed fallback") {
    auto args = testing_args(planted_csv());
    args.resize(args.size() - 2);
    args.insert(args.end(), {"--format", "json"});
    ::setenv("UATEST_SEED", "1", 1);
    const auto from_env = call(args);
    ::unsetenv("UATEST_SEED");
    args.insert(args.end(), {"--seed", "1"});
    const auto from_flag = call(args);
    CHECK(from_env.code == 0);
    CHECK(from_env.out == from_flag.out);
    CHECK_NOTHROW(parse_json(from_flag.out));
    ::setenv("UATEST_SEED", "abc", 1);
    args.resize(args.size() - 2);
    CHECK(call(args).code == kExitUsage);
    ::unsetenv("UATEST_SEED");
}

TEST_CASE("roles come from the schema and --out writes a file") {
    const auto out = scratch() / "berkeley.txt";
    const auto r = call({"testing", "--data", kData, "--schema", kSchema, "--group-a", "Female", "--target", "Yes",
                         "--out", out.string()});
    CHECK(r.code == 0);
    CHECK(r.out.empty());
    CHECK(read(out).find("O=admitted on S=gender") != std::string::npos);
}

TEST_CASE("debug consumes budget from the saved state") {
    const auto state = (scratch() / "state.json").string();
    fs::remove(state);
    CHECK(call({"debug", "--state", state}).code == kExitUsage);
    CHECK(call({"debug"}).code == kExitUsage);

    const auto first = call({"testing", "--data", kData, "--schema", kSchema, "--budget", "2", "--train-fraction",
                             "0.02", "--group-a", "Female", "--target", "Yes", "--seed", "3", "--state", state});
    REQUIRE(first.code == 0);
    const auto debug = call({"debug", "--state", state});
    CHECK(debug.code == 0);
    CHECK(debug.out.find("conditioned on explanatory attribute E=department:") != std::string::npos);
    CHECK(debug.out.find("* department=A: Population of size") != std::string::npos);
    const auto exhausted = call({"debug", "--state", state, "--explanatory", "department"});
    CHECK(exhausted.code == kExitBudget);
    CHECK(exhausted.err.find("budget") != std::string::npos);
}

TEST_CASE("debug refuses changed data") {
    const auto data = scratch() / "berkeley_copy.csv";
    fs::copy_file(kData, data, fs::copy_options::overwrite_existing);
    const auto state = (scratch() / "state_copy.json").string();
    REQUIRE(call({"testing", "--data", data.string(), "--schema", kSchema, "--budget", "2", "--state", state}).code == 0);
    std::ofstream(data, std::ios::app) << "Male,A,Yes\n";
    CHECK(call({"debug", "--state", state}).code == kExitData);
}

TEST_CASE("usage and data errors map to exit codes") {
    CHECK(call({}).code == kExitUsage);
    CHECK(call({"frobnicate"}).code == kExitUsage);
    CHECK(call({"testing", "--data", kData, "--bogus"}).code == kExitUsage);
    CHECK(call({"testing", "--data", kData}).code == kExitUsage);
    CHECK(call({"testing", "--data", kData, "--schema", kSchema, "--metric", "XYZ"}).code == kExitUsage);
    CHECK(call({"error-profile", "--data", kData, "--schema", kSchema}).code == kExitUsage);
    CHECK(call({"testing", "--data", kData, "--schema", kSchema, "--protected", "zip"}).code == kExitData);
    CHECK(call({"testing", "--data", "/nonexistent.csv"}).code == kExitData);
    const auto r = call({"testing", "--data", kData, "--schema", kSchema, "--group-a", "Other"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("Other") != std::string::npos);
}

TEST_CASE("help lists every flag with defaults") {
    const auto top = call({"--help"});
    CHECK(top.code == 0);
    for (const char* sub : {"testing", "discovery", "error-profile", "debug", "bench", "tree-vs-itemsets"})
        CHECK(top.out.find(sub) != std::string::npos);
    const auto testing = call({"testing", "--help"});
    CHECK(testing.code == 0);
    for (const char* flag : {"--data", "--schema", "--protected", "--output", "--context", "--explanatory", "--metric",
                             "--conf", "--budget", "--train-fraction", "--max-depth", "--min-size", "--seed", "--format",
                             "--out", "--state", "--threads", "--target", "--group-a", "--group-b"})
        CHECK(testing.out.find(flag) != std::string::npos);
    CHECK(testing.out.find("[100]") != std::string::npos);
    CHECK(testing.out.find("[0.95]") != std::string::npos);
    CHECK(call({"discovery", "--help"}).out.find("--top-k UINT [35]") != std::string::npos);
    CHECK(call({"error-profile", "--help"}).out.find("--ground-truth") != std::string::npos);
    CHECK(call({"bench", "--help"}).out.find("--delta FLOAT:FLOAT in [0 - 0.5] [0.15]") != std::string::npos);
}

TEST_CASE("bench and tree-vs-itemsets emit CSV") {
    const auto bench = call({"bench", "--n", "20000", "--plants", "4", "--delta", "0.2", "--plant-size", "400", "--runs",
                             "2", "--seed", "3"});
    CHECK(bench.code == 0);
    CHECK(bench.out.rfind("delta,size,recall,false_discoveries,seed\n", 0) == 0);
    CHECK(std::count(bench.out.begin(), bench.out.end(), '\n') == 3);

    const auto cmp = call({"tree-vs-itemsets", "--n", "12000", "--attributes", "8", "--min-size", "300", "--max-depth",
                           "3", "--seed", "2"});
    CHECK(cmp.code == 0);
    CHECK(cmp.out.find("tree,") != std::string::npos);
    CHECK(cmp.out.find("\nitemsets,") != std::string::npos);
    CHECK(call({"bench", "--plant-size", "100", "--runs", "1"}).code == kExitUsage);
}
