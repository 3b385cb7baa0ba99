#include <doctest.h>

#include <cmath>
#include <sstream>

#include "uatest/random.hpp"
#include "uatest/synth.hpp"

using namespace uatest;

namespace {

double diff_on(const DatasetView& view) {
    MetricSpec spec;
    spec.kind = MetricKind::Diff;
    spec.target = 1;
    spec.group_a = 1;
    spec.group_b = 0;
    return estimate(spec, make_sample(view, "income", "output", spec));
}

/// Standard error of DIFF at proportions near 1/2 with half the rows per group.
double diff_sigma(std::size_t n) { return std::sqrt(0.25 / (n / 2.0) * 2.0); }

Finding finding_for(const Context& ctx, double p) {
    Finding f;
    f.context = ctx;
    f.tested.corrected_p = p;
    f.tested.p_value = p;
    return f;
}

ReportModel report_with(std::vector<Finding> subs) {
    ReportModel r;
    ReportSection s;
    s.subpopulations = std::move(subs);
    r.sections.push_back(s);
    return r;
}

} // namespace

TEST_CASE("generated marginals match the population spec") {
    const auto pop = PopulationSpec::standard(100000);
    const auto data = std::make_shared<const Dataset>(generate(pop, {}, 1));
    CHECK(data->rows() == 100000);
    const auto& state = data->column("state");
    std::vector<int> counts(50, 0);
    for (const auto c : state.codes) ++counts[static_cast<std::size_t>(c)];
    const double p = 1.0 / 50.0;
    const double sigma = std::sqrt(100000 * p * (1 - p));
    for (const int c : counts) CHECK(std::abs(c - 2000.0) <= 3.0 * sigma + 1e-9);

    for (const char* name : {"income", "output", "gender"}) {
        const auto& col = data->column(name);
        const double ones = static_cast<double>(std::count(col.codes.begin(), col.codes.end(), 1));
        CHECK(std::abs(ones - 50000.0) <= 3.0 * std::sqrt(100000 * 0.25));
    }
    CHECK(data->attribute("income").role == Role::Protected);
    CHECK(data->attribute("output").categories == std::vector<std::string>{"0", "1"});
}

TEST_CASE("skewed marginals are respected") {
    PopulationSpec pop;
    pop.n = 50000;
    pop.attributes.push_back({"tier", {"a", "b", "c"}, {0.7, 0.2, 0.1}});
    pop.protected_probability = 0.3;
    const auto data = generate(pop, {}, 2);
    const auto& tier = data.column("tier").codes;
    const std::vector<double> probs{0.7, 0.2, 0.1};
    for (int c = 0; c < 3; ++c) {
        const double count = static_cast<double>(std::count(tier.begin(), tier.end(), c));
        const double p = probs[static_cast<std::size_t>(c)];
        CHECK(std::abs(count - 50000 * p) <= 3.0 * std::sqrt(50000 * p * (1 - p)));
    }
    const auto& s = data.column("income").codes;
    CHECK(std::abs(static_cast<double>(std::count(s.begin(), s.end(), 1)) - 15000.0) <= 3.0 * std::sqrt(50000 * 0.21));
}

TEST_CASE("null population has no global disparity") {
    const auto data = std::make_shared<const Dataset>(generate(PopulationSpec::standard(100000), {}, 3));
    CHECK(std::abs(diff_on(DatasetView(data))) <= 3.0 * diff_sigma(100000));
}

TEST_CASE("a plant over the whole population doubles its half-effect") {
    const std::vector<PlantSpec> plants{{{}, 0.25}};
    const auto data = std::make_shared<const Dataset>(generate(PopulationSpec::standard(20000), plants, 4));
    CHECK(std::abs(diff_on(DatasetView(data)) - 0.5) <= 3.0 * diff_sigma(20000));
}

TEST_CASE("each of ten disjoint plants shows DIFF = 2 delta") {
    const auto pop = PopulationSpec::standard(1000000);
    const auto plants = random_plants(pop, 10, 20000, 0.1, 5);
    const auto data = std::make_shared<const Dataset>(generate(pop, plants, 6));
    const DatasetView all(data);
    for (const auto& p : plants) {
        const auto view = select(all, p.context);
        CHECK(std::abs(diff_on(view) - 0.2) <= 4.0 * diff_sigma(view.size()));
    }
}

TEST_CASE("generate rejects invalid plants") {
    const auto pop = PopulationSpec::standard(1000);
    const auto ca = ContextPredicate::one_of("state", {"s01"});
    const auto white = ContextPredicate::one_of("race", {"r0"});
    const std::vector<PlantSpec> overlapping{{{ca}, 0.1}, {{ca, white}, 0.1}};
    CHECK_THROWS_AS(generate(pop, overlapping, 1), UsageError);
    const std::vector<PlantSpec> nested_disjoint{{{ca, white}, 0.1}, {{ca, ContextPredicate::one_of("race", {"r1"})}, 0.1}};
    CHECK_NOTHROW(generate(pop, nested_disjoint, 1));
    CHECK_THROWS_AS(generate(pop, std::vector<PlantSpec>{{{ca}, 0.6}}, 1), UsageError);
    CHECK_THROWS_AS(generate(pop, std::vector<PlantSpec>{{{ca}, -0.1}}, 1), UsageError);
    CHECK_THROWS_AS(generate(pop, std::vector<PlantSpec>{{{ContextPredicate::one_of("zip", {"1"})}, 0.1}}, 1), UsageError);
    CHECK_THROWS_AS(generate(pop, std::vector<PlantSpec>{{{ContextPredicate::at_most("state", 1)}, 0.1}}, 1), UsageError);
    PopulationSpec bad = pop;
    bad.attributes[1].probabilities = {0.5, 0.5, 0.5, 0.0, 0.0};
    CHECK_THROWS_AS(generate(bad, {}, 1), UsageError);
}

TEST_CASE("random plants are disjoint cells near the target size") {
    const auto pop = PopulationSpec::standard(100000);
    const auto plants = random_plants(pop, 10, 2000, 0.15, 7);
    REQUIRE(plants.size() == 10);
    for (std::size_t i = 0; i < plants.size(); ++i) {
        CHECK(plants[i].context.size() == 1);
        CHECK(expected_size(pop, plants[i].context) == doctest::Approx(2000));
        for (std::size_t j = 0; j < i; ++j) CHECK_FALSE(contexts_overlap(plants[i].context, plants[j].context));
    }
    const auto small = random_plants(PopulationSpec::standard(125000), 10, 500, 0.025, 7);
    CHECK(small[0].context.size() == 2);
    CHECK(expected_size(PopulationSpec::standard(125000), small[0].context) == doctest::Approx(500));
    CHECK(random_plants(pop, 10, 2000, 0.15, 7)[3].context == plants[3].context);
    CHECK(random_plants(pop, 0, 2000, 0.15, 7).empty());
}

TEST_CASE("score_detection examples") {
    const auto pop = PopulationSpec::standard(20000);
    const auto plants = random_plants(pop, 10, 400, 0.2, 8);
    const auto data = std::make_shared<const Dataset>(generate(pop, plants, 9));
    const DatasetView test(data);

    std::vector<Finding> exact;
    for (const auto& p : plants) exact.push_back(finding_for(p.context, 1e-4));
    auto score = score_detection(report_with(exact), plants, test);
    CHECK(score.recall == 1.0);
    CHECK(score.false_discoveries == 0);

    score = score_detection(report_with({}), plants, test);
    CHECK(score.recall == 0.0);
    CHECK(score.false_discoveries == 0);

    // Refinement of a plant: superset predicates, all rows inside.
    Context refined = plants[0].context;
    refined.push_back(ContextPredicate::one_of("gender", {"F"}));
    score = score_detection(report_with({finding_for(refined, 1e-4)}), plants, test);
    CHECK(score.recall == doctest::Approx(0.1));

    // A context elsewhere: significant counts as a false discovery, not otherwise.
    std::string free_state;
    for (const auto& s : pop.attributes[0].categories)
        if (std::none_of(plants.begin(), plants.end(), [&](const PlantSpec& p) { return p.context[0].values[0] == s; }))
            free_state = s;
    const Context elsewhere{ContextPredicate::one_of("state", {free_state})};
    CHECK(score_detection(report_with({finding_for(elsewhere, 1e-4)}), plants, test).false_discoveries == 1);
    CHECK(score_detection(report_with({finding_for(elsewhere, 0.5)}), plants, test).false_discoveries == 0);

    // A broad context holds about 2% of its rows in each plant: no discovery, and significant means false.
    const Context female{ContextPredicate::one_of("gender", {"F"})};
    score = score_detection(report_with({finding_for(female, 1e-4)}), plants, test);
    CHECK(score.recall == 0.0);
    CHECK(score.false_discoveries == 1);
}

TEST_CASE("detection recall is monotone in delta") {
    BenchConfig cfg;
    cfg.n = 100000;
    cfg.plants = 10;
    cfg.plant_size = 2000;
    cfg.runs = 10;
    cfg.seed = 21;
    double previous = -1.0;
    for (const double delta : {0.025, 0.05, 0.1, 0.15, 0.25}) {
        cfg.delta = delta;
        const auto rows = run_bench(cfg);
        double recall = 0.0;
        for (const auto& r : rows) recall += r.recall;
        recall /= static_cast<double>(rows.size());
        CHECK(recall >= previous);
        previous = recall;
    }
    CHECK(previous >= 0.9);
}

TEST_CASE("bench rows and CSV") {
    BenchConfig cfg;
    cfg.n = 20000;
    cfg.plants = 4;
    cfg.plant_size = 400;
    cfg.delta = 0.2;
    cfg.runs = 2;
    cfg.seed = 3;
    const auto rows = run_bench(cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].seed == derive_seed(3, 0));
    CHECK(rows[0].size == doctest::Approx(400));
    std::ostringstream out;
    write_bench_csv(out, rows);
    CHECK(out.str().rfind("delta,size,recall,false_discoveries,seed\n", 0) == 0);
    const auto again = run_bench(cfg);
    CHECK(again[1].recall == rows[1].recall);
    CHECK(again[1].false_discoveries == rows[1].false_discoveries);

    cfg.plant_size = 200;
    CHECK_THROWS_AS(run_bench(cfg), UsageError);
}

TEST_CASE("tree versus itemsets reports all strategies") {
    ComparisonConfig cfg;
    cfg.n = 12000;
    cfg.attributes = 8;
    cfg.min_size = 300;
    cfg.max_depth = 3;
    cfg.seed = 4;
    const auto rows = compare_tree_itemsets(cfg);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].strategy == "tree");
    CHECK(rows[1].strategy == "sampled-itemsets");
    CHECK(rows[2].strategy == "itemsets");
    CHECK(rows[0].candidates < rows[2].candidates);
    CHECK(rows[1].candidates <= 4 * rows[0].candidates);
    for (const auto& r : rows) CHECK(r.top3_mean > 0.0);
    const auto again = compare_tree_itemsets(cfg);
    CHECK(again[0].top3_mean == rows[0].top3_mean);
    CHECK(again[2].top3_mean == rows[2].top3_mean);
    std::ostringstream out;
    write_comparison_csv(out, rows);
    CHECK(out.str().rfind("strategy,candidates_considered,top3_mean_association\n", 0) == 0);
    cfg.attributes = 3;
    CHECK_THROWS_AS(compare_tree_itemsets(cfg), UsageError);
}
