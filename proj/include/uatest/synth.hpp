#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "uatest/dataset.hpp"
#include "uatest/investigations.hpp"

namespace uatest {

struct CategoricalSpec {
    std::string name;
    std::vector<std::string> categories;
    /// Empty means uniform.
    std::vector<double> probabilities;
};

/// Synthetic population: independent categorical contextual attributes, a
/// binary protected attribute and a binary output ("0"/"1") that is a fair
/// coin outside planted contexts.
struct PopulationSpec {
    std::size_t n = 100000;
    std::vector<CategoricalSpec> attributes;
    std::string protected_name = "income";
    /// Protected labels; the second is the group favored inside plants.
    std::vector<std::string> protected_labels{"low", "high"};
    double protected_probability = 0.5;
    std::string output_name = "output";

    /// 50 uniform states, 5 races, binary gender.
    static PopulationSpec standard(std::size_t n);
    /// `count` binary attributes a1..aK with Pr(value "1") = 0.5.
    static PopulationSpec binary(std::size_t n, std::size_t count);

    /// Throws UsageError on empty or non-normalized attribute specs.
    void validate() const;
};

/// Within `context`, Pr(output=1 | S=second) = 0.5 + delta and
/// Pr(output=1 | S=first) = 0.5 - delta, so DIFF = 2 delta.
struct PlantSpec {
    Context context;
    double delta = 0.0;
};

/// Expected number of rows matching the plant's context.
double expected_size(const PopulationSpec& pop, const Context& context);

/// True when two membership contexts can match the same row.
bool contexts_overlap(const Context& a, const Context& b);

/// Seeded population with planted effects. Throws UsageError for overlapping
/// plants, delta outside [0, 0.5] or predicates on unknown attributes.
Dataset generate(const PopulationSpec& pop, std::span<const PlantSpec> plants, std::uint64_t seed);

/// `count` random disjoint plants. The attribute combination is the one whose
/// expected cell size is closest to `target_size` (log scale, fewer
/// attributes on ties); cells are drawn without replacement.
std::vector<PlantSpec> random_plants(const PopulationSpec& pop, std::size_t count, double target_size,
                                     double delta, std::uint64_t seed);

struct DetectionScore {
    double recall = 0.0;
    std::size_t false_discoveries = 0;
};

/// A plant is discovered when a reported subpopulation's predicates are a
/// subset or superset of the plant's and at least half of its `test` rows lie
/// in the plant. A significant reported subpopulation with less than 10% of
/// its rows in every plant is a false discovery.
DetectionScore score_detection(const ReportModel& report, std::span<const PlantSpec> plants,
                               const DatasetView& test);

struct BenchConfig {
    std::size_t n = 100000;
    std::size_t plants = 10;
    double delta = 0.15;
    double plant_size = 2000;
    std::size_t runs = 10;
    std::uint64_t seed = 0;
    double conf = 0.95;
    std::size_t min_size = 100;
    std::size_t max_depth = 5;
};

struct BenchRow {
    double delta = 0.0;
    double size = 0.0;
    double recall = 0.0;
    std::size_t false_discoveries = 0;
    std::uint64_t seed = 0;
};

/// One Testing investigation per run on a standard population with random
/// plants; run r uses derive_seed(config.seed, r).
BenchRow bench_run(const BenchConfig& config, std::uint64_t seed);
std::vector<BenchRow> run_bench(const BenchConfig& config);
void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows);

struct ComparisonConfig {
    std::size_t n = 40000;
    std::size_t attributes = 15;
    std::size_t min_size = 500;
    std::size_t max_depth = 5;
    std::uint64_t seed = 0;
    /// Planted effects over a1..aK; empty means comparison_plants().
    std::vector<PlantSpec> plants;
    /// Budget of the sampled-itemset baseline as a multiple of the tree's evaluations.
    std::size_t sample_factor = 4;
    double split_alpha = TreeParams{}.split_alpha;
};

/// Graded heterogeneity: every cell of a1..a4 with j attributes set to "1"
/// has half-effect 0.05 j, so DIFF peaks at 0.4 where all four are set.
std::vector<PlantSpec> comparison_plants();

struct StrategyResult {
    std::string strategy;
    std::size_t candidates = 0;
    /// Of the contexts kept by training |DIFF| (as many as the tree registered),
    /// the mean of the three largest held-out |DIFF|.
    double top3_mean = 0.0;
};

/// Guided tree versus exhaustive itemsets and versus a random itemset sample
/// on a binary-attribute population; all search the training half and are
/// scored on the other half. Rows: tree, sampled-itemsets, itemsets.
std::vector<StrategyResult> compare_tree_itemsets(const ComparisonConfig& config);
void write_comparison_csv(std::ostream& out, std::span<const StrategyResult> rows);

} // namespace uatest
