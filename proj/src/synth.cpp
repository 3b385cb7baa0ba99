#include "uatest/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "uatest/random.hpp"

namespace uatest {

namespace {

const CategoricalSpec& find_attribute(const PopulationSpec& pop, std::string_view name) {
    for (const auto& a : pop.attributes)
        if (a.name == name) return a;
    throw UsageError(fmt::format("population has no attribute '{}'", name));
}

std::vector<double> probabilities(const CategoricalSpec& a) {
    if (!a.probabilities.empty()) return a.probabilities;
    return std::vector<double>(a.categories.size(), 1.0 / static_cast<double>(a.categories.size()));
}

/// Allowed category codes per population attribute; empty vector = any.
std::vector<std::vector<bool>> allowed_codes(const PopulationSpec& pop, const Context& context) {
    std::vector<std::vector<bool>> out(pop.attributes.size());
    for (const auto& p : context) {
        if (p.op != ContextPredicate::Op::OneOf)
            throw UsageError(fmt::format("planted predicate on '{}' must be a membership test", p.attribute));
        const auto& a = find_attribute(pop, p.attribute);
        const auto k = static_cast<std::size_t>(&a - pop.attributes.data());
        std::vector<bool> mask(a.categories.size(), false);
        for (const auto& v : p.values) {
            const auto it = std::find(a.categories.begin(), a.categories.end(), v);
            if (it == a.categories.end())
                throw UsageError(fmt::format("attribute '{}' has no category '{}'", p.attribute, v));
            mask[static_cast<std::size_t>(it - a.categories.begin())] = true;
        }
        if (out[k].empty()) out[k] = mask;
        else
            for (std::size_t c = 0; c < mask.size(); ++c) out[k][c] = out[k][c] && mask[c];
    }
    return out;
}

bool contains_all(const Context& big, const Context& small) {
    return std::all_of(small.begin(), small.end(),
                       [&](const ContextPredicate& p) { return std::find(big.begin(), big.end(), p) != big.end(); });
}

std::vector<RowIndex> sorted_rows(const DatasetView& view) {
    std::vector<RowIndex> rows(view.rows().begin(), view.rows().end());
    std::sort(rows.begin(), rows.end());
    return rows;
}

std::size_t intersection_size(const std::vector<RowIndex>& a, const std::vector<RowIndex>& b) {
    std::size_t n = 0;
    for (std::size_t i = 0, j = 0; i < a.size() && j < b.size();) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else ++n, ++i, ++j;
    }
    return n;
}

MetricSpec favored_diff() {
    MetricSpec spec;
    spec.kind = MetricKind::Diff;
    spec.target = 1;
    spec.group_a = 1;
    spec.group_b = 0;
    return spec;
}

double test_association(const DatasetView& test, const Context& ctx, std::string_view prot, std::string_view out) {
    const auto view = select(test, ctx);
    const auto spec = favored_diff();
    const auto value = try_estimate(spec, make_sample(view, prot, out, spec));
    return value ? std::abs(*value) : 0.0;
}

/// Retains the `keep` contexts with the largest training |DIFF| and returns
/// the mean of the three largest held-out |DIFF| among them.
double top3_mean(std::vector<std::pair<double, Context>> scored, std::size_t keep, const DatasetView& test,
                 std::string_view prot, std::string_view out) {
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    scored.resize(std::min(scored.size(), keep));
    std::vector<double> held_out;
    for (const auto& s : scored) held_out.push_back(test_association(test, s.second, prot, out));
    std::sort(held_out.begin(), held_out.end(), std::greater<>());
    double total = 0.0;
    for (std::size_t k = 0; k < 3 && k < held_out.size(); ++k) total += held_out[k];
    return total / 3.0;
}

} // namespace

PopulationSpec PopulationSpec::standard(std::size_t n) {
    PopulationSpec pop;
    pop.n = n;
    CategoricalSpec state{"state", {}, {}};
    for (int i = 0; i < 50; ++i) state.categories.push_back(fmt::format("s{:02}", i));
    pop.attributes.push_back(state);
    pop.attributes.push_back({"race", {"r0", "r1", "r2", "r3", "r4"}, {}});
    pop.attributes.push_back({"gender", {"F", "M"}, {}});
    return pop;
}

PopulationSpec PopulationSpec::binary(std::size_t n, std::size_t count) {
    PopulationSpec pop;
    pop.n = n;
    for (std::size_t i = 1; i <= count; ++i) pop.attributes.push_back({fmt::format("a{}", i), {"0", "1"}, {}});
    return pop;
}

void PopulationSpec::validate() const {
    if (n == 0) throw UsageError("population size must be positive");
    if (protected_labels.size() != 2 || protected_labels[0] == protected_labels[1])
        throw UsageError("the protected attribute needs two distinct labels");
    if (!(protected_probability > 0.0 && protected_probability < 1.0))
        throw UsageError("protected probability must lie in (0, 1)");
    std::set<std::string> names{protected_name, output_name};
    if (names.size() != 2) throw UsageError("protected and output names must differ");
    for (const auto& a : attributes) {
        if (!names.insert(a.name).second) throw UsageError(fmt::format("duplicate attribute '{}'", a.name));
        if (a.categories.empty()) throw UsageError(fmt::format("attribute '{}' has no categories", a.name));
        if (a.probabilities.empty()) continue;
        if (a.probabilities.size() != a.categories.size())
            throw UsageError(fmt::format("attribute '{}' needs one probability per category", a.name));
        const double total = std::accumulate(a.probabilities.begin(), a.probabilities.end(), 0.0);
        const bool negative = std::any_of(a.probabilities.begin(), a.probabilities.end(), [](double p) { return p < 0; });
        if (negative || std::abs(total - 1.0) > 1e-9)
            throw UsageError(fmt::format("probabilities of '{}' must be non-negative and sum to 1", a.name));
    }
}

double expected_size(const PopulationSpec& pop, const Context& context) {
    const auto allowed = allowed_codes(pop, context);
    double share = 1.0;
    for (std::size_t k = 0; k < allowed.size(); ++k) {
        if (allowed[k].empty()) continue;
        const auto p = probabilities(pop.attributes[k]);
        double s = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c)
            if (allowed[k][c]) s += p[c];
        share *= s;
    }
    return share * static_cast<double>(pop.n);
}

bool contexts_overlap(const Context& a, const Context& b) {
    for (const auto& p : a)
        for (const auto& q : b) {
            if (p.attribute != q.attribute || p.op != ContextPredicate::Op::OneOf || q.op != ContextPredicate::Op::OneOf)
                continue;
            const bool shared = std::any_of(p.values.begin(), p.values.end(), [&](const std::string& v) {
                return std::find(q.values.begin(), q.values.end(), v) != q.values.end();
            });
            if (!shared) return false;
        }
    return true;
}

Dataset generate(const PopulationSpec& pop, std::span<const PlantSpec> plants, std::uint64_t seed) {
    pop.validate();
    std::vector<std::vector<std::vector<bool>>> masks;
    for (std::size_t i = 0; i < plants.size(); ++i) {
        if (!(plants[i].delta >= 0.0 && plants[i].delta <= 0.5))
            throw UsageError(fmt::format("plant delta {} outside [0, 0.5]", plants[i].delta));
        masks.push_back(allowed_codes(pop, plants[i].context));
        for (std::size_t j = 0; j < i; ++j)
            if (contexts_overlap(plants[i].context, plants[j].context))
                throw UsageError(fmt::format("planted contexts {} and {} overlap", j + 1, i + 1));
    }

    const std::size_t k_attr = pop.attributes.size();
    std::vector<std::vector<double>> cdf(k_attr);
    for (std::size_t k = 0; k < k_attr; ++k) {
        const auto p = probabilities(pop.attributes[k]);
        std::partial_sum(p.begin(), p.end(), std::back_inserter(cdf[k]));
    }
    std::vector<Column> columns(k_attr + 2);
    for (auto& c : columns) c.codes.resize(pop.n);

    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::int32_t> row(k_attr);
    for (std::size_t r = 0; r < pop.n; ++r) {
        for (std::size_t k = 0; k < k_attr; ++k) {
            const double u = unit(rng) * cdf[k].back();
            const auto it = std::upper_bound(cdf[k].begin(), cdf[k].end(), u);
            row[k] = static_cast<std::int32_t>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf[k].begin()),
                                                                     cdf[k].size() - 1));
            columns[k].codes[r] = row[k];
        }
        const std::int32_t s = unit(rng) < pop.protected_probability ? 1 : 0;
        double p_one = 0.5;
        for (std::size_t i = 0; i < plants.size(); ++i) {
            bool inside = true;
            for (std::size_t k = 0; k < k_attr && inside; ++k)
                inside = masks[i][k].empty() || masks[i][k][static_cast<std::size_t>(row[k])];
            if (inside) {
                p_one = s == 1 ? 0.5 + plants[i].delta : 0.5 - plants[i].delta;
                break;
            }
        }
        columns[k_attr].codes[r] = s;
        columns[k_attr + 1].codes[r] = unit(rng) < p_one ? 1 : 0;
    }

    std::vector<AttributeSchema> schema;
    for (const auto& a : pop.attributes)
        schema.push_back({a.name, AttributeKind::Categorical, Role::Contextual, a.categories});
    schema.push_back({pop.protected_name, AttributeKind::Categorical, Role::Protected, pop.protected_labels});
    schema.push_back({pop.output_name, AttributeKind::Categorical, Role::Output, {"0", "1"}});
    std::vector<std::shared_ptr<const Column>> shared;
    for (auto& c : columns) shared.push_back(std::make_shared<const Column>(std::move(c)));
    return Dataset(std::move(schema), std::move(shared));
}

std::vector<PlantSpec> random_plants(const PopulationSpec& pop, std::size_t count, double target_size,
                                     double delta, std::uint64_t seed) {
    pop.validate();
    if (count == 0) return {};
    const std::size_t k_attr = pop.attributes.size();
    if (k_attr == 0 || k_attr > 24) throw UsageError("random plants need between 1 and 24 contextual attributes");
    if (!(target_size > 0.0)) throw UsageError("plant size must be positive");

    std::uint32_t best = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    int best_bits = 0;
    for (std::uint32_t mask = 1; mask < (1u << k_attr); ++mask) {
        double cells = 1.0;
        for (std::size_t k = 0; k < k_attr; ++k)
            if (mask & (1u << k)) cells *= static_cast<double>(pop.attributes[k].categories.size());
        if (cells < static_cast<double>(count)) continue;
        const double gap = std::abs(std::log(static_cast<double>(pop.n) / cells / target_size));
        const int bits = std::popcount(mask);
        if (gap < best_gap - 1e-12 || (std::abs(gap - best_gap) <= 1e-12 && bits < best_bits)) {
            best = mask;
            best_gap = gap;
            best_bits = bits;
        }
    }
    if (best == 0) throw UsageError(fmt::format("the population has fewer than {} disjoint cells", count));

    Rng rng(seed);
    std::set<std::vector<std::size_t>> chosen;
    std::vector<PlantSpec> plants;
    while (plants.size() < count) {
        std::vector<std::size_t> cell;
        for (std::size_t k = 0; k < k_attr; ++k)
            if (best & (1u << k)) {
                std::uniform_int_distribution<std::size_t> pick(0, pop.attributes[k].categories.size() - 1);
                cell.push_back(pick(rng));
            }
        if (!chosen.insert(cell).second) continue;
        PlantSpec plant;
        plant.delta = delta;
        std::size_t i = 0;
        for (std::size_t k = 0; k < k_attr; ++k)
            if (best & (1u << k))
                plant.context.push_back(ContextPredicate::one_of(pop.attributes[k].name, {pop.attributes[k].categories[cell[i++]]}));
        plants.push_back(std::move(plant));
    }
    return plants;
}

DetectionScore score_detection(const ReportModel& report, std::span<const PlantSpec> plants, const DatasetView& test) {
    std::vector<std::vector<RowIndex>> plant_rows;
    for (const auto& p : plants) plant_rows.push_back(sorted_rows(select(test, p.context)));
    std::vector<bool> found(plants.size(), false);
    DetectionScore score;
    for (const auto& section : report.sections)
        for (const auto& f : section.subpopulations) {
            const auto rows = sorted_rows(select(test, f.context));
            bool near_plant = false;
            for (std::size_t i = 0; i < plants.size(); ++i) {
                const double share = rows.empty() ? 0.0
                                                  : static_cast<double>(intersection_size(rows, plant_rows[i])) /
                                                        static_cast<double>(rows.size());
                if (share >= 0.1) near_plant = true;
                const bool related = contains_all(f.context, plants[i].context) || contains_all(plants[i].context, f.context);
                if (related && share >= 0.5) found[i] = true;
            }
            if (!near_plant && f.significant(report.conf)) ++score.false_discoveries;
        }
    score.recall = plants.empty() ? 1.0
                                  : static_cast<double>(std::count(found.begin(), found.end(), true)) /
                                        static_cast<double>(plants.size());
    return score;
}

BenchRow bench_run(const BenchConfig& config, std::uint64_t seed) {
    const auto pop = PopulationSpec::standard(config.n);
    const auto plants = random_plants(pop, config.plants, config.plant_size, config.delta, derive_seed(seed, 1));
    for (const auto& p : plants)
        if (expected_size(pop, p.context) < 4.0 * static_cast<double>(config.min_size))
            throw UsageError(fmt::format("planted context '{}' is expected to hold fewer than 4 x MIN_SIZE rows",
                                         describe(p.context)));
    auto data = std::make_shared<const Dataset>(generate(pop, plants, derive_seed(seed, 2)));
    DataSource source(data, 1, 0.5, derive_seed(seed, 3), config.min_size);

    InvestigationSpec spec;
    spec.protected_attrs = {pop.protected_name};
    spec.output = pop.output_name;
    spec.metric = MetricKind::Diff;
    spec.target = "1";
    spec.group_a = pop.protected_labels[1];
    spec.group_b = pop.protected_labels[0];
    spec.tree.min_size = config.min_size;
    spec.tree.max_depth = config.max_depth;
    spec.stats.conf = config.conf;
    spec.stats.seed = derive_seed(seed, 4);
    const auto report = investigate(spec, source);
    const auto score = score_detection(report, plants, source.test_set(0));

    BenchRow row;
    row.delta = config.delta;
    row.size = plants.empty() ? 0.0 : expected_size(pop, plants.front().context);
    row.recall = score.recall;
    row.false_discoveries = score.false_discoveries;
    row.seed = seed;
    return row;
}

std::vector<BenchRow> run_bench(const BenchConfig& config) {
    std::vector<BenchRow> rows;
    for (std::size_t r = 0; r < config.runs; ++r) rows.push_back(bench_run(config, derive_seed(config.seed, r)));
    return rows;
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows) {
    out << "delta,size,recall,false_discoveries,seed\n";
    for (const auto& r : rows) out << fmt::format("{},{},{},{},{}\n", r.delta, r.size, r.recall, r.false_discoveries, r.seed);
}

std::vector<PlantSpec> comparison_plants() {
    // Each of a1..a4 set to "1" adds 0.05 to the half-effect.
    std::vector<PlantSpec> plants;
    for (unsigned cell = 1; cell < 16; ++cell) {
        PlantSpec plant;
        for (unsigned k = 0; k < 4; ++k)
            plant.context.push_back(ContextPredicate::one_of(fmt::format("a{}", k + 1), {(cell >> k) & 1u ? "1" : "0"}));
        plant.delta = 0.05 * static_cast<double>(std::popcount(cell));
        plants.push_back(std::move(plant));
    }
    return plants;
}

std::vector<StrategyResult> compare_tree_itemsets(const ComparisonConfig& config) {
    if (config.attributes < 6) throw UsageError("the comparison needs at least 6 contextual attributes");
    const auto pop = PopulationSpec::binary(config.n, config.attributes);
    const auto plants = config.plants.empty() ? comparison_plants() : config.plants;
    auto data = std::make_shared<const Dataset>(generate(pop, plants, derive_seed(config.seed, 1)));
    DataSource source(data, 1, 0.5, derive_seed(config.seed, 2), config.min_size);
    const auto& train = source.train();
    const auto& test = source.test_set(0);

    std::vector<std::string> contextual;
    for (const auto& a : pop.attributes) contextual.push_back(a.name);
    TreeParams params;
    params.min_size = config.min_size;
    params.max_depth = config.max_depth;
    params.split_alpha = config.split_alpha;

    const auto tree = find_contexts(train, pop.protected_name, pop.output_name, favored_diff(), contextual, params);
    std::vector<std::pair<double, Context>> tree_scored;
    for (std::size_t i = 1; i < tree.nodes.size(); ++i)
        if (tree.nodes[i].metric) tree_scored.emplace_back(std::abs(*tree.nodes[i].metric), tree.nodes[i].predicates);

    const auto items = enumerate_itemsets(train, pop.protected_name, pop.output_name, favored_diff(), contextual,
                                          config.min_size, config.max_depth);
    std::vector<std::pair<double, Context>> item_scored;
    for (const auto& c : items.contexts)
        if (c.metric) item_scored.emplace_back(std::abs(*c.metric), c.predicates);

    // Unguided baseline: a random sample of itemsets, sample_factor times the tree's evaluations.
    const std::size_t budget = std::min(item_scored.size(), config.sample_factor * tree.evaluations);
    std::vector<std::size_t> order(item_scored.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 3));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(budget);
    std::sort(order.begin(), order.end());
    std::vector<std::pair<double, Context>> sampled;
    for (const auto i : order) sampled.push_back(item_scored[i]);

    // Every strategy sends as many contexts to the held-out rows as the tree registered.
    const std::size_t keep = tree_scored.size();
    const auto& s_name = pop.protected_name;
    const auto& o_name = pop.output_name;
    std::vector<StrategyResult> out;
    out.push_back({"tree", tree.evaluations, top3_mean(std::move(tree_scored), keep, test, s_name, o_name)});
    out.push_back({"sampled-itemsets", budget, top3_mean(std::move(sampled), keep, test, s_name, o_name)});
    out.push_back({"itemsets", items.evaluations, top3_mean(std::move(item_scored), keep, test, s_name, o_name)});
    return out;
}

void write_comparison_csv(std::ostream& out, std::span<const StrategyResult> rows) {
    out << "strategy,candidates_considered,top3_mean_association\n";
    for (const auto& r : rows) out << fmt::format("{},{},{:.6f}\n", r.strategy, r.candidates, r.top3_mean);
}

} // namespace uatest
