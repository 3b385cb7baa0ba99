#include "uatest/tree.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "uatest/random.hpp"
#include "uatest/stats.hpp"

namespace uatest {

namespace {

/// Metric and training p-value for arbitrary row subsets, from dense per-row
/// copies of the protected and output columns.
class Evaluator {
public:
    struct Result {
        std::optional<double> value;
        double p_value = 1.0;
    };

    Evaluator(const DatasetView& view, std::string_view protected_attr, std::string_view output_attr,
              const MetricSpec& spec)
        : spec_(spec) {
        const auto sample = make_sample(view, protected_attr, output_attr, spec);
        const auto rows = view.rows();
        const std::size_t n = view.data().rows();
        scalar_ = sample.scalar();
        if (scalar_) {
            x_.assign(n, 0.0);
            y_.assign(n, 0.0);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                x_[rows[i]] = sample.x[i];
                y_[rows[i]] = sample.y[i];
            }
        } else {
            s_.assign(n, 0);
            o_.assign(n, 0);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                s_[rows[i]] = sample.s[i];
                o_[rows[i]] = sample.o[i];
            }
            s_levels_ = sample.s_levels;
            o_levels_ = sample.o_levels;
        }
    }

    Result operator()(std::span<const RowIndex> rows) const {
        Result r;
        if (scalar_) {
            std::vector<double> x(rows.size()), y(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                x[i] = x_[rows[i]];
                y[i] = y_[rows[i]];
            }
            r.value = try_pearson(x, y);
            if (r.value) r.p_value = correlation_p_value(*r.value, rows.size());
            return r;
        }
        CountMatrix c = CountMatrix::Zero(o_levels_, s_levels_);
        for (const auto row : rows) ++c(o_[row], s_[row]);
        switch (spec_.kind) {
        case MetricKind::Nmi: r.value = try_mutual_information(c, true); break;
        case MetricKind::Diff: r.value = try_difference(c, spec_.target, spec_.group_a, spec_.group_b); break;
        case MetricKind::Ratio: r.value = try_ratio(c, spec_.target, spec_.group_a, spec_.group_b); break;
        default: throw MetricError(fmt::format("{} cannot guide the context tree", to_string(spec_.kind)));
        }
        if (r.value) r.p_value = asymptotic_p_value(spec_, c);
        return r;
    }

private:
    MetricSpec spec_;
    bool scalar_ = false;
    std::vector<std::int32_t> s_, o_;
    std::vector<double> x_, y_;
    std::int32_t s_levels_ = 0;
    std::int32_t o_levels_ = 0;
};

double strength(const std::optional<double>& v) { return v ? std::abs(*v) : 0.0; }

struct EvaluatedPartition {
    Partition partition;
    std::vector<Evaluator::Result> results;
};

class TreeBuilder {
public:
    TreeBuilder(const DatasetView& train, const Evaluator& eval, std::span<const std::string> contextual,
                const TreeParams& params, ContextTree& tree)
        : data_(train.data_ptr()), eval_(eval), contextual_(contextual), params_(params), tree_(tree) {}

    void grow(std::size_t index) {
        const std::size_t depth = tree_.nodes[index].depth();
        if (tree_.nodes[index].size < params_.min_size || depth >= params_.max_depth) return;
        const DatasetView node(data_, tree_.nodes[index].rows);
        const double parent = strength(tree_.nodes[index].metric);

        std::vector<std::vector<EvaluatedPartition>> per_attribute(contextual_.size());
        parallel_for(contextual_.size(), [&](std::size_t a) {
            for (auto& p : enumerate_splits(node, contextual_[a], params_)) {
                EvaluatedPartition ep{std::move(p), {}};
                for (const auto& part : ep.partition.parts) ep.results.push_back(eval_(part));
                per_attribute[a].push_back(std::move(ep));
            }
        });

        std::size_t parts = 0;
        for (const auto& list : per_attribute)
            for (const auto& ep : list) parts += ep.results.size();
        tree_.evaluations += parts;
        if (parts == 0) return;
        const double alpha = params_.split_alpha >= 1.0 ? 1.0 : params_.split_alpha / static_cast<double>(parts);

        const EvaluatedPartition* best = nullptr;
        double best_score = 0.0;
        for (const auto& list : per_attribute) {
            for (const auto& ep : list) {
                const bool eligible = std::any_of(ep.results.begin(), ep.results.end(), [&](const auto& r) {
                    return r.value && std::abs(*r.value) > parent && r.p_value <= alpha;
                });
                if (!eligible) continue;
                std::vector<std::optional<double>> values;
                for (const auto& r : ep.results) values.push_back(r.value);
                const double score = score_split(values, tree_.spec.kind);
                if (!best || score > best_score) {
                    best = &ep;
                    best_score = score;
                }
            }
        }
        if (!best) return;

        for (std::size_t k = 0; k < best->partition.parts.size(); ++k) {
            const auto& rows = best->partition.parts[k];
            if (rows.size() < params_.min_size) continue;
            ContextNode child;
            child.predicates = tree_.nodes[index].predicates;
            child.predicates.push_back(best->partition.predicates[k]);
            child.size = rows.size();
            child.metric = best->results[k].value;
            child.parent = index;
            child.rows = rows;
            const std::size_t child_index = tree_.nodes.size();
            tree_.nodes.push_back(std::move(child));
            tree_.nodes[index].children.push_back(child_index);
            grow(child_index);
        }
    }

private:
    std::shared_ptr<const Dataset> data_;
    const Evaluator& eval_;
    std::span<const std::string> contextual_;
    const TreeParams& params_;
    ContextTree& tree_;
};

MetricSpec unconditioned(MetricSpec spec) {
    spec.conditioning.reset();
    return spec;
}

} // namespace

void TreeParams::validate() const {
    if (min_size < 10) throw UsageError("minimum context size must be at least 10");
    if (quantiles < 2) throw UsageError("threshold quantile count must be at least 2");
    if (!(split_alpha > 0.0 && split_alpha <= 1.0)) throw UsageError("split significance level must lie in (0, 1]");
}

std::vector<Partition> enumerate_splits(const DatasetView& node, std::string_view attribute, const TreeParams& params) {
    const auto& data = node.data();
    const auto& attr = data.attribute(attribute);
    const auto& col = data.column(attribute);
    const auto rows = node.rows();
    std::vector<Partition> out;

    if (attr.kind == AttributeKind::Categorical) {
        std::vector<std::vector<RowIndex>> buckets(attr.categories.size());
        for (const auto row : rows)
            if (col.codes[row] >= 0) buckets[static_cast<std::size_t>(col.codes[row])].push_back(row);
        Partition p;
        p.attribute = attr.name;
        for (std::size_t c = 0; c < buckets.size(); ++c) {
            if (buckets[c].empty()) continue;
            if (buckets[c].size() < 2) return out;
            p.predicates.push_back(ContextPredicate::one_of(attr.name, {attr.categories[c]}));
            p.parts.push_back(std::move(buckets[c]));
        }
        if (p.parts.size() >= 2) out.push_back(std::move(p));
        return out;
    }

    const bool ordinal = attr.kind == AttributeKind::Ordinal;
    auto value_of = [&](RowIndex row) {
        return ordinal ? static_cast<double>(col.codes[row]) : col.values[row];
    };
    std::vector<double> values;
    values.reserve(rows.size());
    for (const auto row : rows)
        if (!col.missing(row)) values.push_back(value_of(row));
    if (values.size() < 4) return out;
    std::sort(values.begin(), values.end());

    std::vector<double> thresholds;
    const auto q = static_cast<double>(params.quantiles + 1);
    for (std::size_t k = 1; k <= params.quantiles; ++k) {
        const auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(k) * static_cast<double>(values.size() - 1) / q));
        thresholds.push_back(values[idx]);
    }
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    for (const double t : thresholds) {
        Partition p;
        p.attribute = attr.name;
        p.parts.resize(2);
        for (const auto row : rows) {
            if (col.missing(row)) continue;
            p.parts[value_of(row) <= t ? 0 : 1].push_back(row);
        }
        if (p.parts[0].size() < 2 || p.parts[1].size() < 2) continue;
        p.predicates = {ContextPredicate::at_most(attr.name, t), ContextPredicate::above(attr.name, t)};
        out.push_back(std::move(p));
    }
    return out;
}

double score_split(std::span<const std::optional<double>> part_metrics, MetricKind kind) {
    if (part_metrics.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& v : part_metrics)
        if (v) sum += is_signed(kind) ? std::abs(*v) : *v;
    return sum / static_cast<double>(part_metrics.size());
}

ContextTree find_contexts(const DatasetView& train, std::string_view protected_attr, std::string_view output_attr,
                          MetricSpec spec, std::span<const std::string> contextual, const TreeParams& params) {
    params.validate();
    spec = unconditioned(spec);
    for (const auto& a : contextual) {
        if (a == protected_attr || a == output_attr)
            throw UsageError(fmt::format("attribute '{}' cannot be both contextual and protected or output", a));
        (void)train.data().index_of(a);
    }
    const std::vector<std::string> pair{std::string(protected_attr), std::string(output_attr)};
    const auto view = drop_missing(train, pair);
    const Evaluator eval(view, protected_attr, output_attr, spec);

    ContextTree tree;
    tree.spec = spec;
    ContextNode root;
    root.size = view.size();
    root.rows.assign(view.rows().begin(), view.rows().end());
    const auto r = eval(root.rows);
    tree.evaluations = 1;
    if (!r.value) throw MetricError("metric undefined on the training population");
    root.metric = r.value;
    tree.nodes.push_back(std::move(root));
    TreeBuilder(view, eval, contextual, params, tree).grow(0);
    return tree;
}

ContextTree find_contexts(const DatasetView& train, std::string_view protected_attr, std::string_view output_attr,
                          const MetricSpec& spec, const TreeParams& params) {
    std::vector<std::string> contextual;
    for (const auto& a : train.data().schema())
        if (a.role == Role::Contextual) contextual.push_back(a.name);
    return find_contexts(train, protected_attr, output_attr, spec, contextual, params);
}

ItemsetSearch enumerate_itemsets(const DatasetView& train, std::string_view protected_attr,
                                 std::string_view output_attr, MetricSpec spec, std::span<const std::string> contextual,
                                 std::size_t min_size, std::size_t max_depth) {
    spec = unconditioned(spec);
    const auto& data = train.data();
    for (const auto& a : contextual)
        if (!data.attribute(a).is_discrete())
            throw UsageError(fmt::format("itemset enumeration needs discrete attributes; '{}' is continuous", a));
    const std::vector<std::string> pair{std::string(protected_attr), std::string(output_attr)};
    const auto view = drop_missing(train, pair);
    const Evaluator eval(view, protected_attr, output_attr, spec);

    ItemsetSearch out;
    Context items;
    auto recurse = [&](auto& self, std::size_t first, const std::vector<RowIndex>& rows) -> void {
        for (std::size_t a = first; a < contextual.size(); ++a) {
            const auto& attr = data.attribute(contextual[a]);
            const auto& col = data.column(contextual[a]);
            std::vector<std::vector<RowIndex>> buckets(attr.categories.size());
            for (const auto row : rows)
                if (col.codes[row] >= 0) buckets[static_cast<std::size_t>(col.codes[row])].push_back(row);
            for (std::size_t c = 0; c < buckets.size(); ++c) {
                if (buckets[c].size() < min_size) continue;
                items.push_back(ContextPredicate::one_of(attr.name, {attr.categories[c]}));
                ++out.evaluations;
                out.contexts.push_back({items, buckets[c].size(), eval(buckets[c]).value});
                if (items.size() < max_depth) self(self, a + 1, buckets[c]);
                items.pop_back();
            }
        }
    };
    const std::vector<RowIndex> all(view.rows().begin(), view.rows().end());
    if (max_depth > 0 && all.size() >= min_size) recurse(recurse, 0, all);
    return out;
}

} // namespace uatest
