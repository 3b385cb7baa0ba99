#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uatest/dataset.hpp"
#include "uatest/metrics.hpp"

namespace uatest {

struct TreeParams {
    std::size_t min_size = 100;
    std::size_t max_depth = 5;
    /// Threshold candidates per continuous or ordinal attribute.
    std::size_t quantiles = 8;
    /// A part only beats its parent when it is also significant on the
    /// training rows at split_alpha / (parts evaluated at the node). 1 keeps
    /// every part whose point estimate is larger.
    double split_alpha = 0.01;

    /// max_depth = 0 is accepted and yields the root alone.
    void validate() const;
    bool operator==(const TreeParams&) const = default;
};

struct ContextNode {
    Context predicates;
    std::size_t size = 0;
    /// Training point estimate; nullopt when undefined on the node.
    std::optional<double> metric;
    std::optional<std::size_t> parent;
    std::vector<std::size_t> children;
    /// Training rows, kept so callers can inspect or re-test the node.
    std::vector<RowIndex> rows;

    std::size_t depth() const { return predicates.size(); }
};

struct ContextTree {
    MetricSpec spec;
    /// Pre-order; nodes[0] is the root.
    std::vector<ContextNode> nodes;
    /// Metric evaluations performed, including the root.
    std::size_t evaluations = 0;
};

/// Rows split by one contextual attribute. Categorical attributes give one
/// part per value present; thresholds give {<= t, > t}.
struct Partition {
    std::string attribute;
    std::vector<ContextPredicate> predicates;
    std::vector<std::vector<RowIndex>> parts;
};

/// Candidate partitions of `node` on `attribute`. Rows missing the attribute
/// fall in no part; partitions with a part under two rows are dropped.
std::vector<Partition> enumerate_splits(const DatasetView& node, std::string_view attribute, const TreeParams& params);

/// Mean over parts, |value| for signed metrics, undefined parts scoring 0.
double score_split(std::span<const std::optional<double>> part_metrics, MetricKind kind);

/// Association-guided tree over `contextual` attributes of the training view.
/// The tree always grows on the unconditioned metric. Rows missing the
/// protected or output value are dropped first. Throws MetricError when the
/// root metric is undefined.
ContextTree find_contexts(const DatasetView& train, std::string_view protected_attr, std::string_view output_attr,
                          MetricSpec spec, std::span<const std::string> contextual, const TreeParams& params);
/// Uses every attribute whose schema role is Contextual.
ContextTree find_contexts(const DatasetView& train, std::string_view protected_attr, std::string_view output_attr,
                          const MetricSpec& spec, const TreeParams& params);

/// One itemset from exhaustive enumeration.
struct ScoredContext {
    Context predicates;
    std::size_t size = 0;
    std::optional<double> metric;
};

struct ItemsetSearch {
    /// All conjunctions of attribute=value items over distinct attributes,
    /// with at most max_depth items and at least min_size rows.
    std::vector<ScoredContext> contexts;
    std::size_t evaluations = 0;
};

/// Exhaustive baseline over categorical (or ordinal, by value) attributes.
/// Each itemset with at least min_size rows costs one metric evaluation.
ItemsetSearch enumerate_itemsets(const DatasetView& train, std::string_view protected_attr,
                                 std::string_view output_attr, MetricSpec spec, std::span<const std::string> contextual,
                                 std::size_t min_size, std::size_t max_depth);

} // namespace uatest
