#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uatest/dataset.hpp"
#include "uatest/metrics.hpp"
#include "uatest/stats.hpp"
#include "uatest/tree.hpp"

namespace uatest {

enum class InvestigationKind { Testing, Discovery, ErrorProfiling };
enum class ErrorKind { Absolute, ZeroOne };

std::string_view to_string(InvestigationKind kind);
InvestigationKind parse_investigation(std::string_view text);
std::string_view to_string(ErrorKind kind);
ErrorKind parse_error_kind(std::string_view text);

struct InvestigationSpec {
    InvestigationKind kind = InvestigationKind::Testing;
    std::vector<std::string> protected_attrs;
    /// Empty means every attribute with the Contextual role.
    std::vector<std::string> contextual;
    std::optional<std::string> explanatory;
    /// Predictions for ErrorProfiling, label sets for Discovery.
    std::string output;
    std::optional<MetricKind> metric;
    std::size_t top_k = 35;
    std::optional<std::string> ground_truth;
    ErrorKind error = ErrorKind::Absolute;
    /// DIFF/RATIO bindings by category label. Defaults: target = second
    /// output category, group_a = first protected category, group_b = second.
    std::optional<std::string> target;
    std::optional<std::string> group_a;
    std::optional<std::string> group_b;
    TreeParams tree;
    StatConfig stats;

    bool operator==(const InvestigationSpec&) const = default;
};

/// Column holding |prediction - truth| (continuous) or a 0/1 mismatch flag
/// (categorical with categories {"0", "1"}). Missing inputs give missing.
Column compute_error(const Dataset& data, std::string_view prediction, std::string_view truth, ErrorKind kind);

/// Name of the derived column holding the error of `output`.
std::string error_column_name(std::string_view output);
/// Name of the derived 0/1 column flagging `label` in the label-set output.
std::string label_column_name(std::string_view output, std::string_view label);

/// Adds the derived columns the investigation evaluates (error column,
/// label indicators) to the full dataset. Derivation is row-wise, so the
/// result can be split afterwards without leaking training information.
std::shared_ptr<const Dataset> prepare_dataset(const InvestigationSpec& spec, std::shared_ptr<const Dataset> data);

/// Metric from attribute types: binary/binary -> DIFF, discrete -> NMI,
/// scalar or binary pairs -> CORR. Throws MetricError when no metric fits.
MetricKind select_metric(const AttributeSchema& protected_attr, const AttributeSchema& output);

/// Concrete metric binding for one protected/output pair under `spec`.
MetricSpec bind_metric(const InvestigationSpec& spec, const Dataset& data, std::string_view protected_attr,
                       std::string_view output_attr, std::optional<MetricKind> kind);

struct LabelScore {
    std::string label;
    double coefficient = 0.0;
    double std_error = 0.0;
    double score = 0.0;

    bool operator==(const LabelScore&) const = default;
};

/// One tree of candidate contexts for a protected attribute and evaluated
/// output (the output itself, its error column, or one label indicator).
struct TrainedTree {
    std::string protected_attr;
    /// Attribute the metric is evaluated on.
    std::string output_attr;
    /// Name shown as O in reports.
    std::string output_name;
    std::optional<std::string> label;
    MetricSpec spec;
    /// Pre-order, contexts[0] is the root (empty context).
    std::vector<Context> contexts;
    std::vector<std::optional<std::size_t>> parents;
    std::vector<std::size_t> train_sizes;

    bool operator==(const TrainedTree&) const = default;
};

struct TrainResult {
    InvestigationSpec spec;
    std::vector<TrainedTree> trees;
    /// Discovery only: per protected attribute, the labels kept at the root.
    std::vector<std::pair<std::string, std::vector<LabelScore>>> label_rankings;
    std::size_t evaluations = 0;

    bool operator==(const TrainResult&) const = default;
};

/// 5-number summary of O within one decile of S.
struct DecileSummary {
    double s_lo = 0.0;
    double s_hi = 0.0;
    std::size_t n = 0;
    std::array<double, 5> o{};

    bool operator==(const DecileSummary&) const = default;
};

struct StratumFinding {
    std::string label;
    std::size_t size = 0;
    TestedMetric tested;
    std::optional<ContingencyTable> table;

    bool operator==(const StratumFinding&) const = default;
};

struct Finding {
    Context context;
    std::string context_text;
    /// Test rows in the context.
    std::size_t size = 0;
    std::string protected_attr;
    std::string output_name;
    std::optional<std::string> label;
    MetricSpec spec;
    TestedMetric tested;
    std::optional<ContingencyTable> table;
    std::vector<DecileSummary> deciles;
    /// Per-stratum results of a conditioned test.
    std::vector<StratumFinding> strata;
    /// Position in the trained tree; nullopt for contexts not from a tree.
    std::optional<std::size_t> node;
    std::size_t rank = 0;

    bool is_global() const { return context.empty(); }
    /// Corrected-CI lower bound on the effect size: lo for NMI, and
    /// max(0, lo, -hi) for signed metrics.
    double effect_lower_bound() const;
    bool significant(double conf) const { return tested.corrected_p <= 1.0 - conf; }
    bool operator==(const Finding&) const = default;
};

/// Findings for one (protected, output/label) pair.
struct ReportSection {
    std::string protected_attr;
    std::string output_attr;
    std::string output_name;
    std::optional<std::string> label;
    MetricSpec spec;
    Finding global;
    std::vector<Finding> subpopulations;

    bool operator==(const ReportSection&) const = default;
};

struct ReportModel {
    InvestigationKind kind = InvestigationKind::Testing;
    std::vector<std::string> protected_attrs;
    std::string output;
    std::optional<std::string> explanatory;
    double conf = 0.95;
    /// Hypotheses in the multiple-testing family.
    std::size_t family_size = 0;
    std::vector<ReportSection> sections;
    std::vector<std::pair<std::string, std::vector<LabelScore>>> label_rankings;
    std::vector<std::string> notes;

    bool operator==(const ReportModel&) const = default;
};

/// Builds the candidate trees on training rows of a prepared dataset.
TrainResult train(const InvestigationSpec& spec, const DatasetView& train);

/// Tests every trained context on `test` and applies Holm and Bonferroni
/// corrections across the whole family. Contexts with fewer than
/// MIN_SIZE / 2 test rows (or an undefined metric) are dropped with a note.
/// The result is unfiltered; see filter_and_rank.
ReportModel validate(const TrainResult& trained, const DatasetView& test);

/// Drops non-significant subpopulations and those whose effect lower bound
/// does not exceed that of a surviving ancestor, then ranks by effect lower
/// bound. The global population is always kept.
ReportModel filter_and_rank(ReportModel report);

/// train, validate on the next test set, filter and rank.
ReportModel investigate(const InvestigationSpec& spec, DataSource& source);

/// Re-tests the contexts reported in `prior` conditioned on `explanatory`,
/// on a fresh test set from `source`. Each finding carries its per-stratum
/// results; strata join the correction family.
ReportModel debug_with_explanatory(const TrainResult& trained, const ReportModel& prior, std::string_view explanatory,
                                   DataSource& source);

/// Decile summaries of y within deciles of x.
std::vector<DecileSummary> decile_summaries(std::span<const double> x, std::span<const double> y);

} // namespace uatest
