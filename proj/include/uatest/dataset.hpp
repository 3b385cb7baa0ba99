#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uatest/error.hpp"

namespace uatest {

enum class AttributeKind { Categorical, Ordinal, Continuous };
enum class Role { Protected, Contextual, Explanatory, Output, Ignored };

std::string_view to_string(AttributeKind kind);
std::string_view to_string(Role role);
AttributeKind parse_kind(std::string_view text);
Role parse_role(std::string_view text);

struct AttributeSchema {
    std::string name;
    AttributeKind kind = AttributeKind::Categorical;
    Role role = Role::Ignored;
    /// Ordered category labels; empty for continuous attributes.
    std::vector<std::string> categories;

    bool is_discrete() const { return kind != AttributeKind::Continuous; }
    /// Index of `label` in `categories`, or -1.
    std::int32_t code_of(std::string_view label) const;
};

using RowIndex = std::uint32_t;

/// Storage for one attribute. Discrete attributes keep category codes
/// (-1 = missing); continuous attributes keep doubles (NaN = missing).
struct Column {
    std::vector<std::int32_t> codes;
    std::vector<double> values;

    bool missing(RowIndex row) const;
};

/// Immutable typed table. Columns are shared so derived datasets (with an
/// extra error or label-indicator column) do not copy the original data.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<AttributeSchema> schema, std::vector<std::shared_ptr<const Column>> columns);

    std::size_t rows() const { return rows_; }
    std::size_t attribute_count() const { return schema_.size(); }
    const std::vector<AttributeSchema>& schema() const { return schema_; }

    /// Position of `name` in the schema; throws DataError when absent.
    std::size_t index_of(std::string_view name) const;
    std::optional<std::size_t> find(std::string_view name) const;
    const AttributeSchema& attribute(std::string_view name) const { return schema_[index_of(name)]; }
    const AttributeSchema& attribute(std::size_t i) const { return schema_[i]; }
    const Column& column(std::size_t i) const { return *columns_[i]; }
    const Column& column(std::string_view name) const { return *columns_[index_of(name)]; }

    /// Copy of this dataset with one more column appended (or replaced, when
    /// the name already exists).
    Dataset with_column(AttributeSchema schema, Column column) const;
    /// Copy with role overrides applied.
    Dataset with_role(std::string_view name, Role role) const;

    /// Cell as text: category label, number with 15 significant digits, or ""
    /// for a missing value.
    std::string cell_text(std::size_t attribute, RowIndex row) const;

private:
    std::vector<AttributeSchema> schema_;
    std::vector<std::shared_ptr<const Column>> columns_;
    std::size_t rows_ = 0;
};

/// Predicate over one contextual attribute. Membership applies to categorical
/// attributes, thresholds to ordinal (on category position) and continuous.
struct ContextPredicate {
    enum class Op { OneOf, LessEqual, Greater };

    std::string attribute;
    Op op = Op::OneOf;
    std::vector<std::string> values;
    double threshold = 0.0;

    static ContextPredicate one_of(std::string attribute, std::vector<std::string> values);
    static ContextPredicate at_most(std::string attribute, double threshold);
    static ContextPredicate above(std::string attribute, double threshold);

    bool operator==(const ContextPredicate&) const = default;
};

using Context = std::vector<ContextPredicate>;

/// "State: CA, Age <= 42"; empty context renders as "".
std::string describe(const Context& context, const Dataset* data = nullptr);

/// Row-filtered, immutable window onto a shared dataset.
class DatasetView {
public:
    DatasetView() = default;
    explicit DatasetView(std::shared_ptr<const Dataset> data);
    DatasetView(std::shared_ptr<const Dataset> data, std::vector<RowIndex> rows);

    std::size_t size() const { return rows_ ? rows_->size() : 0; }
    bool empty() const { return size() == 0; }
    const Dataset& data() const { return *data_; }
    const std::shared_ptr<const Dataset>& data_ptr() const { return data_; }
    std::span<const RowIndex> rows() const;

    /// Same rows over another dataset that shares this one's row numbering.
    DatasetView rebind(std::shared_ptr<const Dataset> data) const;

private:
    std::shared_ptr<const Dataset> data_;
    std::shared_ptr<const std::vector<RowIndex>> rows_;
};

/// Filter `view` by the conjunction of `preds`. Rows with a missing value in a
/// predicate attribute never match.
DatasetView select(const DatasetView& view, const Context& preds);
bool matches(const Dataset& data, RowIndex row, const ContextPredicate& pred);

/// Drop rows with a missing value in any of `attributes`; `dropped` receives
/// the count when given.
DatasetView drop_missing(const DatasetView& view, std::span<const std::string> attributes,
                         std::size_t* dropped = nullptr);

// --- CSV ------------------------------------------------------------------

/// Schema overrides keyed by attribute name; missing entries are inferred.
struct SchemaHints {
    struct Entry {
        std::optional<AttributeKind> kind;
        std::optional<Role> role;
        std::vector<std::string> categories;
    };
    std::vector<std::pair<std::string, Entry>> entries;

    const Entry* find(std::string_view name) const;
};

/// Sidecar schema file: JSON object name -> {"kind", "role", "categories"}.
SchemaHints load_schema_hints(const std::filesystem::path& path);
SchemaHints parse_schema_hints(std::string_view json_text);

/// Parse CSV text with a header row. A column parsing fully as numeric with
/// more than ten distinct values is inferred continuous, else categorical.
Dataset parse_csv(std::string_view text, const SchemaHints& hints = {});
Dataset load_csv(const std::filesystem::path& path, const SchemaHints& hints = {});
void write_csv(std::ostream& out, const Dataset& data);
void write_csv(std::ostream& out, const DatasetView& view);

// --- Held-out test budget ----------------------------------------------------

/// Splits a dataset once into a training set and `budget` equal-size test
/// sets. Each adaptive investigation consumes one test set. Callers must
/// serialize calls to next_test_set.
class DataSource {
public:
    DataSource(std::shared_ptr<const Dataset> data, std::size_t budget, double train_fraction,
               std::uint64_t seed, std::size_t min_size = 100);

    const DatasetView& train() const { return train_; }
    const DatasetView& full() const { return full_; }
    std::size_t budget() const { return tests_.size(); }
    std::size_t consumed() const { return consumed_; }
    std::size_t remaining() const { return tests_.size() - consumed_; }
    std::uint64_t seed() const { return seed_; }
    double train_fraction() const { return train_fraction_; }

    /// Test set `consumed()+1`; throws BudgetExhausted once all are used.
    DatasetView next_test_set();
    /// Restore the counter from persisted state.
    void set_consumed(std::size_t consumed);
    /// Peek at a test set without consuming budget (tests and tooling only).
    const DatasetView& test_set(std::size_t i) const { return tests_.at(i); }

private:
    DatasetView full_;
    DatasetView train_;
    std::vector<DatasetView> tests_;
    std::size_t consumed_ = 0;
    std::uint64_t seed_ = 0;
    double train_fraction_ = 0.5;
};

DataSource make_datasource(std::shared_ptr<const Dataset> data, std::size_t budget,
                           double train_fraction = 0.5, std::uint64_t seed = 0,
                           std::size_t min_size = 100);

} // namespace uatest
