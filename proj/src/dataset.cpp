#include "uatest/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "uatest/random.hpp"

namespace uatest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::optional<double> parse_number(std::string_view cell) {
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
    if (cell.empty()) return std::nullopt;
    if (cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::string format_number(double v) { return fmt::format("{:.15g}", v); }

/// Splits CSV text into records of fields. Handles quoted fields with
/// embedded separators, doubled quotes and CRLF line ends.
std::vector<std::vector<std::string>> split_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(record.size() == 1 && record.front().empty())) records.push_back(std::move(record));
        record.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (!field_started && field.empty()) {
                quoted = true;
                field_started = true;
            } else {
                field.push_back(c);
            }
            break;
        case ',': end_field(); break;
        case '\r': break;
        case '\n': end_record(); break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw DataError("unterminated quoted field");
    if (!field.empty() || !record.empty()) end_record();
    return records;
}

std::string quote_csv(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

} // namespace

std::string_view to_string(AttributeKind kind) {
    switch (kind) {
    case AttributeKind::Categorical: return "categorical";
    case AttributeKind::Ordinal: return "ordinal";
    case AttributeKind::Continuous: return "continuous";
    }
    return "categorical";
}

std::string_view to_string(Role role) {
    switch (role) {
    case Role::Protected: return "protected";
    case Role::Contextual: return "contextual";
    case Role::Explanatory: return "explanatory";
    case Role::Output: return "output";
    case Role::Ignored: return "ignored";
    }
    return "ignored";
}

AttributeKind parse_kind(std::string_view text) {
    const auto t = lower(text);
    if (t == "categorical") return AttributeKind::Categorical;
    if (t == "ordinal") return AttributeKind::Ordinal;
    if (t == "continuous") return AttributeKind::Continuous;
    throw DataError(fmt::format("unknown attribute kind '{}'", text));
}

Role parse_role(std::string_view text) {
    const auto t = lower(text);
    if (t == "protected") return Role::Protected;
    if (t == "contextual") return Role::Contextual;
    if (t == "explanatory") return Role::Explanatory;
    if (t == "output") return Role::Output;
    if (t == "ignored") return Role::Ignored;
    throw DataError(fmt::format("unknown attribute role '{}'", text));
}

std::int32_t AttributeSchema::code_of(std::string_view label) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
        if (categories[i] == label) return static_cast<std::int32_t>(i);
    return -1;
}

bool Column::missing(RowIndex row) const {
    if (!codes.empty()) return codes[row] < 0;
    return std::isnan(values[row]);
}

// --- Dataset -----------------------------------------------------------------

Dataset::Dataset(std::vector<AttributeSchema> schema, std::vector<std::shared_ptr<const Column>> columns)
    : schema_(std::move(schema)), columns_(std::move(columns)) {
    if (schema_.size() != columns_.size()) throw DataError("schema and column count differ");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < schema_.size(); ++i) {
        const auto& a = schema_[i];
        if (!seen.insert(a.name).second) throw DataError(fmt::format("duplicate column name '{}'", a.name));
        const auto& c = *columns_[i];
        const std::size_t n = a.is_discrete() ? c.codes.size() : c.values.size();
        if (i == 0) rows_ = n;
        if (n != rows_) throw DataError(fmt::format("column '{}' has {} rows, expected {}", a.name, n, rows_));
        if (a.kind == AttributeKind::Continuous && !a.categories.empty())
            throw DataError(fmt::format("continuous attribute '{}' cannot list categories", a.name));
        if (a.is_discrete()) {
            const auto levels = static_cast<std::int32_t>(a.categories.size());
            for (auto code : c.codes)
                if (code >= levels) throw DataError(fmt::format("code out of range in '{}'", a.name));
        }
    }
}

std::optional<std::size_t> Dataset::find(std::string_view name) const {
    for (std::size_t i = 0; i < schema_.size(); ++i)
        if (schema_[i].name == name) return i;
    return std::nullopt;
}

std::size_t Dataset::index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw DataError(fmt::format("unknown attribute '{}'", name));
}

Dataset Dataset::with_column(AttributeSchema schema, Column column) const {
    auto attrs = schema_;
    auto cols = columns_;
    auto shared = std::make_shared<const Column>(std::move(column));
    if (auto i = find(schema.name)) {
        attrs[*i] = std::move(schema);
        cols[*i] = std::move(shared);
    } else {
        attrs.push_back(std::move(schema));
        cols.push_back(std::move(shared));
    }
    return Dataset(std::move(attrs), std::move(cols));
}

Dataset Dataset::with_role(std::string_view name, Role role) const {
    auto attrs = schema_;
    attrs[index_of(name)].role = role;
    return Dataset(std::move(attrs), columns_);
}

std::string Dataset::cell_text(std::size_t attribute, RowIndex row) const {
    const auto& a = schema_[attribute];
    const auto& c = *columns_[attribute];
    if (c.missing(row)) return {};
    if (a.is_discrete()) return a.categories[static_cast<std::size_t>(c.codes[row])];
    return format_number(c.values[row]);
}

// --- Predicates and views ------------------------------------------------------

ContextPredicate ContextPredicate::one_of(std::string attribute, std::vector<std::string> values) {
    return {std::move(attribute), Op::OneOf, std::move(values), 0.0};
}

ContextPredicate ContextPredicate::at_most(std::string attribute, double threshold) {
    return {std::move(attribute), Op::LessEqual, {}, threshold};
}

ContextPredicate ContextPredicate::above(std::string attribute, double threshold) {
    return {std::move(attribute), Op::Greater, {}, threshold};
}

std::string describe(const Context& context, const Dataset* data) {
    std::string out;
    for (const auto& p : context) {
        if (!out.empty()) out += ", ";
        switch (p.op) {
        case ContextPredicate::Op::OneOf: {
            out += p.attribute + ": ";
            for (std::size_t i = 0; i < p.values.size(); ++i) {
                if (i) out += "|";
                out += p.values[i];
            }
            break;
        }
        case ContextPredicate::Op::LessEqual:
        case ContextPredicate::Op::Greater: {
            const char* op = p.op == ContextPredicate::Op::LessEqual ? " <= " : " > ";
            std::string operand = fmt::format("{:g}", p.threshold);
            if (data) {
                if (auto i = data->find(p.attribute); i && data->attribute(*i).kind == AttributeKind::Ordinal) {
                    const auto& cats = data->attribute(*i).categories;
                    const auto k = static_cast<std::size_t>(p.threshold);
                    if (k < cats.size()) operand = cats[k];
                }
            }
            out += p.attribute + op + operand;
            break;
        }
        }
    }
    return out;
}

DatasetView::DatasetView(std::shared_ptr<const Dataset> data) : data_(std::move(data)) {
    std::vector<RowIndex> all(data_->rows());
    std::iota(all.begin(), all.end(), RowIndex{0});
    rows_ = std::make_shared<const std::vector<RowIndex>>(std::move(all));
}

DatasetView::DatasetView(std::shared_ptr<const Dataset> data, std::vector<RowIndex> rows)
    : data_(std::move(data)), rows_(std::make_shared<const std::vector<RowIndex>>(std::move(rows))) {
    for (auto r : *rows_)
        if (r >= data_->rows()) throw DataError("view row index out of range");
}

std::span<const RowIndex> DatasetView::rows() const {
    if (!rows_) return {};
    return {rows_->data(), rows_->size()};
}

DatasetView DatasetView::rebind(std::shared_ptr<const Dataset> data) const {
    if (data->rows() != data_->rows()) throw DataError("rebind requires identical row numbering");
    DatasetView out;
    out.data_ = std::move(data);
    out.rows_ = rows_;
    return out;
}

namespace {

/// Predicate compiled against a dataset: checks operator/kind compatibility
/// once and turns category labels into codes.
struct CompiledPredicate {
    const Column* column = nullptr;
    ContextPredicate::Op op = ContextPredicate::Op::OneOf;
    std::vector<bool> accept;
    double threshold = 0.0;
    bool discrete = true;

    bool operator()(RowIndex row) const {
        if (discrete) {
            const auto code = column->codes[row];
            if (code < 0) return false;
            switch (op) {
            case ContextPredicate::Op::OneOf: return accept[static_cast<std::size_t>(code)];
            case ContextPredicate::Op::LessEqual: return code <= threshold;
            case ContextPredicate::Op::Greater: return code > threshold;
            }
        }
        const double v = column->values[row];
        if (std::isnan(v)) return false;
        return op == ContextPredicate::Op::LessEqual ? v <= threshold : v > threshold;
    }
};

CompiledPredicate compile(const Dataset& data, const ContextPredicate& pred) {
    const auto i = data.index_of(pred.attribute);
    const auto& a = data.attribute(i);
    CompiledPredicate c;
    c.column = &data.column(i);
    c.op = pred.op;
    c.threshold = pred.threshold;
    c.discrete = a.is_discrete();
    if (pred.op == ContextPredicate::Op::OneOf) {
        if (a.kind != AttributeKind::Categorical)
            throw DataError(fmt::format("value-set predicate on non-categorical attribute '{}'", a.name));
        c.accept.assign(a.categories.size(), false);
        for (const auto& v : pred.values) {
            const auto code = a.code_of(v);
            if (code >= 0) c.accept[static_cast<std::size_t>(code)] = true;
        }
    } else if (a.kind == AttributeKind::Categorical) {
        throw DataError(fmt::format("threshold predicate on categorical attribute '{}'", a.name));
    }
    return c;
}

} // namespace

bool matches(const Dataset& data, RowIndex row, const ContextPredicate& pred) {
    return compile(data, pred)(row);
}

DatasetView select(const DatasetView& view, const Context& preds) {
    if (preds.empty()) return view;
    std::vector<CompiledPredicate> compiled;
    compiled.reserve(preds.size());
    for (const auto& p : preds) compiled.push_back(compile(view.data(), p));
    std::vector<RowIndex> kept;
    for (auto r : view.rows()) {
        bool ok = true;
        for (const auto& c : compiled) {
            if (!c(r)) {
                ok = false;
                break;
            }
        }
        if (ok) kept.push_back(r);
    }
    return DatasetView(view.data_ptr(), std::move(kept));
}

DatasetView drop_missing(const DatasetView& view, std::span<const std::string> attributes, std::size_t* dropped) {
    std::vector<const Column*> cols;
    for (const auto& name : attributes) cols.push_back(&view.data().column(name));
    std::vector<RowIndex> kept;
    kept.reserve(view.size());
    for (auto r : view.rows()) {
        bool ok = std::none_of(cols.begin(), cols.end(), [r](const Column* c) { return c->missing(r); });
        if (ok) kept.push_back(r);
    }
    if (dropped) *dropped = view.size() - kept.size();
    if (kept.size() == view.size()) return view;
    return DatasetView(view.data_ptr(), std::move(kept));
}

// --- CSV -----------------------------------------------------------------------

const SchemaHints::Entry* SchemaHints::find(std::string_view name) const {
    for (const auto& [n, e] : entries)
        if (n == name) return &e;
    return nullptr;
}

SchemaHints parse_schema_hints(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("schema file is not valid JSON: {}", e.what()));
    }
    if (!doc.is_object()) throw DataError("schema file must be a JSON object");
    SchemaHints hints;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        SchemaHints::Entry e;
        const auto& v = it.value();
        if (!v.is_object()) throw DataError(fmt::format("schema entry '{}' must be an object", it.key()));
        if (v.contains("kind")) e.kind = parse_kind(v.at("kind").get<std::string>());
        if (v.contains("role")) e.role = parse_role(v.at("role").get<std::string>());
        if (v.contains("categories")) e.categories = v.at("categories").get<std::vector<std::string>>();
        hints.entries.emplace_back(it.key(), std::move(e));
    }
    return hints;
}

SchemaHints load_schema_hints(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open schema file '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_schema_hints(ss.str());
}

Dataset parse_csv(std::string_view text, const SchemaHints& hints) {
    const auto records = split_csv(text);
    if (records.empty()) throw DataError("empty file");
    const auto& header = records.front();
    const std::size_t width = header.size();
    const std::size_t n = records.size() - 1;
    for (std::size_t r = 1; r < records.size(); ++r)
        if (records[r].size() != width)
            throw DataError(fmt::format("row {} has {} fields, header has {}", r, records[r].size(), width));

    std::vector<AttributeSchema> schema;
    std::vector<std::shared_ptr<const Column>> columns;
    std::set<std::string> names;
    for (std::size_t j = 0; j < width; ++j) {
        AttributeSchema a;
        a.name = header[j];
        if (!names.insert(a.name).second) throw DataError(fmt::format("duplicate column name '{}'", a.name));
        const auto* hint = hints.find(a.name);

        std::optional<AttributeKind> kind = hint ? hint->kind : std::nullopt;
        if (!kind) {
            bool numeric = true;
            std::set<double> distinct;
            for (std::size_t r = 1; r <= n && numeric; ++r) {
                const auto& cell = records[r][j];
                if (cell.empty()) continue;
                auto v = parse_number(cell);
                if (!v) numeric = false;
                else if (distinct.size() <= 10) distinct.insert(*v);
            }
            kind = (numeric && distinct.size() > 10) ? AttributeKind::Continuous : AttributeKind::Categorical;
        }
        a.kind = *kind;
        a.role = hint && hint->role ? *hint->role : Role::Ignored;

        Column col;
        if (a.kind == AttributeKind::Continuous) {
            if (hint && !hint->categories.empty())
                throw DataError(fmt::format("continuous attribute '{}' cannot list categories", a.name));
            col.values.resize(n, kNaN);
            for (std::size_t r = 1; r <= n; ++r) {
                const auto& cell = records[r][j];
                if (cell.empty()) continue;
                auto v = parse_number(cell);
                if (!v) throw DataError(fmt::format("unparseable cell '{}' in column '{}' row {}", cell, a.name, r));
                col.values[r - 1] = *v;
            }
        } else {
            const bool declared = hint && !hint->categories.empty();
            if (declared) {
                a.categories = hint->categories;
            } else {
                std::vector<std::string> seen;
                std::set<std::string> seen_set;
                for (std::size_t r = 1; r <= n; ++r) {
                    const auto& cell = records[r][j];
                    if (!cell.empty() && seen_set.insert(cell).second) seen.push_back(cell);
                }
                if (a.kind == AttributeKind::Ordinal &&
                    std::all_of(seen.begin(), seen.end(), [](const std::string& s) { return parse_number(s).has_value(); })) {
                    std::stable_sort(seen.begin(), seen.end(), [](const std::string& x, const std::string& y) {
                        return *parse_number(x) < *parse_number(y);
                    });
                }
                a.categories = std::move(seen);
            }
            std::unordered_map<std::string, std::int32_t> lookup;
            for (std::size_t k = 0; k < a.categories.size(); ++k)
                lookup.emplace(a.categories[k], static_cast<std::int32_t>(k));
            col.codes.resize(n, -1);
            for (std::size_t r = 1; r <= n; ++r) {
                const auto& cell = records[r][j];
                if (cell.empty()) continue;
                auto it = lookup.find(cell);
                if (it == lookup.end())
                    throw DataError(fmt::format("unparseable cell '{}' in column '{}' row {}: not a declared category",
                                                cell, a.name, r));
                col.codes[r - 1] = it->second;
            }
        }
        schema.push_back(std::move(a));
        columns.push_back(std::make_shared<const Column>(std::move(col)));
    }
    for (const auto& [name, entry] : hints.entries)
        if (!names.count(name)) throw DataError(fmt::format("schema names attribute '{}' absent from header", name));
    return Dataset(std::move(schema), std::move(columns));
}

Dataset load_csv(const std::filesystem::path& path, const SchemaHints& hints) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open data file '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str(), hints);
}

void write_csv(std::ostream& out, const DatasetView& view) {
    const auto& d = view.data();
    for (std::size_t j = 0; j < d.attribute_count(); ++j) out << (j ? "," : "") << quote_csv(d.attribute(j).name);
    out << '\n';
    for (auto r : view.rows()) {
        for (std::size_t j = 0; j < d.attribute_count(); ++j) out << (j ? "," : "") << quote_csv(d.cell_text(j, r));
        out << '\n';
    }
}

void write_csv(std::ostream& out, const Dataset& data) {
    write_csv(out, DatasetView(std::make_shared<const Dataset>(data)));
}

// --- DataSource ------------------------------------------------------------------

DataSource::DataSource(std::shared_ptr<const Dataset> data, std::size_t budget, double train_fraction,
                       std::uint64_t seed, std::size_t min_size)
    : seed_(seed), train_fraction_(train_fraction) {
    if (budget < 1) throw UsageError("budget must be at least 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("train fraction must lie in (0, 1)");
    const std::size_t n = data->rows();
    const double per_test = static_cast<double>(n) * (1.0 - train_fraction) / static_cast<double>(budget);
    if (per_test < 2.0 * static_cast<double>(min_size))
        throw DataError(fmt::format("insufficient rows: {:.0f} test rows per investigation, need at least {}",
                                    std::floor(per_test), 2 * min_size));

    std::vector<RowIndex> order(n);
    std::iota(order.begin(), order.end(), RowIndex{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
    auto take = [&](std::size_t from, std::size_t count) {
        std::vector<RowIndex> part(order.begin() + static_cast<std::ptrdiff_t>(from),
                                   order.begin() + static_cast<std::ptrdiff_t>(from + count));
        std::sort(part.begin(), part.end());
        return DatasetView(data, std::move(part));
    };
    full_ = DatasetView(data);
    train_ = take(0, n_train);
    const std::size_t rest = n - n_train;
    std::size_t offset = n_train;
    for (std::size_t b = 0; b < budget; ++b) {
        // Sizes differ by at most one row when the remainder does not divide.
        const std::size_t size = rest / budget + (b < rest % budget ? 1 : 0);
        tests_.push_back(take(offset, size));
        offset += size;
    }
}

DatasetView DataSource::next_test_set() {
    if (consumed_ >= tests_.size())
        throw BudgetExhausted(fmt::format("investigation budget of {} exhausted; new data must be collected before "
                                          "further investigations",
                                          tests_.size()));
    return tests_[consumed_++];
}

void DataSource::set_consumed(std::size_t consumed) {
    if (consumed > tests_.size()) throw UsageError("consumed count exceeds budget");
    consumed_ = consumed;
}

DataSource make_datasource(std::shared_ptr<const Dataset> data, std::size_t budget, double train_fraction,
                           std::uint64_t seed, std::size_t min_size) {
    return DataSource(std::move(data), budget, train_fraction, seed, min_size);
}

} // namespace uatest
