/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <driftforge/csv.hpp>
#include <driftforge/error.hpp>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

namespace driftforge {

enum class AttributeKind { kKey, kCategorical, kDiscrete, kContinuous };

inline std::string toString(AttributeKind kind) {
    switch (kind) {
        case AttributeKind::kKey: return "key";
        case AttributeKind::kCategorical: return "categorical";
        case AttributeKind::kDiscrete: return "discrete";
        case AttributeKind::kContinuous: return "continuous";
    }
    return "unknown";
}

inline AttributeKind parseAttributeKind(const std::string& text) {
    if (text == "key") return AttributeKind::kKey;
    if (text == "categorical") return AttributeKind::kCategorical;
    if (text == "discrete") return AttributeKind::kDiscrete;
    if (text == "continuous") return AttributeKind::kContinuous;
    failInput("unknown attribute kind '" + text + "'");
}

/// Shortest decimal text that parses back to exactly `value`.
inline std::string formatNumber(double value) {
    char buffer[64];
    auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

inline std::optional<double> parseNumber(std::string_view text) {
    while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
    while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
    if (text.empty()) {
        return std::nullopt;
    }
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

struct AttributeSpec {
    std::string name;
    AttributeKind kind = AttributeKind::kContinuous;
    std::vector<std::string> categories;// categorical / discrete only
    double min = 0.0;                   // continuous only
    double max = 0.0;
    bool excluded = false;

    bool isCategoryLike() const { return kind == AttributeKind::kCategorical || kind == AttributeKind::kDiscrete; }

    std::optional<std::size_t> categoryIndex(std::string_view value) const {
        for (std::size_t i = 0; i < categories.size(); ++i) {
            if (categories[i] == value) {
                return i;
            }
        }
        return std::nullopt;
    }

    void validate() const {
        if (name.empty()) {
            failInput("attribute name must be nonempty");
        }
        if (isCategoryLike()) {
            if (categories.empty()) {
                failInput("attribute '" + name + "' needs at least one category");
            }
            std::unordered_set<std::string> seen;
            for (const auto& c : categories) {
                if (!seen.insert(c).second) {
                    failInput("attribute '" + name + "' has duplicate category '" + c + "'");
                }
            }
        }
        if (kind == AttributeKind::kContinuous && !(std::isfinite(min) && std::isfinite(max) && min <= max)) {
            failInput("attribute '" + name + "' needs finite min <= max");
        }
        if (kind == AttributeKind::kKey && !excluded) {
            failInput("key attribute '" + name + "' must be excluded");
        }
    }

    bool operator==(const AttributeSpec&) const = default;
};

class Schema {
  public:
    Schema() = default;
    explicit Schema(std::vector<AttributeSpec> attributes) : attributes_(std::move(attributes)) {
        std::unordered_set<std::string> names;
        bool anyIncluded = false;
        for (const auto& a : attributes_) {
            a.validate();
            if (!names.insert(a.name).second) {
                failInput("duplicate attribute name '" + a.name + "'");
            }
            anyIncluded = anyIncluded || !a.excluded;
        }
        if (!anyIncluded) {
            failInput("schema needs at least one non-excluded attribute");
        }
    }

    const std::vector<AttributeSpec>& attributes() const { return attributes_; }
    const AttributeSpec& operator[](std::size_t i) const { return attributes_[i]; }
    std::size_t size() const { return attributes_.size(); }

    std::optional<std::size_t> indexOf(std::string_view name) const {
        for (std::size_t i = 0; i < attributes_.size(); ++i) {
            if (attributes_[i].name == name) {
                return i;
            }
        }
        return std::nullopt;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& a : attributes_) out.push_back(a.name);
        return out;
    }

    /// Indices of attributes that take part in encoding and distribution math.
    std::vector<std::size_t> includedIndices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < attributes_.size(); ++i) {
            if (!attributes_[i].excluded) out.push_back(i);
        }
        return out;
    }

    bool operator==(const Schema&) const = default;

  private:
    std::vector<AttributeSpec> attributes_;
};

using Value = std::variant<double, std::string>;
using Row = std::vector<Value>;

inline std::string valueText(const Value& v) {
    if (const double* d = std::get_if<double>(&v)) {
        return formatNumber(*d);
    }
    return std::get<std::string>(v);
}

/// Checks a value against its attribute's domain; returns an error description or empty.
inline std::string domainViolation(const AttributeSpec& spec, const Value& v) {
    if (spec.kind == AttributeKind::kContinuous) {
        const double* d = std::get_if<double>(&v);
        if (d == nullptr) {
            return "non-numeric value for continuous attribute '" + spec.name + "'";
        }
        if (!(*d >= spec.min && *d <= spec.max)) {
            return "value " + formatNumber(*d) + " outside [" + formatNumber(spec.min) + ", " + formatNumber(spec.max)
                + "] for '" + spec.name + "'";
        }
        return {};
    }
    const std::string* s = std::get_if<std::string>(&v);
    if (s == nullptr) {
        return "non-text value for attribute '" + spec.name + "'";
    }
    if (spec.kind == AttributeKind::kKey) {
        return s->empty() ? "empty key for '" + spec.name + "'" : std::string{};
    }
    if (!spec.categoryIndex(*s)) {
        return "value '" + *s + "' not in declared categories of '" + spec.name + "'";
    }
    return {};
}

/// Typed relational rows. Immutable after construction; every row is domain-checked.
class Table {
  public:
    Table() = default;
    Table(Schema schema, std::vector<Row> rows) : schema_(std::move(schema)), rows_(std::move(rows)) {
        for (std::size_t r = 0; r < rows_.size(); ++r) {
            if (rows_[r].size() != schema_.size()) {
                failInput("row " + std::to_string(r + 1) + ": arity " + std::to_string(rows_[r].size()) + " != "
                          + std::to_string(schema_.size()));
            }
            for (std::size_t c = 0; c < schema_.size(); ++c) {
                if (auto err = domainViolation(schema_[c], rows_[r][c]); !err.empty()) {
                    failInput("row " + std::to_string(r + 1) + ": " + err);
                }
            }
        }
    }

    const Schema& schema() const { return schema_; }
    const std::vector<Row>& rows() const { return rows_; }
    const Row& operator[](std::size_t i) const { return rows_[i]; }
    std::size_t size() const { return rows_.size(); }
    bool empty() const { return rows_.empty(); }

    /// Numeric view of a column: continuous values as-is, categories as their index.
    std::vector<double> numericColumn(std::size_t column) const {
        const auto& spec = schema_[column];
        std::vector<double> out;
        out.reserve(rows_.size());
        for (const auto& row : rows_) {
            if (spec.kind == AttributeKind::kContinuous) {
                out.push_back(std::get<double>(row[column]));
            } else if (spec.isCategoryLike()) {
                out.push_back(static_cast<double>(*spec.categoryIndex(std::get<std::string>(row[column]))));
            } else {
                auto parsed = parseNumber(std::get<std::string>(row[column]));
                out.push_back(parsed.value_or(0.0));
            }
        }
        return out;
    }

  private:
    Schema schema_;
    std::vector<Row> rows_;
};

// ---------------------------------------------------------------------------
// Workload tables

namespace workload_columns {
inline constexpr const char* kJoinPattern = "join_pattern";
inline constexpr const char* kPredicate = "predicate";
inline constexpr const char* kInterval = "interval_ms";
}// namespace workload_columns

inline Schema makeWorkloadSchema(std::vector<std::string> joinPatterns, std::vector<std::string> predicates,
                                 double maxIntervalMs) {
    AttributeSpec join{workload_columns::kJoinPattern, AttributeKind::kCategorical, std::move(joinPatterns)};
    AttributeSpec pred{workload_columns::kPredicate, AttributeKind::kCategorical, std::move(predicates)};
    AttributeSpec interval{workload_columns::kInterval, AttributeKind::kContinuous, {}, 0.0, maxIntervalMs};
    return Schema({join, pred, interval});
}

/// A table with exactly the columns {join_pattern, predicate, interval_ms >= 0}.
class WorkloadTable {
  public:
    explicit WorkloadTable(Table table) : table_(std::move(table)) {
        const auto& s = table_.schema();
        const bool shapeOk = s.size() == 3 && s[0].name == workload_columns::kJoinPattern
            && s[0].kind == AttributeKind::kCategorical && s[1].name == workload_columns::kPredicate
            && s[1].kind == AttributeKind::kCategorical && s[2].name == workload_columns::kInterval
            && s[2].kind == AttributeKind::kContinuous;
        if (!shapeOk) {
            failInput("workload table needs columns join_pattern, predicate (categorical), interval_ms (continuous)");
        }
        if (s[2].min < 0.0) {
            failInput("workload interval_ms domain must be >= 0");
        }
    }

    const Table& table() const { return table_; }
    const std::string& joinPattern(std::size_t row) const { return std::get<std::string>(table_[row][0]); }
    const std::string& predicate(std::size_t row) const { return std::get<std::string>(table_[row][1]); }
    double intervalMs(std::size_t row) const { return std::get<double>(table_[row][2]); }
    std::size_t size() const { return table_.size(); }

  private:
    Table table_;
};

// ---------------------------------------------------------------------------
// Schema sidecar JSON

inline nlohmann::json toJson(const AttributeSpec& a) {
    nlohmann::json j{{"name", a.name}, {"kind", toString(a.kind)}, {"excluded", a.excluded}};
    if (a.isCategoryLike()) {
        j["categories"] = a.categories;
    }
    if (a.kind == AttributeKind::kContinuous) {
        j["min"] = a.min;
        j["max"] = a.max;
    }
    return j;
}

inline nlohmann::json toJson(const Schema& s) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : s.attributes()) attrs.push_back(toJson(a));
    return {{"format_version", 1}, {"attributes", attrs}};
}

inline AttributeSpec attributeFromJson(const nlohmann::json& j) {
    static const std::set<std::string> known{"name", "kind", "categories", "min", "max", "excluded"};
    for (const auto& [k, _] : j.items()) {
        if (!known.count(k)) failInput("schema: unknown attribute field '" + k + "'");
    }
    AttributeSpec a;
    a.name = j.at("name").get<std::string>();
    a.kind = parseAttributeKind(j.at("kind").get<std::string>());
    if (j.contains("categories")) a.categories = j.at("categories").get<std::vector<std::string>>();
    if (j.contains("min")) a.min = j.at("min").get<double>();
    if (j.contains("max")) a.max = j.at("max").get<double>();
    a.excluded = j.value("excluded", a.kind == AttributeKind::kKey);
    return a;
}

inline Schema schemaFromJson(const nlohmann::json& j) {
    try {
        std::vector<AttributeSpec> attrs;
        for (const auto& item : j.at("attributes")) attrs.push_back(attributeFromJson(item));
        return Schema(std::move(attrs));
    } catch (const nlohmann::json::exception& e) {
        failInput(std::string("schema: ") + e.what());
    }
}

/// `data/foo.csv` -> `data/foo.schema.json`.
inline std::string schemaSidecarPath(const std::string& csvPath) {
    std::filesystem::path p(csvPath);
    return (p.parent_path() / (p.stem().string() + ".schema.json")).string();
}

inline Schema readSchema(const std::string& path) {
    try {
        return schemaFromJson(nlohmann::json::parse(csv::readFile(path)));
    } catch (const nlohmann::json::parse_error& e) {
        failInput("schema " + path + ": " + e.what());
    }
}

inline void writeText(const std::string& path, const std::string& text) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) failRuntime("cannot write " + path);
    out << text;
}

inline void writeSchema(const std::string& path, const Schema& s) { writeText(path, toJson(s).dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// CSV ingestion

inline Value parseCell(const AttributeSpec& spec, const std::string& text, std::size_t rowNumber) {
    if (spec.kind == AttributeKind::kContinuous) {
        auto v = parseNumber(text);
        if (!v) {
            failInput("row " + std::to_string(rowNumber) + ": '" + text + "' is not a number for '" + spec.name + "'");
        }
        return *v;
    }
    return text;
}

inline Table tableFromDocument(const csv::Document& doc, const Schema& schema, const std::string& origin) {
    if (doc.header != schema.names()) {
        failInput(origin + ": header does not match schema attribute names in order");
    }
    std::vector<Row> rows;
    rows.reserve(doc.records.size());
    for (std::size_t r = 0; r < doc.records.size(); ++r) {
        const auto& rec = doc.records[r];
        const std::size_t rowNumber = r + 1;
        if (rec.size() != schema.size()) {
            failInput(origin + ": row " + std::to_string(rowNumber) + " (line " + std::to_string(doc.lines[r])
                      + ") has " + std::to_string(rec.size()) + " fields, expected " + std::to_string(schema.size()));
        }
        Row row;
        row.reserve(rec.size());
        for (std::size_t c = 0; c < rec.size(); ++c) {
            row.push_back(parseCell(schema[c], rec[c], rowNumber));
            if (auto err = domainViolation(schema[c], row.back()); !err.empty()) {
                failInput(origin + ": row " + std::to_string(rowNumber) + ": out-of-domain: " + err);
            }
        }
        rows.push_back(std::move(row));
    }
    return Table(schema, std::move(rows));
}

inline Table loadTable(const std::string& path, const Schema& schema) {
    return tableFromDocument(csv::read(path), schema, path);
}

inline std::string tableToCsv(const Table& t) {
    std::ostringstream out;
    csv::writeRecord(out, t.schema().names());
    std::vector<std::string> fields;
    for (const auto& row : t.rows()) {
        fields.clear();
        for (const auto& v : row) fields.push_back(valueText(v));
        csv::writeRecord(out, fields);
    }
    return out.str();
}

/// Writes `path` plus its schema sidecar.
inline void writeTable(const std::string& path, const Table& t) {
    writeText(path, tableToCsv(t));
    writeSchema(schemaSidecarPath(path), t.schema());
}

// ---------------------------------------------------------------------------
// Schema inference

struct AttributeOverride {
    std::optional<AttributeKind> kind;
    std::optional<std::vector<std::string>> categories;
    std::optional<double> min;
    std::optional<double> max;
    std::optional<bool> excluded;
};

using SchemaOverrides = std::map<std::string, AttributeOverride>;

inline SchemaOverrides overridesFromJson(const nlohmann::json& j) {
    SchemaOverrides out;
    for (const auto& [name, spec] : j.items()) {
        AttributeOverride o;
        for (const auto& [k, v] : spec.items()) {
            if (k == "kind") o.kind = parseAttributeKind(v.get<std::string>());
            else if (k == "categories") o.categories = v.get<std::vector<std::string>>();
            else if (k == "min") o.min = v.get<double>();
            else if (k == "max") o.max = v.get<double>();
            else if (k == "excluded") o.excluded = v.get<bool>();
            else failInput("schema override: unknown field '" + k + "' for '" + name + "'");
        }
        out[name] = o;
    }
    return out;
}

namespace detail {

inline std::vector<std::string> sortedDistinct(const std::vector<std::string>& values, bool numeric) {
    std::vector<std::string> out(values.begin(), values.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (numeric) {
        std::stable_sort(out.begin(), out.end(),
                         [](const std::string& a, const std::string& b) { return *parseNumber(a) < *parseNumber(b); });
    }
    return out;
}

}// namespace detail

/// Kinds: all-numeric -> continuous, otherwise categorical. All-distinct integer or text columns become
/// excluded keys. Overrides take precedence over every inferred field.
inline Schema inferSchema(const csv::Document& doc, const SchemaOverrides& overrides = {}) {
    const std::size_t arity = doc.header.size();
    for (std::size_t r = 0; r < doc.records.size(); ++r) {
        if (doc.records[r].size() != arity) {
            failInput("ragged csv: record " + std::to_string(r + 1) + " has " + std::to_string(doc.records[r].size())
                      + " fields, header has " + std::to_string(arity));
        }
    }
    for (const auto& [name, _] : overrides) {
        if (std::find(doc.header.begin(), doc.header.end(), name) == doc.header.end()) {
            failInput("schema override names unknown column '" + name + "'");
        }
    }
    std::vector<AttributeSpec> attrs;
    for (std::size_t c = 0; c < arity; ++c) {
        std::vector<std::string> column;
        column.reserve(doc.records.size());
        for (const auto& rec : doc.records) column.push_back(rec[c]);

        bool numeric = !column.empty();
        bool integral = numeric;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& v : column) {
            auto parsed = parseNumber(v);
            if (!parsed) {
                numeric = integral = false;
                break;
            }
            integral = integral && std::floor(*parsed) == *parsed;
            lo = std::min(lo, *parsed);
            hi = std::max(hi, *parsed);
        }
        const std::unordered_set<std::string> distinct(column.begin(), column.end());
        const bool allDistinct = column.size() >= 2 && distinct.size() == column.size();

        AttributeSpec a;
        a.name = doc.header[c];
        if (allDistinct && (!numeric || integral)) {
            a.kind = AttributeKind::kKey;
            a.excluded = true;
        } else if (numeric) {
            a.kind = AttributeKind::kContinuous;
            a.min = lo;
            a.max = hi;
        } else {
            a.kind = AttributeKind::kCategorical;
            a.categories = detail::sortedDistinct(column, false);
        }

        if (auto it = overrides.find(a.name); it != overrides.end()) {
            const auto& o = it->second;
            if (o.kind) {
                a.kind = *o.kind;
                a.excluded = a.kind == AttributeKind::kKey;
                if (a.isCategoryLike()) {
                    a.categories = detail::sortedDistinct(column, numeric);
                } else {
                    a.categories.clear();
                }
                if (a.kind == AttributeKind::kContinuous) {
                    if (!numeric) failInput("override: column '" + a.name + "' is not numeric");
                    a.min = lo;
                    a.max = hi;
                }
            }
            if (o.categories) a.categories = *o.categories;
            if (o.min) a.min = *o.min;
            if (o.max) a.max = *o.max;
            if (o.excluded) a.excluded = *o.excluded;
        }
        if (!a.isCategoryLike() && a.kind != AttributeKind::kContinuous) {
            a.categories.clear();
        }
        if (a.kind != AttributeKind::kContinuous) {
            a.min = a.max = 0.0;
        }
        attrs.push_back(std::move(a));
    }
    return Schema(std::move(attrs));
}

inline Schema inferSchema(const std::string& path, const SchemaOverrides& overrides = {}) {
    return inferSchema(csv::read(path), overrides);
}

/// Loads `path` with its sidecar schema when present, otherwise with an inferred one.
inline Table loadTableAuto(const std::string& path) {
    auto doc = csv::read(path);
    const auto sidecar = schemaSidecarPath(path);
    Schema schema = std::filesystem::exists(sidecar) ? readSchema(sidecar) : inferSchema(doc);
    return tableFromDocument(doc, schema, path);
}

// ---------------------------------------------------------------------------
// Analog-bit encoding

/// Encoded column range for one non-excluded attribute.
struct EncodedGroup {
    std::size_t attribute = 0;// index into the schema
    AttributeKind kind = AttributeKind::kContinuous;
    std::size_t offset = 0;
    std::size_t width = 0;
    std::size_t categoryCount = 0;
    double min = 0.0;
    double max = 0.0;
};

inline std::size_t bitWidth(std::size_t categories) {
    std::size_t w = 0;
    while ((std::size_t{1} << w) < categories) ++w;
    return std::max<std::size_t>(w, 1);
}

class EncodingSpec {
  public:
    EncodingSpec() = default;

    static EncodingSpec fromSchema(const Schema& schema) {
        EncodingSpec spec;
        spec.schema_ = schema;
        std::size_t offset = 0;
        for (std::size_t i : schema.includedIndices()) {
            const auto& a = schema[i];
            EncodedGroup g;
            g.attribute = i;
            g.kind = a.kind;
            g.offset = offset;
            if (a.isCategoryLike()) {
                g.categoryCount = a.categories.size();
                g.width = bitWidth(g.categoryCount);
            } else if (a.kind == AttributeKind::kContinuous) {
                g.width = 1;
                g.min = a.min;
                g.max = a.max;
            } else {
                failInput("attribute '" + a.name + "' of kind key must be excluded");
            }
            offset += g.width;
            spec.groups_.push_back(g);
        }
        spec.width_ = offset;
        return spec;
    }

    const Schema& schema() const { return schema_; }
    const std::vector<EncodedGroup>& groups() const { return groups_; }
    std::size_t width() const { return width_; }

    nlohmann::json toJson() const {
        nlohmann::json groups = nlohmann::json::array();
        for (const auto& g : groups_) {
            groups.push_back({{"attribute", schema_[g.attribute].name},
                              {"kind", driftforge::toString(g.kind)},
                              {"offset", g.offset},
                              {"width", g.width}});
        }
        return {{"format_version", 1},
                {"scheme", "analog_bits"},
                {"width", width_},
                {"schema", driftforge::toJson(schema_)},
                {"groups", groups}};
    }

    static EncodingSpec fromJson(const nlohmann::json& j) { return fromSchema(schemaFromJson(j.at("schema"))); }

  private:
    Schema schema_;
    std::vector<EncodedGroup> groups_;
    std::size_t width_ = 0;
};

/// n rows x m encoded columns. `clean` means every entry lies in [-1, 1].
struct EncodedMatrix {
    Eigen::MatrixXd values;
    bool clean = false;

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

/// Writes the ±1 analog-bit code of `index` (MSB first) into `out`.
inline void writeCode(std::size_t index, std::size_t width, double* out) {
    for (std::size_t b = 0; b < width; ++b) {
        const bool bit = (index >> (width - 1 - b)) & 1U;
        out[b] = bit ? 1.0 : -1.0;
    }
}

/// Thresholds bits at 0 and snaps codes >= K to the valid index with the smallest Hamming distance
/// (lowest index on ties).
inline std::size_t decodeCode(const double* bits, std::size_t width, std::size_t categoryCount) {
    std::size_t index = 0;
    for (std::size_t b = 0; b < width; ++b) {
        index = (index << 1) | (bits[b] > 0.0 ? 1U : 0U);
    }
    if (index < categoryCount) {
        return index;
    }
    std::size_t best = 0;
    int bestDistance = std::numeric_limits<int>::max();
    for (std::size_t k = 0; k < categoryCount; ++k) {
        const int distance = std::popcount(static_cast<unsigned long long>(k ^ index));
        if (distance < bestDistance) {
            bestDistance = distance;
            best = k;
        }
    }
    return best;
}

inline double encodeContinuous(double v, double min, double max) {
    return max > min ? 2.0 * (v - min) / (max - min) - 1.0 : 0.0;
}

inline double decodeContinuous(double e, double min, double max) {
    const double clamped = std::clamp(e, -1.0, 1.0);
    return std::clamp(min + (clamped + 1.0) * 0.5 * (max - min), min, max);
}

inline EncodedMatrix encodeTable(const Table& t, const EncodingSpec& spec) {
    if (!(t.schema() == spec.schema())) {
        failInput("encode: table schema does not match encoding spec");
    }
    EncodedMatrix out;
    out.values.resize(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(spec.width()));
    std::vector<double> code;
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (const auto& g : spec.groups()) {
            const auto& a = spec.schema()[g.attribute];
            const Value& v = t[r][g.attribute];
            if (g.kind == AttributeKind::kContinuous) {
                out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g.offset)) =
                    encodeContinuous(std::get<double>(v), g.min, g.max);
            } else {
                code.assign(g.width, 0.0);
                writeCode(*a.categoryIndex(std::get<std::string>(v)), g.width, code.data());
                for (std::size_t b = 0; b < g.width; ++b) {
                    out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g.offset + b)) = code[b];
                }
            }
        }
    }
    out.clean = true;
    return out;
}

/// Placeholder value for an excluded non-key attribute in a synthesized row.
inline Value excludedFill(const AttributeSpec& a, std::size_t row, std::int64_t keyStart) {
    if (a.kind == AttributeKind::kKey) return std::to_string(keyStart + static_cast<std::int64_t>(row));
    if (a.isCategoryLike()) return a.categories.front();
    return a.min;
}

/// Decodes generator output; key columns receive sequential surrogates starting at `keyStart`.
inline Table decodeMatrix(const EncodedMatrix& x, const EncodingSpec& spec, std::int64_t keyStart = 1) {
    if (x.cols() != spec.width()) {
        failInput("decode: matrix has " + std::to_string(x.cols()) + " columns, encoding expects "
                  + std::to_string(spec.width()));
    }
    const Schema& schema = spec.schema();
    std::vector<Row> rows(x.rows(), Row(schema.size()));
    std::vector<double> bits;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < schema.size(); ++c) {
            if (schema[c].excluded) rows[r][c] = excludedFill(schema[c], r, keyStart);
        }
        for (const auto& g : spec.groups()) {
            const auto& a = schema[g.attribute];
            if (g.kind == AttributeKind::kContinuous) {
                rows[r][g.attribute] =
                    decodeContinuous(x.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g.offset)),
                                     g.min, g.max);
            } else {
                bits.resize(g.width);
                for (std::size_t b = 0; b < g.width; ++b) {
                    bits[b] = x.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g.offset + b));
                }
                rows[r][g.attribute] = a.categories[decodeCode(bits.data(), g.width, g.categoryCount)];
            }
        }
    }
    return Table(schema, std::move(rows));
}

// ---------------------------------------------------------------------------
// Residual set

/// Rows of `original` whose key is absent from `drifted`, in original order.
inline Table residualSet(const Table& original, const Table& drifted, const std::string& key) {
    if (!(original.schema() == drifted.schema())) {
        failInput("residual_set: schema mismatch");
    }
    auto column = original.schema().indexOf(key);
    if (!column) {
        failInput("residual_set: unknown key attribute '" + key + "'");
    }
    auto keysOf = [&](const Table& t, const char* which) {
        std::unordered_set<std::string> keys;
        for (const auto& row : t.rows()) {
            if (!keys.insert(valueText(row[*column])).second) {
                failInput(std::string("residual_set: duplicate key '") + valueText(row[*column]) + "' in " + which);
            }
        }
        return keys;
    };
    keysOf(original, "original");
    const auto driftedKeys = keysOf(drifted, "drifted");
    std::vector<Row> rows;
    for (const auto& row : original.rows()) {
        if (!driftedKeys.count(valueText(row[*column]))) rows.push_back(row);
    }
    return Table(original.schema(), std::move(rows));
}

}// namespace driftforge
