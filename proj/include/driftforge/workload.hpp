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
#include <driftforge/dist.hpp>
#include <driftforge/error.hpp>
#include <driftforge/generator.hpp>
#include <driftforge/rng.hpp>
#include <driftforge/tabular.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace driftforge::workload {

/// Template id of the marker event that anchors offset 0 in a realized stream.
inline constexpr const char* kStartMarker = "__start__";

struct QueryEvent {
    std::string templateId;
    std::string joinPattern;
    std::string predicate;
    double offsetMs = 0.0;
    std::string text;
    // Operation streams (read/write/scan) also carry these.
    std::optional<std::int64_t> key;
    std::optional<std::int64_t> length;
    std::optional<std::size_t> txn;

    bool operator==(const QueryEvent&) const = default;
};

class QueryStream {
  public:
    QueryStream() = default;
    explicit QueryStream(std::vector<QueryEvent> events) : events_(std::move(events)) {
        for (std::size_t i = 0; i < events_.size(); ++i) {
            const double o = events_[i].offsetMs;
            if (!std::isfinite(o) || o < 0.0) failInput("stream event " + std::to_string(i) + ": offset must be finite and >= 0");
            if (i > 0 && o < events_[i - 1].offsetMs) {
                failInput("stream event " + std::to_string(i) + ": offsets must be non-decreasing");
            }
        }
    }

    const std::vector<QueryEvent>& events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    const QueryEvent& operator[](std::size_t i) const { return events_[i]; }
    bool operator==(const QueryStream&) const = default;

  private:
    std::vector<QueryEvent> events_;
};

// ---------------------------------------------------------------------------
// JSON lines

inline nlohmann::json toJson(const QueryEvent& e) {
    nlohmann::json j{{"template_id", e.templateId},
                     {"join_pattern", e.joinPattern},
                     {"predicate", e.predicate},
                     {"offset_ms", e.offsetMs},
                     {"text", e.text}};
    if (e.key) j["key"] = *e.key;
    if (e.length) j["length"] = *e.length;
    if (e.txn) j["txn"] = *e.txn;
    return j;
}

inline QueryEvent eventFromJson(const nlohmann::json& j) {
    QueryEvent e;
    e.templateId = j.at("template_id").get<std::string>();
    e.joinPattern = j.value("join_pattern", std::string());
    e.predicate = j.value("predicate", std::string());
    e.offsetMs = j.at("offset_ms").get<double>();
    e.text = j.value("text", std::string());
    if (j.contains("key")) e.key = j["key"].get<std::int64_t>();
    if (j.contains("length")) e.length = j["length"].get<std::int64_t>();
    if (j.contains("txn")) e.txn = j["txn"].get<std::size_t>();
    return e;
}

inline std::string toJsonLines(const QueryStream& s) {
    std::string out;
    for (const auto& e : s.events()) {
        out += toJson(e).dump();
        out.push_back('\n');
    }
    return out;
}

inline QueryStream parseJsonLines(std::string_view text) {
    std::vector<QueryEvent> events;
    std::size_t lineNo = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        ++lineNo;
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            events.push_back(eventFromJson(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& ex) {
            failInput("stream line " + std::to_string(lineNo) + ": " + ex.what());
        }
    }
    return QueryStream(std::move(events));
}

inline void writeStream(const std::string& path, const QueryStream& s) { writeText(path, toJsonLines(s)); }

inline QueryStream readStream(const std::string& path) { return parseJsonLines(csv::readFile(path)); }

// ---------------------------------------------------------------------------
// Render spec: template id -> {join_pattern, predicate, text}

struct QueryTemplate {
    std::string joinPattern;
    std::string predicate;
    std::string text;// placeholders: {join_pattern} {predicate} {interval_ms} {row}
};

class RenderSpec {
  public:
    RenderSpec() = default;
    explicit RenderSpec(std::map<std::string, QueryTemplate> templates) : templates_(std::move(templates)) {
        for (const auto& [id, t] : templates_) {
            if (id.empty()) failInput("render spec: empty template id");
            if (id == kStartMarker) failInput("render spec: template id '" + id + "' is reserved");
            auto [it, fresh] = byPair_.emplace(std::make_pair(t.joinPattern, t.predicate), id);
            if (!fresh) {
                failInput("render spec: templates '" + it->second + "' and '" + id + "' share one category pair");
            }
        }
    }

    const std::map<std::string, QueryTemplate>& templates() const { return templates_; }

    const std::string* find(const std::string& joinPattern, const std::string& predicate) const {
        auto it = byPair_.find({joinPattern, predicate});
        return it == byPair_.end() ? nullptr : &it->second;
    }

    nlohmann::json toJson() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [id, t] : templates_) {
            j[id] = {{"join_pattern", t.joinPattern}, {"predicate", t.predicate}, {"text", t.text}};
        }
        return j;
    }

    static RenderSpec fromJson(const nlohmann::json& j) {
        if (!j.is_object()) failInput("render spec must be a JSON object keyed by template id");
        std::map<std::string, QueryTemplate> templates;
        for (const auto& [id, v] : j.items()) {
            for (const auto& [k, _] : v.items()) {
                if (k != "join_pattern" && k != "predicate" && k != "text") {
                    failInput("render spec '" + id + "': unknown field '" + k + "'");
                }
            }
            templates[id] = {v.at("join_pattern").get<std::string>(), v.at("predicate").get<std::string>(),
                             v.value("text", std::string())};
        }
        return RenderSpec(std::move(templates));
    }

    /// One template per (join pattern, predicate) pair of the schema, ids "q<j>_<p>", text "SELECT ... ".
    static RenderSpec cartesian(const Schema& workloadSchema) {
        std::map<std::string, QueryTemplate> templates;
        const auto& joins = workloadSchema[0].categories;
        const auto& preds = workloadSchema[1].categories;
        for (std::size_t j = 0; j < joins.size(); ++j) {
            for (std::size_t p = 0; p < preds.size(); ++p) {
                templates["q" + std::to_string(j) + "_" + std::to_string(p)] = {
                    joins[j], preds[p], "SELECT COUNT(*) FROM {join_pattern} WHERE {predicate}"};
            }
        }
        return RenderSpec(std::move(templates));
    }

  private:
    std::map<std::string, QueryTemplate> templates_;
    std::map<std::pair<std::string, std::string>, std::string> byPair_;
};

inline std::string replaceAll(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

inline std::string renderText(const QueryTemplate& t, double intervalMs, std::size_t row) {
    std::string out = replaceAll(t.text, "{join_pattern}", t.joinPattern);
    out = replaceAll(out, "{predicate}", t.predicate);
    out = replaceAll(out, "{interval_ms}", formatNumber(intervalMs));
    return replaceAll(out, "{row}", std::to_string(row));
}

// ---------------------------------------------------------------------------
// Log <-> workload table

/// Workload schema over the observed categories, interval domain [0, max observed].
inline Schema workloadSchemaFor(std::vector<std::string> joins, std::vector<std::string> preds, double maxInterval) {
    auto tidy = [](std::vector<std::string>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    tidy(joins);
    tidy(preds);
    return makeWorkloadSchema(std::move(joins), std::move(preds), maxInterval);
}

/// Row i describes event i+1: its categories and the gap since event i.
inline WorkloadTable logToWorkloadTable(const QueryStream& log, const std::optional<Schema>& schema = std::nullopt) {
    if (log.size() < 2) failInput("log_to_workload_table: need at least 2 events");
    std::vector<std::string> joins, preds;
    double maxInterval = 0.0;
    std::vector<Row> rows;
    for (std::size_t i = 1; i < log.size(); ++i) {
        const auto& e = log[i];
        const double interval = e.offsetMs - log[i - 1].offsetMs;
        joins.push_back(e.joinPattern);
        preds.push_back(e.predicate);
        maxInterval = std::max(maxInterval, interval);
        rows.push_back(Row{e.joinPattern, e.predicate, interval});
    }
    Schema s = schema ? *schema : workloadSchemaFor(std::move(joins), std::move(preds), maxInterval);
    return WorkloadTable(Table(std::move(s), std::move(rows)));
}

/// Reads a workload CSV. Uses the schema sidecar when present, otherwise takes categories and the interval
/// range from the data.
inline WorkloadTable loadWorkload(const std::string& path) {
    const auto sidecar = schemaSidecarPath(path);
    if (std::filesystem::exists(sidecar)) return WorkloadTable(loadTable(path, readSchema(sidecar)));
    const auto doc = csv::read(path);
    const std::vector<std::string> expected{workload_columns::kJoinPattern, workload_columns::kPredicate,
                                            workload_columns::kInterval};
    if (doc.header != expected) failInput(path + ": workload header must be join_pattern,predicate,interval_ms");
    std::vector<std::string> joins, preds;
    double maxInterval = 0.0;
    for (std::size_t r = 0; r < doc.records.size(); ++r) {
        const auto& rec = doc.records[r];
        if (rec.size() != 3) failInput(path + ": row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) + " fields");
        joins.push_back(rec[0]);
        preds.push_back(rec[1]);
        auto v = parseNumber(rec[2]);
        if (!v) failInput(path + ": row " + std::to_string(r + 1) + ": interval_ms '" + rec[2] + "' is not a number");
        maxInterval = std::max(maxInterval, *v);
    }
    return WorkloadTable(tableFromDocument(doc, workloadSchemaFor(joins, preds, maxInterval), path));
}

struct RealizeOptions {
    std::optional<std::uint64_t> shuffleSeed;// rows are emitted as stored unless set
};

/// Realized stream: a start marker at offset 0, then one event per row at the cumulative interval sum.
/// So n rows give n + 1 offsets, and dropping the marker leaves events in row proportions.
inline QueryStream realizeStream(const WorkloadTable& w, const RenderSpec& rs, const RealizeOptions& opts = {}) {
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    if (opts.shuffleSeed) {
        Rng rng(deriveSeed(*opts.shuffleSeed, 0x736866));
        std::shuffle(order.begin(), order.end(), rng.engine());
    }
    std::vector<QueryEvent> events;
    events.reserve(w.size() + 1);
    events.push_back({kStartMarker, "", "", 0.0, "", {}, {}, {}});
    double offset = 0.0;
    for (std::size_t r : order) {
        const std::string* id = rs.find(w.joinPattern(r), w.predicate(r));
        if (!id) {
            failInput("realize_stream: no template for join_pattern '" + w.joinPattern(r) + "' with predicate '"
                      + w.predicate(r) + "'");
        }
        offset += w.intervalMs(r);
        const auto& t = rs.templates().at(*id);
        events.push_back({*id, t.joinPattern, t.predicate, offset, renderText(t, w.intervalMs(r), r), {}, {}, {}});
    }
    return QueryStream(std::move(events));
}

// ---------------------------------------------------------------------------
// Drifted workloads

struct WorkloadDriftResult {
    WorkloadTable table;
    drifter::GenerationResult generation;

    double columnDrift(const std::string& name) const {
        for (const auto& a : generation.achieved.attributes) {
            if (a.name == name) return a.drift;
        }
        failInput("no drift recorded for column " + name);
    }

    nlohmann::json toJson() const {
        auto j = generation.toJson();
        j["per_column"] = {{"join_pattern", columnDrift(workload_columns::kJoinPattern)},
                           {"predicate", columnDrift(workload_columns::kPredicate)},
                           {"interval_ms", columnDrift(workload_columns::kInterval)}};
        return j;
    }
};

inline WorkloadDriftResult driftWorkload(const Generator& g, const WorkloadTable& w, DriftFactor target,
                                         const drifter::GenerateOptions& opts = {}) {
    auto result = generate(g, w.table(), target, opts);
    WorkloadTable table(result.table);
    return {std::move(table), std::move(result)};
}

/// Shannon entropy (nats) of one categorical column and the number of categories that occur.
struct CategoryStats {
    double entropy = 0.0;
    std::size_t surviving = 0;
};

inline CategoryStats categoryStats(const Table& t, const std::string& column) {
    const auto idx = t.schema().indexOf(column);
    if (!idx) failInput("unknown column " + column);
    std::map<std::string, std::size_t> counts;
    for (const auto& row : t.rows()) ++counts[valueText(row[*idx])];
    CategoryStats s;
    s.surviving = counts.size();
    for (const auto& [_, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(t.size());
        s.entropy -= p * std::log(p);
    }
    return s;
}

// ---------------------------------------------------------------------------
// OLTP operation streams

struct OltpSpec {
    std::size_t readsPerTxn = 5;
    std::size_t writesPerTxn = 5;
    std::size_t scansPerTxn = 0;
    std::int64_t scanMin = 1;
    std::int64_t scanMax = 100;
    std::int64_t keyMin = 0;
    std::int64_t keyMax = 9999;
    std::size_t transactions = 100;
    double txnIntervalMs = 0.0;// offset step between transactions

    void validate() const {
        if (keyMax < keyMin) failInput("oltp: empty key range");
        if (scanMin < 1 || scanMax < scanMin) failInput("oltp: invalid scan length range");
        if (!(txnIntervalMs >= 0.0)) failInput("oltp: txn interval must be >= 0");
    }
};

/// Each transaction holds the requested reads/writes/scans in a seeded random order.
inline QueryStream synthOltpStream(const OltpSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(deriveSeed(seed, 0x6f6c7470));
    std::vector<QueryEvent> events;
    for (std::size_t txn = 0; txn < spec.transactions; ++txn) {
        std::vector<const char*> kinds;
        kinds.insert(kinds.end(), spec.readsPerTxn, "read");
        kinds.insert(kinds.end(), spec.writesPerTxn, "write");
        kinds.insert(kinds.end(), spec.scansPerTxn, "scan");
        std::shuffle(kinds.begin(), kinds.end(), rng.engine());
        const double offset = static_cast<double>(txn) * spec.txnIntervalMs;
        for (const char* kind : kinds) {
            QueryEvent e;
            e.templateId = kind;
            e.offsetMs = offset;
            e.txn = txn;
            e.key = rng.uniformInt(spec.keyMin, spec.keyMax);
            if (std::string_view(kind) == "scan") e.length = rng.uniformInt(spec.scanMin, spec.scanMax);
            events.push_back(std::move(e));
        }
    }
    return QueryStream(std::move(events));
}

}// namespace driftforge::workload
