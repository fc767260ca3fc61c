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

#include <driftforge/dist.hpp>
#include <driftforge/error.hpp>
#include <driftforge/rng.hpp>
#include <driftforge/tabular.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace driftforge::bench {

// ---------------------------------------------------------------------------
// Degradation metrics

inline double performanceRegression(double exeD, double exe0) {
    if (!(exe0 > 0.0)) failInput("performance_regression: baseline execution time must be > 0");
    return (exeD - exe0) / exe0;
}

/// Percent.
inline double throughputDrop(double tpsD, double tps0) {
    if (!(tps0 > 0.0)) failInput("throughput_drop: baseline throughput must be > 0");
    return (1.0 - tpsD / tps0) * 100.0;
}

/// max(est/truth, truth/est) with both floored at 1/rows.
inline double qError(double estimate, double truth, std::size_t rows) {
    const double floor = 1.0 / static_cast<double>(std::max<std::size_t>(rows, 1));
    const double e = std::max(estimate, floor);
    const double t = std::max(truth, floor);
    return std::max(e / t, t / e);
}

/// Nearest-rank percentile, q in (0, 1].
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) failInput("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

// ---------------------------------------------------------------------------
// Operations and scenarios

struct Predicate {
    std::string attribute;
    std::optional<std::pair<double, double>> range;// inclusive, continuous attributes
    std::optional<std::string> equals;              // categorical attributes

    bool matches(const Value& v) const {
        if (range) return std::get<double>(v) >= range->first && std::get<double>(v) <= range->second;
        return std::get<std::string>(v) == *equals;
    }
};

enum class OpKind { kLookup, kInsert, kEstimate };

inline std::string toString(OpKind k) {
    switch (k) {
        case OpKind::kLookup: return "lookup";
        case OpKind::kInsert: return "insert";
        case OpKind::kEstimate: return "estimate";
    }
    return "?";
}

struct Operation {
    OpKind kind = OpKind::kLookup;
    double key = 0.0;                   // lookup, insert
    std::optional<Row> row;             // insert
    std::vector<Predicate> predicates;  // estimate
    double truth = 0.0;                 // estimate: true selectivity on the original
    double offsetMs = 0.0;              // arrival time in virtual ms
};

enum class ScenarioKind { kTrainDriftedTestOriginal, kDriftBackInsert };
enum class TestKind { kLookup, kEstimate };

inline std::string toString(ScenarioKind k) {
    return k == ScenarioKind::kTrainDriftedTestOriginal ? "train_drifted_test_original" : "drift_back_insert";
}

inline ScenarioKind parseScenarioKind(const std::string& s) {
    if (s == "train_drifted_test_original") return ScenarioKind::kTrainDriftedTestOriginal;
    if (s == "drift_back_insert") return ScenarioKind::kDriftBackInsert;
    failInput("unknown scenario '" + s + "' (expected train_drifted_test_original or drift_back_insert)");
}

inline std::string toString(TestKind k) { return k == TestKind::kLookup ? "lookup" : "estimate"; }

inline TestKind parseTestKind(const std::string& s) {
    if (s == "lookup") return TestKind::kLookup;
    if (s == "estimate") return TestKind::kEstimate;
    failInput("unknown test kind '" + s + "'");
}

struct ScenarioConfig {
    std::size_t testOps = 1000;
    std::uint64_t testSeed = 0;
    TestKind testKind = TestKind::kLookup;
    std::string key;// key attribute; required for lookups and drift_back_insert
    std::size_t maxPredicates = 2;
};

struct Scenario {
    ScenarioKind kind = ScenarioKind::kTrainDriftedTestOriginal;
    double d = 0.0;
    Table train;                        // drifted table (the original at d = 0); initial state for drift-back
    std::vector<Operation> inserts;     // drift-back residual, original order
    std::vector<Operation> tests;       // sampled from the original only
    TestKind testKind = TestKind::kLookup;
    std::string key;
    std::size_t originalRows = 0;
    double correlationError = 0.0;      // generated training data vs original
    std::uint64_t testSeed = 0;
};

inline double keyValue(const Value& v, const std::string& column) {
    auto k = parseNumber(valueText(v));
    if (!k) failInput("key column '" + column + "' holds non-numeric value '" + valueText(v) + "'");
    return *k;
}

inline std::size_t keyColumn(const Schema& s, const std::string& key) {
    if (key.empty()) failInput("scenario needs a key attribute");
    auto idx = s.indexOf(key);
    if (!idx) failInput("key attribute '" + key + "' is not in the schema");
    return *idx;
}

/// Fraction of rows satisfying every predicate.
inline double selectivity(const Table& t, const std::vector<Predicate>& preds) {
    if (t.empty()) return 0.0;
    std::vector<std::size_t> cols;
    for (const auto& p : preds) cols.push_back(*t.schema().indexOf(p.attribute));
    std::size_t hits = 0;
    for (const auto& row : t.rows()) {
        bool ok = true;
        for (std::size_t i = 0; i < preds.size() && ok; ++i) ok = preds[i].matches(row[cols[i]]);
        hits += ok ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(t.size());
}

/// Test operations depend only on the original and the test seed, so every d sees the same test set.
inline std::vector<Operation> sampleTests(const Table& original, const ScenarioConfig& cfg) {
    if (original.empty()) failInput("scenario: original table is empty");
    Rng rng(deriveSeed(cfg.testSeed, 0x74657374));
    std::vector<Operation> ops;
    ops.reserve(cfg.testOps);
    const auto rows = static_cast<std::int64_t>(original.size());
    if (cfg.testKind == TestKind::kLookup) {
        const std::size_t col = keyColumn(original.schema(), cfg.key);
        for (std::size_t i = 0; i < cfg.testOps; ++i) {
            Operation op;
            op.kind = OpKind::kLookup;
            op.key = keyValue(original[static_cast<std::size_t>(rng.uniformInt(0, rows - 1))][col], cfg.key);
            ops.push_back(std::move(op));
        }
        return ops;
    }
    const auto included = original.schema().includedIndices();
    const std::size_t maxPreds = std::clamp<std::size_t>(cfg.maxPredicates, 1, included.size());
    for (std::size_t i = 0; i < cfg.testOps; ++i) {
        std::vector<std::size_t> attrs = included;
        std::shuffle(attrs.begin(), attrs.end(), rng.engine());
        attrs.resize(static_cast<std::size_t>(rng.uniformInt(1, static_cast<std::int64_t>(maxPreds))));
        std::sort(attrs.begin(), attrs.end());
        Operation op;
        op.kind = OpKind::kEstimate;
        for (std::size_t a : attrs) {
            const auto& spec = original.schema()[a];
            Predicate p{spec.name, {}, {}};
            if (spec.kind == AttributeKind::kContinuous) {
                const double span = spec.max - spec.min;
                const double width = span * rng.uniform(0.1, 0.5);
                const double lo = spec.min + rng.uniform() * (span - width);
                p.range = std::make_pair(lo, lo + width);
            } else {
                const auto k = static_cast<std::int64_t>(spec.categories.size());
                p.equals = spec.categories[static_cast<std::size_t>(rng.uniformInt(0, k - 1))];
            }
            op.predicates.push_back(std::move(p));
        }
        op.truth = selectivity(original, op.predicates);
        ops.push_back(std::move(op));
    }
    return ops;
}

/// At d = 0 the training set is the original itself. For drift-back, the initial state keeps the drifted rows
/// whose key occurs in the original and the residual is inserted afterwards, so the two partition the original.
inline Scenario buildScenario(const Table& original, const std::optional<Table>& drifted, ScenarioKind kind, double d,
                              const ScenarioConfig& cfg) {
    if (!(d >= 0.0 && d <= 1.0)) failInput("scenario: d must lie in [0, 1]");
    if (d > 0.0 && !drifted) failInput("scenario: no drifted artifact for d=" + formatNumber(d));
    if (drifted && !(drifted->schema() == original.schema())) failInput("scenario: drifted table schema differs from the original");
    Scenario s;
    s.kind = kind;
    s.d = d;
    s.testKind = cfg.testKind;
    s.key = cfg.key;
    s.testSeed = cfg.testSeed;
    s.originalRows = original.size();
    s.train = d == 0.0 ? original : *drifted;

    if (kind == ScenarioKind::kDriftBackInsert) {
        const std::size_t col = keyColumn(original.schema(), cfg.key);
        std::unordered_set<std::string> known;
        for (const auto& row : original.rows()) known.insert(valueText(row[col]));
        std::vector<Row> initial;
        std::unordered_set<std::string> taken;
        for (const auto& row : s.train.rows()) {
            const std::string k = valueText(row[col]);
            if (known.count(k) && taken.insert(k).second) initial.push_back(row);
        }
        s.train = Table(original.schema(), std::move(initial));
        const Table residual = residualSet(original, s.train, cfg.key);
        for (const auto& row : residual.rows()) {
            Operation op;
            op.kind = OpKind::kInsert;
            op.key = keyValue(row[col], cfg.key);
            op.row = row;
            s.inserts.push_back(std::move(op));
        }
    }
    s.tests = sampleTests(original, cfg);
    if (!s.train.empty()) {
        s.correlationError = averageCorrelationError(correlationMatrix(s.train), correlationMatrix(original));
    }
    return s;
}

// ---------------------------------------------------------------------------
// SUT contract

struct OpResult {
    double costUnits = 0.0;
    std::optional<double> estimate;
};

class SutAdapter {
  public:
    virtual ~SutAdapter() = default;
    virtual std::string name() const = 0;
    virtual void setup(const Scenario& s) = 0;
    virtual OpResult execute(const Operation& op) = 0;
    virtual void teardown() {}
};

// ---------------------------------------------------------------------------
// Reference SUT A: piecewise-linear learned index with per-segment delta buffers

struct LookupResult {
    std::optional<std::size_t> position;// index in the base array
    bool buffered = false;
    std::size_t comparisons = 0;
};

class PlrIndex {
  public:
    struct Segment {
        double startKey = 0.0;
        double slope = 0.0;
        std::size_t begin = 0;// base-array range [begin, end)
        std::size_t end = 0;
        std::vector<double> buffer;// sorted
    };

    /// Greedy shrinking-cone segmentation: a segment grows while some slope through its first point keeps
    /// every position within +-epsilon.
    static PlrIndex build(std::vector<double> keys, std::size_t epsilon) {
        for (std::size_t i = 1; i < keys.size(); ++i) {
            if (!(keys[i] > keys[i - 1])) failInput("plr_build: keys must be strictly increasing");
        }
        PlrIndex idx;
        idx.keys_ = std::move(keys);
        idx.epsilon_ = epsilon;
        const double eps = static_cast<double>(epsilon);
        std::size_t start = 0;
        while (start < idx.keys_.size()) {
            double lo = -std::numeric_limits<double>::infinity();
            double hi = std::numeric_limits<double>::infinity();
            std::size_t j = start + 1;
            for (; j < idx.keys_.size(); ++j) {
                const double dk = idx.keys_[j] - idx.keys_[start];
                const double dp = static_cast<double>(j - start);
                const double nlo = std::max(lo, (dp - eps) / dk);
                const double nhi = std::min(hi, (dp + eps) / dk);
                if (nlo > nhi) break;
                lo = nlo;
                hi = nhi;
            }
            Segment seg;
            seg.startKey = idx.keys_[start];
            seg.slope = std::isfinite(lo) ? 0.5 * (lo + hi) : 0.0;
            seg.begin = start;
            seg.end = j;
            idx.segments_.push_back(std::move(seg));
            start = j;
        }
        return idx;
    }

    std::size_t size() const { return keys_.size(); }
    std::size_t epsilon() const { return epsilon_; }
    const std::vector<Segment>& segments() const { return segments_; }

    std::size_t bufferedCount() const {
        std::size_t n = 0;
        for (const auto& s : segments_) n += s.buffer.size();
        return n;
    }

    /// Predicted base-array position of `key` within its segment.
    std::size_t predict(std::size_t segment, double key) const {
        const auto& s = segments_[segment];
        const double p = static_cast<double>(s.begin) + s.slope * (key - s.startKey);
        const double clamped = std::clamp(std::round(p), static_cast<double>(s.begin), static_cast<double>(s.end - 1));
        return static_cast<std::size_t>(clamped);
    }

    LookupResult lookup(double key) const {
        if (segments_.empty()) failInput("plr_lookup: empty index");
        LookupResult r;
        r.comparisons = 1;// model evaluation
        const std::size_t seg = findSegment(key, r.comparisons);
        const auto& s = segments_[seg];
        if (s.end > s.begin) {
            const std::size_t p = predict(seg, key);
            const std::size_t lo = std::max(s.begin, p >= epsilon_ ? p - epsilon_ : 0);
            const std::size_t hi = std::min(s.end, p + epsilon_ + 1);
            if (auto pos = search(keys_, lo, hi, key, r.comparisons)) {
                r.position = pos;
                return r;
            }
        }
        if (search(s.buffer, 0, s.buffer.size(), key, r.comparisons)) r.buffered = true;
        return r;
    }

    /// Appends to the covering segment's sorted buffer; returns comparisons spent. Keys already present are ignored.
    std::size_t insert(double key) {
        if (segments_.empty()) {
            // An index built from nothing still accepts inserts into one empty segment.
            segments_.push_back(Segment{key, 0.0, 0, 0, {}});
        }
        const LookupResult found = lookup(key);
        std::size_t cost = found.comparisons;
        if (found.position || found.buffered) return cost;
        std::size_t cmp = 0;
        auto& buf = segments_[findSegment(key, cmp)].buffer;
        cost += cmp + 1;
        buf.insert(std::lower_bound(buf.begin(), buf.end(), key), key);
        return cost;
    }

  private:
    std::size_t findSegment(double key, std::size_t& comparisons) const {
        std::size_t lo = 0, hi = segments_.size();
        while (hi - lo > 1) {
            const std::size_t mid = lo + (hi - lo) / 2;
            ++comparisons;
            if (segments_[mid].startKey <= key) lo = mid;
            else hi = mid;
        }
        return lo;
    }

    static std::optional<std::size_t> search(const std::vector<double>& v, std::size_t lo, std::size_t hi, double key,
                                             std::size_t& comparisons) {
        while (lo < hi) {
            const std::size_t mid = lo + (hi - lo) / 2;
            ++comparisons;
            if (v[mid] == key) return mid;
            if (v[mid] < key) lo = mid + 1;
            else hi = mid;
        }
        return std::nullopt;
    }

    std::vector<double> keys_;
    std::vector<Segment> segments_;
    std::size_t epsilon_ = 16;
};

class PlrSut : public SutAdapter {
  public:
    explicit PlrSut(std::size_t epsilon = 16) : epsilon_(epsilon) {}
    std::string name() const override { return "plr"; }

    void setup(const Scenario& s) override {
        const std::size_t col = keyColumn(s.train.schema(), s.key);
        std::vector<double> keys;
        keys.reserve(s.train.size());
        for (const auto& row : s.train.rows()) keys.push_back(keyValue(row[col], s.key));
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        index_ = PlrIndex::build(std::move(keys), epsilon_);
    }

    OpResult execute(const Operation& op) override {
        switch (op.kind) {
            case OpKind::kLookup: return {static_cast<double>(index_.lookup(op.key).comparisons), {}};
            case OpKind::kInsert: return {static_cast<double>(index_.insert(op.key)), {}};
            default: failRuntime("plr: unsupported operation " + toString(op.kind));
        }
    }

    const PlrIndex& index() const { return index_; }

  private:
    std::size_t epsilon_;
    PlrIndex index_;
};

// ---------------------------------------------------------------------------
// Reference SUT B: per-attribute histograms under attribute independence

class HistogramEstimator {
  public:
    static HistogramEstimator train(const Table& t, std::size_t bins) {
        if (bins < 1) failInput("hist_train: bins must be >= 1");
        HistogramEstimator e;
        e.bins_ = bins;
        for (std::size_t c : t.schema().includedIndices()) {
            const auto& a = t.schema()[c];
            Column col;
            col.spec = a;
            col.counts.assign(a.kind == AttributeKind::kContinuous ? bins : a.categories.size(), 0.0);
            e.columns_.emplace(a.name, std::move(col));
        }
        for (const auto& row : t.rows()) e.add(t.schema(), row);
        return e;
    }

    void add(const Schema& schema, const Row& row) {
        for (auto& [name, col] : columns_) {
            const Value& v = row[*schema.indexOf(name)];
            if (col.spec.kind == AttributeKind::kContinuous) {
                col.counts[binIndex(std::get<double>(v), col.spec.min, col.spec.max, bins_)] += 1.0;
            } else {
                col.counts[*col.spec.categoryIndex(std::get<std::string>(v))] += 1.0;
            }
        }
        total_ += 1.0;
    }

    double total() const { return total_; }

    /// Product of per-predicate selectivities; `bucketsRead` counts histogram cells touched.
    double estimate(const std::vector<Predicate>& preds, std::size_t* bucketsRead = nullptr) const {
        double sel = 1.0;
        std::size_t touched = 0;
        for (const auto& p : preds) {
            auto it = columns_.find(p.attribute);
            if (it == columns_.end()) failInput("hist_estimate: unknown attribute '" + p.attribute + "'");
            sel *= it->second.selectivity(p, bins_, total_, touched);
        }
        if (bucketsRead) *bucketsRead = touched;
        return std::clamp(sel, 0.0, 1.0);
    }

  private:
    struct Column {
        AttributeSpec spec;
        std::vector<double> counts;

        double selectivity(const Predicate& p, std::size_t bins, double total, std::size_t& touched) const {
            if (total <= 0.0) return 0.0;
            if (spec.kind != AttributeKind::kContinuous) {
                if (!p.equals) failInput("hist_estimate: '" + spec.name + "' needs an equality predicate");
                ++touched;
                auto idx = spec.categoryIndex(*p.equals);
                return idx ? counts[*idx] / total : 0.0;
            }
            if (!p.range) failInput("hist_estimate: '" + spec.name + "' needs a range predicate");
            const auto [lo, hi] = *p.range;
            if (spec.max == spec.min) {
                ++touched;
                return lo <= spec.min && spec.min <= hi ? 1.0 : 0.0;
            }
            const double width = (spec.max - spec.min) / static_cast<double>(bins);
            double mass = 0.0;
            for (std::size_t b = 0; b < bins; ++b) {
                const double left = spec.min + width * static_cast<double>(b);
                const double overlap = std::min(hi, left + width) - std::max(lo, left);
                if (overlap <= 0.0) continue;
                ++touched;
                mass += counts[b] * std::min(1.0, overlap / width);
            }
            return mass / total;
        }
    };

    std::size_t bins_ = 10;
    double total_ = 0.0;
    std::map<std::string, Column> columns_;
};

class HistogramSut : public SutAdapter {
  public:
    explicit HistogramSut(std::size_t bins = 10) : bins_(bins) {}
    std::string name() const override { return "hist"; }

    void setup(const Scenario& s) override {
        schema_ = s.train.schema();
        estimator_ = HistogramEstimator::train(s.train, bins_);
    }

    OpResult execute(const Operation& op) override {
        switch (op.kind) {
            case OpKind::kEstimate: {
                std::size_t touched = 0;
                const double est = estimator_.estimate(op.predicates, &touched);
                return {static_cast<double>(std::max<std::size_t>(touched, 1)), est};
            }
            case OpKind::kInsert:
                if (!op.row) failRuntime("hist: insert without a row");
                estimator_.add(*schema_, *op.row);
                return {static_cast<double>(schema_->includedIndices().size()), {}};
            default: failRuntime("hist: unsupported operation " + toString(op.kind));
        }
    }

  private:
    std::size_t bins_;
    std::optional<Schema> schema_;
    HistogramEstimator estimator_;
};

// ---------------------------------------------------------------------------
// External SUT: newline-delimited JSON over a child process's stdin/stdout.
// Request {"op": ..., "args": {...}}; response {"cost_units": x[, "estimate": e]} or {"error": msg}.

inline nlohmann::json operationJson(const Operation& op) {
    nlohmann::json args = nlohmann::json::object();
    if (op.kind == OpKind::kEstimate) {
        nlohmann::json preds = nlohmann::json::array();
        for (const auto& p : op.predicates) {
            nlohmann::json pj{{"attribute", p.attribute}};
            if (p.range) pj["range"] = {p.range->first, p.range->second};
            if (p.equals) pj["equals"] = *p.equals;
            preds.push_back(std::move(pj));
        }
        args["predicates"] = std::move(preds);
    } else {
        args["key"] = op.key;
    }
    return {{"op", toString(op.kind)}, {"args", std::move(args)}};
}

class ExternalSut : public SutAdapter {
  public:
    /// `command` runs under /bin/sh -c. The training table is written to <workDir>/sut_train.csv.
    ExternalSut(std::string command, std::string workDir) : command_(std::move(command)), workDir_(std::move(workDir)) {}
    ~ExternalSut() override { stop(); }

    std::string name() const override { return "extern"; }

    void setup(const Scenario& s) override {
        const std::string trainPath = (std::filesystem::path(workDir_) / "sut_train.csv").string();
        writeText(trainPath, tableToCsv(s.train));
        start();
        request({{"op", "setup"},
                 {"args", {{"scenario", toString(s.kind)}, {"d", s.d}, {"train_csv", trainPath}, {"key", s.key}}}});
    }

    OpResult execute(const Operation& op) override {
        const auto r = request(operationJson(op));
        OpResult out;
        out.costUnits = r.at("cost_units").get<double>();
        if (r.contains("estimate")) out.estimate = r["estimate"].get<double>();
        return out;
    }

    void teardown() override {
        if (pid_ > 0) request({{"op", "teardown"}, {"args", nlohmann::json::object()}});
        stop();
    }

  private:
    void start() {
        std::signal(SIGPIPE, SIG_IGN);
        int toChild[2], fromChild[2];
        if (pipe(toChild) != 0 || pipe(fromChild) != 0) failRuntime("extern sut: pipe() failed");
        pid_ = fork();
        if (pid_ < 0) failRuntime("extern sut: fork() failed");
        if (pid_ == 0) {
            dup2(toChild[0], STDIN_FILENO);
            dup2(fromChild[1], STDOUT_FILENO);
            close(toChild[0]);
            close(toChild[1]);
            close(fromChild[0]);
            close(fromChild[1]);
            execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(toChild[0]);
        close(fromChild[1]);
        in_ = fdopen(toChild[1], "w");
        out_ = fdopen(fromChild[0], "r");
    }

    void stop() {
        if (in_) fclose(in_);
        if (out_) fclose(out_);
        in_ = out_ = nullptr;
        if (pid_ > 0) {
            int status = 0;
            waitpid(pid_, &status, 0);
            pid_ = -1;
        }
    }

    nlohmann::json request(const nlohmann::json& msg) {
        if (!in_ || !out_) failRuntime("extern sut: process not running");
        const std::string line = msg.dump() + "\n";
        if (fputs(line.c_str(), in_) < 0 || fflush(in_) != 0) failRuntime("extern sut: write failed (process exited?)");
        std::string reply;
        int ch;
        while ((ch = fgetc(out_)) != EOF && ch != '\n') reply.push_back(static_cast<char>(ch));
        if (reply.empty() && ch == EOF) failRuntime("extern sut: no response to " + msg.at("op").get<std::string>());
        nlohmann::json r;
        try {
            r = nlohmann::json::parse(reply);
        } catch (const nlohmann::json::exception&) {
            failRuntime("extern sut: malformed response '" + reply + "'");
        }
        if (r.contains("error")) failRuntime("extern sut: " + r["error"].dump());
        if (msg.at("op") != "setup" && msg.at("op") != "teardown" && !r.contains("cost_units")) {
            failRuntime("extern sut: response lacks cost_units");
        }
        return r;
    }

    std::string command_;
    std::string workDir_;
    pid_t pid_ = -1;
    FILE* in_ = nullptr;
    FILE* out_ = nullptr;
};

// ---------------------------------------------------------------------------
// Measurement

enum class CostMode { kUnits, kWallClock };

inline std::string toString(CostMode m) { return m == CostMode::kUnits ? "units" : "wall_clock"; }

inline CostMode parseCostMode(const std::string& s) {
    if (s == "units") return CostMode::kUnits;
    if (s == "wall_clock") return CostMode::kWallClock;
    failInput("unknown cost mode '" + s + "' (expected units or wall_clock)");
}

struct BenchConfig {
    CostMode costMode = CostMode::kUnits;
    double unitMs = 0.001;// milliseconds per SUT cost unit
    std::string configDigest;
    std::uint64_t samplingSeed = 0;
};

struct MetricReport {
    std::string sut;
    ScenarioKind scenario = ScenarioKind::kTrainDriftedTestOriginal;
    double d = 0.0;
    CostMode costMode = CostMode::kUnits;
    std::size_t ops = 0;
    std::size_t insertOps = 0;
    double insertCostMs = 0.0;
    double exeTotalMs = 0.0;
    double exeMeanMs = 0.0;
    double elapsedMs = 0.0;
    double tps = 0.0;
    std::optional<double> baselineExeTotalMs;
    std::optional<double> baselineTps;
    std::optional<double> regression;
    std::optional<double> dropPct;
    std::optional<double> qerrP50;
    std::optional<double> qerrP95;
    double correlationError = 0.0;
    std::uint64_t testSeed = 0;
    std::uint64_t samplingSeed = 0;
    std::string configDigest;
    std::vector<double> samplesMs;
    std::vector<double> qerrors;

    nlohmann::json toJson() const {
        auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        return {{"format_version", 1},
                {"sut", sut},
                {"scenario", toString(scenario)},
                {"d", d},
                {"cost_mode", toString(costMode)},
                {"ops", ops},
                {"insert_ops", insertOps},
                {"insert_cost_ms", insertCostMs},
                {"exe_total_ms", exeTotalMs},
                {"exe_mean_ms", exeMeanMs},
                {"elapsed_ms", elapsedMs},
                {"tps", tps},
                {"baseline", {{"exe_total_ms", opt(baselineExeTotalMs)}, {"tps", opt(baselineTps)}}},
                {"regression", opt(regression)},
                {"drop_pct", opt(dropPct)},
                {"qerr", {{"p50", opt(qerrP50)}, {"p95", opt(qerrP95)}}},
                {"corr_err", correlationError},
                {"seeds", {{"test_set", testSeed}, {"sampling", samplingSeed}}},
                {"config_digest", configDigest},
                {"samples_ms", samplesMs},
                {"qerrors", qerrors}};
    }
};

/// Thrown when the SUT fails mid-run; carries the report accumulated so far.
class BenchFailure : public Error {
  public:
    BenchFailure(const std::string& message, nlohmann::json partial)
        : Error(ErrorKind::kRuntime, message), partial_(std::move(partial)) {}
    const nlohmann::json& partial() const { return partial_; }

  private:
    nlohmann::json partial_;
};

/// Replays the test operations on one virtual clock: an operation starts at max(clock, its offset) and
/// occupies the SUT for its cost. TPS = ops / max(busy, elapsed).
inline MetricReport runBenchmark(const Scenario& s, SutAdapter& sut, const BenchConfig& cfg = {}) {
    if (s.tests.empty()) failInput("run_benchmark: empty test set");
    if (!(cfg.unitMs > 0.0)) failInput("run_benchmark: unit_ms must be > 0");
    MetricReport r;
    r.sut = sut.name();
    r.scenario = s.kind;
    r.d = s.d;
    r.costMode = cfg.costMode;
    r.correlationError = s.correlationError;
    r.testSeed = s.testSeed;
    r.samplingSeed = cfg.samplingSeed;
    r.configDigest = cfg.configDigest;

    auto timed = [&](const Operation& op) {
        if (cfg.costMode == CostMode::kUnits) {
            OpResult res = sut.execute(op);
            return std::make_pair(res.costUnits * cfg.unitMs, res);
        }
        const auto t0 = std::chrono::steady_clock::now();
        OpResult res = sut.execute(op);
        const auto t1 = std::chrono::steady_clock::now();
        return std::make_pair(std::chrono::duration<double, std::milli>(t1 - t0).count(), res);
    };

    const char* phase = "setup";
    try {
        sut.setup(s);
        phase = "insert";
        for (const auto& op : s.inserts) {
            r.insertCostMs += timed(op).first;
            ++r.insertOps;
        }
        phase = "test";
        double clock = 0.0;
        for (const auto& op : s.tests) {
            auto [cost, res] = timed(op);
            if (!std::isfinite(cost) || cost < 0.0) failRuntime("SUT reported an invalid cost");
            clock = std::max(clock, op.offsetMs) + cost;
            r.exeTotalMs += cost;
            r.samplesMs.push_back(cost);
            if (op.kind == OpKind::kEstimate && res.estimate) {
                r.qerrors.push_back(qError(*res.estimate, op.truth, s.originalRows));
            }
            ++r.ops;
        }
        r.elapsedMs = clock;
        phase = "teardown";
        sut.teardown();
    } catch (const Error& e) {
        nlohmann::json partial = r.toJson();
        partial["failed_phase"] = phase;
        partial["error"] = e.what();
        throw BenchFailure(std::string("SUT failure during ") + phase + ": " + e.what(), std::move(partial));
    }
    const double window = std::max(r.exeTotalMs, r.elapsedMs);
    if (!(window > 0.0)) failRuntime("run_benchmark: zero total cost, throughput undefined");
    r.exeMeanMs = r.exeTotalMs / static_cast<double>(r.ops);
    r.tps = static_cast<double>(r.ops) * 1000.0 / window;
    if (!r.qerrors.empty()) {
        r.qerrP50 = percentile(r.qerrors, 0.5);
        r.qerrP95 = percentile(r.qerrors, 0.95);
    }
    return r;
}

inline void applyBaseline(MetricReport& r, const MetricReport& base) {
    r.baselineExeTotalMs = base.exeTotalMs;
    r.baselineTps = base.tps;
    r.regression = performanceRegression(r.exeTotalMs, base.exeTotalMs);
    r.dropPct = throughputDrop(r.tps, base.tps);
}

// ---------------------------------------------------------------------------
// Summary

inline constexpr const char* kSummaryHeader = "d,exe_total_ms,tps,regression,drop_pct,qerr_p50,qerr_p95,corr_err";

struct Summary {
    std::string sut;
    ScenarioKind scenario = ScenarioKind::kTrainDriftedTestOriginal;
    std::vector<MetricReport> rows;// ascending d

    std::string toCsv() const {
        auto opt = [](const std::optional<double>& v) { return v ? formatNumber(*v) : std::string(); };
        std::string out = std::string(kSummaryHeader) + "\n";
        for (const auto& r : rows) {
            out += formatNumber(r.d) + "," + formatNumber(r.exeTotalMs) + "," + formatNumber(r.tps) + ","
                + opt(r.regression) + "," + opt(r.dropPct) + "," + opt(r.qerrP50) + "," + opt(r.qerrP95) + ","
                + formatNumber(r.correlationError) + "\n";
        }
        return out;
    }

    nlohmann::json toJson() const {
        nlohmann::json rs = nlohmann::json::array();
        for (const auto& r : rows) {
            auto j = r.toJson();
            j.erase("samples_ms");
            j.erase("qerrors");
            rs.push_back(std::move(j));
        }
        return {{"format_version", 1}, {"sut", sut}, {"scenario", toString(scenario)}, {"rows", rs}};
    }
};

inline Summary aggregateReport(std::vector<MetricReport> reports) {
    if (reports.empty()) failInput("aggregate_report: no reports");
    for (const auto& r : reports) {
        if (r.sut != reports.front().sut) failInput("aggregate_report: mixed SUTs (" + r.sut + ", " + reports.front().sut + ")");
        if (r.scenario != reports.front().scenario) failInput("aggregate_report: mixed scenario kinds");
    }
    std::stable_sort(reports.begin(), reports.end(), [](const MetricReport& a, const MetricReport& b) { return a.d < b.d; });
    Summary s;
    s.sut = reports.front().sut;
    s.scenario = reports.front().scenario;
    s.rows = std::move(reports);
    return s;
}

/// FNV-1a over the text, as 16 hex digits.
inline std::string digest(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}// namespace driftforge::bench
