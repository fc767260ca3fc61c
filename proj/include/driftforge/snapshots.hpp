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
#include <driftforge/generator.hpp>
#include <driftforge/rng.hpp>
#include <driftforge/tabular.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace driftforge::snapshots {

struct Snapshot {
    std::string id;
    Table table;
    std::int64_t order = 0;
};

enum class Policy { kReject, kExtrapolate };

inline std::string toString(Policy p) { return p == Policy::kReject ? "reject" : "extrapolate"; }

inline Policy parsePolicy(const std::string& s) {
    if (s == "reject") return Policy::kReject;
    if (s == "extrapolate") return Policy::kExtrapolate;
    failInput("unknown snapshot policy '" + s + "' (expected reject or extrapolate)");
}

struct LibraryEntry {
    std::string id;
    std::int64_t order = 0;
    double alpha = 0.0;
    std::string checkpoint;// relative to the manifest directory
    std::string table;     // snapshot CSV, relative to the manifest directory; optional
    std::shared_ptr<const Generator> generator;// null until trained or loaded
};

struct SnapshotLibrary {
    std::string baseId;
    std::vector<LibraryEntry> entries;// ascending order index
    double tau = 0.15;
    Policy policy = Policy::kReject;

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) failInput("snapshot library: tau must be > 0");
        std::set<std::string> ids;
        bool baseSeen = false;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            if (!ids.insert(e.id).second) failInput("snapshot library: duplicate id '" + e.id + "'");
            if (i > 0 && e.order <= entries[i - 1].order) failInput("snapshot library: order indices must increase");
            if (!(e.alpha >= 0.0 && e.alpha <= 1.0)) failInput("snapshot library: alpha out of [0, 1] for '" + e.id + "'");
            baseSeen = baseSeen || e.id == baseId;
        }
        if (!entries.empty() && !baseSeen) failInput("snapshot library: base '" + baseId + "' is not an entry");
    }

    const LibraryEntry& at(std::size_t i) const { return entries.at(i); }

    nlohmann::json toJson() const {
        nlohmann::json snaps = nlohmann::json::array();
        for (const auto& e : entries) {
            nlohmann::json sj{{"id", e.id}, {"order", e.order}, {"alpha", e.alpha}, {"checkpoint", e.checkpoint}};
            if (!e.table.empty()) sj["table"] = e.table;
            snaps.push_back(std::move(sj));
        }
        return {{"format_version", 1},
                {"base", baseId},
                {"alpha_reference", "base"},
                {"tau", tau},
                {"policy", toString(policy)},
                {"snapshots", snaps}};
    }
};

struct LibraryConfig {
    FitConfig fit;
    double tau = 0.15;
    Policy policy = Policy::kReject;
    BinningConfig binning;
};

using Trainer = std::function<Generator(const Table&, const FitConfig&)>;

inline std::uint64_t idHash(const std::string& id) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// alpha_i = d(S_i, base). Each snapshot trains with seeds derived from its id, so results do not depend on
/// library order. Pass an empty trainer to measure alphas only.
inline SnapshotLibrary buildLibrary(std::vector<Snapshot> snapshots, const std::string& baseId,
                                    const LibraryConfig& cfg, const Trainer& trainer = fitGenerator) {
    if (snapshots.empty()) failInput("build_library: no snapshots");
    std::sort(snapshots.begin(), snapshots.end(), [](const Snapshot& a, const Snapshot& b) { return a.order < b.order; });
    auto base = std::find_if(snapshots.begin(), snapshots.end(), [&](const Snapshot& s) { return s.id == baseId; });
    if (base == snapshots.end()) failInput("build_library: base snapshot '" + baseId + "' not found");
    for (const auto& s : snapshots) {
        if (!(s.table.schema() == base->table.schema())) failInput("build_library: snapshot '" + s.id + "' has a different schema");
    }

    SnapshotLibrary lib;
    lib.baseId = baseId;
    lib.tau = cfg.tau;
    lib.policy = cfg.policy;
    for (const auto& s : snapshots) {
        LibraryEntry e;
        e.id = s.id;
        e.order = s.order;
        e.alpha = s.id == baseId ? 0.0 : driftBetween(s.table, base->table, cfg.binning).aggregate.value();
        e.checkpoint = "generators/" + s.id;
        if (trainer) {
            FitConfig fc = cfg.fit;
            const std::uint64_t salt = idHash(s.id);
            fc.diffuser.seed = deriveSeed(cfg.fit.diffuser.seed, salt);
            fc.drifter.seed = deriveSeed(cfg.fit.drifter.seed, salt);
            fc.calibration.seed = deriveSeed(cfg.fit.calibration.seed, salt);
            e.generator = std::make_shared<const Generator>(trainer(s.table, fc));
        }
        lib.entries.push_back(std::move(e));
    }
    lib.validate();
    return lib;
}

// ---------------------------------------------------------------------------
// Selection

struct InterpolationPlan {
    std::size_t lo = 0;// entry indices
    std::size_t hi = 0;
    double weightLo = 1.0;
    double weightHi = 0.0;

    /// Rows drawn from the upper generator: round(weightHi * n).
    std::size_t rowsHi(std::size_t n) const {
        return static_cast<std::size_t>(std::llround(weightHi * static_cast<double>(n)));
    }
};

struct Selection {
    enum class Kind { kGenerator, kRejected, kInterpolated };
    Kind kind = Kind::kGenerator;
    std::size_t index = 0;// selected entry (kGenerator)
    double distance = 0.0;// min |d - alpha_i|
    std::optional<InterpolationPlan> plan;
    std::string message;
};

/// Two bracketing entries around d with w_hi = (d - alpha_lo) / (alpha_hi - alpha_lo), clamped to [0, 1].
inline InterpolationPlan interpolatePlan(const SnapshotLibrary& lib, double d) {
    if (lib.entries.size() < 2) failInput("interpolate_plan: need at least two generators");
    std::vector<std::size_t> idx(lib.entries.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return lib.entries[a].alpha < lib.entries[b].alpha;
    });
    const double minAlpha = lib.entries[idx.front()].alpha;
    const double maxAlpha = lib.entries[idx.back()].alpha;
    if (d < minAlpha - lib.tau || d > maxAlpha + lib.tau) {
        failInput("interpolate_plan: d=" + formatNumber(d) + " lies outside [" + formatNumber(minAlpha - lib.tau)
                  + ", " + formatNumber(maxAlpha + lib.tau) + "]");
    }
    // First entry whose alpha exceeds d, kept inside the sorted range.
    std::size_t upper = 1;
    while (upper + 1 < idx.size() && lib.entries[idx[upper]].alpha <= d) ++upper;
    InterpolationPlan plan;
    plan.lo = idx[upper - 1];
    plan.hi = idx[upper];
    const double aLo = lib.entries[plan.lo].alpha;
    const double aHi = lib.entries[plan.hi].alpha;
    plan.weightHi = aHi > aLo ? std::clamp((d - aLo) / (aHi - aLo), 0.0, 1.0) : 0.0;
    plan.weightLo = 1.0 - plan.weightHi;
    return plan;
}

/// Distances closer than this count as ties, so decimal alphas like 0.1 / 0.3 tie at d = 0.2.
inline constexpr double kDistanceTolerance = 1e-12;

inline Selection selectGenerator(const SnapshotLibrary& lib, DriftFactor d) {
    if (lib.entries.empty()) failInput("select_generator: empty library");
    Selection s;
    s.distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < lib.entries.size(); ++i) {
        const double dist = std::abs(d.value() - lib.entries[i].alpha);
        // Entries are in ascending order index, so strict < keeps the earliest on ties.
        if (dist < s.distance - kDistanceTolerance) {
            s.distance = dist;
            s.index = i;
        }
    }
    if (s.distance <= lib.tau + kDistanceTolerance) return s;
    if (lib.policy == Policy::kReject || lib.entries.size() < 2) {
        s.kind = Selection::Kind::kRejected;
        s.message = "requested d=" + formatNumber(d.value()) + " is " + formatNumber(s.distance)
            + " from the nearest snapshot drift, beyond the threshold tau=" + formatNumber(lib.tau);
        return s;
    }
    s.kind = Selection::Kind::kInterpolated;
    s.plan = interpolatePlan(lib, d.value());
    return s;
}

// ---------------------------------------------------------------------------
// Generation through the library

struct LibraryGeneration {
    Selection selection;
    Table table;
    DriftReport achieved;// vs the base snapshot
    double correlationError = 0.0;
    std::vector<drifter::GenerationResult> parts;

    nlohmann::json toJson(double target) const {
        nlohmann::json parts_ = nlohmann::json::array();
        for (const auto& p : parts) parts_.push_back(p.toJson());
        nlohmann::json sel{{"distance", selection.distance}};
        if (selection.kind == Selection::Kind::kGenerator) {
            sel["kind"] = "generator";
            sel["index"] = selection.index;
        } else {
            sel["kind"] = "interpolated";
            sel["lo"] = selection.plan->lo;
            sel["hi"] = selection.plan->hi;
            sel["weight_lo"] = selection.plan->weightLo;
            sel["weight_hi"] = selection.plan->weightHi;
        }
        return {{"target_d", target},
                {"achieved_d", achieved.aggregate.value()},
                {"per_attribute", driftforge::toJson(achieved)["attributes"]},
                {"correlation_error", correlationError},
                {"rows", table.size()},
                {"selection", sel},
                {"parts", parts_}};
    }
};

inline const Generator& requireGenerator(const LibraryEntry& e) {
    if (!e.generator) failInput("snapshot '" + e.id + "' has no trained generator");
    return *e.generator;
}

/// The selected generator drifts its own snapshot by the remaining |d - alpha_i|. Interpolation mixes rows
/// from the two bracketing generators, each at its native distribution (target 0).
/// Throws Error(kRejected) when the library rejects the request.
inline LibraryGeneration generateFromLibrary(const SnapshotLibrary& lib, const std::vector<Snapshot>& snapshots,
                                             DriftFactor d, std::size_t n, const drifter::GenerateOptions& opts,
                                             const BinningConfig& binning = {}) {
    auto tableOf = [&](const std::string& id) -> const Table& {
        for (const auto& s : snapshots) {
            if (s.id == id) return s.table;
        }
        failInput("snapshot table '" + id + "' not supplied");
    };
    LibraryGeneration out;
    out.selection = selectGenerator(lib, d);
    if (out.selection.kind == Selection::Kind::kRejected) throw Error(ErrorKind::kRejected, out.selection.message);
    const Table& base = tableOf(lib.baseId);

    auto run = [&](std::size_t entry, double target, std::size_t rows, std::uint64_t stream) {
        drifter::GenerateOptions o = opts;
        o.rows = rows;
        o.seed = deriveSeed(opts.seed, stream);
        return generate(requireGenerator(lib.entries[entry]), tableOf(lib.entries[entry].id), DriftFactor(target), o);
    };

    std::vector<Row> rows;
    if (out.selection.kind == Selection::Kind::kGenerator) {
        const double residual = std::abs(d.value() - lib.entries[out.selection.index].alpha);
        out.parts.push_back(run(out.selection.index, residual, n, 0));
    } else {
        const auto& plan = *out.selection.plan;
        const std::size_t hiRows = plan.rowsHi(n);
        out.parts.push_back(run(plan.lo, 0.0, n - hiRows, 1));
        out.parts.push_back(run(plan.hi, 0.0, hiRows, 2));
    }
    for (const auto& p : out.parts) rows.insert(rows.end(), p.table.rows().begin(), p.table.rows().end());
    out.table = Table(base.schema(), std::move(rows));
    if (!out.table.empty()) {
        out.achieved = driftBetween(out.table, base, binning);
        out.correlationError = averageCorrelationError(correlationMatrix(out.table), correlationMatrix(base));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

/// Writes <dir>/library.json and each trained generator under <dir>/<checkpoint>.
inline void saveLibrary(const std::string& dir, const SnapshotLibrary& lib) {
    const std::filesystem::path root(dir);
    for (const auto& e : lib.entries) {
        if (e.generator) saveGenerator((root / e.checkpoint).string(), *e.generator);
    }
    writeText((root / "library.json").string(), lib.toJson().dump(2) + "\n");
}

inline SnapshotLibrary libraryFromJson(const nlohmann::json& j) {
    SnapshotLibrary lib;
    lib.baseId = j.at("base").get<std::string>();
    lib.tau = j.at("tau").get<double>();
    lib.policy = parsePolicy(j.at("policy").get<std::string>());
    for (const auto& s : j.at("snapshots")) {
        LibraryEntry e;
        e.id = s.at("id").get<std::string>();
        e.order = s.at("order").get<std::int64_t>();
        e.alpha = s.at("alpha").get<double>();
        e.checkpoint = s.value("checkpoint", std::string());
        e.table = s.value("table", std::string());
        lib.entries.push_back(std::move(e));
    }
    lib.validate();
    return lib;
}

/// Loads the manifest; with `withGenerators`, also every checkpoint it lists.
inline SnapshotLibrary loadLibrary(const std::string& manifestPath, bool withGenerators = true) {
    SnapshotLibrary lib = libraryFromJson(nn::readJsonFile(manifestPath));
    if (withGenerators) {
        const auto root = std::filesystem::path(manifestPath).parent_path();
        for (auto& e : lib.entries) e.generator = std::make_shared<const Generator>(loadGenerator((root / e.checkpoint).string()));
    }
    return lib;
}

}// namespace driftforge::snapshots
