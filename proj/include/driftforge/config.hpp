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

#include <driftforge/bench.hpp>
#include <driftforge/csv.hpp>
#include <driftforge/diffusion.hpp>
#include <driftforge/drifter.hpp>
#include <driftforge/error.hpp>
#include <driftforge/generator.hpp>
#include <driftforge/rng.hpp>
#include <driftforge/snapshots.hpp>
#include <driftforge/tabular.hpp>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace driftforge {

inline constexpr const char* kSeedEnv = "DRIFTFORGE_SEED";

struct Seeds {
    std::uint64_t master = 0;
    std::optional<std::uint64_t> diffuser;
    std::optional<std::uint64_t> drifter;
    std::optional<std::uint64_t> calibration;
    std::optional<std::uint64_t> sampling;
    std::optional<std::uint64_t> testSet;

    std::uint64_t diffuserSeed() const { return diffuser.value_or(deriveSeed(master, 1)); }
    std::uint64_t drifterSeed() const { return drifter.value_or(deriveSeed(master, 2)); }
    std::uint64_t calibrationSeed() const { return calibration.value_or(deriveSeed(master, 3)); }
    std::uint64_t samplingSeed() const { return sampling.value_or(deriveSeed(master, 4)); }
    std::uint64_t testSetSeed() const { return testSet.value_or(deriveSeed(master, 5)); }
};

struct BenchSection {
    std::string scenario = "train_drifted_test_original";
    std::string sut = "hist";
    std::string sutCommand;
    std::vector<double> dList{0.0, 0.1, 0.3, 0.5};
    std::string original;
    std::string models;
    std::map<std::string, std::string> drifted;// d (as written) -> CSV path
    std::size_t testOps = 1000;
    std::string testKind;// empty: chosen by SUT
    std::string costMode = "units";
    double unitMs = 0.001;
    std::size_t histBins = 10;
    std::size_t plrEpsilon = 16;
    std::size_t maxPredicates = 2;
};

/// Resolved run configuration. Every field has a default; `toJson` writes all of them, so an echoed config
/// reproduces the run on its own.
struct RunConfig {
    std::string key;                   // data.key
    nlohmann::json overrides = nlohmann::json::object();// data.overrides
    std::string encoding = "analog_bits";
    BinningConfig binning;
    FitConfig fit;
    diffusion::PosteriorForm posterior = diffusion::PosteriorForm::kStandard;
    double tau = 0.15;
    snapshots::Policy policy = snapshots::Policy::kReject;
    std::optional<std::uint64_t> shuffleSeed;
    std::string renderSpec;
    BenchSection bench;
    Seeds seeds;
    std::string outputDir = "out";
    std::size_t threads = 1;

    /// Seeds flow from `seeds` into the training configs.
    FitConfig resolvedFit() const {
        FitConfig f = fit;
        f.diffuser.seed = seeds.diffuserSeed();
        f.drifter.seed = seeds.drifterSeed();
        f.calibration.seed = seeds.calibrationSeed();
        f.calibration.binning = binning;
        f.calibration.threads = threads;
        return f;
    }

    nlohmann::json toJson() const;
};

namespace config_detail {

inline void allowOnly(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) failInput("config: '" + path + "' must be an object");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items()) {
        if (!allowed.count(k)) failInput("config: unknown key '" + (path.empty() ? k : path + "." + k) + "'");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        failInput("config: wrong type for '" + path + "." + key + "'");
    }
}

template <typename T>
void readOptional(const nlohmann::json& j, const char* key, std::optional<T>& out, const std::string& path) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    T v{};
    read(j, key, v, path);
    out = v;
}

inline nlohmann::json optimizerJson(const nn::OptimizerConfig& o) {
    return {{"batch_size", o.batchSize},
            {"lr_min", o.learningRate.min},
            {"lr_max", o.learningRate.max},
            {"warmup_fraction", o.learningRate.warmupFraction},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"epsilon", o.epsilon}};
}

inline void readOptimizer(const nlohmann::json& j, nn::OptimizerConfig& o, const std::string& path) {
    read(j, "batch_size", o.batchSize, path);
    read(j, "lr_min", o.learningRate.min, path);
    read(j, "lr_max", o.learningRate.max, path);
    read(j, "warmup_fraction", o.learningRate.warmupFraction, path);
    read(j, "beta1", o.beta1, path);
    read(j, "beta2", o.beta2, path);
    read(j, "epsilon", o.epsilon, path);
}

inline std::string posteriorName(diffusion::PosteriorForm f) {
    return f == diffusion::PosteriorForm::kStandard ? "standard" : "literal";
}

inline diffusion::PosteriorForm parsePosterior(const std::string& s) {
    if (s == "standard") return diffusion::PosteriorForm::kStandard;
    if (s == "literal") return diffusion::PosteriorForm::kLiteral;
    failInput("config: diffusion.posterior must be 'standard' or 'literal'");
}

inline nlohmann::json optionalSeed(const std::optional<std::uint64_t>& s) {
    return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

}// namespace config_detail

inline nlohmann::json RunConfig::toJson() const {
    using namespace config_detail;
    const auto& d = fit.diffuser;
    const auto& r = fit.drifter;
    const auto& c = fit.calibration;
    nlohmann::json drifted = nlohmann::json::object();
    for (const auto& [k, v] : bench.drifted) drifted[k] = v;
    return {
        {"data", {{"key", key}, {"overrides", overrides}}},
        {"encoding", {{"scheme", encoding}}},
        {"binning", {{"bins", binning.bins}, {"smoothing", binning.smoothing}}},
        {"diffusion",
         {{"hidden", d.hidden},
          {"activation", nn::toString(d.activation)},
          {"train_steps", d.steps},
          {"timesteps", d.timesteps},
          {"beta_start", d.betaStart},
          {"beta_end", d.betaEnd},
          {"variance", diffusion::toString(d.variance)},
          {"posterior", posteriorName(posterior)},
          {"optimizer", optimizerJson(d.optimizer)}}},
        {"drifter",
         {{"hidden", r.hidden},
          {"activation", nn::toString(r.activation)},
          {"train_steps", r.steps},
          {"lambda", r.loss.lambda},
          {"bandwidth_scale", r.loss.binning.bandwidthScale},
          {"reference_mode", drifter::toString(r.reference)},
          {"guidance_scale", r.guidance.scale},
          {"guidance_mode", drifter::toString(r.guidance.mode)},
          {"optimizer", optimizerJson(r.optimizer)},
          {"calibrate",
           {{"enabled", fit.calibrate},
            {"targets", c.targets},
            {"rows", c.rows},
            {"min_scale", c.minScale},
            {"max_scale", c.maxScale},
            {"iterations", c.iterations}}}}},
        {"snapshots", {{"tau", tau}, {"policy", snapshots::toString(policy)}}},
        {"workload", {{"shuffle_seed", optionalSeed(shuffleSeed)}, {"render_spec", renderSpec}}},
        {"bench",
         {{"scenario", bench.scenario},
          {"sut", bench.sut},
          {"sut_command", bench.sutCommand},
          {"d_list", bench.dList},
          {"original", bench.original},
          {"models", bench.models},
          {"drifted", drifted},
          {"test_ops", bench.testOps},
          {"test_kind", bench.testKind},
          {"cost_mode", bench.costMode},
          {"unit_ms", bench.unitMs},
          {"hist_bins", bench.histBins},
          {"plr_epsilon", bench.plrEpsilon},
          {"max_predicates", bench.maxPredicates}}},
        {"seeds",
         {{"master", seeds.master},
          {"diffuser", seeds.diffuserSeed()},
          {"drifter", seeds.drifterSeed()},
          {"calibration", seeds.calibrationSeed()},
          {"sampling", seeds.samplingSeed()},
          {"test_set", seeds.testSetSeed()}}},
        {"output_dir", outputDir},
        {"threads", threads},
    };
}

/// Parses a config document; unknown keys anywhere are an input error naming the key.
/// `envSeed` (normally DRIFTFORGE_SEED) replaces seeds.master.
inline RunConfig runConfigFromJson(const nlohmann::json& j, const std::optional<std::string>& envSeed = std::nullopt) {
    using namespace config_detail;
    RunConfig cfg;
    allowOnly(j, "", {"data", "encoding", "binning", "diffusion", "drifter", "snapshots", "workload", "bench", "seeds",
                      "output_dir", "threads"});
    if (j.contains("data")) {
        const auto& s = j["data"];
        allowOnly(s, "data", {"key", "overrides"});
        read(s, "key", cfg.key, "data");
        if (s.contains("overrides")) {
            cfg.overrides = s["overrides"];
            overridesFromJson(cfg.overrides);
        }
    }
    if (j.contains("encoding")) {
        allowOnly(j["encoding"], "encoding", {"scheme"});
        read(j["encoding"], "scheme", cfg.encoding, "encoding");
        if (cfg.encoding != "analog_bits") failInput("config: encoding.scheme must be 'analog_bits'");
    }
    if (j.contains("binning")) {
        allowOnly(j["binning"], "binning", {"bins", "smoothing"});
        read(j["binning"], "bins", cfg.binning.bins, "binning");
        read(j["binning"], "smoothing", cfg.binning.smoothing, "binning");
    }
    cfg.binning.validate();
    if (j.contains("diffusion")) {
        const auto& s = j["diffusion"];
        auto& d = cfg.fit.diffuser;
        allowOnly(s, "diffusion", {"hidden", "activation", "train_steps", "timesteps", "beta_start", "beta_end",
                                   "variance", "posterior", "optimizer"});
        read(s, "hidden", d.hidden, "diffusion");
        std::string text;
        if (s.contains("activation")) {
            read(s, "activation", text, "diffusion");
            d.activation = nn::parseActivation(text);
        }
        read(s, "train_steps", d.steps, "diffusion");
        read(s, "timesteps", d.timesteps, "diffusion");
        read(s, "beta_start", d.betaStart, "diffusion");
        read(s, "beta_end", d.betaEnd, "diffusion");
        if (s.contains("variance")) {
            read(s, "variance", text, "diffusion");
            d.variance = diffusion::parseVarianceKind(text);
        }
        if (s.contains("posterior")) {
            read(s, "posterior", text, "diffusion");
            cfg.posterior = parsePosterior(text);
        }
        if (s.contains("optimizer")) {
            allowOnly(s["optimizer"], "diffusion.optimizer",
                      {"batch_size", "lr_min", "lr_max", "warmup_fraction", "beta1", "beta2", "epsilon"});
            readOptimizer(s["optimizer"], d.optimizer, "diffusion.optimizer");
        }
    }
    if (j.contains("drifter")) {
        const auto& s = j["drifter"];
        auto& r = cfg.fit.drifter;
        allowOnly(s, "drifter", {"hidden", "activation", "train_steps", "lambda", "bandwidth_scale", "reference_mode",
                                 "guidance_scale", "guidance_mode", "optimizer", "calibrate"});
        read(s, "hidden", r.hidden, "drifter");
        std::string text;
        if (s.contains("activation")) {
            read(s, "activation", text, "drifter");
            r.activation = nn::parseActivation(text);
        }
        read(s, "train_steps", r.steps, "drifter");
        read(s, "lambda", r.loss.lambda, "drifter");
        read(s, "bandwidth_scale", r.loss.binning.bandwidthScale, "drifter");
        if (s.contains("reference_mode")) {
            read(s, "reference_mode", text, "drifter");
            r.reference = drifter::parseReferenceMode(text);
        }
        read(s, "guidance_scale", r.guidance.scale, "drifter");
        if (s.contains("guidance_mode")) {
            read(s, "guidance_mode", text, "drifter");
            r.guidance.mode = drifter::parseGuidanceMode(text);
        }
        if (s.contains("optimizer")) {
            allowOnly(s["optimizer"], "drifter.optimizer",
                      {"batch_size", "lr_min", "lr_max", "warmup_fraction", "beta1", "beta2", "epsilon"});
            readOptimizer(s["optimizer"], r.optimizer, "drifter.optimizer");
        }
        if (s.contains("calibrate")) {
            const auto& c = s["calibrate"];
            auto& cc = cfg.fit.calibration;
            allowOnly(c, "drifter.calibrate", {"enabled", "targets", "rows", "min_scale", "max_scale", "iterations"});
            read(c, "enabled", cfg.fit.calibrate, "drifter.calibrate");
            read(c, "targets", cc.targets, "drifter.calibrate");
            read(c, "rows", cc.rows, "drifter.calibrate");
            read(c, "min_scale", cc.minScale, "drifter.calibrate");
            read(c, "max_scale", cc.maxScale, "drifter.calibrate");
            read(c, "iterations", cc.iterations, "drifter.calibrate");
        }
    }
    cfg.fit.drifter.loss.binning.bins = cfg.binning.bins;
    cfg.fit.drifter.loss.binning.smoothing = cfg.binning.smoothing;
    if (j.contains("snapshots")) {
        allowOnly(j["snapshots"], "snapshots", {"tau", "policy"});
        read(j["snapshots"], "tau", cfg.tau, "snapshots");
        if (j["snapshots"].contains("policy")) {
            std::string text;
            read(j["snapshots"], "policy", text, "snapshots");
            cfg.policy = snapshots::parsePolicy(text);
        }
    }
    if (j.contains("workload")) {
        allowOnly(j["workload"], "workload", {"shuffle_seed", "render_spec"});
        readOptional(j["workload"], "shuffle_seed", cfg.shuffleSeed, "workload");
        read(j["workload"], "render_spec", cfg.renderSpec, "workload");
    }
    if (j.contains("bench")) {
        const auto& s = j["bench"];
        auto& b = cfg.bench;
        allowOnly(s, "bench", {"scenario", "sut", "sut_command", "d_list", "original", "models", "drifted", "test_ops",
                               "test_kind", "cost_mode", "unit_ms", "hist_bins", "plr_epsilon", "max_predicates"});
        read(s, "scenario", b.scenario, "bench");
        read(s, "sut", b.sut, "bench");
        read(s, "sut_command", b.sutCommand, "bench");
        read(s, "d_list", b.dList, "bench");
        read(s, "original", b.original, "bench");
        read(s, "models", b.models, "bench");
        read(s, "drifted", b.drifted, "bench");
        read(s, "test_ops", b.testOps, "bench");
        read(s, "test_kind", b.testKind, "bench");
        read(s, "cost_mode", b.costMode, "bench");
        read(s, "unit_ms", b.unitMs, "bench");
        read(s, "hist_bins", b.histBins, "bench");
        read(s, "plr_epsilon", b.plrEpsilon, "bench");
        read(s, "max_predicates", b.maxPredicates, "bench");
    }
    if (j.contains("seeds")) {
        const auto& s = j["seeds"];
        allowOnly(s, "seeds", {"master", "diffuser", "drifter", "calibration", "sampling", "test_set"});
        read(s, "master", cfg.seeds.master, "seeds");
        readOptional(s, "diffuser", cfg.seeds.diffuser, "seeds");
        readOptional(s, "drifter", cfg.seeds.drifter, "seeds");
        readOptional(s, "calibration", cfg.seeds.calibration, "seeds");
        readOptional(s, "sampling", cfg.seeds.sampling, "seeds");
        readOptional(s, "test_set", cfg.seeds.testSet, "seeds");
    }
    read(j, "output_dir", cfg.outputDir, "");
    read(j, "threads", cfg.threads, "");
    if (envSeed && !envSeed->empty()) {
        auto v = parseNumber(*envSeed);
        if (!v || *v < 0 || std::floor(*v) != *v) failInput(std::string(kSeedEnv) + " must be a non-negative integer");
        cfg.seeds.master = std::stoull(*envSeed);
    }
    return cfg;
}

inline std::optional<std::string> seedFromEnvironment() {
    const char* v = std::getenv(kSeedEnv);
    if (!v) return std::nullopt;
    return std::string(v);
}

inline RunConfig loadRunConfig(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(csv::readFile(path));
    } catch (const nlohmann::json::exception& e) {
        failInput("config " + path + ": " + e.what());
    }
    return runConfigFromJson(j, seedFromEnvironment());
}

}// namespace driftforge
