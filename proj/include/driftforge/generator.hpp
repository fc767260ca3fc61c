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

#include <driftforge/diffusion.hpp>
#include <driftforge/drifter.hpp>
#include <driftforge/tabular.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace driftforge {

struct FitConfig {
    diffusion::DiffuserConfig diffuser;
    drifter::DrifterConfig drifter;
    bool calibrate = true;
    drifter::CalibrationConfig calibration;
};

/// A trained diffuser/drifter pair for one table.
struct Generator {
    diffusion::DiffuserModel diffuser;
    drifter::DrifterModel drifter;
    std::optional<drifter::CalibrationResult> calibration;

    const Schema& schema() const { return diffuser.encoding.schema(); }
};

inline Generator fitGenerator(const Table& data, const FitConfig& cfg) {
    Generator g;
    g.diffuser = diffusion::trainDiffuser(data, cfg.diffuser);
    g.drifter = drifter::trainDrifter(g.diffuser, data, cfg.drifter);
    if (cfg.calibrate) {
        g.calibration = drifter::calibrateGuidance(g.diffuser, g.drifter, data, cfg.calibration);
        g.drifter.guidance.scale = g.calibration->scale;
    }
    return g;
}

inline drifter::GenerationResult generate(const Generator& g, const Table& original, DriftFactor target,
                                          const drifter::GenerateOptions& opts = {}) {
    return drifter::generateDriftedTable(g.diffuser, g.drifter, original, target, opts);
}

/// Layout: <dir>/diffuser, <dir>/drifter, <dir>/generator.json.
inline void saveGenerator(const std::string& dir, const Generator& g) {
    const std::filesystem::path root(dir);
    diffusion::saveDiffuser((root / "diffuser").string(), g.diffuser);
    drifter::saveDrifter((root / "drifter").string(), g.drifter);
    nlohmann::json j{{"format_version", 1}, {"diffuser", "diffuser"}, {"drifter", "drifter"}};
    j["calibration"] = g.calibration ? g.calibration->toJson() : nlohmann::json(nullptr);
    writeText((root / "generator.json").string(), j.dump(2) + "\n");
}

inline Generator loadGenerator(const std::string& dir) {
    const std::filesystem::path root(dir);
    if (!std::filesystem::exists(root / "generator.json")) failInput("no generator checkpoint at " + dir);
    const auto j = nn::readJsonFile((root / "generator.json").string());
    Generator g;
    g.diffuser = diffusion::loadDiffuser((root / j.value("diffuser", std::string("diffuser"))).string());
    g.drifter = drifter::loadDrifter((root / j.value("drifter", std::string("drifter"))).string());
    if (g.drifter.timesteps != g.diffuser.schedule.steps) failInput(dir + ": drifter/diffuser timestep mismatch");
    if (j.contains("calibration") && !j["calibration"].is_null()) {
        drifter::CalibrationResult c;
        c.scale = j["calibration"].at("scale").get<double>();
        c.meanError = j["calibration"].value("mean_error", 0.0);
        c.evaluations = j["calibration"].value("evaluations", std::size_t{0});
        g.calibration = c;
    }
    return g;
}

}// namespace driftforge
