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

#include <driftforge/error.hpp>
#include <driftforge/nn.hpp>
#include <driftforge/rng.hpp>
#include <driftforge/tabular.hpp>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace driftforge::diffusion {

enum class ScheduleKind { kLinear };

/// Reverse-step variance: beta_t, or the true posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
enum class VarianceKind { kBeta, kPosterior };

/// Which posterior-mean coefficient multiplies the predicted noise.
enum class PosteriorForm {
    kStandard,// beta_t / sqrt(1 - abar_t)
    kLiteral, // sqrt(1 - alpha_t)
};

inline std::string toString(VarianceKind v) { return v == VarianceKind::kBeta ? "beta" : "posterior"; }

inline VarianceKind parseVarianceKind(const std::string& s) {
    if (s == "beta") return VarianceKind::kBeta;
    if (s == "posterior") return VarianceKind::kPosterior;
    failInput("unknown variance kind '" + s + "'");
}

/// Variance schedule. Arrays are indexed by t - 1 for t = 1..T.
struct DiffusionSchedule {
    std::size_t steps = 0;
    double betaStart = 0.0;
    double betaEnd = 0.0;
    ScheduleKind kind = ScheduleKind::kLinear;
    VarianceKind variance = VarianceKind::kBeta;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alphaBar;
    std::vector<double> sigma2;

    double betaAt(std::size_t t) const { return beta[t - 1]; }
    double alphaAt(std::size_t t) const { return alpha[t - 1]; }
    double alphaBarAt(std::size_t t) const { return alphaBar[t - 1]; }
    double sigma2At(std::size_t t) const { return sigma2[t - 1]; }

    void checkStep(std::size_t t, const char* op) const {
        if (t < 1 || t > steps) {
            failInput(std::string(op) + ": t=" + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
        }
    }

    nlohmann::json toJson() const {
        return {{"format_version", 1}, {"T", steps},         {"beta_1", betaStart},
                {"beta_T", betaEnd},   {"kind", "linear"},   {"variance", toString(variance)}};
    }
};

/// Builds a schedule from explicit betas; each must lie in (0, 1) and the sequence must be non-decreasing.
inline DiffusionSchedule scheduleFromBetas(std::vector<double> betas, VarianceKind variance = VarianceKind::kBeta) {
    if (betas.size() < 2) failInput("schedule: need T >= 2");
    DiffusionSchedule s;
    s.steps = betas.size();
    s.betaStart = betas.front();
    s.betaEnd = betas.back();
    s.variance = variance;
    double running = 1.0;
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0)) failInput("schedule: beta must lie in (0, 1)");
        if (i > 0 && betas[i] < betas[i - 1]) failInput("schedule: beta must be non-decreasing");
        running *= 1.0 - betas[i];
        s.alpha.push_back(1.0 - betas[i]);
        s.alphaBar.push_back(running);
    }
    s.beta = std::move(betas);
    for (std::size_t i = 0; i < s.steps; ++i) {
        if (variance == VarianceKind::kBeta || i == 0) {
            s.sigma2.push_back(s.beta[i]);
        } else {
            s.sigma2.push_back((1.0 - s.alphaBar[i - 1]) / (1.0 - s.alphaBar[i]) * s.beta[i]);
        }
    }
    return s;
}

inline DiffusionSchedule makeSchedule(std::size_t steps, double betaStart = 1e-4, double betaEnd = 0.02,
                                      ScheduleKind kind = ScheduleKind::kLinear,
                                      VarianceKind variance = VarianceKind::kBeta) {
    if (steps < 2) failInput("schedule: need T >= 2");
    if (!(betaStart > 0.0 && betaStart <= betaEnd && betaEnd < 1.0)) {
        failInput("schedule: need 0 < beta_1 <= beta_T < 1");
    }
    (void) kind;
    std::vector<double> betas(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        betas[i] = betaStart + (betaEnd - betaStart) * static_cast<double>(i) / static_cast<double>(steps - 1);
    }
    auto s = scheduleFromBetas(std::move(betas), variance);
    s.betaStart = betaStart;
    s.betaEnd = betaEnd;
    return s;
}

inline DiffusionSchedule scheduleFromJson(const nlohmann::json& j) {
    if (j.value("kind", std::string("linear")) != "linear") failInput("schedule: only linear kind is supported");
    return makeSchedule(j.at("T").get<std::size_t>(), j.at("beta_1").get<double>(), j.at("beta_T").get<double>(),
                        ScheduleKind::kLinear, parseVarianceKind(j.value("variance", std::string("beta"))));
}

/// x_t = sqrt(abar) x_0 + sqrt(1 - abar) eps.
inline Eigen::MatrixXd corrupt(const Eigen::MatrixXd& x0, double alphaBar, const Eigen::MatrixXd& noise) {
    return std::sqrt(alphaBar) * x0 + std::sqrt(1.0 - alphaBar) * noise;
}

inline EncodedMatrix forwardSample(const EncodedMatrix& x0, std::size_t t, const Eigen::MatrixXd& noise,
                                   const DiffusionSchedule& s) {
    s.checkStep(t, "forward_sample");
    if (noise.rows() != x0.values.rows() || noise.cols() != x0.values.cols()) {
        failInput("forward_sample: noise shape mismatch");
    }
    return {corrupt(x0.values, s.alphaBarAt(t), noise), false};
}

inline double noiseCoefficient(std::size_t t, const DiffusionSchedule& s, PosteriorForm form) {
    return form == PosteriorForm::kStandard ? s.betaAt(t) / std::sqrt(1.0 - s.alphaBarAt(t))
                                            : std::sqrt(1.0 - s.alphaAt(t));
}

/// mu = (x_t - c_t * eps_hat) / sqrt(alpha_t).
inline Eigen::MatrixXd posteriorMean(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& noiseHat, std::size_t t,
                                     const DiffusionSchedule& s, PosteriorForm form = PosteriorForm::kStandard) {
    s.checkStep(t, "posterior_mean");
    if (xt.rows() != noiseHat.rows() || xt.cols() != noiseHat.cols()) {
        failInput("posterior_mean: shape mismatch");
    }
    return (xt - noiseCoefficient(t, s, form) * noiseHat) / std::sqrt(s.alphaAt(t));
}

/// Estimate of x_0 implied by a noise prediction.
inline Eigen::MatrixXd predictClean(const Eigen::MatrixXd& xt, const Eigen::MatrixXd& noiseHat, std::size_t t,
                                    const DiffusionSchedule& s) {
    const double ab = s.alphaBarAt(t);
    return (xt - std::sqrt(1.0 - ab) * noiseHat) / std::sqrt(ab);
}

/// Time is fed to the networks as the scalar t / T.
inline double timeFeature(std::size_t t, std::size_t steps) {
    return static_cast<double>(t) / static_cast<double>(steps);
}

/// [x | extra_0 | extra_1 ...] with each extra broadcast to every row.
inline Eigen::MatrixXd appendFeatures(const Eigen::MatrixXd& x, std::initializer_list<double> extras) {
    Eigen::MatrixXd out(x.rows(), x.cols() + static_cast<Eigen::Index>(extras.size()));
    out.leftCols(x.cols()) = x;
    Eigen::Index c = x.cols();
    for (double e : extras) out.col(c++).setConstant(e);
    return out;
}

// ---------------------------------------------------------------------------
// Diffuser

struct TrainingMeta {
    std::size_t steps = 0;
    std::uint64_t seed = 0;
    double initialLoss = 0.0;
    double finalLoss = 0.0;
    std::vector<double> lossHistory;// one smoothed value per `historyEvery` steps

    nlohmann::json toJson() const {
        return {{"steps", steps}, {"seed", seed}, {"initial_loss", initialLoss}, {"final_loss", finalLoss}};
    }
};

struct DiffuserConfig {
    std::vector<std::size_t> hidden{512, 1024, 1024, 512};
    nn::Activation activation = nn::Activation::kRelu;
    std::size_t steps = 3000;// optimizer steps
    nn::OptimizerConfig optimizer;
    std::size_t timesteps = 1000;
    double betaStart = 1e-4;
    double betaEnd = 0.02;
    VarianceKind variance = VarianceKind::kBeta;
    std::uint64_t seed = 0;
    std::size_t historyEvery = 50;
};

struct DiffuserModel {
    nn::Mlp net;// input m + 1 (time feature), output m
    DiffusionSchedule schedule;
    EncodingSpec encoding;
    TrainingMeta meta;

    Eigen::MatrixXd predictNoise(const Eigen::MatrixXd& xt, std::size_t t) const {
        return nn::forwardBatch(net, appendFeatures(xt, {timeFeature(t, schedule.steps)}));
    }
};

/// Running mean of the last `window` values, for loss reporting.
class LossWindow {
  public:
    explicit LossWindow(std::size_t window) : window_(window) {}
    void push(double v) {
        values_.push_back(v);
        sum_ += v;
        if (values_.size() > window_) {
            sum_ -= values_[values_.size() - window_ - 1];
        }
    }
    double mean() const {
        const std::size_t n = std::min(window_, values_.size());
        return n == 0 ? 0.0 : sum_ / static_cast<double>(n);
    }

  private:
    std::size_t window_;
    std::vector<double> values_;
    double sum_ = 0.0;
};

/// Minimizes E_t ||eps - Diff(x_t, t)||^2 with t ~ U{1..T}, eps ~ N(0, I), rows drawn with replacement.
inline DiffuserModel trainDiffuser(const Table& data, const DiffuserConfig& cfg) {
    if (data.empty()) failInput("train_diffuser: empty table");
    cfg.optimizer.validate();
    DiffuserModel model;
    model.encoding = EncodingSpec::fromSchema(data.schema());
    model.schedule = makeSchedule(cfg.timesteps, cfg.betaStart, cfg.betaEnd, ScheduleKind::kLinear, cfg.variance);
    const auto m = static_cast<Eigen::Index>(model.encoding.width());
    std::vector<std::size_t> dims{model.encoding.width() + 1};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(model.encoding.width());
    model.net = nn::Mlp({dims, cfg.activation, cfg.seed});
    model.meta.seed = cfg.seed;
    model.meta.steps = cfg.steps;

    const EncodedMatrix x0 = encodeTable(data, model.encoding);
    const auto batch = static_cast<Eigen::Index>(cfg.optimizer.batchSize);
    const auto rows = static_cast<std::int64_t>(data.size());
    const auto T = static_cast<std::int64_t>(cfg.timesteps);
    Rng rng(deriveSeed(cfg.seed, 0x646966));
    auto state = nn::AdamState::forModel(model.net);
    LossWindow window(100);

    Eigen::MatrixXd input(batch, m + 1);
    Eigen::MatrixXd noise(batch, m);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (Eigen::Index i = 0; i < batch; ++i) {
            const auto r = rng.uniformInt(0, rows - 1);
            const auto t = static_cast<std::size_t>(rng.uniformInt(1, T));
            const double ab = model.schedule.alphaBarAt(t);
            for (Eigen::Index c = 0; c < m; ++c) noise(i, c) = rng.normal();
            input.row(i).head(m) = std::sqrt(ab) * x0.values.row(r) + std::sqrt(1.0 - ab) * noise.row(i);
            input(i, m) = timeFeature(t, cfg.timesteps);
        }
        auto result = nn::parameterGradients(model.net, input, [&](const Eigen::MatrixXd& out, Eigen::MatrixXd& grad) {
            const Eigen::MatrixXd diff = out - noise;
            const double scale = 1.0 / static_cast<double>(diff.size());
            grad = 2.0 * scale * diff;
            return diff.squaredNorm() * scale;
        });
        if (!result.gradients.allFinite()) {
            failRuntime("train_diffuser: non-finite gradients at step " + std::to_string(step));
        }
        if (step == 0) model.meta.initialLoss = result.loss;
        window.push(result.loss);
        if (cfg.historyEvery > 0 && step % cfg.historyEvery == 0) model.meta.lossHistory.push_back(window.mean());
        nn::adamStep(model.net, result.gradients, state, cfg.optimizer.learningRate.at(step, cfg.steps), cfg.optimizer);
        if (!model.net.allFinite()) {
            failRuntime("train_diffuser: parameters diverged at step " + std::to_string(step) + " (loss "
                        + formatNumber(result.loss) + ")");
        }
    }
    model.meta.finalLoss = window.mean();
    return model;
}

// ---------------------------------------------------------------------------
// Reverse process

/// Hook that may shift the posterior mean of rows `x_t` at step t (guidance).
using MeanAdjust = std::function<void(Eigen::MatrixXd& mean, const Eigen::MatrixXd& xt, std::size_t t)>;

struct SamplingOptions {
    std::uint64_t seed = 0;
    std::size_t shardRows = 512;// shard size fixes the noise streams; independent of thread count
    std::size_t threads = 1;
    PosteriorForm posterior = PosteriorForm::kStandard;
};

/// x_T ~ N(0, I); for t = T..1: x_{t-1} = mu + sigma_t z (z = 0 at t = 1). Shard k draws its noise from
/// stream (seed, k), so results do not depend on `threads`.
inline EncodedMatrix reverseProcess(const DiffuserModel& model, std::size_t n, const SamplingOptions& opts,
                                    const MeanAdjust& adjust = {}) {
    const auto m = static_cast<Eigen::Index>(model.encoding.width());
    EncodedMatrix out{Eigen::MatrixXd(static_cast<Eigen::Index>(n), m), false};
    if (n == 0) return out;
    const std::size_t shardRows = std::max<std::size_t>(1, opts.shardRows);
    const std::size_t shards = (n + shardRows - 1) / shardRows;

    auto runShard = [&](std::size_t k) {
        const std::size_t begin = k * shardRows;
        const auto rows = static_cast<Eigen::Index>(std::min(n, begin + shardRows) - begin);
        Rng rng(deriveSeed(opts.seed, k));
        Eigen::MatrixXd x(rows, m);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index c = 0; c < m; ++c) x(i, c) = rng.normal();
        }
        for (std::size_t t = model.schedule.steps; t >= 1; --t) {
            const Eigen::MatrixXd noiseHat = model.predictNoise(x, t);
            Eigen::MatrixXd mean = posteriorMean(x, noiseHat, t, model.schedule, opts.posterior);
            if (adjust) adjust(mean, x, t);
            if (t > 1) {
                const double sigma = std::sqrt(model.schedule.sigma2At(t));
                for (Eigen::Index i = 0; i < rows; ++i) {
                    for (Eigen::Index c = 0; c < m; ++c) mean(i, c) += sigma * rng.normal();
                }
            }
            x = std::move(mean);
        }
        out.values.middleRows(static_cast<Eigen::Index>(begin), rows) = x;
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, shards));
    if (threads == 1) {
        for (std::size_t k = 0; k < shards; ++k) runShard(k);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t k = w; k < shards; k += threads) runShard(k);
            });
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

inline Table sampleUnguided(const DiffuserModel& model, std::size_t n, std::uint64_t seed) {
    SamplingOptions opts;
    opts.seed = seed;
    return decodeMatrix(reverseProcess(model, n, opts), model.encoding);
}

// ---------------------------------------------------------------------------
// Checkpoint: nn format + schedule.json + encoding.json

inline void saveDiffuser(const std::string& dir, const DiffuserModel& model) {
    nn::saveMlp(dir, model.net, {{"model", "diffuser"}, {"training", model.meta.toJson()}});
    writeText((std::filesystem::path(dir) / "schedule.json").string(), model.schedule.toJson().dump(2) + "\n");
    writeText((std::filesystem::path(dir) / "encoding.json").string(), model.encoding.toJson().dump(2) + "\n");
}

inline DiffuserModel loadDiffuser(const std::string& dir) {
    DiffuserModel model;
    model.net = nn::loadMlp(dir);
    const std::filesystem::path root(dir);
    model.schedule = scheduleFromJson(nn::readJsonFile((root / "schedule.json").string()));
    model.encoding = EncodingSpec::fromJson(nn::readJsonFile((root / "encoding.json").string()));
    const auto manifest = nn::readJsonFile((root / "manifest.json").string());
    if (manifest.contains("training")) {
        const auto& tr = manifest.at("training");
        model.meta.steps = tr.value("steps", std::size_t{0});
        model.meta.seed = tr.value("seed", std::uint64_t{0});
        model.meta.initialLoss = tr.value("initial_loss", 0.0);
        model.meta.finalLoss = tr.value("final_loss", 0.0);
    }
    if (model.net.inputDim() != model.encoding.width() + 1 || model.net.outputDim() != model.encoding.width()) {
        failInput("checkpoint " + dir + ": network dims do not match encoding width");
    }
    return model;
}

}// namespace driftforge::diffusion
