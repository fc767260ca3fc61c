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
#include <driftforge/dist.hpp>
#include <driftforge/error.hpp>
#include <driftforge/nn.hpp>
#include <driftforge/rng.hpp>
#include <driftforge/tabular.hpp>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace driftforge::drifter {

// ---------------------------------------------------------------------------
// Differentiable marginal profiles

/// Kernel settings for soft binning. Bandwidth is `bandwidthScale` times the bin width: 2 / bins for
/// continuous columns, 1 (level-to-threshold distance) for analog-bit codes.
struct SoftBinning {
    std::size_t bins = 10;
    double bandwidthScale = 0.5;
    double smoothing = 1e-9;

    double continuousBandwidth() const { return bandwidthScale * 2.0 / static_cast<double>(bins); }
    double codeBandwidth() const { return bandwidthScale; }

    void validate() const {
        if (bins < 2) failInput("soft binning: bins must be >= 2");
        if (!(bandwidthScale > 0.0)) failInput("soft binning: bandwidth must be > 0");
        if (!(smoothing > 0.0)) failInput("soft binning: smoothing must be > 0");
    }
};

/// Per attribute: soft assignment of every row to each bin / category, and the column means.
struct SoftProfile {
    std::vector<Eigen::MatrixXd> assignments;// n x K per encoded group
    std::vector<Eigen::VectorXd> probabilities;
};

namespace detail {

inline Eigen::VectorXd binCenters(std::size_t bins) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(bins));
    const double w = 2.0 / static_cast<double>(bins);
    for (std::size_t k = 0; k < bins; ++k) c(static_cast<Eigen::Index>(k)) = -1.0 + (static_cast<double>(k) + 0.5) * w;
    return c;
}

inline Eigen::MatrixXd codeBook(const EncodedGroup& g) {
    Eigen::MatrixXd codes(static_cast<Eigen::Index>(g.categoryCount), static_cast<Eigen::Index>(g.width));
    std::vector<double> code(g.width);
    for (std::size_t k = 0; k < g.categoryCount; ++k) {
        writeCode(k, g.width, code.data());
        for (std::size_t b = 0; b < g.width; ++b) codes(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b)) = code[b];
    }
    return codes;
}

/// Row-wise softmax in place.
inline void softmaxRows(Eigen::MatrixXd& z) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double top = z.row(i).maxCoeff();
        z.row(i) = (z.row(i).array() - top).exp();
        z.row(i) /= z.row(i).sum();
    }
}

/// Squared distances of every row of `x` (n x w) to every row of `centers` (K x w), scaled by -1/(2h^2).
inline Eigen::MatrixXd kernelLogits(const Eigen::MatrixXd& x, const Eigen::MatrixXd& centers, double h) {
    Eigen::MatrixXd z(x.rows(), centers.rows());
    const double scale = -0.5 / (h * h);
    for (Eigen::Index k = 0; k < centers.rows(); ++k) {
        z.col(k) = scale * (x.rowwise() - centers.row(k)).rowwise().squaredNorm();
    }
    return z;
}

inline Eigen::MatrixXd groupCenters(const EncodedGroup& g, const SoftBinning& cfg) {
    return g.kind == AttributeKind::kContinuous ? Eigen::MatrixXd(binCenters(cfg.bins)) : codeBook(g);
}

inline double groupBandwidth(const EncodedGroup& g, const SoftBinning& cfg) {
    return g.kind == AttributeKind::kContinuous ? cfg.continuousBandwidth() : cfg.codeBandwidth();
}

}// namespace detail

/// Gaussian-kernel soft histogram of an encoded batch; each row distributes unit mass over bins/codes.
inline SoftProfile softProfile(const Eigen::MatrixXd& x, const EncodingSpec& spec, const SoftBinning& cfg) {
    cfg.validate();
    if (x.rows() == 0) failInput("soft_profile: empty batch");
    if (static_cast<std::size_t>(x.cols()) != spec.width()) failInput("soft_profile: width mismatch");
    SoftProfile out;
    for (const auto& g : spec.groups()) {
        const auto cols = x.middleCols(static_cast<Eigen::Index>(g.offset), static_cast<Eigen::Index>(g.width));
        Eigen::MatrixXd a = detail::kernelLogits(cols, detail::groupCenters(g, cfg), detail::groupBandwidth(g, cfg));
        detail::softmaxRows(a);
        out.probabilities.push_back(a.colwise().mean().transpose());
        out.assignments.push_back(std::move(a));
    }
    return out;
}

/// Accumulates dL/dx given dL/d(probabilities) for every group.
inline void softProfileBackward(const Eigen::MatrixXd& x, const EncodingSpec& spec, const SoftBinning& cfg,
                                const SoftProfile& profile, const std::vector<Eigen::VectorXd>& probabilityGrads,
                                Eigen::MatrixXd& xGrad) {
    const double n = static_cast<double>(x.rows());
    for (std::size_t gi = 0; gi < spec.groups().size(); ++gi) {
        const auto& g = spec.groups()[gi];
        const Eigen::MatrixXd& a = profile.assignments[gi];
        const Eigen::RowVectorXd G = probabilityGrads[gi].transpose() / n;
        // dL/dz_ik = a_ik (G_k - sum_j a_ij G_j)
        const Eigen::VectorXd expected = a * G.transpose();
        Eigen::MatrixXd dz = a.array() * (G.replicate(a.rows(), 1).colwise() - expected).array();
        const Eigen::MatrixXd centers = detail::groupCenters(g, cfg);
        const double h2 = std::pow(detail::groupBandwidth(g, cfg), 2);
        const auto cols = x.middleCols(static_cast<Eigen::Index>(g.offset), static_cast<Eigen::Index>(g.width));
        // dz_ik/dx_ib = -(x_ib - c_kb) / h^2
        const Eigen::VectorXd rowSum = dz.rowwise().sum();
        Eigen::MatrixXd grad = -(cols.array().colwise() * rowSum.array()).matrix() / h2;
        grad += (dz * centers) / h2;
        xGrad.middleCols(static_cast<Eigen::Index>(g.offset), static_cast<Eigen::Index>(g.width)) += grad;
    }
}

// ---------------------------------------------------------------------------
// Differentiable Pearson correlation over encoded columns

struct SoftCorrelation {
    Eigen::MatrixXd centered;
    Eigen::VectorXd sumSquares;// per column, plus a small floor
    Eigen::MatrixXd r;
};

inline constexpr double kVarianceFloor = 1e-9;

inline SoftCorrelation softCorrelation(const Eigen::MatrixXd& x) {
    SoftCorrelation c;
    c.centered = x.rowwise() - x.colwise().mean();
    c.sumSquares = c.centered.colwise().squaredNorm().transpose().array() + kVarianceFloor;
    const Eigen::MatrixXd cross = c.centered.transpose() * c.centered;
    const Eigen::VectorXd inv = c.sumSquares.cwiseSqrt().cwiseInverse();
    c.r = inv.asDiagonal() * cross * inv.asDiagonal();
    return c;
}

// ---------------------------------------------------------------------------
// L_Drift

struct DriftLossConfig {
    SoftBinning binning;
    double lambda = 1.0;
};

struct DriftLoss {
    double value = 0.0;
    double driftTerm = 0.0;
    double correlationTerm = 0.0;
    double softDrift = 0.0;// mean normalized soft JS between pred and ref
    Eigen::MatrixXd predGrad;
};

inline constexpr std::size_t kMinDriftBatch = 8;

/// (soft_d(pred, ref) - target)^2 + lambda * mean_{i<j} (r_pred_ij - r_ref_ij)^2, with its gradient w.r.t. pred.
inline DriftLoss driftLoss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& ref, double target,
                           const EncodingSpec& spec, const DriftLossConfig& cfg) {
    if (pred.rows() != ref.rows() || pred.cols() != ref.cols()) failInput("drift_loss: pred/ref shape mismatch");
    if (static_cast<std::size_t>(pred.rows()) < kMinDriftBatch) {
        failInput("drift_loss: batch of " + std::to_string(pred.rows()) + " rows is below the minimum of "
                  + std::to_string(kMinDriftBatch));
    }
    if (cfg.lambda < 0.0) failInput("drift_loss: lambda must be >= 0");
    DriftLoss out;
    out.predGrad = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());

    // Drift term.
    const SoftProfile pp = softProfile(pred, spec, cfg.binning);
    const SoftProfile rp = softProfile(ref, spec, cfg.binning);
    const double groups = static_cast<double>(spec.groups().size());
    const double eps = cfg.binning.smoothing;
    std::vector<Eigen::VectorXd> jsGrads;
    double meanDrift = 0.0;
    for (std::size_t gi = 0; gi < pp.probabilities.size(); ++gi) {
        const auto K = pp.probabilities[gi].size();
        const double norm = 1.0 + static_cast<double>(K) * eps;
        const Eigen::ArrayXd p = (pp.probabilities[gi].array() + eps) / norm;
        const Eigen::ArrayXd q = (rp.probabilities[gi].array() + eps) / norm;
        const Eigen::ArrayXd mix = 0.5 * (p + q);
        const double js = 0.5 * (p * (p / mix).log()).sum() + 0.5 * (q * (q / mix).log()).sum();
        meanDrift += js / std::numbers::ln2 / groups;
        // dJS/dp_k = ½ log(p_k / m_k), chained through the smoothing normalization.
        jsGrads.push_back((0.5 * (p / mix).log() / norm).matrix());
    }
    out.softDrift = meanDrift;
    const double miss = meanDrift - target;
    out.driftTerm = miss * miss;
    for (auto& g : jsGrads) g *= 2.0 * miss / (std::numbers::ln2 * groups);
    softProfileBackward(pred, spec, cfg.binning, pp, jsGrads, out.predGrad);

    // Correlation term.
    const Eigen::Index m = pred.cols();
    if (m >= 2 && cfg.lambda > 0.0) {
        const SoftCorrelation cp = softCorrelation(pred);
        const SoftCorrelation cr = softCorrelation(ref);
        const double pairs = static_cast<double>(m * (m - 1) / 2);
        double sum = 0.0;
        Eigen::MatrixXd dR = Eigen::MatrixXd::Zero(m, m);// dL/dr_ab for a < b
        for (Eigen::Index a = 0; a < m; ++a) {
            for (Eigen::Index b = a + 1; b < m; ++b) {
                const double diff = cp.r(a, b) - cr.r(a, b);
                sum += diff * diff;
                dR(a, b) = cfg.lambda * 2.0 * diff / pairs;
            }
        }
        out.correlationTerm = cfg.lambda * sum / pairs;
        // dr_ab/dx_ia = c_ib / sqrt(S_a S_b) - r_ab c_ia / S_a, and symmetrically for b.
        for (Eigen::Index a = 0; a < m; ++a) {
            for (Eigen::Index b = a + 1; b < m; ++b) {
                const double w = dR(a, b);
                if (w == 0.0) continue;
                const double root = std::sqrt(cp.sumSquares(a) * cp.sumSquares(b));
                const double r = cp.r(a, b);
                out.predGrad.col(a) += w * (cp.centered.col(b) / root - r * cp.centered.col(a) / cp.sumSquares(a));
                out.predGrad.col(b) += w * (cp.centered.col(a) / root - r * cp.centered.col(b) / cp.sumSquares(b));
            }
        }
    }
    out.value = out.driftTerm + out.correlationTerm;
    return out;
}

// ---------------------------------------------------------------------------
// Drifter model

/// What the drifter's displaced output is compared against during training.
enum class ReferenceMode {
    kNoisy,   // x_t itself
    kDenoised,// the diffuser's x_0 estimate, with the drifter's displacement applied to it
};

enum class GuidanceMode { kGaussianSurrogate, kBackpropPotential };

inline std::string toString(ReferenceMode m) { return m == ReferenceMode::kNoisy ? "noisy" : "denoised"; }
inline std::string toString(GuidanceMode m) {
    return m == GuidanceMode::kGaussianSurrogate ? "gaussian_surrogate" : "backprop_potential";
}

inline ReferenceMode parseReferenceMode(const std::string& s) {
    if (s == "noisy") return ReferenceMode::kNoisy;
    if (s == "denoised") return ReferenceMode::kDenoised;
    failInput("unknown reference mode '" + s + "'");
}

inline GuidanceMode parseGuidanceMode(const std::string& s) {
    if (s == "gaussian_surrogate") return GuidanceMode::kGaussianSurrogate;
    if (s == "backprop_potential") return GuidanceMode::kBackpropPotential;
    failInput("unknown guidance mode '" + s + "'");
}

struct GuidanceConfig {
    double scale = 1.0;
    GuidanceMode mode = GuidanceMode::kGaussianSurrogate;

    void validate() const {
        if (!std::isfinite(scale) || scale < 0.0) failInput("guidance: scale must be finite and >= 0");
    }
};

struct DrifterConfig {
    std::vector<std::size_t> hidden{512, 512};
    nn::Activation activation = nn::Activation::kRelu;
    std::size_t steps = 2000;
    nn::OptimizerConfig optimizer;
    DriftLossConfig loss;
    ReferenceMode reference = ReferenceMode::kDenoised;
    GuidanceConfig guidance;
    std::uint64_t seed = 0;
    std::optional<double> fixedTarget;// train at a single d* instead of d* ~ U[0, 1]
    std::size_t historyEvery = 50;
};

/// Drift(x_t, t, d) = x_t + sqrt(d) * net([x_t, t/T, d]); the displacement vanishes at d = 0.
struct DrifterModel {
    nn::Mlp net;// input m + 2, output m
    DriftLossConfig loss;
    ReferenceMode reference = ReferenceMode::kDenoised;
    GuidanceConfig guidance;
    std::size_t timesteps = 0;
    diffusion::TrainingMeta meta;

    Eigen::MatrixXd displacement(const Eigen::MatrixXd& xt, std::size_t t, double d) const {
        return std::sqrt(d) * nn::forwardBatch(net, diffusion::appendFeatures(xt, {diffusion::timeFeature(t, timesteps), d}));
    }

    Eigen::MatrixXd drift(const Eigen::MatrixXd& xt, std::size_t t, double d) const {
        return xt + displacement(xt, t, d);
    }

    nlohmann::json settingsJson() const {
        return {{"format_version", 1},
                {"lambda", loss.lambda},
                {"bins", loss.binning.bins},
                {"bandwidth_scale", loss.binning.bandwidthScale},
                {"smoothing", loss.binning.smoothing},
                {"reference_mode", toString(reference)},
                {"timesteps", timesteps},
                {"guidance", {{"scale", guidance.scale}, {"mode", toString(guidance.mode)}}}};
    }
};

inline DrifterModel trainDrifter(const diffusion::DiffuserModel& diffuser, const Table& data, const DrifterConfig& cfg) {
    if (data.empty()) failInput("train_drifter: empty table");
    if (!(data.schema() == diffuser.encoding.schema())) failInput("train_drifter: data schema differs from diffuser");
    cfg.optimizer.validate();
    cfg.loss.binning.validate();
    cfg.guidance.validate();
    const std::size_t width = diffuser.encoding.width();
    const auto m = static_cast<Eigen::Index>(width);
    const auto batch = static_cast<Eigen::Index>(cfg.optimizer.batchSize);
    if (static_cast<std::size_t>(batch) < kMinDriftBatch) failInput("train_drifter: batch size below 8");

    DrifterModel model;
    std::vector<std::size_t> dims{width + 2};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(width);
    model.net = nn::Mlp({dims, cfg.activation, cfg.seed});
    model.loss = cfg.loss;
    model.reference = cfg.reference;
    model.guidance = cfg.guidance;
    model.timesteps = diffuser.schedule.steps;
    model.meta.seed = cfg.seed;
    model.meta.steps = cfg.steps;

    const EncodedMatrix x0 = encodeTable(data, diffuser.encoding);
    const auto rows = static_cast<std::int64_t>(data.size());
    const auto T = static_cast<std::int64_t>(diffuser.schedule.steps);
    Rng rng(deriveSeed(cfg.seed, 0x647266));
    auto state = nn::AdamState::forModel(model.net);
    diffusion::LossWindow window(100);

    Eigen::MatrixXd clean(batch, m);
    Eigen::MatrixXd noise(batch, m);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto t = static_cast<std::size_t>(rng.uniformInt(1, T));
        const double target = cfg.fixedTarget ? *cfg.fixedTarget : rng.uniform();
        for (Eigen::Index i = 0; i < batch; ++i) {
            clean.row(i) = x0.values.row(rng.uniformInt(0, rows - 1));
            for (Eigen::Index c = 0; c < m; ++c) noise(i, c) = rng.normal();
        }
        const Eigen::MatrixXd xt = diffusion::corrupt(clean, diffuser.schedule.alphaBarAt(t), noise);
        const Eigen::MatrixXd base = cfg.reference == ReferenceMode::kNoisy
            ? xt
            : diffusion::predictClean(xt, diffuser.predictNoise(xt, t), t, diffuser.schedule);
        const Eigen::MatrixXd input = diffusion::appendFeatures(xt, {diffusion::timeFeature(t, model.timesteps), target});

        auto result = nn::parameterGradients(model.net, input, [&](const Eigen::MatrixXd& out, Eigen::MatrixXd& grad) {
            const double gate = std::sqrt(target);
            const DriftLoss l = driftLoss(base + gate * out, base, target, diffuser.encoding, cfg.loss);
            grad = gate * l.predGrad;
            return l.value;
        });
        if (!result.gradients.allFinite()) {
            failRuntime("train_drifter: non-finite gradients at step " + std::to_string(step));
        }
        if (step == 0) model.meta.initialLoss = result.loss;
        window.push(result.loss);
        if (cfg.historyEvery > 0 && step % cfg.historyEvery == 0) model.meta.lossHistory.push_back(window.mean());
        nn::adamStep(model.net, result.gradients, state, cfg.optimizer.learningRate.at(step, cfg.steps), cfg.optimizer);
        if (!model.net.allFinite()) failRuntime("train_drifter: parameters diverged at step " + std::to_string(step));
    }
    model.meta.finalLoss = window.mean();
    return model;
}

/// Guidance direction at step t.
/// Surrogate mode: Pr(x_drift | x_t) is an isotropic Gaussian centred at x_t, so the log-density gradient
/// evaluated at the drifter's prediction is Drift(x_t, t, d) - x_t.
/// Backprop mode: gradient of -½ ||Drift(x_t, t, d) - x_t||^2 through the network.
inline Eigen::MatrixXd guidanceGradient(const DrifterModel& dr, const Eigen::MatrixXd& xt, std::size_t t, double d,
                                        GuidanceMode mode) {
    if (static_cast<std::size_t>(xt.cols()) + 2 != dr.net.inputDim()) failInput("guidance_gradient: shape mismatch");
    if (mode == GuidanceMode::kGaussianSurrogate) {
        return dr.displacement(xt, t, d);
    }
    const Eigen::MatrixXd input = diffusion::appendFeatures(xt, {diffusion::timeFeature(t, dr.timesteps), d});
    const Eigen::Index m = xt.cols();
    const Eigen::MatrixXd full = nn::inputGradientBatch(
        dr.net, input,
        [d](const Eigen::MatrixXd&, const Eigen::MatrixXd& out, Eigen::MatrixXd& outGrad, Eigen::MatrixXd&) {
            // Drift - x_t = sqrt(d) * out
            outGrad = -d * out;
            return -0.5 * d * out.squaredNorm();
        });
    return full.leftCols(m);
}

/// Reverse process with mean shifted by scale * sigma_t^2 * g_t at every step. Scale 0 skips the drifter
/// entirely, reproducing unguided sampling bit for bit.
inline EncodedMatrix guidedSampleEncoded(const diffusion::DiffuserModel& diffuser, const DrifterModel& dr,
                                         DriftFactor target, std::size_t n, const GuidanceConfig& gc,
                                         std::uint64_t seed, std::size_t threads = 1) {
    gc.validate();
    if (dr.timesteps != diffuser.schedule.steps) failInput("guided_sample: drifter/diffuser timestep mismatch");
    diffusion::SamplingOptions opts;
    opts.seed = seed;
    opts.threads = threads;
    diffusion::MeanAdjust adjust;
    if (gc.scale != 0.0) {
        adjust = [&](Eigen::MatrixXd& mean, const Eigen::MatrixXd& xt, std::size_t t) {
            mean += gc.scale * diffuser.schedule.sigma2At(t) * guidanceGradient(dr, xt, t, target.value(), gc.mode);
        };
    }
    return diffusion::reverseProcess(diffuser, n, opts, adjust);
}

inline Table guidedSample(const diffusion::DiffuserModel& diffuser, const DrifterModel& dr, DriftFactor target,
                          std::size_t n, const GuidanceConfig& gc, std::uint64_t seed) {
    return decodeMatrix(guidedSampleEncoded(diffuser, dr, target, n, gc, seed), diffuser.encoding);
}

// ---------------------------------------------------------------------------
// Surrogate keys

/// Generated rows inherit the key of an unused original row with the same bin/category signature (first
/// unused in original order); unmatched rows get fresh keys after the original maximum (integer keys) or
/// "g<row>" otherwise.
inline Table assignSurrogateKeys(const Table& generated, const Table& original, const BinningConfig& binning) {
    const Schema& schema = original.schema();
    std::vector<std::size_t> keyColumns;
    for (std::size_t c = 0; c < schema.size(); ++c) {
        if (schema[c].kind == AttributeKind::kKey) keyColumns.push_back(c);
    }
    if (keyColumns.empty()) return generated;

    auto signature = [&](const Row& row) {
        std::string sig;
        for (std::size_t c : schema.includedIndices()) {
            const auto& a = schema[c];
            std::size_t cell = a.kind == AttributeKind::kContinuous
                ? binIndex(std::get<double>(row[c]), a.min, a.max, binning.bins)
                : *a.categoryIndex(std::get<std::string>(row[c]));
            sig += std::to_string(cell);
            sig.push_back('|');
        }
        return sig;
    };
    std::unordered_map<std::string, std::vector<std::size_t>> pool;
    for (std::size_t r = original.size(); r-- > 0;) pool[signature(original[r])].push_back(r);

    std::vector<std::int64_t> nextKey(keyColumns.size(), 1);
    std::vector<bool> integral(keyColumns.size(), true);
    for (std::size_t k = 0; k < keyColumns.size(); ++k) {
        std::int64_t maxKey = 0;
        for (const auto& row : original.rows()) {
            auto v = parseNumber(std::get<std::string>(row[keyColumns[k]]));
            if (!v || std::floor(*v) != *v) {
                integral[k] = false;
                break;
            }
            maxKey = std::max(maxKey, static_cast<std::int64_t>(*v));
        }
        nextKey[k] = maxKey + 1;
    }

    std::vector<Row> rows = generated.rows();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto it = pool.find(signature(rows[r]));
        if (it != pool.end() && !it->second.empty()) {
            const Row& match = original[it->second.back()];
            it->second.pop_back();
            for (std::size_t c : keyColumns) rows[r][c] = match[c];
            continue;
        }
        for (std::size_t k = 0; k < keyColumns.size(); ++k) {
            rows[r][keyColumns[k]] = integral[k] ? std::to_string(nextKey[k]++) : "g" + std::to_string(r + 1);
        }
    }
    return Table(schema, std::move(rows));
}

// ---------------------------------------------------------------------------
// Drifted table generation

struct GenerateOptions {
    std::optional<std::size_t> rows;// defaults to |original|
    std::uint64_t seed = 0;
    std::optional<GuidanceConfig> guidance;// defaults to the drifter's stored settings
    double tolerance = 0.1;
    BinningConfig binning;
    std::size_t threads = 1;
};

struct GenerationResult {
    Table table;
    DriftFactor target;
    DriftReport achieved;
    double correlationError = 0.0;
    bool calibrationWarning = false;
    std::string warning;
    GuidanceConfig guidance;
    std::uint64_t seed = 0;

    nlohmann::json toJson() const {
        return {{"target_d", target.value()},
                {"achieved_d", achieved.aggregate.value()},
                {"per_attribute", driftforge::toJson(achieved)["attributes"]},
                {"correlation_error", correlationError},
                {"calibration_warning", calibrationWarning},
                {"warning", warning},
                {"rows", table.size()},
                {"seed", seed},
                {"guidance", {{"scale", guidance.scale}, {"mode", toString(guidance.mode)}}}};
    }
};

inline GenerationResult generateDriftedTable(const diffusion::DiffuserModel& diffuser, const DrifterModel& dr,
                                             const Table& original, DriftFactor target,
                                             const GenerateOptions& opts = {}) {
    if (!(original.schema() == diffuser.encoding.schema())) {
        failInput("generate: original table schema differs from the model's");
    }
    GenerationResult result;
    result.target = target;
    result.seed = opts.seed;
    result.guidance = opts.guidance.value_or(dr.guidance);
    const std::size_t n = opts.rows.value_or(original.size());
    const EncodedMatrix x = guidedSampleEncoded(diffuser, dr, target, n, result.guidance, opts.seed, opts.threads);
    result.table = assignSurrogateKeys(decodeMatrix(x, diffuser.encoding), original, opts.binning);
    if (n == 0) {
        result.warning = "no rows generated";
        result.calibrationWarning = true;
        return result;
    }
    result.achieved = driftBetween(result.table, original, opts.binning);
    result.correlationError = averageCorrelationError(correlationMatrix(result.table), correlationMatrix(original));
    const double miss = std::abs(result.achieved.aggregate.value() - target.value());
    if (miss > opts.tolerance) {
        result.calibrationWarning = true;
        result.warning = "achieved d=" + formatNumber(result.achieved.aggregate.value()) + " misses target "
            + formatNumber(target.value()) + " by more than " + formatNumber(opts.tolerance);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Guidance-scale calibration

struct CalibrationConfig {
    std::vector<double> targets{0.2, 0.4};
    std::size_t rows = 2000;
    std::uint64_t seed = 0;
    double minScale = 0.25;
    double maxScale = 64.0;
    std::size_t iterations = 10;
    BinningConfig binning;
    std::size_t threads = 1;
};

struct CalibrationResult {
    double scale = 1.0;
    double meanError = 0.0;// mean of (achieved - target) at the chosen scale
    std::size_t evaluations = 0;

    nlohmann::json toJson() const {
        return {{"scale", scale}, {"mean_error", meanError}, {"evaluations", evaluations}};
    }
};

/// Bisection on log(scale) so that pilot generations hit the calibration targets on average.
/// Assumes achieved drift grows with the scale; clamps to the bracket otherwise.
inline CalibrationResult calibrateGuidance(const diffusion::DiffuserModel& diffuser, const DrifterModel& dr,
                                           const Table& reference, const CalibrationConfig& cfg) {
    if (cfg.targets.empty()) failInput("calibrate: no targets");
    if (!(cfg.minScale > 0.0) || !(cfg.maxScale > cfg.minScale)) failInput("calibrate: invalid scale bracket");
    if (cfg.rows < 2) failInput("calibrate: need at least 2 pilot rows");
    CalibrationResult result;
    auto meanError = [&](double scale) {
        GuidanceConfig gc = dr.guidance;
        gc.scale = scale;
        double total = 0.0;
        for (std::size_t i = 0; i < cfg.targets.size(); ++i) {
            GenerateOptions opts;
            opts.rows = cfg.rows;
            opts.seed = deriveSeed(cfg.seed, 0x63616c + i);
            opts.guidance = gc;
            opts.binning = cfg.binning;
            opts.threads = cfg.threads;
            const auto g = generateDriftedTable(diffuser, dr, reference, DriftFactor(cfg.targets[i]), opts);
            total += g.achieved.aggregate.value() - cfg.targets[i];
        }
        ++result.evaluations;
        return total / static_cast<double>(cfg.targets.size());
    };

    double lo = std::log(cfg.minScale);
    double hi = std::log(cfg.maxScale);
    const double errLo = meanError(cfg.minScale);
    if (errLo >= 0.0) {
        result.scale = cfg.minScale;
        result.meanError = errLo;
        return result;
    }
    const double errHi = meanError(cfg.maxScale);
    if (errHi <= 0.0) {
        result.scale = cfg.maxScale;
        result.meanError = errHi;
        return result;
    }
    result.scale = cfg.minScale;
    result.meanError = errLo;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double err = meanError(std::exp(mid));
        if (std::abs(err) < std::abs(result.meanError)) {
            result.scale = std::exp(mid);
            result.meanError = err;
        }
        (err < 0.0 ? lo : hi) = mid;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint: nn format + drifter.json

inline void saveDrifter(const std::string& dir, const DrifterModel& model) {
    nn::saveMlp(dir, model.net, {{"model", "drifter"}, {"training", model.meta.toJson()}});
    writeText((std::filesystem::path(dir) / "drifter.json").string(), model.settingsJson().dump(2) + "\n");
}

inline DrifterModel loadDrifter(const std::string& dir) {
    DrifterModel model;
    model.net = nn::loadMlp(dir);
    const auto j = nn::readJsonFile((std::filesystem::path(dir) / "drifter.json").string());
    model.loss.lambda = j.at("lambda").get<double>();
    model.loss.binning.bins = j.value("bins", std::size_t{10});
    model.loss.binning.bandwidthScale = j.at("bandwidth_scale").get<double>();
    model.loss.binning.smoothing = j.value("smoothing", 1e-9);
    model.reference = parseReferenceMode(j.at("reference_mode").get<std::string>());
    model.timesteps = j.at("timesteps").get<std::size_t>();
    model.guidance.scale = j.at("guidance").at("scale").get<double>();
    model.guidance.mode = parseGuidanceMode(j.at("guidance").at("mode").get<std::string>());
    const auto manifest = nn::readJsonFile((std::filesystem::path(dir) / "manifest.json").string());
    if (manifest.contains("training")) {
        model.meta.steps = manifest["training"].value("steps", std::size_t{0});
        model.meta.seed = manifest["training"].value("seed", std::uint64_t{0});
        model.meta.finalLoss = manifest["training"].value("final_loss", 0.0);
    }
    return model;
}

}// namespace driftforge::drifter
