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
#include <driftforge/rng.hpp>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace driftforge::nn {

enum class Activation { kRelu, kSilu };

inline std::string toString(Activation a) { return a == Activation::kRelu ? "relu" : "silu"; }

inline Activation parseActivation(const std::string& s) {
    if (s == "relu") return Activation::kRelu;
    if (s == "silu") return Activation::kSilu;
    failInput("unknown activation '" + s + "'");
}

struct MlpConfig {
    std::vector<std::size_t> dims;// input, hidden..., output
    Activation activation = Activation::kRelu;
    std::uint64_t seed = 0;

    void validate() const {
        if (dims.size() < 3) failInput("mlp: need input, at least one hidden layer, and output dims");
        for (auto d : dims) {
            if (d < 1) failInput("mlp: every dim must be >= 1");
        }
    }
};

struct DenseLayer {
    Eigen::MatrixXd weight;// out x in
    Eigen::VectorXd bias;
};

/// Feed-forward network: affine + activation per hidden layer, linear output layer.
class Mlp {
  public:
    Mlp() = default;

    /// Weights and biases drawn uniformly from ±1/sqrt(fan_in), deterministically from `cfg.seed`.
    explicit Mlp(MlpConfig cfg) : config_(std::move(cfg)) {
        config_.validate();
        Rng rng(deriveSeed(config_.seed, 0x4d4c50));
        for (std::size_t l = 0; l + 1 < config_.dims.size(); ++l) {
            const auto in = static_cast<Eigen::Index>(config_.dims[l]);
            const auto out = static_cast<Eigen::Index>(config_.dims[l + 1]);
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
            for (Eigen::Index r = 0; r < out; ++r) {
                for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
            }
            for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = rng.uniform(-bound, bound);
            layers_.push_back(std::move(layer));
        }
    }

    const MlpConfig& config() const { return config_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    std::size_t inputDim() const { return config_.dims.front(); }
    std::size_t outputDim() const { return config_.dims.back(); }

    std::size_t parameterCount() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    bool allFinite() const {
        for (const auto& l : layers_) {
            if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
        }
        return true;
    }

    bool operator==(const Mlp& other) const {
        if (config_.dims != other.config_.dims || layers_.size() != other.layers_.size()) return false;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layers_[i].weight != other.layers_[i].weight || layers_[i].bias != other.layers_[i].bias) {
                return false;
            }
        }
        return true;
    }

  private:
    MlpConfig config_;
    std::vector<DenseLayer> layers_;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void activate(Activation a, Eigen::MatrixXd& z) {
    if (a == Activation::kRelu) {
        z = z.cwiseMax(0.0);
    } else {
        z = z.unaryExpr([](double v) { return v * sigmoid(v); });
    }
}

inline Eigen::MatrixXd activationDerivative(Activation a, const Eigen::MatrixXd& pre) {
    if (a == Activation::kRelu) {
        return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    }
    return pre.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
    });
}

}// namespace detail

/// Layer inputs and pre-activations recorded during a forward pass, for backprop.
struct ForwardTrace {
    std::vector<Eigen::MatrixXd> inputs;
    std::vector<Eigen::MatrixXd> preactivations;
};

/// Batched forward pass: `x` is n x input_dim, result is n x output_dim.
inline Eigen::MatrixXd forwardBatch(const Mlp& m, const Eigen::MatrixXd& x, ForwardTrace* trace = nullptr) {
    if (static_cast<std::size_t>(x.cols()) != m.inputDim()) {
        failInput("mlp forward: input has " + std::to_string(x.cols()) + " columns, expected "
                  + std::to_string(m.inputDim()));
    }
    if (trace) {
        trace->inputs.clear();
        trace->preactivations.clear();
    }
    Eigen::MatrixXd a = x;
    const auto& layers = m.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Eigen::MatrixXd z = a * layers[l].weight.transpose();
        z.rowwise() += layers[l].bias.transpose();
        if (trace) {
            trace->inputs.push_back(std::move(a));
            trace->preactivations.push_back(z);
        }
        if (l + 1 < layers.size()) detail::activate(m.config().activation, z);
        a = std::move(z);
    }
    return a;
}

inline Eigen::VectorXd forward(const Mlp& m, std::span<const double> x) {
    Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
    return forwardBatch(m, row).row(0).transpose();
}

/// Parameter-shaped gradient container.
struct Gradients {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;

    static Gradients zerosLike(const Mlp& m) {
        Gradients g;
        for (const auto& l : m.layers()) {
            g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
            g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
        }
        return g;
    }

    bool allFinite() const {
        for (std::size_t i = 0; i < weight.size(); ++i) {
            if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
        }
        return true;
    }
};

/// Reverse pass from dL/d(output) (n x output_dim). Writes dL/d(input) to `inputGrad` when given.
inline Gradients backward(const Mlp& m, const ForwardTrace& trace, const Eigen::MatrixXd& outputGrad,
                          Eigen::MatrixXd* inputGrad = nullptr) {
    const auto& layers = m.layers();
    Gradients g;
    g.weight.resize(layers.size());
    g.bias.resize(layers.size());
    Eigen::MatrixXd delta = outputGrad;
    for (std::size_t l = layers.size(); l-- > 0;) {
        g.weight[l] = delta.transpose() * trace.inputs[l];
        g.bias[l] = delta.colwise().sum().transpose();
        if (l == 0 && inputGrad == nullptr) break;
        Eigen::MatrixXd upstream = delta * layers[l].weight;
        if (l == 0) {
            *inputGrad = std::move(upstream);
            break;
        }
        delta = upstream.cwiseProduct(detail::activationDerivative(m.config().activation, trace.preactivations[l - 1]));
    }
    return g;
}

/// Loss over a batch of outputs; returns the scalar and fills dL/d(output).
using LossFn = std::function<double(const Eigen::MatrixXd& output, Eigen::MatrixXd& outputGrad)>;

struct LossAndGradients {
    double loss = 0.0;
    Gradients gradients;
};

/// Exact reverse-mode gradients of `loss` (already a batch mean) with respect to all parameters.
inline LossAndGradients parameterGradients(const Mlp& m, const Eigen::MatrixXd& batch, const LossFn& loss) {
    if (batch.rows() == 0) failInput("param_gradients: empty batch");
    ForwardTrace trace;
    const Eigen::MatrixXd out = forwardBatch(m, batch, &trace);
    Eigen::MatrixXd dOut = Eigen::MatrixXd::Zero(out.rows(), out.cols());
    const double value = loss(out, dOut);
    if (!std::isfinite(value)) failRuntime("param_gradients: non-finite loss");
    return {value, backward(m, trace, dOut)};
}

/// Scalar potential of (input, output); fills its partials w.r.t. output and (directly) w.r.t. input.
using PotentialFn = std::function<double(const Eigen::MatrixXd& input, const Eigen::MatrixXd& output,
                                         Eigen::MatrixXd& outputGrad, Eigen::MatrixXd& inputGrad)>;

/// d(potential(x, forward(x)))/dx for every row of `x`. The potential must be a sum over rows.
inline Eigen::MatrixXd inputGradientBatch(const Mlp& m, const Eigen::MatrixXd& x, const PotentialFn& potential) {
    ForwardTrace trace;
    const Eigen::MatrixXd out = forwardBatch(m, x, &trace);
    Eigen::MatrixXd dOut = Eigen::MatrixXd::Zero(out.rows(), out.cols());
    Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    potential(x, out, dOut, direct);
    Eigen::MatrixXd through;
    backward(m, trace, dOut, &through);
    return direct + through;
}

inline Eigen::VectorXd inputGradient(const Mlp& m, std::span<const double> x, const PotentialFn& potential) {
    if (x.size() != m.inputDim()) failInput("input_gradient: dimension mismatch");
    Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
    return inputGradientBatch(m, row, potential).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Optimizer

/// Linear warmup from `min` to `max`, then cosine decay back to `min`.
struct LearningRateSchedule {
    double min = 1e-4;
    double max = 2e-3;
    double warmupFraction = 0.1;

    double at(std::size_t step, std::size_t totalSteps) const {
        if (totalSteps <= 1) return max;
        const double progress = static_cast<double>(step) / static_cast<double>(totalSteps - 1);
        if (progress < warmupFraction) {
            return min + (max - min) * progress / warmupFraction;
        }
        const double decay = (progress - warmupFraction) / std::max(1e-12, 1.0 - warmupFraction);
        return min + 0.5 * (max - min) * (1.0 + std::cos(std::numbers::pi * decay));
    }
};

struct OptimizerConfig {
    LearningRateSchedule learningRate;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batchSize = 256;

    void validate() const {
        if (!(learningRate.min > 0.0 && learningRate.max > 0.0)) failInput("optimizer: lr must be > 0");
        if (batchSize == 0) failInput("optimizer: batch size must be >= 1");
    }
};

struct AdamState {
    Gradients firstMoment;
    Gradients secondMoment;
    std::size_t step = 0;

    static AdamState forModel(const Mlp& m) { return {Gradients::zerosLike(m), Gradients::zerosLike(m), 0}; }
};

/// Bias-corrected adaptive-moment update.
inline void adamStep(Mlp& m, const Gradients& g, AdamState& state, double lr, const OptimizerConfig& cfg) {
    auto& layers = m.layers();
    if (g.weight.size() != layers.size() || state.firstMoment.weight.size() != layers.size()) {
        failInput("optimize_step: gradient/parameter shape mismatch");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto update = [&](auto& param, const auto& grad, auto& mom1, auto& mom2) {
        if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
            failInput("optimize_step: gradient/parameter shape mismatch");
        }
        mom1 = cfg.beta1 * mom1 + (1.0 - cfg.beta1) * grad;
        mom2 = cfg.beta2 * mom2 + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        param.array() -= lr * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + cfg.epsilon);
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
        update(layers[l].weight, g.weight[l], state.firstMoment.weight[l], state.secondMoment.weight[l]);
        update(layers[l].bias, g.bias[l], state.firstMoment.bias[l], state.secondMoment.bias[l]);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + weights.bin (little-endian float64; per layer, weights row-major then biases)

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void putDouble(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

inline double getDouble(const std::string& in, std::size_t& pos) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(bits);
}

}// namespace detail

inline void saveMlp(const std::string& dir, const Mlp& m, const nlohmann::json& extra = nlohmann::json::object()) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest{{"format_version", kCheckpointVersion},
                            {"dims", m.config().dims},
                            {"activation", toString(m.config().activation)},
                            {"seed", m.config().seed},
                            {"optimizer_state", false},
                            {"weights", "weights.bin"},
                            {"weights_layout", "per layer: weight row-major (out x in), then bias; float64 LE"}};
    for (const auto& [k, v] : extra.items()) manifest[k] = v;
    std::string blob;
    blob.reserve(m.parameterCount() * 8);
    for (const auto& l : m.layers()) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::putDouble(blob, l.weight(r, c));
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::putDouble(blob, l.bias(r));
    }
    std::ofstream(std::filesystem::path(dir) / "manifest.json") << manifest.dump(2) << "\n";
    std::ofstream(std::filesystem::path(dir) / "weights.bin", std::ios::binary) << blob;
}

inline nlohmann::json readJsonFile(const std::string& path) {
    try {
        return nlohmann::json::parse(csv::readFile(path));
    } catch (const nlohmann::json::parse_error& e) {
        failInput(path + ": " + e.what());
    }
}

inline Mlp loadMlp(const std::string& dir) {
    const auto manifest = readJsonFile((std::filesystem::path(dir) / "manifest.json").string());
    if (manifest.value("format_version", 0) != kCheckpointVersion) {
        failInput("checkpoint " + dir + ": unsupported format version");
    }
    MlpConfig cfg;
    cfg.dims = manifest.at("dims").get<std::vector<std::size_t>>();
    cfg.activation = parseActivation(manifest.at("activation").get<std::string>());
    cfg.seed = manifest.at("seed").get<std::uint64_t>();
    Mlp m(cfg);
    const std::string blob = csv::readFile((std::filesystem::path(dir) / "weights.bin").string());
    if (blob.size() != m.parameterCount() * 8) failInput("checkpoint " + dir + ": weights.bin size mismatch");
    std::size_t pos = 0;
    for (auto& l : m.layers()) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = detail::getDouble(blob, pos);
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = detail::getDouble(blob, pos);
    }
    return m;
}

}// namespace driftforge::nn
