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
#include <driftforge/tabular.hpp>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace driftforge {

struct BinningConfig {
    std::size_t bins = 10;   // per continuous attribute
    double smoothing = 1e-9; // added to every probability before KL, then renormalized

    void validate() const {
        if (bins < 2) failInput("binning: bins must be >= 2");
        if (!(smoothing > 0.0)) failInput("binning: smoothing must be > 0");
    }
};

/// Marginal distribution of one attribute: bin edges (continuous) or categories, plus probabilities.
struct AttributeProfile {
    std::string name;
    AttributeKind kind = AttributeKind::kContinuous;
    std::vector<double> edges;
    std::vector<std::string> categories;
    std::vector<double> probabilities;
};

struct DistributionProfile {
    std::vector<AttributeProfile> attributes;
};

/// Normalized Jensen-Shannon drift in [0, 1].
class DriftFactor {
  public:
    DriftFactor() = default;
    explicit DriftFactor(double value) : value_(value) {
        if (!(value >= 0.0 && value <= 1.0)) {
            failInput("drift factor must lie in [0, 1], got " + formatNumber(value));
        }
    }
    double value() const { return value_; }
    bool operator==(const DriftFactor&) const = default;

  private:
    double value_ = 0.0;
};

/// Equi-width bin index of `v` over [min, max]; `max` itself falls in the last bin.
inline std::size_t binIndex(double v, double min, double max, std::size_t bins) {
    if (!(max > min)) return 0;
    const double pos = (v - min) / (max - min) * static_cast<double>(bins);
    if (pos <= 0.0) return 0;
    return std::min(static_cast<std::size_t>(pos), bins - 1);
}

inline std::vector<double> binEdges(double min, double max, std::size_t bins) {
    std::vector<double> edges(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) {
        edges[i] = min + (max - min) * static_cast<double>(i) / static_cast<double>(bins);
    }
    return edges;
}

inline DistributionProfile marginalProfile(const Table& t, const BinningConfig& cfg = {}) {
    cfg.validate();
    if (t.empty()) failInput("marginal_profile: empty table");
    DistributionProfile profile;
    const double n = static_cast<double>(t.size());
    for (std::size_t c : t.schema().includedIndices()) {
        const auto& a = t.schema()[c];
        AttributeProfile p;
        p.name = a.name;
        p.kind = a.kind;
        if (a.kind == AttributeKind::kContinuous) {
            p.edges = binEdges(a.min, a.max, cfg.bins);
            p.probabilities.assign(cfg.bins, 0.0);
            for (const auto& row : t.rows()) {
                p.probabilities[binIndex(std::get<double>(row[c]), a.min, a.max, cfg.bins)] += 1.0;
            }
        } else {
            p.categories = a.categories;
            p.probabilities.assign(a.categories.size(), 0.0);
            for (const auto& row : t.rows()) {
                p.probabilities[*a.categoryIndex(std::get<std::string>(row[c]))] += 1.0;
            }
        }
        for (double& x : p.probabilities) x /= n;
        profile.attributes.push_back(std::move(p));
    }
    return profile;
}

/// Adds `eps` to every entry and renormalizes.
inline std::vector<double> smoothed(std::span<const double> p, double eps) {
    std::vector<double> out(p.begin(), p.end());
    if (eps <= 0.0) return out;
    double total = 0.0;
    for (double& x : out) total += (x += eps);
    for (double& x : out) x /= total;
    return out;
}

/// KL(p || q) in nats. Zero-probability terms of p contribute 0; both inputs are smoothed by `eps`.
inline double klDivergence(std::span<const double> p, std::span<const double> q, double eps = 0.0) {
    if (p.size() != q.size()) failInput("kl_divergence: length mismatch");
    const auto ps = smoothed(p, eps);
    const auto qs = smoothed(q, eps);
    double sum = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i] > 0.0) sum += ps[i] * std::log(ps[i] / qs[i]);
    }
    return sum;
}

/// JS(p, q) = ½ KL(p || m) + ½ KL(q || m), m = ½(p + q). Symmetric, within [0, ln 2].
inline double jsDivergence(std::span<const double> p, std::span<const double> q, double eps = 0.0) {
    if (p.size() != q.size()) failInput("js_divergence: length mismatch");
    const auto ps = smoothed(p, eps);
    const auto qs = smoothed(q, eps);
    std::vector<double> m(ps.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (ps[i] + qs[i]);
    const double js = 0.5 * klDivergence(ps, m) + 0.5 * klDivergence(qs, m);
    return std::clamp(js, 0.0, std::numbers::ln2);
}

struct AttributeDrift {
    std::string name;
    double js = 0.0;// nats
    double drift = 0.0;
};

struct DriftReport {
    std::vector<AttributeDrift> attributes;
    DriftFactor aggregate;
};

/// Aligns two profiles of one attribute: categorical supports are unioned (a's order, then b's extras)
/// and zero-filled; continuous edges must match.
inline std::pair<std::vector<double>, std::vector<double>> alignProfiles(const AttributeProfile& a,
                                                                         const AttributeProfile& b) {
    if (a.name != b.name || (a.kind == AttributeKind::kContinuous) != (b.kind == AttributeKind::kContinuous)) {
        failInput("drift_factor: attribute mismatch '" + a.name + "' vs '" + b.name + "'");
    }
    if (a.kind == AttributeKind::kContinuous) {
        if (a.edges != b.edges) failInput("drift_factor: binning mismatch for '" + a.name + "'");
        return {a.probabilities, b.probabilities};
    }
    std::vector<std::string> support = a.categories;
    for (const auto& c : b.categories) {
        if (std::find(support.begin(), support.end(), c) == support.end()) support.push_back(c);
    }
    auto expand = [&](const AttributeProfile& p) {
        std::vector<double> out(support.size(), 0.0);
        for (std::size_t i = 0; i < p.categories.size(); ++i) {
            auto it = std::find(support.begin(), support.end(), p.categories[i]);
            out[static_cast<std::size_t>(it - support.begin())] = p.probabilities[i];
        }
        return out;
    };
    return {expand(a), expand(b)};
}

/// Per-attribute d_i = JS_i / ln 2; the table-level drift is their arithmetic mean.
inline DriftReport driftFactor(const DistributionProfile& a, const DistributionProfile& b, double eps = 1e-9) {
    if (a.attributes.size() != b.attributes.size() || a.attributes.empty()) {
        failInput("drift_factor: profiles cover different attribute sets");
    }
    DriftReport report;
    double total = 0.0;
    for (std::size_t i = 0; i < a.attributes.size(); ++i) {
        auto [p, q] = alignProfiles(a.attributes[i], b.attributes[i]);
        const double js = jsDivergence(p, q, eps);
        const double d = std::clamp(js / std::numbers::ln2, 0.0, 1.0);
        report.attributes.push_back({a.attributes[i].name, js, d});
        total += d;
    }
    report.aggregate = DriftFactor(std::clamp(total / static_cast<double>(a.attributes.size()), 0.0, 1.0));
    return report;
}

inline DriftReport driftBetween(const Table& a, const Table& b, const BinningConfig& cfg = {}) {
    return driftFactor(marginalProfile(a, cfg), marginalProfile(b, cfg), cfg.smoothing);
}

struct CorrelationMatrix {
    std::vector<std::string> names;
    Eigen::MatrixXd values;
};

/// Pearson r of two equal-length columns; 0 when either has zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Pearson matrix over non-excluded attributes, categories mapped to their index.
inline CorrelationMatrix correlationMatrix(const Table& t) {
    if (t.empty()) failInput("correlation_matrix: empty table");
    const auto included = t.schema().includedIndices();
    const auto m = static_cast<Eigen::Index>(included.size());
    std::vector<std::vector<double>> columns;
    CorrelationMatrix out;
    for (std::size_t c : included) {
        columns.push_back(t.numericColumn(c));
        out.names.push_back(t.schema()[c].name);
    }
    out.values = Eigen::MatrixXd::Identity(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            const double r = pearson(columns[static_cast<std::size_t>(i)], columns[static_cast<std::size_t>(j)]);
            out.values(i, j) = out.values(j, i) = r;
        }
    }
    return out;
}

/// Mean |c1_ij - c2_ij| over the strict upper triangle.
inline double averageCorrelationError(const CorrelationMatrix& c1, const CorrelationMatrix& c2) {
    if (c1.values.rows() != c2.values.rows() || c1.values.cols() != c2.values.cols()) {
        failInput("avg_correlation_error: dimension mismatch");
    }
    const Eigen::Index m = c1.values.rows();
    if (m < 2) return 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) sum += std::abs(c1.values(i, j) - c2.values(i, j));
    }
    return sum / static_cast<double>(m * (m - 1) / 2);
}

inline nlohmann::json toJson(const DistributionProfile& p) {
    nlohmann::json attrs = nlohmann::json::object();
    for (const auto& a : p.attributes) {
        nlohmann::json entry{{"kind", toString(a.kind)}, {"probabilities", a.probabilities}};
        if (a.kind == AttributeKind::kContinuous) entry["edges"] = a.edges;
        else entry["categories"] = a.categories;
        attrs[a.name] = entry;
    }
    return {{"format_version", 1}, {"attributes", attrs}};
}

inline nlohmann::json toJson(const DriftReport& r) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : r.attributes) attrs.push_back({{"name", a.name}, {"js_nats", a.js}, {"d", a.drift}});
    return {{"d", r.aggregate.value()}, {"attributes", attrs}};
}

}// namespace driftforge
