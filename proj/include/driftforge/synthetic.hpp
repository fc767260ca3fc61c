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

#include <driftforge/rng.hpp>
#include <driftforge/tabular.hpp>

#include <algorithm>
#include <string>
#include <vector>

/// Seeded synthetic tables used by the calibration tests, demos, and `driftforge synth`.
namespace driftforge::synthetic {

/// Two continuous attributes with correlation ~0.8 on [0, 100] and a four-level category driven by their sum.
/// With `withKey`, a leading integer `id` key column 1..rows is added.
inline Table calibrationTable(std::size_t rows, std::uint64_t seed, bool withKey = false) {
    std::vector<AttributeSpec> attrs;
    if (withKey) attrs.push_back({"id", AttributeKind::kKey, {}, 0.0, 0.0, true});
    attrs.push_back({"x", AttributeKind::kContinuous, {}, 0.0, 100.0, false});
    attrs.push_back({"y", AttributeKind::kContinuous, {}, 0.0, 100.0, false});
    attrs.push_back({"tier", AttributeKind::kCategorical, {"low", "mid", "high", "peak"}, 0.0, 0.0, false});
    Schema schema(std::move(attrs));

    Rng rng(deriveSeed(seed, 0x63616c));
    std::vector<Row> out;
    out.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double z1 = rng.normal();
        const double z2 = rng.normal();
        const double z3 = rng.normal();
        const double zy = 0.8 * z1 + 0.6 * z2;
        const double x = std::clamp(50.0 + 15.0 * z1, 0.0, 100.0);
        const double y = std::clamp(50.0 + 15.0 * zy, 0.0, 100.0);
        const double s = z1 + zy + 0.5 * z3;
        const char* tier = s < -1.5 ? "low" : s < 0.0 ? "mid" : s < 1.5 ? "high" : "peak";
        Row row;
        if (withKey) row.emplace_back(std::to_string(i + 1));
        row.emplace_back(x);
        row.emplace_back(y);
        row.emplace_back(std::string(tier));
        out.push_back(std::move(row));
    }
    return Table(std::move(schema), std::move(out));
}

inline std::string joinPatternName(std::size_t i) {
    std::string digits = std::to_string(i + 1);
    if (digits.size() < 2) digits.insert(0, "0");
    return "jp" + digits;
}

/// Workload table over `templates` join patterns (near-uniform), four predicate templates correlated with the
/// pattern, and pattern-dependent query intervals on [0, 2000] ms.
inline WorkloadTable workloadTable(std::size_t rows, std::uint64_t seed, std::size_t templates = 33) {
    std::vector<std::string> joins;
    for (std::size_t i = 0; i < templates; ++i) joins.push_back(joinPatternName(i));
    const std::vector<std::string> preds{"bal = '10K'", "age > 30", "region = 'EU'", "ts BETWEEN :lo AND :hi"};
    Schema schema = makeWorkloadSchema(joins, preds, 2000.0);
    Rng rng(deriveSeed(seed, 0x776c64));
    std::vector<Row> out;
    out.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto j = static_cast<std::size_t>(rng.uniformInt(0, static_cast<std::int64_t>(templates) - 1));
        const std::size_t p = rng.uniform() < 0.7 ? j % preds.size()
                                                  : static_cast<std::size_t>(rng.uniformInt(0, 3));
        const double mean = 200.0 + 150.0 * static_cast<double>(j % 8);
        const double interval = std::clamp(mean * (1.0 + 0.25 * rng.normal()), 0.0, 2000.0);
        out.push_back(Row{joins[j], preds[p], interval});
    }
    return WorkloadTable(Table(std::move(schema), std::move(out)));
}

}// namespace driftforge::synthetic
