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

#include <cstdint>
#include <random>

namespace driftforge {

/// SplitMix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mixSeed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for sub-stream `stream` of `seed`; distinct (seed, stream) pairs give unrelated seeds.
constexpr std::uint64_t deriveSeed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return mixSeed(mixSeed(seed) ^ mixSeed(stream + 0x632be59bd9b4e019ULL));
}

/// Deterministic generator; identical seeds yield identical draws on the same standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(mixSeed(seed)) {}

    double normal() { return normal_(engine_); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

    /// Uniform integer in [lo, hi].
    std::int64_t uniformInt(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}// namespace driftforge
