// SPDX-License-Identifier: Apache-2.0
//
// turbomimo — learned-MMSE channel estimation for 2D massive antenna arrays
// Copyright (C) 2026 turbomimo contributors
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except
// in compliance with the License. You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under
// the License.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace turbomimo {

// Counter-based random streams built on the splitmix64 finalizer. Every draw
// is a pure function of (seed, stream, index), which gives three properties
// the simulator depends on:
//   - bit-identical results across platforms, runs and thread counts,
//   - random access (sample k can be generated without generating 0..k-1),
//   - independent substreams (e.g. channel and noise) from one user seed.
inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

inline std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

class RandomStream {
  public:
    RandomStream(std::uint64_t seed, std::uint64_t stream)
        : base_(mix64(seed + kGoldenGamma * (stream + 0x632BE59BD9B4E019ull))) {}

    std::uint64_t bits(std::uint64_t index) const { return mix64(base_ + kGoldenGamma * (index + 1)); }

    // Uniform in (0, 1]; never returns 0, so it is safe under log().
    double uniform01_closed(std::uint64_t index) const {
        return static_cast<double>((bits(index) >> 11) + 1) * 0x1.0p-53;
    }

    // Uniform in [0, 1).
    double uniform01_open(std::uint64_t index) const {
        return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
    }

    double uniform_range(std::uint64_t index, double lo, double hi) const {
        return lo + (hi - lo) * uniform01_open(index);
    }

    // Standard real Gaussian N(0,1) by Box-Muller; consumes indices 2k, 2k+1.
    double normal(std::uint64_t index) const {
        const double u1 = uniform01_closed(2 * index);
        const double u2 = uniform01_open(2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Circularly-symmetric complex Gaussian with E[|z|^2] = 1 (variance 1/2
    // per real dimension); consumes indices 2k, 2k+1.
    std::complex<double> cnormal(std::uint64_t index) const {
        const double u1 = uniform01_closed(2 * index);
        const double u2 = uniform01_open(2 * index + 1);
        const double r = std::sqrt(-std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        return std::complex<double>(r * std::cos(ang), r * std::sin(ang));
    }

  private:
    std::uint64_t base_;
};

}  // namespace turbomimo
