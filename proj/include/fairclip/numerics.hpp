// Copyright 2026 The FairClip Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairclip/error.hpp"

namespace fairclip {

using DenseVector = std::vector<double>;

// Row-major dense matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }
  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
};

// Identifies one independent random stream. Every random draw in the library
// is addressed by such a key, so results never depend on evaluation order.
struct StreamKey {
  std::uint64_t seed = 0;
  std::string domain;
  std::uint64_t step = 0;
  std::uint64_t index = 0;

  StreamKey With(std::uint64_t new_step, std::uint64_t new_index) const {
    return StreamKey{seed, domain, new_step, new_index};
  }
  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

namespace detail {

constexpr std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t Fnv1a(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
inline std::array<std::uint32_t, 4> Philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

}  // namespace detail

// Sequential reader over the counter-based stream addressed by a StreamKey.
// Two readers built from equal keys produce identical sequences.
class CounterStream {
 public:
  explicit CounterStream(const StreamKey& key) {
    const std::uint64_t k =
        detail::SplitMix64(key.seed) ^ detail::SplitMix64(detail::Fnv1a(key.domain) + 1);
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    index_lo_ = static_cast<std::uint32_t>(key.index);
    step_lo_ = static_cast<std::uint32_t>(key.step);
    high_ = static_cast<std::uint32_t>(key.index >> 32) ^
            (static_cast<std::uint32_t>(key.step >> 32) << 16);
  }

  std::uint32_t NextU32() {
    if (pos_ == 4) {
      buffer_ = detail::Philox4x32({block_, index_lo_, step_lo_, high_}, key_);
      ++block_;
      pos_ = 0;
    }
    return buffer_[pos_++];
  }

  std::uint64_t NextU64() {
    const std::uint64_t hi = NextU32();
    return (hi << 32) | NextU32();
  }

  // Uniform on the open interval (0, 1).
  double NextUniform() {
    return (static_cast<double>(NextU64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Box-Muller; the spare value of each pair is kept for the next call.
  double NextGaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = NextUniform();
    const double u2 = NextUniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, bound) by rejection, bound > 0.
  std::uint64_t NextBelow(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = NextU64();
    while (x >= limit) x = NextU64();
    return x % bound;
  }

 private:
  std::array<std::uint32_t, 2> key_{};
  std::uint32_t index_lo_ = 0;
  std::uint32_t step_lo_ = 0;
  std::uint32_t high_ = 0;
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline double l2_norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFiniteInput, "l2_norm");
    sum += x * x;
  }
  return std::sqrt(sum);
}

inline DenseVector gaussian(const StreamKey& key, std::size_t count, double stddev) {
  if (!(stddev >= 0.0)) throw Error(ErrorCode::kInvalidStdDev, std::to_string(stddev));
  DenseVector out(count, 0.0);
  if (stddev == 0.0) return out;
  CounterStream stream(key);
  for (double& x : out) x = stddev * stream.NextGaussian();
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kShapeMismatch, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace fairclip
