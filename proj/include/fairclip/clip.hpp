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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairclip/error.hpp"
#include "fairclip/numerics.hpp"

namespace fairclip {

inline constexpr double kDefaultDivisorEpsilon = 1e-6;

enum class ClipStrategy { kHard, kSoftFixed, kAdaptiveHard, kSoftAdaClip };

constexpr std::string_view ClipStrategyName(ClipStrategy s) {
  switch (s) {
    case ClipStrategy::kHard: return "hard";
    case ClipStrategy::kSoftFixed: return "soft-fixed";
    case ClipStrategy::kAdaptiveHard: return "adaptive-hard";
    case ClipStrategy::kSoftAdaClip: return "softadaclip";
  }
  return "unknown";
}

inline ClipStrategy ParseClipStrategy(std::string_view name) {
  for (auto s : {ClipStrategy::kHard, ClipStrategy::kSoftFixed, ClipStrategy::kAdaptiveHard,
                 ClipStrategy::kSoftAdaClip}) {
    if (ClipStrategyName(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown clip strategy '" + std::string(name) + "'");
}

constexpr bool IsAdaptive(ClipStrategy s) {
  return s == ClipStrategy::kAdaptiveHard || s == ClipStrategy::kSoftAdaClip;
}

constexpr bool IsSoft(ClipStrategy s) {
  return s == ClipStrategy::kSoftFixed || s == ClipStrategy::kSoftAdaClip;
}

// One example's gradient before and after scaling. Invariants:
// clipped == scale * raw elementwise, l2_norm(clipped) <= bound,
// unclipped == (raw_norm <= bound).
struct PerSampleGradient {
  DenseVector raw;
  double raw_norm = 0.0;
  double scale = 1.0;
  DenseVector clipped;
  bool unclipped = true;
};

struct ClipState {
  double bound = 0.1;
  double quantile = 0.5;
  double bound_lr = 0.2;
  double fraction_noise = 0.0;
  bool adaptive = false;
  bool clamp_fraction = false;
};

namespace detail {

inline DenseVector Scaled(std::span<const double> g, double alpha) {
  DenseVector out(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) out[k] = alpha * g[k];
  return out;
}

// Lowers alpha by ulps until the rounded product satisfies the bound; the
// exact-arithmetic norm already does, rounding can overshoot by an ulp.
template <typename Accept>
inline void ScaleWithin(PerSampleGradient& out, std::span<const double> g, double alpha,
                        Accept accept) {
  out.clipped = Scaled(g, alpha);
  while (!accept(l2_norm(out.clipped))) {
    alpha = std::nextafter(alpha, 0.0);
    out.clipped = Scaled(g, alpha);
  }
  out.scale = alpha;
}

}  // namespace detail

inline PerSampleGradient hard_clip(std::span<const double> g, double bound) {
  if (!(bound > 0.0)) throw Error(ErrorCode::kInvalidBound, "hard_clip bound must be > 0");
  PerSampleGradient out;
  out.raw.assign(g.begin(), g.end());
  out.raw_norm = l2_norm(g);
  out.unclipped = out.raw_norm <= bound;
  if (out.unclipped) {
    out.scale = 1.0;
    out.clipped = out.raw;
    return out;
  }
  detail::ScaleWithin(out, g, bound / out.raw_norm, [&](double n) { return n <= bound; });
  return out;
}

// Scale tanh(C / (|g| + eps)); the clipped norm is strictly below C.
inline double soft_clip_scale(double raw_norm, double bound, double divisor_eps) {
  return std::tanh(bound / (raw_norm + divisor_eps));
}

inline PerSampleGradient soft_clip(std::span<const double> g, double bound,
                                   double divisor_eps = kDefaultDivisorEpsilon) {
  if (!(bound > 0.0)) throw Error(ErrorCode::kInvalidBound, "soft_clip bound must be > 0");
  if (!(divisor_eps > 0.0)) throw Error(ErrorCode::kInvalidBound, "soft_clip epsilon must be > 0");
  PerSampleGradient out;
  out.raw.assign(g.begin(), g.end());
  out.raw_norm = l2_norm(g);
  out.unclipped = out.raw_norm <= bound;
  const double alpha = soft_clip_scale(out.raw_norm, bound, divisor_eps);
  if (alpha == 1.0) {
    out.scale = 1.0;
    out.clipped = out.raw;
    if (l2_norm(out.clipped) < bound) return out;
  }
  detail::ScaleWithin(out, g, alpha, [&](double n) { return n < bound; });
  return out;
}

inline bool unclipped_indicator(double raw_norm, double bound) { return raw_norm <= bound; }

inline bool unclipped_indicator(std::span<const double> g, double bound) {
  return unclipped_indicator(l2_norm(g), bound);
}

inline PerSampleGradient clip_gradient(ClipStrategy strategy, std::span<const double> g,
                                       double bound, double divisor_eps) {
  return IsSoft(strategy) ? soft_clip(g, bound, divisor_eps) : hard_clip(g, bound);
}

// (sum of bits + N(0, noise^2)) / batch_size. The result is not clamped.
inline double noisy_unclipped_fraction(std::span<const bool> bits, std::size_t batch_size,
                                       double fraction_noise, const StreamKey& key) {
  if (batch_size == 0) throw Error(ErrorCode::kEmptyBatch, "noisy_unclipped_fraction");
  double count = 0.0;
  for (bool b : bits) count += b ? 1.0 : 0.0;
  const double noise = gaussian(key, 1, fraction_noise)[0];
  return (count + noise) / static_cast<double>(batch_size);
}

// Geometric quantile tracking: C <- C * exp(-lr * (fraction - quantile)).
inline ClipState update_threshold(const ClipState& state, double fraction) {
  if (!state.adaptive) throw Error(ErrorCode::kNotAdaptive, "update_threshold");
  if (state.clamp_fraction) fraction = std::clamp(fraction, 0.0, 1.0);
  ClipState next = state;
  next.bound = state.bound * std::exp(-state.bound_lr * (fraction - state.quantile));
  if (!(next.bound > 0.0) || !std::isfinite(next.bound)) {
    throw Error(ErrorCode::kInvalidBound, "threshold update left the positive finite range");
  }
  return next;
}

}  // namespace fairclip
