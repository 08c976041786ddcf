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
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairclip/error.hpp"
#include "fairclip/numerics.hpp"

namespace fairclip {

// Poisson-subsampled Gaussian mechanism applied `count` times. A zero noise
// multiplier means the step released its output without noise.
struct MechanismEvent {
  double sampling_rate = 1.0;
  double noise_multiplier = 1.0;
  std::uint64_t count = 1;
};

struct PrivacyParams {
  double epsilon = 8.0;
  double delta = 1e-5;
};

inline std::vector<int> default_rdp_orders() {
  std::vector<int> orders;
  for (int a = 2; a <= 64; ++a) orders.push_back(a);
  for (int a : {80, 128, 256, 512}) orders.push_back(a);
  return orders;
}

inline DenseVector add_gradient_noise(std::span<const double> sum_grads, double noise_multiplier,
                                      double bound, const StreamKey& key) {
  if (!(noise_multiplier >= 0.0)) throw Error(ErrorCode::kInvalidStdDev, "noise multiplier < 0");
  if (!(bound > 0.0)) throw Error(ErrorCode::kInvalidBound, "add_gradient_noise");
  DenseVector out(sum_grads.begin(), sum_grads.end());
  if (noise_multiplier == 0.0) return out;
  const DenseVector noise = gaussian(key, out.size(), noise_multiplier * bound);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += noise[k];
  return out;
}

// Renyi divergence of order `order` for the Poisson-subsampled Gaussian
// mechanism with sensitivity 1:
//   q = 1:  order / (2 sigma^2)
//   q < 1:  log(sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1)/(2 sigma^2))) / (a-1)
inline double rdp_subsampled_gaussian(double q, double sigma, int order) {
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "sampling rate outside (0, 1]");
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise multiplier must be > 0");
  if (order < 2) throw Error(ErrorCode::kInvalidArgument, "Renyi order must be >= 2");
  const double a = static_cast<double>(order);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  if (q == 1.0) return a * inv_two_var;

  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  auto log_weight = [&](int k) {
    return std::lgamma(a + 1.0) - std::lgamma(k + 1.0) - std::lgamma(a - k + 1.0) +
           (a - k) * log_1mq + k * log_q;
  };

  double log_total = 0.0;
  if (a * (a - 1.0) * inv_two_var <= 500.0) {
    // The binomial weights sum to one, so accumulate weight * expm1(.) and
    // finish with log1p; this keeps tiny divergences accurate.
    double excess = 0.0;
    for (int k = 2; k <= order; ++k) {
      excess += std::exp(log_weight(k)) * std::expm1(k * (k - 1.0) * inv_two_var);
    }
    log_total = std::log1p(excess);
  } else {
    double top = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(static_cast<std::size_t>(order) + 1);
    for (int k = 0; k <= order; ++k) {
      terms[static_cast<std::size_t>(k)] = log_weight(k) + k * (k - 1.0) * inv_two_var;
      top = std::max(top, terms[static_cast<std::size_t>(k)]);
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - top);
    log_total = top + std::log(sum);
  }
  const double value = log_total / (a - 1.0);
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kAccountingOverflow, "order " + std::to_string(order));
  }
  return std::max(value, 0.0);
}

// Per-order Renyi ledger. Orders whose divergence overflowed hold +inf and are
// ignored by the conversion.
struct AccountantState {
  std::vector<int> orders = default_rdp_orders();
  std::vector<double> rdp = std::vector<double>(orders.size(), 0.0);
  std::uint64_t compositions = 0;

  static AccountantState WithOrders(std::vector<int> orders) {
    AccountantState s;
    s.orders = std::move(orders);
    s.rdp.assign(s.orders.size(), 0.0);
    return s;
  }
};

inline AccountantState compose(const AccountantState& state, const MechanismEvent& event) {
  if (event.count < 1) throw Error(ErrorCode::kInvalidArgument, "event count must be >= 1");
  AccountantState next = state;
  for (std::size_t i = 0; i < next.orders.size(); ++i) {
    double per_step = std::numeric_limits<double>::infinity();
    if (event.noise_multiplier > 0.0) {
      try {
        per_step = rdp_subsampled_gaussian(event.sampling_rate, event.noise_multiplier,
                                           next.orders[i]);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kAccountingOverflow) throw;
      }
    }
    next.rdp[i] += static_cast<double>(event.count) * per_step;
  }
  next.compositions += event.count;
  return next;
}

struct EpsilonResult {
  double epsilon = 0.0;
  int order = 0;
};

// eps = min_a [ rdp(a) + log(1/delta) / (a - 1) ].
inline EpsilonResult to_epsilon(const AccountantState& state, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::kInvalidArgument, "delta outside (0, 1)");
  EpsilonResult best{std::numeric_limits<double>::infinity(), 0};
  const double log_inv_delta = -std::log(delta);
  for (std::size_t i = 0; i < state.orders.size(); ++i) {
    if (!std::isfinite(state.rdp[i])) continue;
    const double eps = state.rdp[i] + log_inv_delta / (state.orders[i] - 1.0);
    if (eps < best.epsilon) best = {eps, state.orders[i]};
  }
  if (best.order == 0) throw Error(ErrorCode::kNoFiniteOrder, "every order overflowed");
  return best;
}

inline constexpr double kSigmaLow = 0.3;
inline constexpr double kSigmaHigh = 100.0;
inline constexpr double kCalibrationTolerance = 1e-3;

// Epsilon after `steps` steps of the gradient mechanism, plus the same number
// of threshold-release mechanisms when `release_noise` is set.
inline double composed_epsilon(double sigma, double q, std::uint64_t steps, double delta,
                               std::optional<double> release_noise,
                               const std::vector<int>& orders = default_rdp_orders()) {
  AccountantState state = AccountantState::WithOrders(orders);
  state = compose(state, {q, sigma, steps});
  if (release_noise) state = compose(state, {q, *release_noise, steps});
  return to_epsilon(state, delta).epsilon;
}

// Smallest noise multiplier in [0.3, 100] whose composed epsilon does not
// exceed the target; the result lands within 1e-3 below the target.
inline double calibrate_sigma(const PrivacyParams& target, double q, std::uint64_t steps,
                              std::optional<double> release_noise = std::nullopt,
                              const std::vector<int>& orders = default_rdp_orders()) {
  if (!(target.epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "target epsilon must be > 0");
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 1");
  auto eps_at = [&](double sigma) {
    return composed_epsilon(sigma, q, steps, target.delta, release_noise, orders);
  };
  double lo = kSigmaLow;
  double hi = kSigmaHigh;
  const double eps_hi = eps_at(hi);
  if (eps_hi > target.epsilon) {
    throw Error(ErrorCode::kCalibrationOutOfRange,
                "epsilon " + std::to_string(eps_hi) + " at sigma=100 exceeds target");
  }
  if (eps_at(lo) <= target.epsilon) {
    if (target.epsilon - eps_at(lo) <= kCalibrationTolerance) return lo;
    throw Error(ErrorCode::kCalibrationOutOfRange,
                "target epsilon is looser than sigma=0.3 reaches");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-10 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (eps_at(mid) <= target.epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  if (target.epsilon - eps_at(hi) > kCalibrationTolerance) {
    throw Error(ErrorCode::kCalibrationOutOfRange, "bisection did not reach the tolerance");
  }
  return hi;
}

}  // namespace fairclip
