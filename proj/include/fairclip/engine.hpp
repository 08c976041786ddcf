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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fairclip/clip.hpp"
#include "fairclip/data.hpp"
#include "fairclip/error.hpp"
#include "fairclip/model.hpp"
#include "fairclip/numerics.hpp"
#include "fairclip/privacy.hpp"

namespace fairclip {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  std::uint64_t epochs = 10;
  std::optional<std::uint64_t> max_steps;  // overrides epochs * steps_per_epoch
  double sampling_rate = 0.01;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  ClipStrategy strategy = ClipStrategy::kHard;
  double initial_bound = 0.1;
  double noise_multiplier = 1.0;
  double quantile = 0.5;
  double bound_lr = 0.2;
  std::optional<double> fraction_noise;  // defaults to 0.05 * expected batch size
  double divisor_epsilon = kDefaultDivisorEpsilon;
  bool clamp_fraction = false;

  std::uint64_t seed = 0;
  std::optional<std::uint64_t> patience = 10;  // nullopt: never stop early
  std::optional<PrivacyParams> privacy_target;
  double delta = 1e-5;                          // used when no target is set
  bool account_threshold_release = true;
  bool expected_batch_average = false;
  std::size_t threads = 1;
  std::vector<int> orders = default_rdp_orders();
  bool trace_gradients = true;

  void Validate() const {
    if (epochs < 1 && !max_steps) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");
    if (max_steps && *max_steps < 1) throw Error(ErrorCode::kInvalidArgument, "max_steps must be >= 1");
    if (!(sampling_rate > 0.0 && sampling_rate <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "sampling rate outside (0, 1]");
    }
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
    if (!(initial_bound > 0.0)) throw Error(ErrorCode::kInvalidBound, "initial bound must be > 0");
    if (!(noise_multiplier >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise multiplier < 0");
    if (!(quantile > 0.0 && quantile < 1.0)) throw Error(ErrorCode::kInvalidArgument, "quantile outside (0, 1)");
    if (!(bound_lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "bound learning rate must be > 0");
    if (fraction_noise && !(*fraction_noise >= 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "fraction noise must be >= 0");
    }
    if (!(divisor_epsilon > 0.0)) throw Error(ErrorCode::kInvalidBound, "divisor epsilon must be > 0");
    if (threads < 1) throw Error(ErrorCode::kInvalidArgument, "threads must be >= 1");
  }

  std::uint64_t steps_per_epoch() const {
    return static_cast<std::uint64_t>(std::ceil(1.0 / sampling_rate - 1e-12));
  }
  std::uint64_t total_steps() const { return max_steps.value_or(epochs * steps_per_epoch()); }

  double resolved_fraction_noise(std::size_t dataset_size) const {
    return fraction_noise.value_or(0.05 * sampling_rate * static_cast<double>(dataset_size));
  }
};

struct OptimizerState {
  DenseVector m;
  DenseVector v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamOutcome {
  OptimizerState state;
  DenseVector delta;
};

// Bias-corrected Adam: delta = -lr * m_hat / (sqrt(v_hat) + eps).
inline AdamOutcome adam_update(const OptimizerState& opt, std::span<const double> grad,
                               double learning_rate) {
  AdamOutcome out{opt, DenseVector(grad.size())};
  OptimizerState& s = out.state;
  if (s.m.empty()) s.m.assign(grad.size(), 0.0);
  if (s.v.empty()) s.v.assign(grad.size(), 0.0);
  if (s.m.size() != grad.size() || s.v.size() != grad.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adam_update");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < grad.size(); ++k) {
    s.m[k] = s.beta1 * s.m[k] + (1.0 - s.beta1) * grad[k];
    s.v[k] = s.beta2 * s.v[k] + (1.0 - s.beta2) * grad[k] * grad[k];
    const double m_hat = s.m[k] / c1;
    const double v_hat = s.v[k] / c2;
    out.delta[k] = -learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
  return out;
}

// Each index joins the batch independently with probability q.
inline std::vector<std::size_t> poisson_sample(std::size_t n, double q, const StreamKey& key) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "poisson_sample needs N >= 1");
  if (!(q > 0.0 && q <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "sampling rate outside (0, 1]");
  std::vector<std::size_t> batch;
  if (q == 1.0) {
    batch.resize(n);
    for (std::size_t i = 0; i < n; ++i) batch[i] = i;
    return batch;
  }
  CounterStream stream(key);
  for (std::size_t i = 0; i < n; ++i) {
    if (stream.NextUniform() < q) batch.push_back(i);
  }
  return batch;
}

// Accumulated gradient norms of one subgroup within one step.
struct GroupStepNorms {
  std::string attribute;
  std::string level;
  std::size_t count = 0;
  double pre_clip_norm = 0.0;
  double post_clip_norm = 0.0;
};

struct StepTrace {
  std::uint64_t step = 0;
  std::size_t batch_size = 0;
  double bound_before = 0.0;
  double bound_after = 0.0;
  double noise_stddev = 0.0;
  std::optional<double> unclipped_fraction;
  std::size_t unclipped_count = 0;
  double noised_grad_norm = 0.0;
  double batch_loss = 0.0;
  std::vector<GroupStepNorms> groups;
};

struct TrainingState {
  ModelParams params;
  ClipState clip;
  OptimizerState optimizer;
  AccountantState accountant;
};

struct StepOutcome {
  TrainingState state;
  StepTrace trace;
};

namespace detail {

inline constexpr std::size_t kReductionChunk = 16;

// Partial sums over one fixed chunk of batch positions. Chunk boundaries do
// not depend on the thread count, so the reduction order is fixed.
struct ChunkSum {
  DenseVector clipped;
  std::vector<DenseVector> group_raw;
  std::vector<DenseVector> group_clipped;
  std::vector<std::size_t> group_count;
  std::vector<bool> unclipped;
  double loss = 0.0;
};

struct GroupSlot {
  std::size_t attribute;
  int level;
};

template <typename Fn>
void ParallelChunks(std::size_t chunks, std::size_t threads, Fn fn) {
  if (threads <= 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, chunks);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t c = next++; c < chunks; c = next++) {
        try {
          fn(c);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

// One private step over the sampled `batch` (ascending dataset indices).
// Gradient noise uses the bound in effect at the start of the step; the
// adaptive bound is updated afterwards.
inline StepOutcome dp_step(const TrainingState& state, const Dataset& data,
                           std::span<const std::size_t> batch, const ModelPreset& model,
                           const TrainConfig& config, std::uint64_t step) {
  StepOutcome out{state, {}};
  TrainingState& next = out.state;
  StepTrace& trace = out.trace;
  trace.step = step;
  trace.batch_size = batch.size();
  trace.bound_before = state.clip.bound;
  trace.bound_after = state.clip.bound;
  trace.noise_stddev = config.noise_multiplier * state.clip.bound;

  const double q = config.sampling_rate;
  const bool adaptive = state.clip.adaptive;
  auto compose_step = [&] {
    next.accountant = compose(next.accountant, {q, config.noise_multiplier, 1});
    if (adaptive && config.account_threshold_release) {
      next.accountant = compose(next.accountant, {q, state.clip.fraction_noise, 1});
    }
  };

  std::vector<detail::GroupSlot> slots;
  if (config.trace_gradients) {
    for (std::size_t a = 0; a < data.attributes.size(); ++a) {
      for (std::size_t l = 0; l < data.attributes[a].levels.size(); ++l) {
        slots.push_back({a, static_cast<int>(l)});
      }
    }
  }

  if (batch.empty()) {
    compose_step();
    for (const auto& slot : slots) {
      const auto& attr = data.attributes[slot.attribute];
      trace.groups.push_back({attr.name, attr.levels[static_cast<std::size_t>(slot.level)], 0, 0.0, 0.0});
    }
    return out;
  }

  const std::size_t dim = state.params.values.size();
  const double bound = state.clip.bound;
  const std::size_t chunks = (batch.size() + detail::kReductionChunk - 1) / detail::kReductionChunk;
  std::vector<detail::ChunkSum> partial(chunks);
  const StreamKey dropout_key{config.seed, "dropout", step, 0};

  detail::ParallelChunks(chunks, config.threads, [&](std::size_t c) {
    detail::ChunkSum& sum = partial[c];
    sum.clipped.assign(dim, 0.0);
    sum.group_raw.assign(slots.size(), DenseVector(dim, 0.0));
    sum.group_clipped.assign(slots.size(), DenseVector(dim, 0.0));
    sum.group_count.assign(slots.size(), 0);
    const std::size_t begin = c * detail::kReductionChunk;
    const std::size_t end = std::min(batch.size(), begin + detail::kReductionChunk);
    for (std::size_t pos = begin; pos < end; ++pos) {
      const std::size_t row = batch[pos];
      const RawGradient raw = per_sample_grad(state.params, model.spec, model.loss,
                                              data.example(row), dropout_key.With(step, row));
      const PerSampleGradient g = clip_gradient(config.strategy, raw.grad, bound,
                                                config.divisor_epsilon);
      sum.loss += raw.loss;
      sum.unclipped.push_back(g.unclipped);
      axpy(1.0, g.clipped, sum.clipped);
      for (std::size_t s = 0; s < slots.size(); ++s) {
        if (data.attributes[slots[s].attribute].values[row] != slots[s].level) continue;
        ++sum.group_count[s];
        axpy(1.0, g.raw, sum.group_raw[s]);
        axpy(1.0, g.clipped, sum.group_clipped[s]);
      }
    }
  });

  DenseVector clipped_sum(dim, 0.0);
  std::vector<DenseVector> group_raw(slots.size(), DenseVector(dim, 0.0));
  std::vector<DenseVector> group_clipped(slots.size(), DenseVector(dim, 0.0));
  std::vector<std::size_t> group_count(slots.size(), 0);
  std::vector<bool> bits;
  bits.reserve(batch.size());
  for (const auto& sum : partial) {
    axpy(1.0, sum.clipped, clipped_sum);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      axpy(1.0, sum.group_raw[s], group_raw[s]);
      axpy(1.0, sum.group_clipped[s], group_clipped[s]);
      group_count[s] += sum.group_count[s];
    }
    bits.insert(bits.end(), sum.unclipped.begin(), sum.unclipped.end());
    trace.batch_loss += sum.loss;
  }
  trace.unclipped_count = static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto& attr = data.attributes[slots[s].attribute];
    trace.groups.push_back({attr.name, attr.levels[static_cast<std::size_t>(slots[s].level)],
                            group_count[s], l2_norm(group_raw[s]), l2_norm(group_clipped[s])});
  }

  DenseVector noised = config.noise_multiplier > 0.0
                           ? add_gradient_noise(clipped_sum, config.noise_multiplier, bound,
                                                StreamKey{config.seed, "noise", step, 0})
                           : clipped_sum;
  const double denom = config.expected_batch_average
                           ? config.sampling_rate * static_cast<double>(data.size())
                           : static_cast<double>(batch.size());
  for (double& x : noised) x /= denom;
  trace.noised_grad_norm = l2_norm(noised);

  if (config.optimizer == OptimizerKind::kAdam) {
    AdamOutcome adam = adam_update(state.optimizer, noised, config.learning_rate);
    next.optimizer = std::move(adam.state);
    axpy(1.0, adam.delta, next.params.values);
  } else {
    axpy(-config.learning_rate, noised, next.params.values);
    ++next.optimizer.step;
  }
  if (!all_finite(next.params.values)) {
    throw Error(ErrorCode::kDivergedStep, "non-finite parameters after step " + std::to_string(step));
  }

  if (adaptive) {
    std::unique_ptr<bool[]> flags(new bool[bits.size()]);
    for (std::size_t i = 0; i < bits.size(); ++i) flags[i] = bits[i];
    const double fraction = noisy_unclipped_fraction(
        std::span<const bool>(flags.get(), bits.size()), batch.size(), state.clip.fraction_noise,
        StreamKey{config.seed, "quantile", step, 0});
    trace.unclipped_fraction = fraction;
    next.clip = update_threshold(state.clip, fraction);
    trace.bound_after = next.clip.bound;
  }
  compose_step();
  return out;
}

struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::uint64_t steps = 0;  // cumulative
  EvalMetrics train;
  EvalMetrics validation;
  double bound = 0.0;
};

struct TrainResult {
  ModelParams params;  // best-validation-F1 checkpoint
  std::vector<EpochMetrics> epochs;
  std::vector<StepTrace> traces;
  double noise_multiplier = 0.0;
  double fraction_noise = 0.0;
  double epsilon = std::numeric_limits<double>::infinity();
  int epsilon_order = 0;
  double delta = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t compositions = 0;
  std::uint64_t best_epoch = 0;
  std::uint64_t stopped_epoch = 0;
  bool stopped_early = false;
};

inline ClipState initial_clip_state(const TrainConfig& config, std::size_t dataset_size) {
  ClipState clip;
  clip.bound = config.initial_bound;
  clip.quantile = config.quantile;
  clip.bound_lr = config.bound_lr;
  clip.fraction_noise = config.resolved_fraction_noise(dataset_size);
  clip.adaptive = IsAdaptive(config.strategy);
  clip.clamp_fraction = config.clamp_fraction;
  return clip;
}

// Noise multiplier meeting the privacy target over the planned steps.
inline double resolve_noise_multiplier(const TrainConfig& config, std::size_t dataset_size) {
  if (!config.privacy_target) return config.noise_multiplier;
  std::optional<double> release;
  if (IsAdaptive(config.strategy) && config.account_threshold_release) {
    release = config.resolved_fraction_noise(dataset_size);
  }
  return calibrate_sigma(*config.privacy_target, config.sampling_rate, config.total_steps(), release,
                         config.orders);
}

// Full private training run with per-epoch evaluation and early stopping on
// validation F1.
inline TrainResult train(TrainConfig config, const Dataset& train_split, const Dataset& validation,
                         const ModelPreset& model) {
  config.Validate();
  if (train_split.size() == 0) throw Error(ErrorCode::kEmptySplit, "train split");
  if (validation.size() == 0) throw Error(ErrorCode::kEmptySplit, "validation split");
  if (train_split.features.cols != model.spec.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "dataset width does not match the model input");
  }
  config.noise_multiplier = resolve_noise_multiplier(config, train_split.size());

  TrainResult result;
  result.noise_multiplier = config.noise_multiplier;
  result.delta = config.privacy_target ? config.privacy_target->delta : config.delta;
  TrainingState state;
  state.params = init_params(model.spec, StreamKey{config.seed, "init", 0, 0});
  state.clip = initial_clip_state(config, train_split.size());
  result.fraction_noise = state.clip.fraction_noise;
  state.optimizer.beta1 = config.beta1;
  state.optimizer.beta2 = config.beta2;
  state.optimizer.epsilon = config.adam_epsilon;
  state.accountant = AccountantState::WithOrders(config.orders);

  const std::uint64_t total = config.total_steps();
  const std::uint64_t per_epoch = config.steps_per_epoch();
  double best_f1 = -1.0;
  std::uint64_t since_best = 0;
  std::uint64_t step = 0;
  for (std::uint64_t epoch = 1; step < total; ++epoch) {
    const std::uint64_t epoch_end = std::min(total, step + per_epoch);
    for (; step < epoch_end; ++step) {
      const auto batch = poisson_sample(train_split.size(), config.sampling_rate,
                                        StreamKey{config.seed, "poisson", step, 0});
      StepOutcome outcome = dp_step(state, train_split, batch, model, config, step);
      state = std::move(outcome.state);
      result.traces.push_back(std::move(outcome.trace));
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.steps = step;
    m.train = evaluate(state.params, model.spec, model.loss, train_split.features, train_split.labels);
    m.validation = evaluate(state.params, model.spec, model.loss, validation.features, validation.labels);
    m.bound = state.clip.bound;
    result.epochs.push_back(m);
    result.stopped_epoch = epoch;
    if (m.validation.f1 > best_f1) {
      best_f1 = m.validation.f1;
      result.best_epoch = epoch;
      result.params = state.params;
      since_best = 0;
    } else if (config.patience && ++since_best >= *config.patience) {
      result.stopped_early = step < total;
      break;
    }
  }
  result.steps = step;
  result.compositions = state.accountant.compositions;
  if (config.noise_multiplier > 0.0) {
    const EpsilonResult eps = to_epsilon(state.accountant, result.delta);
    result.epsilon = eps.epsilon;
    result.epsilon_order = eps.order;
  }
  return result;
}

struct SubgroupClipStat {
  std::string attribute;
  std::string level;
  std::size_t steps_present = 0;
  double mean_pre = 0.0;
  double mean_post = 0.0;
  double diff = 0.0;
  bool missing = true;
};

struct GroupKey {
  std::string attribute;
  std::string level;
};

// Mean over steps of each subgroup's accumulated pre- and post-clip gradient
// norm; steps where the subgroup had no sampled example are skipped.
inline std::vector<SubgroupClipStat> subgroup_clip_stats(std::span<const StepTrace> traces,
                                                         std::span<const GroupKey> grouping) {
  if (traces.empty()) throw Error(ErrorCode::kInvalidArgument, "subgroup_clip_stats needs traces");
  std::vector<SubgroupClipStat> out;
  for (const auto& key : grouping) {
    SubgroupClipStat stat{key.attribute, key.level};
    double pre = 0.0, post = 0.0;
    for (const auto& t : traces) {
      for (const auto& g : t.groups) {
        if (g.attribute != key.attribute || g.level != key.level || g.count == 0) continue;
        pre += g.pre_clip_norm;
        post += g.post_clip_norm;
        ++stat.steps_present;
      }
    }
    if (stat.steps_present > 0) {
      stat.missing = false;
      stat.mean_pre = pre / static_cast<double>(stat.steps_present);
      stat.mean_post = post / static_cast<double>(stat.steps_present);
      stat.diff = stat.mean_pre - stat.mean_post;
    }
    out.push_back(stat);
  }
  return out;
}

}  // namespace fairclip
