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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairclip/error.hpp"
#include "fairclip/numerics.hpp"

namespace fairclip {

enum class OutputHead { kBinaryLogit, kMultiClass };

// Feed-forward classifier: Linear -> [GroupNorm] -> ReLU -> [Dropout] per
// hidden layer, then a final Linear producing logits.
struct MlpSpec {
  std::vector<std::size_t> widths;     // input, hidden..., output
  std::vector<bool> group_norm;        // one flag per hidden layer
  std::vector<double> dropout;         // one rate per hidden layer
  std::size_t norm_groups = 8;
  OutputHead head = OutputHead::kBinaryLogit;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t num_hidden() const { return widths.size() - 2; }

  void Validate() const {
    if (widths.size() < 2) throw Error(ErrorCode::kInvalidArgument, "MlpSpec needs >= 2 widths");
    for (std::size_t w : widths) {
      if (w == 0) throw Error(ErrorCode::kInvalidArgument, "MlpSpec width must be positive");
    }
    if (group_norm.size() != num_hidden() || dropout.size() != num_hidden()) {
      throw Error(ErrorCode::kInvalidArgument, "MlpSpec per-layer flags must match hidden layer count");
    }
    for (std::size_t l = 0; l < num_hidden(); ++l) {
      if (!(dropout[l] >= 0.0 && dropout[l] < 1.0)) {
        throw Error(ErrorCode::kInvalidArgument, "dropout rate outside [0, 1)");
      }
      if (group_norm[l] && (norm_groups == 0 || widths[l + 1] % norm_groups != 0)) {
        throw Error(ErrorCode::kInvalidArgument, "norm groups must divide layer width");
      }
    }
    if (head == OutputHead::kBinaryLogit && output_dim() != 1) {
      throw Error(ErrorCode::kInvalidArgument, "binary logit head has width 1");
    }
    if (head == OutputHead::kMultiClass && output_dim() < 2) {
      throw Error(ErrorCode::kInvalidArgument, "multi-class head needs >= 2 logits");
    }
  }

  std::size_t num_classes() const {
    return head == OutputHead::kBinaryLogit ? 2 : output_dim();
  }
};

// Offsets of each layer's tensors inside the flat parameter vector.
struct LayerSlots {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;  // out x in, row-major
  std::size_t bias = 0;
  std::optional<std::size_t> norm_scale;
  std::optional<std::size_t> norm_shift;
};

struct ParamLayout {
  std::vector<LayerSlots> layers;
  std::size_t size = 0;

  static ParamLayout For(const MlpSpec& spec) {
    spec.Validate();
    ParamLayout layout;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
      LayerSlots s;
      s.in = spec.widths[l];
      s.out = spec.widths[l + 1];
      s.weight = offset;
      offset += s.in * s.out;
      s.bias = offset;
      offset += s.out;
      if (l < spec.num_hidden() && spec.group_norm[l]) {
        s.norm_scale = offset;
        offset += s.out;
        s.norm_shift = offset;
        offset += s.out;
      }
      layout.layers.push_back(s);
    }
    layout.size = offset;
    return layout;
  }
};

struct ModelParams {
  DenseVector values;
  ParamLayout layout;
};

enum class LossKind { kWeightedBinaryCrossEntropy, kWeightedCrossEntropy };

struct LossSpec {
  LossKind kind = LossKind::kWeightedBinaryCrossEntropy;
  double positive_weight = 1.0;          // binary
  std::vector<double> class_weights;     // multi-class

  void Validate(const MlpSpec& spec) const {
    if (kind == LossKind::kWeightedBinaryCrossEntropy) {
      if (spec.head != OutputHead::kBinaryLogit) {
        throw Error(ErrorCode::kInvalidArgument, "binary loss needs a logit head");
      }
      if (!(positive_weight > 0.0)) throw Error(ErrorCode::kInvalidArgument, "weights must be > 0");
    } else {
      if (spec.head != OutputHead::kMultiClass || class_weights.size() != spec.output_dim()) {
        throw Error(ErrorCode::kInvalidArgument, "class weights must match the logit count");
      }
      for (double w : class_weights) {
        if (!(w > 0.0)) throw Error(ErrorCode::kInvalidArgument, "weights must be > 0");
      }
    }
  }
};

struct Example {
  std::span<const double> features;
  int label = 0;
};

enum class Mode { kTrain, kEval };

inline constexpr double kLogitClamp = 30.0;
inline constexpr double kNormEpsilon = 1e-5;

inline ModelParams init_params(const MlpSpec& spec, const StreamKey& key) {
  ModelParams params;
  params.layout = ParamLayout::For(spec);
  params.values.assign(params.layout.size, 0.0);
  for (std::size_t l = 0; l < params.layout.layers.size(); ++l) {
    const LayerSlots& s = params.layout.layers[l];
    const double stddev = std::sqrt(2.0 / static_cast<double>(s.in));
    CounterStream stream(key.With(key.step, l));
    for (std::size_t k = 0; k < s.in * s.out; ++k) {
      params.values[s.weight + k] = stddev * stream.NextGaussian();
    }
    if (s.norm_scale) {
      std::fill_n(params.values.begin() + static_cast<std::ptrdiff_t>(*s.norm_scale), s.out, 1.0);
    }
  }
  return params;
}

namespace detail {

struct LayerTape {
  DenseVector input;       // activation entering the linear map
  DenseVector normalized;  // x-hat when group norm is on
  DenseVector inv_std;     // one per group
  DenseVector pre_relu;
  DenseVector mask;        // dropout multipliers (empty when inactive)
};

struct Tape {
  std::vector<LayerTape> hidden;
  DenseVector last_input;
  DenseVector logits;
};

inline void CheckShapes(const ModelParams& params, const MlpSpec& spec,
                        std::span<const double> x) {
  if (params.values.size() != params.layout.size ||
      params.layout.layers.size() + 1 != spec.widths.size() || x.size() != spec.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch,
                "expected input width " + std::to_string(spec.input_dim()) + ", got " +
                    std::to_string(x.size()));
  }
}

inline void Linear(const ModelParams& params, const LayerSlots& s, std::span<const double> in,
                   DenseVector& out) {
  out.assign(s.out, 0.0);
  const double* w = params.values.data() + s.weight;
  const double* b = params.values.data() + s.bias;
  for (std::size_t o = 0; o < s.out; ++o) {
    double acc = b[o];
    const double* row = w + o * s.in;
    for (std::size_t i = 0; i < s.in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

inline Tape Forward(const ModelParams& params, const MlpSpec& spec, std::span<const double> x,
                    Mode mode, const StreamKey& key) {
  CheckShapes(params, spec, x);
  Tape tape;
  tape.hidden.resize(spec.num_hidden());
  DenseVector activation(x.begin(), x.end());
  DenseVector z;
  CounterStream dropout_stream(key);
  for (std::size_t l = 0; l < spec.num_hidden(); ++l) {
    const LayerSlots& s = params.layout.layers[l];
    LayerTape& t = tape.hidden[l];
    t.input = activation;
    Linear(params, s, activation, z);
    if (s.norm_scale) {
      const std::size_t groups = spec.norm_groups;
      const std::size_t per = s.out / groups;
      t.normalized.assign(s.out, 0.0);
      t.inv_std.assign(groups, 0.0);
      const double* gamma = params.values.data() + *s.norm_scale;
      const double* beta = params.values.data() + *s.norm_shift;
      for (std::size_t g = 0; g < groups; ++g) {
        double mean = 0.0;
        for (std::size_t k = 0; k < per; ++k) mean += z[g * per + k];
        mean /= static_cast<double>(per);
        double var = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
          const double d = z[g * per + k] - mean;
          var += d * d;
        }
        var /= static_cast<double>(per);
        const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
        t.inv_std[g] = inv;
        for (std::size_t k = 0; k < per; ++k) {
          const std::size_t c = g * per + k;
          t.normalized[c] = (z[c] - mean) * inv;
          z[c] = gamma[c] * t.normalized[c] + beta[c];
        }
      }
    }
    t.pre_relu = z;
    activation.assign(s.out, 0.0);
    for (std::size_t o = 0; o < s.out; ++o) activation[o] = z[o] > 0.0 ? z[o] : 0.0;
    const double rate = spec.dropout[l];
    if (mode == Mode::kTrain && rate > 0.0) {
      t.mask.assign(s.out, 0.0);
      const double keep = 1.0 / (1.0 - rate);
      for (std::size_t o = 0; o < s.out; ++o) {
        t.mask[o] = dropout_stream.NextUniform() >= rate ? keep : 0.0;
        activation[o] *= t.mask[o];
      }
    }
  }
  tape.last_input = activation;
  Linear(params, params.layout.layers.back(), activation, tape.logits);
  return tape;
}

inline double Softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

inline double Sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Loss of one example and its derivative with respect to the raw logits.
inline double LossAndGrad(const LossSpec& loss, std::span<const double> logits, int label,
                          DenseVector* dlogits) {
  if (!all_finite(logits)) throw Error(ErrorCode::kNonFiniteLoss, "non-finite logits");
  if (dlogits) dlogits->assign(logits.size(), 0.0);
  double value = 0.0;
  if (loss.kind == LossKind::kWeightedBinaryCrossEntropy) {
    if (label != 0 && label != 1) throw Error(ErrorCode::kInvalidArgument, "binary label");
    const double raw = logits[0];
    const double c = std::clamp(raw, -kLogitClamp, kLogitClamp);
    const double y = static_cast<double>(label);
    value = loss.positive_weight * y * Softplus(-c) + (1.0 - y) * Softplus(c);
    if (dlogits && std::abs(raw) < kLogitClamp) {
      const double p = Sigmoid(c);
      (*dlogits)[0] = loss.positive_weight * y * (p - 1.0) + (1.0 - y) * p;
    }
  } else {
    const std::size_t k = logits.size();
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw Error(ErrorCode::kInvalidArgument, "class label out of range");
    }
    DenseVector c(k);
    double top = -kLogitClamp;
    for (std::size_t j = 0; j < k; ++j) {
      c[j] = std::clamp(logits[j], -kLogitClamp, kLogitClamp);
      top = std::max(top, c[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(c[j] - top);
    const double lse = top + std::log(sum);
    const double w = loss.class_weights[static_cast<std::size_t>(label)];
    value = w * (lse - c[static_cast<std::size_t>(label)]);
    if (dlogits) {
      for (std::size_t j = 0; j < k; ++j) {
        if (std::abs(logits[j]) >= kLogitClamp) continue;
        const double softmax = std::exp(c[j] - lse);
        (*dlogits)[j] = w * (softmax - (static_cast<int>(j) == label ? 1.0 : 0.0));
      }
    }
  }
  if (!std::isfinite(value)) throw Error(ErrorCode::kNonFiniteLoss, "loss is not finite");
  return value;
}

}  // namespace detail

inline DenseVector forward(const ModelParams& params, const MlpSpec& spec,
                           std::span<const double> x, Mode mode, const StreamKey& key) {
  return detail::Forward(params, spec, x, mode, key).logits;
}

inline DenseVector forward(const ModelParams& params, const MlpSpec& spec,
                           std::span<const double> x) {
  return forward(params, spec, x, Mode::kEval, StreamKey{});
}

inline double example_loss(const ModelParams& params, const MlpSpec& spec, const LossSpec& loss,
                           const Example& ex, Mode mode = Mode::kEval,
                           const StreamKey& key = {}) {
  const DenseVector logits = forward(params, spec, ex.features, mode, key);
  return detail::LossAndGrad(loss, logits, ex.label, nullptr);
}

struct RawGradient {
  DenseVector grad;
  double loss = 0.0;
};

// Exact gradient of one example's loss with respect to every parameter, in
// layout order. Dropout masks (if any) come from `key`.
inline RawGradient per_sample_grad(const ModelParams& params, const MlpSpec& spec,
                                   const LossSpec& loss, const Example& ex,
                                   const StreamKey& key) {
  const detail::Tape tape = detail::Forward(params, spec, ex.features, Mode::kTrain, key);
  DenseVector delta;
  RawGradient out;
  out.loss = detail::LossAndGrad(loss, tape.logits, ex.label, &delta);
  out.grad.assign(params.layout.size, 0.0);
  double* grad = out.grad.data();
  const double* theta = params.values.data();

  auto backprop_linear = [&](const LayerSlots& s, std::span<const double> input,
                             const DenseVector& dz, DenseVector* dinput) {
    for (std::size_t o = 0; o < s.out; ++o) {
      const double d = dz[o];
      grad[s.bias + o] += d;
      if (d == 0.0) continue;
      double* row = grad + s.weight + o * s.in;
      for (std::size_t i = 0; i < s.in; ++i) row[i] += d * input[i];
    }
    if (dinput) {
      dinput->assign(s.in, 0.0);
      for (std::size_t o = 0; o < s.out; ++o) {
        const double d = dz[o];
        if (d == 0.0) continue;
        const double* row = theta + s.weight + o * s.in;
        for (std::size_t i = 0; i < s.in; ++i) (*dinput)[i] += d * row[i];
      }
    }
  };

  DenseVector dactivation;
  backprop_linear(params.layout.layers.back(), tape.last_input, delta,
                  spec.num_hidden() > 0 ? &dactivation : nullptr);
  for (std::size_t l = spec.num_hidden(); l-- > 0;) {
    const LayerSlots& s = params.layout.layers[l];
    const detail::LayerTape& t = tape.hidden[l];
    DenseVector dz(s.out);
    for (std::size_t o = 0; o < s.out; ++o) {
      double d = dactivation[o];
      if (!t.mask.empty()) d *= t.mask[o];
      dz[o] = t.pre_relu[o] > 0.0 ? d : 0.0;
    }
    if (s.norm_scale) {
      const std::size_t groups = spec.norm_groups;
      const std::size_t per = s.out / groups;
      const double* gamma = theta + *s.norm_scale;
      for (std::size_t c = 0; c < s.out; ++c) {
        grad[*s.norm_scale + c] += dz[c] * t.normalized[c];
        grad[*s.norm_shift + c] += dz[c];
      }
      const double n = static_cast<double>(per);
      for (std::size_t g = 0; g < groups; ++g) {
        double sum_d = 0.0;
        double sum_dx = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
          const std::size_t c = g * per + k;
          const double dxhat = dz[c] * gamma[c];
          sum_d += dxhat;
          sum_dx += dxhat * t.normalized[c];
        }
        for (std::size_t k = 0; k < per; ++k) {
          const std::size_t c = g * per + k;
          const double dxhat = dz[c] * gamma[c];
          dz[c] = t.inv_std[g] / n * (n * dxhat - sum_d - t.normalized[c] * sum_dx);
        }
      }
    }
    backprop_linear(s, t.input, dz, l > 0 ? &dactivation : nullptr);
  }
  if (!all_finite(out.grad)) throw Error(ErrorCode::kNonFiniteLoss, "non-finite gradient");
  return out;
}

inline int predict(const ModelParams& params, const MlpSpec& spec, std::span<const double> x) {
  const DenseVector logits = forward(params, spec, x);
  if (spec.head == OutputHead::kBinaryLogit) return logits[0] >= 0.0 ? 1 : 0;
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

struct EvalMetrics {
  double sum_loss = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
};

// Positive-class F1 for two classes, macro-F1 over classes otherwise. A class
// with no predicted and no actual members contributes F1 = 0.
inline double f1_score(std::span<const int> predicted, std::span<const int> actual,
                       std::size_t num_classes) {
  if (predicted.size() != actual.size()) throw Error(ErrorCode::kShapeMismatch, "f1_score");
  auto class_f1 = [&](int cls) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const bool p = predicted[i] == cls;
      const bool a = actual[i] == cls;
      tp += p && a;
      fp += p && !a;
      fn += !p && a;
    }
    const double denom = 2 * tp + fp + fn;
    return denom > 0 ? 2 * tp / denom : 0.0;
  };
  if (num_classes == 2) return class_f1(1);
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) total += class_f1(static_cast<int>(c));
  return total / static_cast<double>(num_classes);
}

// Sum-reduction loss, accuracy and F1 over the selected rows (all rows when
// `rows` is empty).
inline EvalMetrics evaluate(const ModelParams& params, const MlpSpec& spec, const LossSpec& loss,
                            const DenseMatrix& features, std::span<const int> labels,
                            std::span<const std::size_t> rows = {}) {
  const std::size_t n = rows.empty() ? features.rows : rows.size();
  if (n == 0) throw Error(ErrorCode::kEmptySplit, "evaluate");
  std::vector<int> predicted(n);
  std::vector<int> actual(n);
  EvalMetrics m;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t r = rows.empty() ? k : rows[k];
    const DenseVector logits = forward(params, spec, features.row(r));
    m.sum_loss += detail::LossAndGrad(loss, logits, labels[r], nullptr);
    predicted[k] = spec.head == OutputHead::kBinaryLogit
                       ? (logits[0] >= 0.0 ? 1 : 0)
                       : static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                                          logits.begin());
    actual[k] = labels[r];
    correct += predicted[k] == actual[k];
  }
  m.count = n;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  m.f1 = f1_score(predicted, actual, spec.num_classes());
  return m;
}

struct ModelPreset {
  std::string name;
  MlpSpec spec;
  LossSpec loss;
};

// Named architectures. `hidden` overrides the hidden widths (used for reduced
// width checks); group norm and dropout placement follow the preset.
inline ModelPreset make_preset(std::string_view name, std::size_t input_dim,
                               std::optional<std::vector<std::size_t>> hidden = std::nullopt) {
  ModelPreset p;
  p.name = std::string(name);
  if (name == "income-simple") {
    const auto h = hidden.value_or(std::vector<std::size_t>{256, 256});
    p.spec.widths = {input_dim};
    p.spec.widths.insert(p.spec.widths.end(), h.begin(), h.end());
    p.spec.widths.push_back(1);
    p.spec.group_norm.assign(h.size(), false);
    p.spec.dropout.assign(h.size(), 0.0);
    p.spec.head = OutputHead::kBinaryLogit;
    p.loss.kind = LossKind::kWeightedBinaryCrossEntropy;
    p.loss.positive_weight = 2.0;
  } else if (name == "income-complex" || name == "eicu-complex") {
    const auto h = hidden.value_or(std::vector<std::size_t>{128, 64, 32});
    p.spec.widths = {input_dim};
    p.spec.widths.insert(p.spec.widths.end(), h.begin(), h.end());
    p.spec.widths.push_back(2);
    p.spec.group_norm.assign(h.size(), false);
    p.spec.dropout.assign(h.size(), 0.0);
    for (std::size_t l = 0; l < h.size() && l < 2; ++l) p.spec.group_norm[l] = true;
    if (h.size() >= 3) p.spec.dropout[2] = 0.3;
    p.spec.norm_groups = 8;
    p.spec.head = OutputHead::kMultiClass;
    p.loss.kind = LossKind::kWeightedCrossEntropy;
    p.loss.class_weights = name == "income-complex" ? std::vector<double>{1.0, 2.0}
                                                     : std::vector<double>{0.5, 1.0};
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown model preset '" + std::string(name) + "'");
  }
  p.spec.Validate();
  p.loss.Validate(p.spec);
  return p;
}

}  // namespace fairclip
