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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "fairclip/data.hpp"
#include "fairclip/error.hpp"
#include "fairclip/model.hpp"

namespace fairclip {

enum class Reduction { kSum, kMean };

struct SubgroupMetrics {
  std::string attribute;
  std::string level;
  double loss = 0.0;  // sum or mean, per SubgroupReport::reduction
  std::size_t count = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct SubgroupReport {
  std::string split;
  std::uint64_t seed = 0;
  Reduction reduction = Reduction::kSum;
  std::vector<SubgroupMetrics> groups;

  std::vector<const SubgroupMetrics*> For(const std::string& attribute) const {
    std::vector<const SubgroupMetrics*> out;
    for (const auto& g : groups) {
      if (g.attribute == attribute) out.push_back(&g);
    }
    return out;
  }
};

// Evaluates every level of every protected attribute of `data`.
inline SubgroupReport subgroup_report(const ModelParams& params, const ModelPreset& model,
                                      const Dataset& data, std::string split, std::uint64_t seed,
                                      Reduction reduction = Reduction::kSum) {
  SubgroupReport report{std::move(split), seed, reduction, {}};
  for (const auto& attr : data.attributes) {
    for (std::size_t l = 0; l < attr.levels.size(); ++l) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < attr.values.size(); ++i) {
        if (attr.values[i] == static_cast<int>(l)) rows.push_back(i);
      }
      SubgroupMetrics m{attr.name, attr.levels[l]};
      m.count = rows.size();
      if (!rows.empty()) {
        const EvalMetrics e = evaluate(params, model.spec, model.loss, data.features, data.labels, rows);
        m.loss = reduction == Reduction::kMean ? e.sum_loss / static_cast<double>(rows.size()) : e.sum_loss;
        m.accuracy = e.accuracy;
        m.f1 = e.f1;
      }
      report.groups.push_back(std::move(m));
    }
  }
  return report;
}

inline double loss_gap(double loss_a, double loss_b) { return std::abs(loss_a - loss_b); }

inline double loss_gap(const SubgroupReport& report, const std::string& attribute) {
  const auto groups = report.For(attribute);
  if (groups.size() != 2) {
    throw Error(ErrorCode::kNonBinaryAttribute,
                "'" + attribute + "' has " + std::to_string(groups.size()) + " groups");
  }
  return loss_gap(groups[0]->loss, groups[1]->loss);
}

inline double average_disparity(const std::map<std::string, double>& gaps) {
  if (gaps.empty()) throw Error(ErrorCode::kNoAttributes, "average_disparity");
  double total = 0.0;
  for (const auto& [name, gap] : gaps) total += gap;
  return total / static_cast<double>(gaps.size());
}

inline double reduction_pct(double baseline, double ours) {
  if (!(baseline > 0.0)) throw Error(ErrorCode::kInvalidBaseline, "baseline must be > 0");
  return (baseline - ours) / baseline * 100.0;
}

struct DisparityReport {
  std::map<std::string, double> gaps;
  double average = 0.0;
};

inline DisparityReport disparity(const SubgroupReport& report,
                                 std::span<const std::string> attributes) {
  DisparityReport out;
  for (const auto& a : attributes) out.gaps[a] = loss_gap(report, a);
  out.average = average_disparity(out.gaps);
  return out;
}

struct PairKey {
  std::uint64_t seed = 0;
  std::string dataset;
  std::string attribute;
  auto operator<=>(const PairKey&) const = default;
};

inline std::string to_string(const PairKey& k) {
  return k.dataset + "/" + k.attribute + "/seed" + std::to_string(k.seed);
}

struct PairedSample {
  PairKey key;
  double a = 0.0;
  double b = 0.0;
};

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;
  std::size_t n = 0;       // nonzero differences
  bool exact = true;
};

inline constexpr std::size_t kExactWilcoxonLimit = 25;

namespace detail {

// Mid-ranks of |d|, ascending.
inline std::vector<double> MidRanks(std::span<const double> abs_diffs) {
  const std::size_t n = abs_diffs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return abs_diffs[x] < abs_diffs[y]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && abs_diffs[order[j + 1]] == abs_diffs[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

inline double NormalCdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  std::vector<double> d;
  for (double x : differences) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFiniteInput, "wilcoxon difference");
    if (x != 0.0) d.push_back(x);
  }
  if (d.empty()) throw Error(ErrorCode::kDegeneratePairs, "all paired differences are zero");
  std::vector<double> abs_d(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) abs_d[i] = std::abs(d[i]);
  const std::vector<double> ranks = detail::MidRanks(abs_d);

  WilcoxonResult r;
  r.n = d.size();
  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? w_plus : w_minus) += ranks[i];
  r.statistic = std::min(w_plus, w_minus);

  if (r.n <= kExactWilcoxonLimit) {
    // Mid-ranks are multiples of 1/2, so doubled ranks are integers and the
    // null distribution of 2*W+ is a subset-sum count.
    std::vector<std::size_t> twice(r.n);
    std::size_t total = 0;
    for (std::size_t i = 0; i < r.n; ++i) {
      twice[i] = static_cast<std::size_t>(std::lround(2.0 * ranks[i]));
      total += twice[i];
    }
    std::vector<double> ways(total + 1, 0.0);
    ways[0] = 1.0;
    for (std::size_t t : twice) {
      for (std::size_t s = total; s >= t; --s) {
        ways[s] += ways[s - t];
        if (s == t) break;
      }
    }
    const auto stat2 = static_cast<std::size_t>(std::lround(2.0 * r.statistic));
    double tail = 0.0;
    for (std::size_t s = 0; s <= stat2; ++s) tail += ways[s];
    r.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(r.n)));
    return r;
  }

  r.exact = false;
  const double n = static_cast<double>(r.n);
  const double mean = n * (n + 1.0) / 4.0;
  double tie_term = 0.0;
  std::vector<double> sorted = abs_d;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (r.statistic - mean + 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, 2.0 * detail::NormalCdf(z));
  return r;
}

inline WilcoxonResult wilcoxon_signed_rank(std::span<const PairedSample> pairs) {
  std::vector<double> d(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) d[i] = pairs[i].a - pairs[i].b;
  return wilcoxon_signed_rank(std::span<const double>(d));
}

inline double bonferroni(double p, std::size_t m) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "p outside [0, 1]");
  if (m < 1) throw Error(ErrorCode::kInvalidArgument, "m must be >= 1");
  return std::min(1.0, p * static_cast<double>(m));
}

// Loss gaps of one method keyed by (seed, dataset, attribute).
using MethodGaps = std::map<PairKey, double>;

struct Comparison {
  std::string method_a;
  std::string method_b;
  std::size_t pairs = 0;
  std::optional<WilcoxonResult> test;  // empty: no difference
  double corrected_p = 1.0;
};

// Pairwise Wilcoxon tests over every method pair with Bonferroni correction
// across the number of pairs.
inline std::vector<Comparison> compare_methods(const std::map<std::string, MethodGaps>& methods) {
  if (methods.size() < 2) throw Error(ErrorCode::kInvalidArgument, "compare_methods needs >= 2 methods");
  const auto& reference = methods.begin()->second;
  std::vector<std::string> problems;
  for (const auto& [name, gaps] : methods) {
    for (const auto& [key, v] : reference) {
      if (!gaps.contains(key)) problems.push_back(name + " lacks " + to_string(key));
    }
    for (const auto& [key, v] : gaps) {
      if (!reference.contains(key)) problems.push_back(methods.begin()->first + " lacks " + to_string(key));
    }
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
    throw Error(ErrorCode::kUnpairedData, msg);
  }
  std::vector<Comparison> out;
  for (auto a = methods.begin(); a != methods.end(); ++a) {
    for (auto b = std::next(a); b != methods.end(); ++b) {
      Comparison c;
      c.method_a = a->first;
      c.method_b = b->first;
      std::vector<PairedSample> pairs;
      for (const auto& [key, va] : a->second) pairs.push_back({key, va, b->second.at(key)});
      c.pairs = pairs.size();
      try {
        c.test = wilcoxon_signed_rank(std::span<const PairedSample>(pairs));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDegeneratePairs) throw;
      }
      out.push_back(std::move(c));
    }
  }
  for (auto& c : out) {
    if (c.test) c.corrected_p = bonferroni(c.test->p_value, out.size());
  }
  return out;
}

}  // namespace fairclip
