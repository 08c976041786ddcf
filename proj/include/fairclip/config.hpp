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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fairclip/analysis.hpp"
#include "fairclip/data.hpp"
#include "fairclip/engine.hpp"
#include "fairclip/error.hpp"

namespace fairclip {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | adult | cache
  std::string path;
  std::string consolidation_map;
  SyntheticSpec synthetic;           // seed is offset by the run seed
  AdultOptions adult;
  std::string balance_attribute;     // empty: no balancing
  SplitFractions split;
  bool normalize = true;
};

struct AnalysisConfig {
  std::vector<std::string> attributes;  // empty: every protected attribute
  Reduction reduction = Reduction::kSum;
  std::string split = "test";
};

struct ExperimentConfig {
  std::string name = "experiment";  // method label in reports
  std::string dataset = "dataset";  // pairing key across methods
  DataConfig data;
  std::string preset = "income-simple";
  std::optional<std::vector<std::size_t>> hidden;
  TrainConfig train;
  bool has_privacy_section = false;
  AnalysisConfig analysis;
};

namespace detail {

inline std::string FormatDouble(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string JoinList(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

inline std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, ',')) {
    cur = Trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

// Typed access to one INI section; every key read is marked so leftovers can
// be reported as unknown.
class SectionReader {
 public:
  SectionReader(const boost::property_tree::ptree* tree, std::string name)
      : tree_(tree), name_(std::move(name)) {}

  bool present() const { return tree_ != nullptr; }

  std::optional<std::string> Raw(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    const auto child = tree_->get_child_optional(key);
    if (!child) return std::nullopt;
    return Trim(child->data());
  }

  void Read(const std::string& key, std::string& out) {
    if (auto v = Raw(key)) out = *v;
  }
  void Read(const std::string& key, double& out) {
    if (auto v = Raw(key)) out = ParseDouble(key, *v);
  }
  void Read(const std::string& key, bool& out) {
    if (auto v = Raw(key)) {
      if (*v == "true" || *v == "1" || *v == "yes") {
        out = true;
      } else if (*v == "false" || *v == "0" || *v == "no") {
        out = false;
      } else {
        Fail(key, "expected a boolean, got '" + *v + "'");
      }
    }
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void Read(const std::string& key, Int& out) {
    if (auto v = Raw(key)) out = ParseInt<Int>(key, *v);
  }
  void Read(const std::string& key, std::optional<double>& out) {
    if (auto v = Raw(key)) out = *v == "none" ? std::nullopt : std::optional(ParseDouble(key, *v));
  }
  void Read(const std::string& key, std::optional<std::uint64_t>& out) {
    if (auto v = Raw(key)) {
      out = *v == "none" ? std::nullopt : std::optional(ParseInt<std::uint64_t>(key, *v));
    }
  }

  double ParseDouble(const std::string& key, const std::string& text) const {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
      Fail(key, "expected a number, got '" + text + "'");
    }
    return v;
  }

  template <typename Int>
  Int ParseInt(const std::string& key, const std::string& text) const {
    Int v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
      Fail(key, "expected an integer, got '" + text + "'");
    }
    return v;
  }

  [[noreturn]] void Fail(const std::string& key, const std::string& msg) const {
    throw Error(ErrorCode::kConfigError, "[" + name_ + "] " + key + ": " + msg);
  }

  void RejectUnknown() const {
    if (!tree_) return;
    for (const auto& [key, value] : *tree_) {
      if (!used_.contains(key)) {
        throw Error(ErrorCode::kConfigError, "[" + name_ + "] unknown key '" + key + "'");
      }
    }
  }

 private:
  const boost::property_tree::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

inline OptimizerKind ParseOptimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw Error(ErrorCode::kConfigError, "unknown optimizer '" + s + "'");
}

inline std::string OptimizerName(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

}  // namespace detail

inline std::vector<int> parse_orders(const std::string& text) {
  std::vector<int> orders;
  for (const auto& item : detail::SplitList(text)) {
    int v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size() || v < 2) {
      throw Error(ErrorCode::kConfigError, "invalid order '" + item + "'");
    }
    orders.push_back(v);
  }
  if (orders.empty()) throw Error(ErrorCode::kConfigError, "empty order list");
  return orders;
}

inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
  static const std::set<std::string> kSections = {"experiment", "data", "model", "privacy",
                                                  "clip",       "train", "analysis"};
  for (const auto& [name, section] : tree) {
    if (!kSections.contains(name)) throw Error(ErrorCode::kConfigError, "unknown section [" + name + "]");
    if (!section.data().empty()) throw Error(ErrorCode::kConfigError, "key outside a section: " + name);
  }
  auto section = [&](const char* name) {
    const auto child = tree.get_child_optional(name);
    return detail::SectionReader(child ? &*child : nullptr, name);
  };

  ExperimentConfig c;
  auto ex = section("experiment");
  ex.Read("name", c.name);
  ex.Read("dataset", c.dataset);

  auto d = section("data");
  d.Read("source", c.data.source);
  if (c.data.source != "synthetic" && c.data.source != "adult" && c.data.source != "cache") {
    d.Fail("source", "expected synthetic, adult or cache");
  }
  d.Read("path", c.data.path);
  d.Read("consolidation_map", c.data.consolidation_map);
  auto& s = c.data.synthetic;
  d.Read("n", s.n);
  d.Read("dim", s.dim);
  d.Read("minority_fraction", s.minority_fraction);
  d.Read("shift", s.shift);
  d.Read("majority_noise", s.majority_noise);
  d.Read("minority_noise", s.minority_noise);
  d.Read("class_balance", s.class_balance);
  d.Read("feature_scale", s.feature_scale);
  d.Read("signal", s.signal);
  d.Read("data_seed", s.seed);
  d.Read("drop_duplicates", c.data.adult.drop_duplicates);
  d.Read("outlier_quantile", c.data.adult.outlier_quantile);
  d.Read("exclude_protected", c.data.adult.exclude_protected);
  d.Read("balance_attribute", c.data.balance_attribute);
  d.Read("train_fraction", c.data.split.train);
  d.Read("validation_fraction", c.data.split.validation);
  d.Read("test_fraction", c.data.split.test);
  d.Read("normalize", c.data.normalize);

  auto m = section("model");
  m.Read("preset", c.preset);
  if (auto h = m.Raw("hidden")) {
    std::vector<std::size_t> widths;
    for (const auto& item : detail::SplitList(*h)) widths.push_back(m.ParseInt<std::size_t>("hidden", item));
    if (widths.empty()) m.Fail("hidden", "empty width list");
    c.hidden = widths;
  }

  TrainConfig& t = c.train;
  auto p = section("privacy");
  c.has_privacy_section = p.present();
  std::optional<double> epsilon;
  p.Read("epsilon", epsilon);
  p.Read("delta", t.delta);
  if (epsilon) t.privacy_target = PrivacyParams{*epsilon, t.delta};
  p.Read("noise_multiplier", t.noise_multiplier);
  p.Read("account_threshold_release", t.account_threshold_release);
  if (auto o = p.Raw("orders")) t.orders = parse_orders(*o);

  auto k = section("clip");
  if (auto v = k.Raw("strategy")) {
    try {
      t.strategy = ParseClipStrategy(*v);
    } catch (const Error& e) {
      k.Fail("strategy", e.what());
    }
  }
  k.Read("initial_bound", t.initial_bound);
  k.Read("quantile", t.quantile);
  k.Read("bound_lr", t.bound_lr);
  k.Read("fraction_noise", t.fraction_noise);
  k.Read("divisor_epsilon", t.divisor_epsilon);
  k.Read("clamp_fraction", t.clamp_fraction);

  auto r = section("train");
  r.Read("epochs", t.epochs);
  r.Read("max_steps", t.max_steps);
  r.Read("sampling_rate", t.sampling_rate);
  r.Read("learning_rate", t.learning_rate);
  if (auto v = r.Raw("optimizer")) t.optimizer = detail::ParseOptimizer(*v);
  r.Read("beta1", t.beta1);
  r.Read("beta2", t.beta2);
  r.Read("adam_epsilon", t.adam_epsilon);
  r.Read("seed", t.seed);
  r.Read("patience", t.patience);
  r.Read("expected_batch_average", t.expected_batch_average);
  r.Read("threads", t.threads);
  r.Read("trace_gradients", t.trace_gradients);

  auto a = section("analysis");
  if (auto v = a.Raw("attributes")) c.analysis.attributes = detail::SplitList(*v);
  if (auto v = a.Raw("reduction")) {
    if (*v == "sum") {
      c.analysis.reduction = Reduction::kSum;
    } else if (*v == "mean") {
      c.analysis.reduction = Reduction::kMean;
    } else {
      a.Fail("reduction", "expected sum or mean");
    }
  }
  a.Read("split", c.analysis.split);
  if (c.analysis.split != "train" && c.analysis.split != "validation" && c.analysis.split != "test") {
    a.Fail("split", "expected train, validation or test");
  }

  for (const auto* sec : {&ex, &d, &m, &p, &k, &r, &a}) sec->RejectUnknown();
  try {
    t.Validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot open config " + path);
  return parse_config(in);
}

// Canonical INI text. Doubles use the shortest round-trip representation, so
// parse_config(write_config(c)) reproduces c exactly.
inline std::string write_config(const ExperimentConfig& c) {
  using detail::FormatDouble;
  std::ostringstream o;
  const auto& s = c.data.synthetic;
  const auto& t = c.train;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[experiment]\nname = " << c.name << "\ndataset = " << c.dataset << "\n\n";
  o << "[data]\nsource = " << c.data.source << "\n";
  if (!c.data.path.empty()) o << "path = " << c.data.path << "\n";
  if (!c.data.consolidation_map.empty()) o << "consolidation_map = " << c.data.consolidation_map << "\n";
  o << "n = " << s.n << "\ndim = " << s.dim << "\nminority_fraction = " << FormatDouble(s.minority_fraction)
    << "\nshift = " << FormatDouble(s.shift) << "\nmajority_noise = " << FormatDouble(s.majority_noise)
    << "\nminority_noise = " << FormatDouble(s.minority_noise)
    << "\nclass_balance = " << FormatDouble(s.class_balance)
    << "\nfeature_scale = " << FormatDouble(s.feature_scale) << "\nsignal = " << FormatDouble(s.signal)
    << "\ndata_seed = " << s.seed << "\ndrop_duplicates = " << b(c.data.adult.drop_duplicates)
    << "\noutlier_quantile = " << FormatDouble(c.data.adult.outlier_quantile)
    << "\nexclude_protected = " << b(c.data.adult.exclude_protected) << "\n";
  if (!c.data.balance_attribute.empty()) o << "balance_attribute = " << c.data.balance_attribute << "\n";
  o << "train_fraction = " << FormatDouble(c.data.split.train)
    << "\nvalidation_fraction = " << FormatDouble(c.data.split.validation)
    << "\ntest_fraction = " << FormatDouble(c.data.split.test) << "\nnormalize = " << b(c.data.normalize)
    << "\n\n";
  o << "[model]\npreset = " << c.preset << "\n";
  if (c.hidden) o << "hidden = " << detail::JoinList(*c.hidden) << "\n";
  o << "\n";
  if (c.has_privacy_section || t.privacy_target) {
    o << "[privacy]\n";
    if (t.privacy_target) o << "epsilon = " << FormatDouble(t.privacy_target->epsilon) << "\n";
    o << "delta = " << FormatDouble(t.privacy_target ? t.privacy_target->delta : t.delta) << "\n";
    o << "noise_multiplier = " << FormatDouble(t.noise_multiplier) << "\n";
    o << "account_threshold_release = " << b(t.account_threshold_release) << "\n";
    o << "orders = " << detail::JoinList(t.orders) << "\n\n";
  }
  o << "[clip]\nstrategy = " << ClipStrategyName(t.strategy)
    << "\ninitial_bound = " << FormatDouble(t.initial_bound) << "\nquantile = " << FormatDouble(t.quantile)
    << "\nbound_lr = " << FormatDouble(t.bound_lr) << "\n";
  if (t.fraction_noise) o << "fraction_noise = " << FormatDouble(*t.fraction_noise) << "\n";
  o << "divisor_epsilon = " << FormatDouble(t.divisor_epsilon)
    << "\nclamp_fraction = " << b(t.clamp_fraction) << "\n\n";
  o << "[train]\nepochs = " << t.epochs << "\n";
  if (t.max_steps) o << "max_steps = " << *t.max_steps << "\n";
  o << "sampling_rate = " << FormatDouble(t.sampling_rate)
    << "\nlearning_rate = " << FormatDouble(t.learning_rate)
    << "\noptimizer = " << detail::OptimizerName(t.optimizer) << "\nbeta1 = " << FormatDouble(t.beta1)
    << "\nbeta2 = " << FormatDouble(t.beta2) << "\nadam_epsilon = " << FormatDouble(t.adam_epsilon)
    << "\nseed = " << t.seed << "\npatience = " << (t.patience ? std::to_string(*t.patience) : "none")
    << "\nexpected_batch_average = " << b(t.expected_batch_average) << "\nthreads = " << t.threads
    << "\ntrace_gradients = " << b(t.trace_gradients) << "\n\n";
  o << "[analysis]\n";
  if (!c.analysis.attributes.empty()) o << "attributes = " << detail::JoinList(c.analysis.attributes) << "\n";
  o << "reduction = " << (c.analysis.reduction == Reduction::kSum ? "sum" : "mean")
    << "\nsplit = " << c.analysis.split << "\n";
  return o.str();
}

}  // namespace fairclip
