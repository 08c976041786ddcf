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

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fairclip/engine.hpp"
#include "fairclip/error.hpp"
#include "fairclip/experiment.hpp"

namespace fairclip {

inline constexpr int kSchemaVersion = 1;

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Writes through a temporary sibling and renames it into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::Trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kIoError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const auto version = out.back().value("schema_version", 0);
    if (version != kSchemaVersion) {
      throw Error(ErrorCode::kIoError, path.string() + ": unsupported schema version " +
                                           std::to_string(version));
    }
  }
  return out;
}

namespace detail {

inline nlohmann::json Record(const char* type) {
  return nlohmann::json{{"schema_version", kSchemaVersion}, {"type", type}};
}

// JSON has no infinity; non-finite values are written as null.
inline nlohmann::json Number(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline double NumberOr(const nlohmann::json& j, const char* key, double fallback) {
  const auto it = j.find(key);
  return it == j.end() || it->is_null() ? fallback : it->get<double>();
}

}  // namespace detail

inline nlohmann::json step_record(const StepTrace& t) {
  auto j = detail::Record("step");
  j["step"] = t.step;
  j["batch_size"] = t.batch_size;
  j["bound_before"] = t.bound_before;
  j["bound_after"] = t.bound_after;
  j["noise_stddev"] = t.noise_stddev;
  j["unclipped_fraction"] = t.unclipped_fraction ? nlohmann::json(*t.unclipped_fraction) : nlohmann::json(nullptr);
  j["unclipped_count"] = t.unclipped_count;
  j["noised_grad_norm"] = t.noised_grad_norm;
  j["batch_loss"] = t.batch_loss;
  auto groups = nlohmann::json::array();
  for (const auto& g : t.groups) {
    groups.push_back({{"attribute", g.attribute}, {"level", g.level}, {"count", g.count},
                      {"pre", g.pre_clip_norm}, {"post", g.post_clip_norm}});
  }
  j["groups"] = std::move(groups);
  return j;
}

inline StepTrace step_from_record(const nlohmann::json& j) {
  StepTrace t;
  t.step = j.at("step").get<std::uint64_t>();
  t.batch_size = j.at("batch_size").get<std::size_t>();
  t.bound_before = j.at("bound_before").get<double>();
  t.bound_after = j.at("bound_after").get<double>();
  t.noise_stddev = j.at("noise_stddev").get<double>();
  if (!j.at("unclipped_fraction").is_null()) t.unclipped_fraction = j["unclipped_fraction"].get<double>();
  t.unclipped_count = j.value("unclipped_count", std::size_t{0});
  t.noised_grad_norm = j.at("noised_grad_norm").get<double>();
  t.batch_loss = j.at("batch_loss").get<double>();
  for (const auto& g : j.at("groups")) {
    t.groups.push_back({g.at("attribute").get<std::string>(), g.at("level").get<std::string>(),
                        g.at("count").get<std::size_t>(), g.at("pre").get<double>(),
                        g.at("post").get<double>()});
  }
  return t;
}

// Full JSONL log of one run: header, epochs, steps, evaluation, disparity.
inline std::string run_jsonl(const ExperimentConfig& c, const RunOutput& run) {
  std::ostringstream o;
  auto emit = [&](const nlohmann::json& j) { o << j.dump() << "\n"; };
  const TrainResult& r = run.result;
  auto head = detail::Record("run");
  head["method"] = c.name;
  head["dataset"] = c.dataset;
  head["seed"] = run.seed;
  head["strategy"] = std::string(ClipStrategyName(c.train.strategy));
  head["initial_bound"] = c.train.initial_bound;
  head["noise_multiplier"] = r.noise_multiplier;
  head["fraction_noise"] = r.fraction_noise;
  head["epsilon"] = detail::Number(r.epsilon);
  head["epsilon_order"] = r.epsilon_order;
  head["delta"] = r.delta;
  head["steps"] = r.steps;
  head["compositions"] = r.compositions;
  head["best_epoch"] = r.best_epoch;
  head["stopped_epoch"] = r.stopped_epoch;
  head["stopped_early"] = r.stopped_early;
  head["provenance"] = run.provenance;
  head["tool_defaults"] = {{"bound_lr", c.train.bound_lr},
                           {"fraction_noise", r.fraction_noise},
                           {"patience", c.train.patience ? nlohmann::json(*c.train.patience) : nlohmann::json(nullptr)}};
  emit(head);
  for (const auto& e : r.epochs) {
    auto j = detail::Record("epoch");
    j["epoch"] = e.epoch;
    j["steps"] = e.steps;
    j["train_loss"] = e.train.sum_loss;
    j["train_accuracy"] = e.train.accuracy;
    j["train_f1"] = e.train.f1;
    j["validation_loss"] = e.validation.sum_loss;
    j["validation_accuracy"] = e.validation.accuracy;
    j["validation_f1"] = e.validation.f1;
    j["bound"] = e.bound;
    emit(j);
  }
  for (const auto& t : r.traces) emit(step_record(t));
  auto test = detail::Record("evaluation");
  test["split"] = c.analysis.split;
  test["loss"] = run.test.sum_loss;
  test["accuracy"] = run.test.accuracy;
  test["f1"] = run.test.f1;
  test["count"] = run.test.count;
  emit(test);
  for (const auto& g : run.subgroups.groups) {
    auto j = detail::Record("subgroup");
    j["split"] = run.subgroups.split;
    j["reduction"] = run.subgroups.reduction == Reduction::kSum ? "sum" : "mean";
    j["attribute"] = g.attribute;
    j["level"] = g.level;
    j["loss"] = g.loss;
    j["count"] = g.count;
    j["accuracy"] = g.accuracy;
    j["f1"] = g.f1;
    emit(j);
  }
  for (const auto& [attr, gap] : run.disparity.gaps) {
    auto j = detail::Record("disparity");
    j["method"] = c.name;
    j["dataset"] = c.dataset;
    j["seed"] = run.seed;
    j["attribute"] = attr;
    j["gap"] = gap;
    emit(j);
  }
  return o.str();
}

}  // namespace fairclip
