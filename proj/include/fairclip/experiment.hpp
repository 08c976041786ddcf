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

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fairclip/analysis.hpp"
#include "fairclip/config.hpp"
#include "fairclip/data.hpp"
#include "fairclip/engine.hpp"

namespace fairclip {

struct RunOutput {
  std::uint64_t seed = 0;
  TrainResult result;
  EvalMetrics test;
  SubgroupReport subgroups;
  DisparityReport disparity;
  std::vector<SubgroupClipStat> clip_stats;
  std::string provenance;
};

// Loads the configured dataset for one run. Synthetic data is regenerated
// from data_seed + seed so each seed sees a fresh draw.
inline Dataset load_dataset(const DataConfig& c, std::uint64_t seed) {
  Dataset ds;
  if (c.source == "synthetic") {
    SyntheticSpec spec = c.synthetic;
    spec.seed = c.synthetic.seed + seed;
    ds = synth_generate(spec);
  } else if (c.source == "adult") {
    const ConsolidationMap map =
        c.consolidation_map.empty() ? ConsolidationMap{} : load_consolidation_map(c.consolidation_map);
    ds = load_adult(c.path, TabularSchema::Adult(), map, c.adult);
  } else if (c.source == "cache") {
    std::ifstream in(c.path, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open " + c.path);
    ds = read_dataset_cache(in);
  } else {
    throw Error(ErrorCode::kConfigError, "unknown data source '" + c.source + "'");
  }
  if (!c.balance_attribute.empty()) {
    ds = balance_by_group(ds, c.balance_attribute, StreamKey{seed, "balance", 0, 0});
  }
  return ds;
}

inline DatasetSplits prepare_splits(const ExperimentConfig& c, std::uint64_t seed) {
  const Dataset ds = load_dataset(c.data, seed);
  return split_and_normalize(ds, c.data.split, StreamKey{seed, "split", 0, 0}, c.data.normalize);
}

inline std::vector<std::string> disparity_attributes(const ExperimentConfig& c, const Dataset& ds) {
  if (!c.analysis.attributes.empty()) return c.analysis.attributes;
  std::vector<std::string> out;
  for (const auto& a : ds.attributes) {
    if (a.levels.size() == 2) out.push_back(a.name);
  }
  return out;
}

inline std::vector<GroupKey> all_groups(const Dataset& ds) {
  std::vector<GroupKey> out;
  for (const auto& a : ds.attributes) {
    for (const auto& l : a.levels) out.push_back({a.name, l});
  }
  return out;
}

inline RunOutput run_experiment(const ExperimentConfig& c, std::uint64_t seed) {
  const DatasetSplits splits = prepare_splits(c, seed);
  const ModelPreset preset = make_preset(c.preset, splits.train.features.cols, c.hidden);
  TrainConfig tc = c.train;
  tc.seed = seed;
  RunOutput out;
  out.seed = seed;
  out.provenance = splits.train.provenance;
  out.result = train(tc, splits.train, splits.validation, preset);
  const Dataset& eval = c.analysis.split == "train"        ? splits.train
                        : c.analysis.split == "validation" ? splits.validation
                                                           : splits.test;
  out.test = evaluate(out.result.params, preset.spec, preset.loss, eval.features, eval.labels);
  out.subgroups = subgroup_report(out.result.params, preset, eval, c.analysis.split, seed,
                                  c.analysis.reduction);
  const auto attrs = disparity_attributes(c, eval);
  if (!attrs.empty()) out.disparity = disparity(out.subgroups, attrs);
  if (!out.result.traces.empty() && tc.trace_gradients) {
    const auto groups = all_groups(splits.train);
    out.clip_stats = subgroup_clip_stats(out.result.traces, groups);
  }
  return out;
}

}  // namespace fairclip
