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

// Command-line experiment runner: calibrate, train, sweep, analyze, gradstats.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "fairclip/analysis.hpp"
#include "fairclip/config.hpp"
#include "fairclip/engine.hpp"
#include "fairclip/experiment.hpp"
#include "fairclip/io.hpp"
#include "fairclip/privacy.hpp"

namespace fs = std::filesystem;
using fairclip::Error;
using fairclip::ErrorCode;
using fairclip::csv_field;
using fairclip::csv_number;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kGeneric = 1,
  kConfig = 2,
  kCalibration = 3,
  kTraining = 4,
  kPairing = 5,
  kMissingTraces = 6,
};

int ExitFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidBound:
      return kConfig;
    case ErrorCode::kCalibrationOutOfRange:
      return kCalibration;
    case ErrorCode::kDivergedStep:
    case ErrorCode::kNonFiniteLoss:
      return kTraining;
    case ErrorCode::kUnpairedData:
      return kPairing;
    default:
      return kGeneric;
  }
}

struct Options {
  std::string config;
  std::uint64_t seeds = 1;
  std::optional<std::uint64_t> base_seed;
  std::string out;
  std::string orders;
  std::optional<std::size_t> threads;
  bool mean_reduction = false;
  std::vector<std::string> inputs;
};

fairclip::ExperimentConfig LoadConfig(const Options& o) {
  if (o.config.empty()) throw Error(ErrorCode::kConfigError, "--config is required");
  auto c = fairclip::load_config(o.config);
  if (!o.orders.empty()) c.train.orders = fairclip::parse_orders(o.orders);
  if (o.threads) {
    if (*o.threads < 1) throw Error(ErrorCode::kConfigError, "--threads must be >= 1");
    c.train.threads = *o.threads;
  }
  return c;
}

fs::path OutputDir(const Options& o, const std::string& name) {
  if (!o.out.empty()) return o.out;
  const char* root = std::getenv("FAIRCLIP_OUT_DIR");
  return fs::path(root && *root ? root : "fairclip-out") / name;
}

struct Stat {
  double mean = 0.0;
  std::optional<double> sem;
  std::size_t n = 0;
};

Stat Summarize(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sem = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return s;
}

std::string StatRow(const Stat& s) {
  return csv_number(s.mean) + "," + (s.sem ? csv_number(*s.sem) : "") + "," + std::to_string(s.n);
}

// ---------------------------------------------------------------- calibrate

int CmdCalibrate(const Options& o) {
  auto c = LoadConfig(o);
  if (!c.has_privacy_section || !c.train.privacy_target) {
    std::cerr << "calibrate: the config needs a [privacy] section with epsilon and delta\n";
    return kConfig;
  }
  const auto splits = fairclip::prepare_splits(c, o.base_seed.value_or(c.train.seed));
  const double sigma = fairclip::resolve_noise_multiplier(c.train, splits.train.size());
  const auto& t = c.train;
  auto state = fairclip::AccountantState::WithOrders(t.orders);
  state = fairclip::compose(state, {t.sampling_rate, sigma, t.total_steps()});
  const bool adaptive = fairclip::IsAdaptive(t.strategy) && t.account_threshold_release;
  const double sigma_b = t.resolved_fraction_noise(splits.train.size());
  if (adaptive) state = fairclip::compose(state, {t.sampling_rate, sigma_b, t.total_steps()});
  const auto best = fairclip::to_epsilon(state, t.privacy_target->delta);

  std::cout << "noise_multiplier " << csv_number(sigma) << "\n";
  std::cout << "steps " << t.total_steps() << " sampling_rate " << csv_number(t.sampling_rate) << "\n";
  if (adaptive) std::cout << "fraction_noise " << csv_number(sigma_b) << "\n";
  std::cout << "epsilon " << csv_number(best.epsilon) << " at order " << best.order << "\n";
  std::ostringstream curve;
  curve << "order,rdp,epsilon\n";
  for (std::size_t i = 0; i < state.orders.size(); ++i) {
    const double a = state.orders[i];
    const double eps = state.rdp[i] + std::log(1.0 / t.privacy_target->delta) / (a - 1.0);
    curve << state.orders[i] << "," << csv_number(state.rdp[i]) << "," << csv_number(eps) << "\n";
  }
  std::cout << curve.str();

  const fs::path dir = OutputDir(o, c.name);
  c.train.noise_multiplier = sigma;
  fairclip::atomic_write(dir / "calibrated.ini", fairclip::write_config(c));
  fairclip::atomic_write(dir / "epsilon_curve.csv", curve.str());
  std::cout << "wrote " << (dir / "calibrated.ini").string() << "\n";
  return kOk;
}

// ------------------------------------------------------------ train / sweep

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<fairclip::RunOutput> run;
  std::string error;
  double seconds = 0.0;
  std::string file;
};

void WriteSummaries(const fs::path& dir, const fairclip::ExperimentConfig& c,
                    const std::vector<SeedOutcome>& runs) {
  std::map<std::string, std::vector<double>> metrics;
  std::vector<std::string> order;
  auto add = [&](const std::string& key, double v) {
    if (!metrics.contains(key)) order.push_back(key);
    metrics[key].push_back(v);
  };
  std::size_t failed = 0;
  for (const auto& s : runs) {
    if (!s.run) {
      ++failed;
      continue;
    }
    const auto& r = *s.run;
    add("test_loss", r.test.sum_loss);
    add("test_accuracy", r.test.accuracy);
    add("test_f1", r.test.f1);
    for (const auto& [attr, gap] : r.disparity.gaps) add("gap." + attr, gap);
    if (!r.disparity.gaps.empty()) add("average_disparity", r.disparity.average);
    for (const auto& g : r.subgroups.groups) add("loss." + g.attribute + "." + g.level, g.loss);
    add("epsilon", r.result.epsilon);
    add("noise_multiplier", r.result.noise_multiplier);
    add("final_bound", r.result.traces.empty() ? c.train.initial_bound : r.result.traces.back().bound_after);
    add("steps", static_cast<double>(r.result.steps));
    add("best_epoch", static_cast<double>(r.result.best_epoch));
    for (const auto& st : r.clip_stats) {
      if (st.missing) continue;
      const std::string base = "clip." + st.attribute + "." + st.level;
      add(base + ".before", st.mean_pre);
      add(base + ".after", st.mean_post);
      add(base + ".diff", st.diff);
    }
  }

  std::ostringstream summary;
  summary << "metric,mean,sem,n\n";
  for (const auto& key : order) summary << csv_field(key) << "," << StatRow(Summarize(metrics[key])) << "\n";
  summary << "failed_runs," << failed << ",,\n";
  // Hyperparameters the method leaves unspecified; these are tool defaults.
  summary << "setting.bound_lr," << csv_number(c.train.bound_lr) << ",,\n";
  summary << "setting.quantile," << csv_number(c.train.quantile) << ",,\n";
  summary << "setting.patience," << (c.train.patience ? std::to_string(*c.train.patience) : "inf") << ",,\n";
  for (const auto& s : runs) {
    if (s.run) {
      summary << "setting.fraction_noise," << csv_number(s.run->result.fraction_noise) << ",,\n";
      break;
    }
  }
  fairclip::atomic_write(dir / "summary.csv", summary.str());

  std::ostringstream table;
  table << "seed,status,epsilon,test_loss,average_disparity,file,error\n";
  for (const auto& s : runs) {
    table << s.seed << "," << (s.run ? "ok" : "failed") << ",";
    if (s.run) {
      table << csv_number(s.run->result.epsilon) << "," << csv_number(s.run->test.sum_loss) << ","
            << csv_number(s.run->disparity.average) << "," << csv_field(s.file) << ",\n";
    } else {
      table << ",,,," << csv_field(s.error) << "\n";
    }
  }
  fairclip::atomic_write(dir / "runs.csv", table.str());

  // Per-epoch curves.
  std::map<std::uint64_t, std::array<std::vector<double>, 4>> curves;
  std::map<std::uint64_t, std::vector<double>> bounds;
  for (const auto& s : runs) {
    if (!s.run) continue;
    for (const auto& e : s.run->result.epochs) {
      auto& row = curves[e.epoch];
      row[0].push_back(e.train.sum_loss);
      row[1].push_back(e.validation.sum_loss);
      row[2].push_back(e.validation.f1);
      row[3].push_back(e.bound);
    }
    for (const auto& t : s.run->result.traces) bounds[t.step].push_back(t.bound_before);
  }
  std::ostringstream cv;
  cv << "epoch,train_loss,train_loss_sem,validation_loss,validation_loss_sem,validation_f1,"
        "validation_f1_sem,bound,bound_sem,n\n";
  for (const auto& [epoch, row] : curves) {
    cv << epoch;
    for (const auto& v : row) {
      const Stat st = Summarize(v);
      cv << "," << csv_number(st.mean) << "," << (st.sem ? csv_number(*st.sem) : "");
    }
    cv << "," << row[0].size() << "\n";
  }
  fairclip::atomic_write(dir / "curves.csv", cv.str());

  std::ostringstream bv;
  bv << "step,bound,bound_sem,n\n";
  for (const auto& [step, v] : bounds) bv << step << "," << StatRow(Summarize(v)) << "\n";
  fairclip::atomic_write(dir / "bounds.csv", bv.str());

  std::ostringstream sg;
  sg << "method,attribute,level,loss,loss_sem,n\n";
  std::ostringstream gp;
  gp << "method,dataset,initial_bound,attribute,gap,gap_sem,n\n";
  for (const auto& key : order) {
    if (key.rfind("loss.", 0) == 0) {
      const auto rest = key.substr(5);
      const auto dot = rest.find('.');
      sg << csv_field(c.name) << "," << csv_field(rest.substr(0, dot)) << ","
         << csv_field(rest.substr(dot + 1)) << "," << StatRow(Summarize(metrics[key])) << "\n";
    }
    if (key.rfind("gap.", 0) == 0 || key == "average_disparity") {
      gp << csv_field(c.name) << "," << csv_field(c.dataset) << "," << csv_number(c.train.initial_bound)
         << "," << (key == "average_disparity" ? "average" : csv_field(key.substr(4))) << ","
         << StatRow(Summarize(metrics[key])) << "\n";
    }
  }
  fairclip::atomic_write(dir / "subgroup_losses.csv", sg.str());
  fairclip::atomic_write(dir / "gaps.csv", gp.str());
}

int RunSeeds(const Options& o, std::uint64_t count) {
  const auto c = LoadConfig(o);
  if (count < 1) throw Error(ErrorCode::kConfigError, "--seeds must be >= 1");
  const std::uint64_t base = o.base_seed.value_or(c.train.seed);
  const fs::path dir = OutputDir(o, c.name);
  fs::create_directories(dir);
  const auto started = std::chrono::system_clock::now();

  std::vector<SeedOutcome> runs;
  for (std::uint64_t k = 0; k < count; ++k) {
    SeedOutcome s;
    s.seed = base + k;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      s.run = fairclip::run_experiment(c, s.seed);
      s.file = "run-seed" + std::to_string(s.seed) + ".jsonl";
      fairclip::atomic_write(dir / s.file, fairclip::run_jsonl(c, *s.run));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kCalibrationOutOfRange || e.code() == ErrorCode::kConfigError) throw;
      s.error = e.what();
      std::cerr << "seed " << s.seed << " failed: " << e.what() << "\n";
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s.run) {
      std::cout << "seed " << s.seed << ": epsilon " << csv_number(s.run->result.epsilon) << ", test loss "
                << csv_number(s.run->test.sum_loss) << ", average disparity "
                << csv_number(s.run->disparity.average) << " (" << csv_number(s.seconds) << " s)\n";
    }
    runs.push_back(std::move(s));
  }
  WriteSummaries(dir, c, runs);

  nlohmann::json manifest;
  manifest["schema_version"] = fairclip::kSchemaVersion;
  manifest["tool_version"] = kVersion;
  manifest["config"] = fairclip::write_config(c);
  manifest["config_path"] = o.config;
  manifest["started_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(started.time_since_epoch()).count();
  manifest["seeds"] = nlohmann::json::array();
  manifest["runs"] = nlohmann::json::array();
  std::size_t failed = 0;
  for (const auto& s : runs) {
    manifest["seeds"].push_back(s.seed);
    nlohmann::json r{{"seed", s.seed}, {"seconds", s.seconds}, {"status", s.run ? "ok" : "failed"}};
    if (s.run) {
      r["file"] = s.file;
      r["provenance"] = s.run->provenance;
    } else {
      r["error"] = s.error;
      ++failed;
    }
    manifest["runs"].push_back(r);
  }
  manifest["outputs"] = {"summary.csv", "runs.csv", "curves.csv", "bounds.csv", "subgroup_losses.csv",
                         "gaps.csv"};
  fairclip::atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << dir.string() << "\n";
  return failed == runs.size() ? kTraining : kOk;
}

// ------------------------------------------------------------------ analyze

struct Observations {
  // method -> (seed, dataset, attribute) -> gap
  std::map<std::string, fairclip::MethodGaps> gaps;
};

void AddGap(Observations& obs, const std::string& method, const fairclip::PairKey& key, double gap) {
  auto& m = obs.gaps[method];
  if (m.contains(key)) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate observation " + method + " " + to_string(key));
  }
  m[key] = gap;
}

// Reads a result directory written by train/sweep.
void ReadResultDir(const fs::path& dir, bool mean_reduction, Observations& obs) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("run-", 0) == 0 && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::kIoError, "no run logs in " + dir.string());
  for (const auto& f : files) {
    std::string method, dataset;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<std::pair<double, std::size_t>>> losses;
    std::map<std::string, bool> sum_losses;
    for (const auto& j : fairclip::read_jsonl(f)) {
      const auto type = j.at("type").get<std::string>();
      if (type == "run") {
        method = j.at("method").get<std::string>();
        dataset = j.at("dataset").get<std::string>();
        seed = j.at("seed").get<std::uint64_t>();
      } else if (type == "subgroup") {
        const auto attr = j.at("attribute").get<std::string>();
        losses[attr].push_back({j.at("loss").get<double>(), j.at("count").get<std::size_t>()});
        sum_losses[attr] = j.at("reduction").get<std::string>() == "sum";
      }
    }
    for (const auto& [attr, groups] : losses) {
      if (groups.size() != 2) continue;
      auto value = [&](const std::pair<double, std::size_t>& g) {
        if (mean_reduction && sum_losses[attr]) return g.second ? g.first / static_cast<double>(g.second) : 0.0;
        return g.first;
      };
      AddGap(obs, method, {seed, dataset, attr}, fairclip::loss_gap(value(groups[0]), value(groups[1])));
    }
  }
}

// Reads a prepared CSV with either per-subgroup losses
// (dataset,method,seed,attribute,level,loss[,count]) or precomputed gaps
// (dataset,method,seed,attribute,gap).
void ReadFixture(const fs::path& path, bool mean_reduction, Observations& obs) {
  const auto table = fairclip::read_csv(path.string());
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < table.header.size(); ++i) col[table.header[i]] = i;
  for (const char* need : {"dataset", "method", "seed", "attribute"}) {
    if (!col.contains(need)) throw Error(ErrorCode::kMalformedCsv, path.string() + " lacks column " + need);
  }
  const bool gap_format = col.contains("gap");
  if (!gap_format && !(col.contains("level") && col.contains("loss"))) {
    throw Error(ErrorCode::kMalformedCsv, path.string() + " needs a gap column or level and loss columns");
  }
  if (gap_format && mean_reduction) {
    std::cerr << "note: " << path.string() << " holds precomputed gaps; --mean-reduction ignored\n";
  }
  std::map<std::tuple<std::string, fairclip::PairKey>, std::vector<double>> losses;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    fairclip::PairKey key{std::stoull(row[col["seed"]]), row[col["dataset"]], row[col["attribute"]]};
    const auto& method = row[col["method"]];
    if (gap_format) {
      AddGap(obs, method, key, std::stod(row[col["gap"]]));
    } else {
      double loss = std::stod(row[col["loss"]]);
      if (mean_reduction && col.contains("count")) loss /= std::stod(row[col["count"]]);
      losses[{method, key}].push_back(loss);
    }
  }
  for (const auto& [mk, v] : losses) {
    if (v.size() != 2) {
      throw Error(ErrorCode::kNonBinaryAttribute,
                  std::get<1>(mk).attribute + " has " + std::to_string(v.size()) + " groups");
    }
    AddGap(obs, std::get<0>(mk), std::get<1>(mk), fairclip::loss_gap(v[0], v[1]));
  }
}

int CmdAnalyze(const Options& o) {
  if (o.inputs.empty()) throw Error(ErrorCode::kConfigError, "analyze needs result dirs or fixture CSVs");
  Observations obs;
  for (const auto& in : o.inputs) {
    if (fs::is_directory(in)) {
      ReadResultDir(in, o.mean_reduction, obs);
    } else {
      ReadFixture(in, o.mean_reduction, obs);
    }
  }
  if (obs.gaps.size() < 2) throw Error(ErrorCode::kConfigError, "analyze needs at least two methods");
  const fs::path dir = o.out.empty() ? OutputDir(o, "analysis") : fs::path(o.out);

  // Per-method disparity: mean over seeds of each seed's average disparity.
  std::map<std::string, std::map<std::string, double>> average;  // dataset -> method -> value
  for (const auto& [method, gaps] : obs.gaps) {
    std::ostringstream out;
    out << "dataset,seed,attribute,gap\n";
    std::map<std::pair<std::string, std::uint64_t>, std::map<std::string, double>> per_seed;
    for (const auto& [key, gap] : gaps) {
      out << csv_field(key.dataset) << "," << key.seed << "," << csv_field(key.attribute) << ","
          << csv_number(gap) << "\n";
      per_seed[{key.dataset, key.seed}][key.attribute] = gap;
    }
    std::map<std::string, std::vector<double>> by_dataset;
    for (const auto& [ds_seed, attrs] : per_seed) {
      const double avg = fairclip::average_disparity(attrs);
      by_dataset[ds_seed.first].push_back(avg);
      out << csv_field(ds_seed.first) << "," << ds_seed.second << ",average," << csv_number(avg) << "\n";
    }
    for (const auto& [ds, v] : by_dataset) average[ds][method] = Summarize(v).mean;
    std::string safe = std::regex_replace(method, std::regex("[^A-Za-z0-9._-]"), "_");
    fairclip::atomic_write(dir / ("disparity-" + safe + ".csv"), out.str());
  }

  std::ostringstream red;
  red << "dataset,method,baseline,method_disparity,baseline_disparity,reduction_pct\n";
  for (const auto& [ds, methods] : average) {
    for (const auto& [m, mv] : methods) {
      for (const auto& [b, bv] : methods) {
        if (m == b) continue;
        red << csv_field(ds) << "," << csv_field(m) << "," << csv_field(b) << "," << csv_number(mv) << ","
            << csv_number(bv) << ",";
        red << (bv > 0.0 ? csv_number(fairclip::reduction_pct(bv, mv)) : "") << "\n";
      }
    }
  }
  fairclip::atomic_write(dir / "reductions.csv", red.str());

  const auto comparisons = fairclip::compare_methods(obs.gaps);
  std::ostringstream sig;
  sig << "method_a,method_b,pairs,nonzero,statistic,p_value,corrected_p,tests,result\n";
  for (const auto& cmp : comparisons) {
    sig << csv_field(cmp.method_a) << "," << csv_field(cmp.method_b) << "," << cmp.pairs << ",";
    if (cmp.test) {
      sig << cmp.test->n << "," << csv_number(cmp.test->statistic) << "," << csv_number(cmp.test->p_value)
          << "," << csv_number(cmp.corrected_p) << "," << comparisons.size() << ","
          << (cmp.test->exact ? "exact" : "normal-approximation") << "\n";
    } else {
      sig << "0,,,," << comparisons.size() << ",no difference\n";
    }
  }
  fairclip::atomic_write(dir / "significance.csv", sig.str());
  std::cout << red.str() << "\n" << sig.str();
  std::cout << "wrote " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- gradstats

int CmdGradstats(const Options& o) {
  if (o.inputs.empty()) throw Error(ErrorCode::kConfigError, "gradstats needs result dirs");
  std::ostringstream out;
  out << "method,dataset,attribute,level,before,after,diff,seeds\n";
  std::size_t total_steps = 0;
  for (const auto& in : o.inputs) {
    std::vector<fs::path> files;
    if (fs::is_directory(in)) {
      for (const auto& e : fs::directory_iterator(in)) {
        const auto name = e.path().filename().string();
        if (name.rfind("run-", 0) == 0 && e.path().extension() == ".jsonl") files.push_back(e.path());
      }
    } else {
      files.push_back(in);
    }
    std::sort(files.begin(), files.end());
    std::string method = fs::path(in).filename().string(), dataset;
    std::vector<fairclip::GroupKey> groups;
    std::map<std::pair<std::string, std::string>, std::array<std::vector<double>, 3>> cells;
    for (const auto& f : files) {
      std::vector<fairclip::StepTrace> traces;
      for (const auto& j : fairclip::read_jsonl(f)) {
        const auto type = j.at("type").get<std::string>();
        if (type == "run") {
          method = j.at("method").get<std::string>();
          dataset = j.at("dataset").get<std::string>();
        } else if (type == "step") {
          traces.push_back(fairclip::step_from_record(j));
        }
      }
      if (traces.empty()) continue;
      total_steps += traces.size();
      for (const auto& g : traces.front().groups) {
        const bool known = std::any_of(groups.begin(), groups.end(), [&](const auto& k) {
          return k.attribute == g.attribute && k.level == g.level;
        });
        if (!known) groups.push_back({g.attribute, g.level});
      }
      for (const auto& st : fairclip::subgroup_clip_stats(traces, groups)) {
        if (st.missing) continue;
        auto& cell = cells[{st.attribute, st.level}];
        cell[0].push_back(st.mean_pre);
        cell[1].push_back(st.mean_post);
        cell[2].push_back(st.diff);
      }
    }
    for (const auto& g : groups) {
      out << csv_field(method) << "," << csv_field(dataset) << "," << csv_field(g.attribute) << ","
          << csv_field(g.level);
      const auto it = cells.find({g.attribute, g.level});
      if (it == cells.end()) {
        out << ",--,--,--,0\n";
        continue;
      }
      for (const auto& v : it->second) out << "," << csv_number(Summarize(v).mean);
      out << "," << it->second[0].size() << "\n";
    }
  }
  if (total_steps == 0) {
    std::cerr << "gradstats: no step traces found\n";
    return kMissingTraces;
  }
  const fs::path dir = o.out.empty() ? OutputDir(o, "gradstats") : fs::path(o.out);
  fairclip::atomic_write(dir / "gradstats.csv", out.str());
  std::cout << out.str() << "wrote " << (dir / "gradstats.csv").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private training with subgroup fairness reports"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment INI file");
    sub->add_option("--out", o.out, "Output directory (default: $FAIRCLIP_OUT_DIR/<name>)");
    sub->add_option("--orders", o.orders, "Comma-separated Renyi orders overriding the grid");
    sub->add_option("--threads", o.threads, "Worker threads per step; results do not depend on it");
    sub->add_option("--base-seed", o.base_seed, "First seed (default: config seed)");
  };
  auto* calibrate = app.add_subcommand("calibrate", "Find the noise multiplier for the privacy target");
  common(calibrate);
  auto* train = app.add_subcommand("train", "Train one model");
  common(train);
  auto* sweep = app.add_subcommand("sweep", "Train over consecutive seeds and summarize");
  common(sweep);
  sweep->add_option("--seeds", o.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  auto* analyze = app.add_subcommand("analyze", "Disparity, reduction and significance report");
  analyze->add_option("inputs", o.inputs, "Result directories or prepared CSV fixtures")->required();
  analyze->add_option("--out", o.out, "Output directory");
  analyze->add_flag("--mean-reduction", o.mean_reduction, "Divide subgroup losses by their counts");
  auto* gradstats = app.add_subcommand("gradstats", "Per-subgroup gradient norms before and after clipping");
  gradstats->add_option("inputs", o.inputs, "Result directories")->required();
  gradstats->add_option("--out", o.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*calibrate) return CmdCalibrate(o);
    if (*train) return RunSeeds(o, 1);
    if (*sweep) return RunSeeds(o, o.seeds);
    if (*analyze) return CmdAnalyze(o);
    if (*gradstats) return CmdGradstats(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kGeneric;
  }
  return kGeneric;
}
