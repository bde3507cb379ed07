// Copyright 2026 The scaprune Authors
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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/attention.hpp"
#include "core/dataset.hpp"
#include "core/training.hpp"

namespace scap {

struct ModelSpec {
  std::string arch = "resnet";       // "vgg" or "resnet"
  int depth = 20;
  std::string attention = "none";    // "none", "sca", "se"
  SCAConfig sca;
};

struct DatasetSpec {
  std::string name = "synthetic";    // "cifar10", "cifar100", "synthetic"
  std::string root;                  // archive directory for the cifar sets
  int64_t subset_per_class = 0;      // 0 keeps the full train split
  int64_t test_subset_per_class = 0;
  int synthetic_classes = 4;
  int64_t synthetic_train_per_class = 25;
  int64_t synthetic_test_per_class = 10;
  int64_t synthetic_hw = 8;
};

struct PruneSpec {
  double uniform_ratio = -1.0;              // < 0 means unset
  std::map<std::string, double> per_layer;  // wins over uniform when non-empty
};

struct SweepSpec {
  std::vector<std::string> arrangements{"spatial_only", "channel_only", "spatial_then_channel",
                                        "channel_then_spatial", "parallel"};
  std::vector<int> spatial_groups{4, 8, 16, 32, 64};
  std::vector<int> gn_groups{1, 2, 4, 8};
  int epochs = 1;
};

// Declarative description of one pipeline run. A single seed feeds every
// stochastic source; the per-stage loops derive their streams from it.
struct ExperimentConfig {
  int schema_version = 1;
  std::string name = "run";
  uint64_t seed = 0;
  std::string out_dir;
  std::string note;
  ModelSpec model;
  DatasetSpec dataset;
  TrainConfig train;
  TrainConfig finetune;  // defaults to the train section when absent
  std::string scorer = "cpsca";
  PruneSpec prune;
  SweepSpec sweep;
  std::vector<std::string> report_runs;

  void validate() const;  // throws ConfigError
};

// Strict parse: schema_version must be 1 and unknown keys anywhere are
// ConfigErrors. to_json emits the full canonical form; parsing its output
// reproduces the config losslessly.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::string& path);

// Command-line flag values layered on top of the config file.
struct Overrides {
  std::optional<std::string> out;
  std::optional<uint64_t> seed;
  std::optional<int64_t> subset;
  std::optional<double> ratio;
  std::optional<std::string> ratios_file;  // JSON map layer id -> ratio
  std::optional<std::string> scorer;
};
void apply_overrides(ExperimentConfig& cfg, const Overrides& o);

// Loads the configured dataset, applying the per-class subsets.
DataBundle load_bundle(const DatasetSpec& spec);
Model build_model(const ModelSpec& spec, int num_classes, uint64_t seed);

// Pipeline stages. Each one works inside cfg.out_dir, writes its artifacts
// plus a config copy, and updates manifest.json (stage list, metrics and a
// metrics hash that deliberately excludes wall-clock times). Stages that
// depend on earlier artifacts throw StateError when those are missing.
//
// Layout inside the run directory:
//   config.json, manifest.json, train_log.jsonl, finetune_log.jsonl
//   ckpt_best/ ckpt_final/     train
//   cost.json                  train (cost of the model as built)
//   table.json                 collect
//   plan.json, ckpt_pruned/,
//   cost_before.json,
//   cost_after.json            prune (costs of the plain backbone)
//   ckpt_finetuned/            finetune
//   eval.json                  eval (one accuracy per checkpoint present)
//   report.csv, report.txt     report
//   sweep.csv, sweep.txt,
//   sweep.json                 sweep
std::string run_train(const ExperimentConfig& cfg);
std::string run_collect(const ExperimentConfig& cfg);
std::string run_prune(const ExperimentConfig& cfg);
std::string run_finetune(const ExperimentConfig& cfg);
std::string run_eval(const ExperimentConfig& cfg);

// Comparison table over completed run directories: Params(M), pruned params
// %, GFLOPs, pruned FLOPs %, Acc %, delta vs baseline. The
// baseline row is the first run without a pruning stage (the first run when
// all of them pruned); its delta cells and the pruned-% cells of unpruned
// rows render as "-".
std::string run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

// Attention-ablation grid: a baseline cell plus one cell per arrangement, per
// spatial group count and per normalization group count, each trained from
// scratch at desk scale and evaluated. Emits sweep.csv / sweep.txt / sweep.json.
std::string run_sweep(const ExperimentConfig& cfg);

// Dispatch by verb name ("train", "collect", ...). Returns the primary
// artifact path. extra_runs feeds the report verb in addition to
// cfg.report_runs.
std::string run_verb(const std::string& verb, const ExperimentConfig& cfg,
                     const std::vector<std::string>& extra_runs = {});

}  // namespace scap
