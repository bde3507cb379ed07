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

#include "core/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "core/baselines.hpp"
#include "core/common.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/pruner.hpp"
#include "core/stats.hpp"

namespace scap {

namespace fs = std::filesystem;

namespace {

// Tracks which keys of an object were consumed so leftovers can be rejected.
class Keys {
 public:
  Keys(const nlohmann::json& j, std::string where) : obj_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <typename T>
  void opt(const char* key, T& out) {
    if (!obj_.contains(key)) return;
    used_.insert(key);
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  const nlohmann::json* sub(const char* key) {
    if (!obj_.contains(key)) return nullptr;
    used_.insert(key);
    return &obj_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown key '" + where_ + "." + key + "'");
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string where_;
  std::set<std::string> used_;
};

void parse_train_section(const nlohmann::json& j, const std::string& where, TrainConfig& out) {
  Keys k(j, where);
  k.opt("epochs", out.epochs);
  k.opt("batch_size", out.batch_size);
  k.opt("optimizer", out.optimizer);
  k.opt("lr", out.lr);
  k.opt("momentum", out.momentum);
  k.opt("weight_decay", out.weight_decay);
  k.opt("milestones", out.milestones);
  k.opt("decay_factor", out.decay_factor);
  k.opt("augment_crop", out.augment_crop);
  k.opt("augment_flip", out.augment_flip);
  k.opt("normalize", out.normalize);
  k.finish();
}

nlohmann::json train_section_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"optimizer", t.optimizer},
          {"lr", t.lr},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"milestones", t.milestones},
          {"decay_factor", t.decay_factor},
          {"augment_crop", t.augment_crop},
          {"augment_flip", t.augment_flip},
          {"normalize", t.normalize}};
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

fs::path run_dir(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) {
    throw ConfigError("no output directory configured (set out_dir or pass one on the command line)");
  }
  return fs::path(cfg.out_dir);
}

void write_config_copy(const ExperimentConfig& cfg) {
  fs::create_directories(run_dir(cfg));
  write_json_file(run_dir(cfg) / "config.json", experiment_config_to_json(cfg));
}

// Merges one stage's metrics into manifest.json. metrics_hash covers only the
// metrics object, so reruns with the same seed hash identically regardless of
// wall-clock times (those stay in the JSONL logs).
void update_manifest(const ExperimentConfig& cfg, const std::string& stage,
                     const nlohmann::json& metrics_patch) {
  const fs::path path = run_dir(cfg) / "manifest.json";
  nlohmann::json m;
  if (fs::exists(path)) {
    m = read_json_file(path);
  } else {
    m = {{"schema_version", 1},
         {"name", cfg.name},
         {"seed", cfg.seed},
         {"stages", nlohmann::json::array()},
         {"metrics", nlohmann::json::object()}};
  }
  auto& stages = m["stages"];
  if (std::find(stages.begin(), stages.end(), nlohmann::json(stage)) == stages.end()) {
    stages.push_back(stage);
  }
  m["stage"] = stage;
  for (const auto& [key, value] : metrics_patch.items()) m["metrics"][key] = value;
  m["config_hash"] = hex64(fnv1a(experiment_config_to_json(cfg).dump()));
  m["metrics_hash"] = hex64(fnv1a(m["metrics"].dump()));
  write_json_file(path, m);
}

int64_t dataset_hw(const DatasetSpec& spec) {
  return spec.name == "synthetic" ? spec.synthetic_hw : 32;
}

nlohmann::json cost_to_json(const Model& model, int64_t hw) {
  const CostReport cost = count_flops(model, 3, hw, hw);
  return {{"params", cost.params},
          {"flops", cost.flops},
          {"million_params", cost.million_params()},
          {"giga_flops", cost.giga_flops()},
          {"input_hw", hw}};
}

nlohmann::json checkpoint_manifest(const ExperimentConfig& cfg, const std::string& stage,
                                   int epoch) {
  return {{"dataset", cfg.dataset.name},
          {"epoch", epoch},
          {"seed", cfg.seed},
          {"stage", stage},
          {"note", cfg.note}};
}

Model load_stage_checkpoint(const ExperimentConfig& cfg, const std::string& name,
                            const std::string& needed_by) {
  const fs::path dir = run_dir(cfg) / name;
  if (!fs::exists(dir / "layers.json")) {
    throw StateError("'" + dir.string() + "' is missing; run the stage before '" + needed_by +
                     "'");
  }
  return load_checkpoint(dir.string());
}

std::string render_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string render_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct ReportRow {
  std::string model;
  std::string scorer;
  double params_m = 0.0;
  double gflops = 0.0;
  bool pruned = false;
  double params_pruned_pct = 0.0;
  double flops_pruned_pct = 0.0;
  double acc_pct = 0.0;
  bool has_delta = false;
  double delta_pct = 0.0;
};

std::string aligned_table(const std::vector<std::string>& header,
                          const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> width(header.size());
  for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (size_t c = 0; c < row.size(); ++c) {
      out << (c == 0 ? "" : "  ") << row[c];
      if (c + 1 < row.size()) out << std::string(width[c] - row[c].size(), ' ');
    }
    out << "\n";
  };
  emit(header);
  std::vector<std::string> rule;
  for (size_t c = 0; c < header.size(); ++c) rule.push_back(std::string(width[c], '-'));
  emit(rule);
  for (const auto& row : rows) emit(row);
  return out.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (schema_version != 1) throw ConfigError("unsupported schema_version");
  if (name.empty()) throw ConfigError("name must not be empty");
  if (model.arch != "vgg" && model.arch != "resnet") {
    throw ConfigError("model.arch must be vgg or resnet");
  }
  if (model.attention != "none" && model.attention != "sca" && model.attention != "se") {
    throw ConfigError("model.attention must be none, sca or se");
  }
  if (model.depth < 1) throw ConfigError("model.depth must be positive");
  if (dataset.name != "cifar10" && dataset.name != "cifar100" && dataset.name != "synthetic") {
    throw ConfigError("dataset.name must be cifar10, cifar100 or synthetic");
  }
  if (dataset.name != "synthetic" && dataset.root.empty()) {
    throw ConfigError("dataset.root is required for " + dataset.name);
  }
  if (dataset.subset_per_class < 0 || dataset.test_subset_per_class < 0) {
    throw ConfigError("subset sizes must be non-negative");
  }
  if (scorer != "cpsca" && scorer != "cpse" && scorer != "l1" && scorer != "slimming") {
    throw ConfigError("scorer must be cpsca, cpse, l1 or slimming");
  }
  train.validate();
  finetune.validate();
  if (prune.uniform_ratio >= 1.0) throw ConfigError("prune.ratio must be below 1");
  for (const auto& [id, r] : prune.per_layer) {
    if (r < 0.0 || r >= 1.0) throw ConfigError("prune.ratios['" + id + "'] must be in [0,1)");
  }
  if (sweep.epochs < 1) throw ConfigError("sweep.epochs must be at least 1");
  for (const std::string& a : sweep.arrangements) arrangement_from_name(a);
  for (int g : sweep.spatial_groups) {
    if (g < 1) throw ConfigError("sweep.spatial_groups must be positive");
  }
  for (int g : sweep.gn_groups) {
    if (g < 1) throw ConfigError("sweep.gn_groups must be positive");
  }
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  Keys root(j, "config");
  root.opt("schema_version", cfg.schema_version);
  if (cfg.schema_version != 1) throw ConfigError("unsupported schema_version");
  root.opt("name", cfg.name);
  root.opt("seed", cfg.seed);
  root.opt("out_dir", cfg.out_dir);
  root.opt("note", cfg.note);

  if (const nlohmann::json* m = root.sub("model")) {
    Keys k(*m, "model");
    k.opt("arch", cfg.model.arch);
    k.opt("depth", cfg.model.depth);
    k.opt("attention", cfg.model.attention);
    if (const nlohmann::json* s = k.sub("sca")) {
      Keys sk(*s, "model.sca");
      sk.opt("spatial_groups", cfg.model.sca.spatial_groups);
      sk.opt("gn_groups", cfg.model.sca.gn_groups);
      sk.opt("eps_spatial", cfg.model.sca.eps_spatial);
      sk.opt("eps_gn", cfg.model.sca.eps_gn);
      std::string arrangement = arrangement_name(cfg.model.sca.arrangement);
      sk.opt("arrangement", arrangement);
      cfg.model.sca.arrangement = arrangement_from_name(arrangement);
      sk.finish();
    }
    k.finish();
  }

  if (const nlohmann::json* d = root.sub("dataset")) {
    Keys k(*d, "dataset");
    k.opt("name", cfg.dataset.name);
    k.opt("root", cfg.dataset.root);
    k.opt("subset_per_class", cfg.dataset.subset_per_class);
    k.opt("test_subset_per_class", cfg.dataset.test_subset_per_class);
    if (const nlohmann::json* s = k.sub("synthetic")) {
      Keys sk(*s, "dataset.synthetic");
      sk.opt("classes", cfg.dataset.synthetic_classes);
      sk.opt("train_per_class", cfg.dataset.synthetic_train_per_class);
      sk.opt("test_per_class", cfg.dataset.synthetic_test_per_class);
      sk.opt("image_hw", cfg.dataset.synthetic_hw);
      sk.finish();
    }
    k.finish();
  }

  if (const nlohmann::json* t = root.sub("train")) {
    parse_train_section(*t, "train", cfg.train);
  }
  cfg.finetune = cfg.train;
  if (const nlohmann::json* t = root.sub("finetune")) {
    parse_train_section(*t, "finetune", cfg.finetune);
  }

  root.opt("scorer", cfg.scorer);

  if (const nlohmann::json* p = root.sub("prune")) {
    Keys k(*p, "prune");
    if (const nlohmann::json* r = k.sub("ratio")) {
      if (!r->is_null()) cfg.prune.uniform_ratio = r->get<double>();
    }
    if (const nlohmann::json* r = k.sub("ratios")) {
      Keys rk(*r, "prune.ratios");
      for (const auto& [id, value] : r->items()) {
        double ratio = 0.0;
        rk.opt(id.c_str(), ratio);
        cfg.prune.per_layer[id] = ratio;
      }
      rk.finish();
    }
    k.finish();
  }

  if (const nlohmann::json* s = root.sub("sweep")) {
    Keys k(*s, "sweep");
    k.opt("arrangements", cfg.sweep.arrangements);
    k.opt("spatial_groups", cfg.sweep.spatial_groups);
    k.opt("gn_groups", cfg.sweep.gn_groups);
    k.opt("epochs", cfg.sweep.epochs);
    k.finish();
  }

  if (const nlohmann::json* r = root.sub("report")) {
    Keys k(*r, "report");
    k.opt("runs", cfg.report_runs);
    k.finish();
  }

  root.finish();
  cfg.train.seed = cfg.seed;
  cfg.finetune.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = cfg.schema_version;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["note"] = cfg.note;
  j["model"] = {{"arch", cfg.model.arch},
                {"depth", cfg.model.depth},
                {"attention", cfg.model.attention},
                {"sca",
                 {{"spatial_groups", cfg.model.sca.spatial_groups},
                  {"gn_groups", cfg.model.sca.gn_groups},
                  {"eps_spatial", cfg.model.sca.eps_spatial},
                  {"eps_gn", cfg.model.sca.eps_gn},
                  {"arrangement", arrangement_name(cfg.model.sca.arrangement)}}}};
  j["dataset"] = {{"name", cfg.dataset.name},
                  {"root", cfg.dataset.root},
                  {"subset_per_class", cfg.dataset.subset_per_class},
                  {"test_subset_per_class", cfg.dataset.test_subset_per_class},
                  {"synthetic",
                   {{"classes", cfg.dataset.synthetic_classes},
                    {"train_per_class", cfg.dataset.synthetic_train_per_class},
                    {"test_per_class", cfg.dataset.synthetic_test_per_class},
                    {"image_hw", cfg.dataset.synthetic_hw}}}};
  j["train"] = train_section_to_json(cfg.train);
  j["finetune"] = train_section_to_json(cfg.finetune);
  j["scorer"] = cfg.scorer;
  nlohmann::json ratios = nlohmann::json::object();
  for (const auto& [id, r] : cfg.prune.per_layer) ratios[id] = r;
  j["prune"] = {{"ratio", cfg.prune.uniform_ratio < 0.0
                              ? nlohmann::json()
                              : nlohmann::json(cfg.prune.uniform_ratio)},
                {"ratios", std::move(ratios)}};
  j["sweep"] = {{"arrangements", cfg.sweep.arrangements},
                {"spatial_groups", cfg.sweep.spatial_groups},
                {"gn_groups", cfg.sweep.gn_groups},
                {"epochs", cfg.sweep.epochs}};
  j["report"] = {{"runs", cfg.report_runs}};
  return j;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_json(read_json_file(path));
}

void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
  if (o.out) cfg.out_dir = *o.out;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
    cfg.finetune.seed = *o.seed;
  }
  if (o.subset) cfg.dataset.subset_per_class = *o.subset;
  if (o.ratio) {
    cfg.prune.uniform_ratio = *o.ratio;
    cfg.prune.per_layer.clear();
  }
  if (o.ratios_file) {
    const nlohmann::json j = read_json_file(*o.ratios_file);
    if (!j.is_object()) throw ConfigError("ratios file must map layer ids to ratios");
    cfg.prune.per_layer.clear();
    for (const auto& [id, value] : j.items()) {
      if (!value.is_number()) throw ConfigError("ratio for '" + id + "' must be a number");
      cfg.prune.per_layer[id] = value.get<double>();
    }
    cfg.prune.uniform_ratio = -1.0;
  }
  if (o.scorer) cfg.scorer = *o.scorer;
  cfg.validate();
}

DataBundle load_bundle(const DatasetSpec& spec) {
  DataBundle b;
  if (spec.name == "synthetic") {
    b = make_synthetic(spec.synthetic_classes, spec.synthetic_train_per_class,
                       spec.synthetic_test_per_class, 7, spec.synthetic_hw);
  } else {
    b = load_cifar(spec.root, spec.name);
  }
  if (spec.subset_per_class > 0) b.train = subset_per_class(b.train, spec.subset_per_class);
  if (spec.test_subset_per_class > 0) b.test = subset_per_class(b.test, spec.test_subset_per_class);
  return b;
}

Model build_model(const ModelSpec& spec, int num_classes, uint64_t seed) {
  if (spec.arch == "vgg") {
    return build_vgg(spec.depth, num_classes, spec.attention, spec.sca, seed);
  }
  if (spec.arch != "resnet") throw ConfigError("model.arch must be vgg or resnet");
  return build_resnet(spec.depth, num_classes, spec.attention, spec.sca, seed);
}

std::string run_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = run_dir(cfg);
  write_config_copy(cfg);

  DataBundle data = load_bundle(cfg.dataset);
  Model model = build_model(cfg.model, data.train.num_classes, cfg.seed);

  const fs::path log = out / "train_log.jsonl";
  fs::remove(log);
  TrainResult result = train_model(model, data.train, data.test, cfg.train, log.string());

  // the model holds its best-epoch weights here
  save_checkpoint(model, (out / "ckpt_best").string(),
                  checkpoint_manifest(cfg, "train", result.best_epoch));
  StateSnapshot best = snapshot_state(model);
  restore_state(model, result.final_state);
  save_checkpoint(model, (out / "ckpt_final").string(),
                  checkpoint_manifest(cfg, "train", cfg.train.epochs));
  restore_state(model, best);

  write_json_file(out / "cost.json", cost_to_json(model, dataset_hw(cfg.dataset)));
  update_manifest(cfg, "train",
                  {{"train",
                    {{"best_test_accuracy", result.best_test_accuracy},
                     {"final_test_accuracy", result.final_test_accuracy},
                     {"best_epoch", result.best_epoch},
                     {"epochs", cfg.train.epochs},
                     {"train_size", data.train.size()},
                     {"test_size", data.test.size()}}}});
  return out.string();
}

std::string run_collect(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = run_dir(cfg);
  write_config_copy(cfg);
  Model model = load_stage_checkpoint(cfg, "ckpt_best", "collect");
  DataBundle data = load_bundle(cfg.dataset);

  ChannelScaleTable table;
  if (cfg.scorer == "cpsca") {
    if (model.meta.attention != "sca") {
      throw StateError("scorer cpsca needs a checkpoint trained with sca attention");
    }
    table = collect_statistics(model, data.train, cfg.train, "cpsca");
  } else if (cfg.scorer == "cpse") {
    if (model.meta.attention != "se") {
      throw StateError("scorer cpse needs a checkpoint trained with se attention");
    }
    table = collect_statistics(model, data.train, cfg.train, "cpse");
  } else if (cfg.scorer == "l1") {
    table = l1_scores(model);
  } else {
    table = slimming_scores(model);
  }

  save_table(table, (out / "table.json").string());
  update_manifest(cfg, "collect",
                  {{"collect",
                    {{"scorer", table.scorer},
                     {"sample_count", table.sample_count},
                     {"layers", table.layers.size()},
                     {"table_hash", hex64(fnv1a(table_to_json(table).dump()))}}}});
  return out.string();
}

std::string run_prune(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = run_dir(cfg);
  write_config_copy(cfg);
  Model model = load_stage_checkpoint(cfg, "ckpt_best", "prune");
  const fs::path table_path = out / "table.json";
  if (!fs::exists(table_path)) {
    throw StateError("'" + table_path.string() + "' is missing; run collect before prune");
  }
  ChannelScaleTable table = load_table(table_path.string());

  std::map<std::string, double> ratios = cfg.prune.per_layer;
  if (ratios.empty()) {
    if (cfg.prune.uniform_ratio < 0.0) {
      throw ConfigError("no pruning ratio configured (prune.ratio, prune.ratios or flags)");
    }
    for (const auto& [id, ls] : table.layers) ratios[id] = cfg.prune.uniform_ratio;
  }
  PruningPlan plan = plan_pruning(table, ratios);

  remove_attention(model);
  const nlohmann::json before = cost_to_json(model, dataset_hw(cfg.dataset));
  Model pruned = apply_plan(model, plan);
  const nlohmann::json after = cost_to_json(pruned, dataset_hw(cfg.dataset));

  save_plan(plan, (out / "plan.json").string());
  save_checkpoint(pruned, (out / "ckpt_pruned").string(), checkpoint_manifest(cfg, "prune", 0));
  write_json_file(out / "cost_before.json", before);
  write_json_file(out / "cost_after.json", after);

  const double params_pct = 100.0 * (1.0 - after.at("params").get<double>() /
                                               before.at("params").get<double>());
  const double flops_pct =
      100.0 * (1.0 - after.at("flops").get<double>() / before.at("flops").get<double>());
  update_manifest(cfg, "prune",
                  {{"prune",
                    {{"scorer", table.scorer},
                     {"plan_hash", hex64(fnv1a(plan_to_json(plan).dump()))},
                     {"params_before", before.at("params")},
                     {"params_after", after.at("params")},
                     {"flops_before", before.at("flops")},
                     {"flops_after", after.at("flops")},
                     {"params_pruned_pct", params_pct},
                     {"flops_pruned_pct", flops_pct}}}});
  return out.string();
}

std::string run_finetune(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = run_dir(cfg);
  write_config_copy(cfg);
  Model model = load_stage_checkpoint(cfg, "ckpt_pruned", "finetune");
  DataBundle data = load_bundle(cfg.dataset);

  const fs::path log = out / "finetune_log.jsonl";
  fs::remove(log);
  TrainResult result = finetune_model(model, data.train, data.test, cfg.finetune, log.string());

  save_checkpoint(model, (out / "ckpt_finetuned").string(),
                  checkpoint_manifest(cfg, "finetune", result.best_epoch));
  update_manifest(cfg, "finetune",
                  {{"finetune",
                    {{"best_test_accuracy", result.best_test_accuracy},
                     {"final_test_accuracy", result.final_test_accuracy},
                     {"best_epoch", result.best_epoch},
                     {"epochs", cfg.finetune.epochs}}}});
  return out.string();
}

std::string run_eval(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = run_dir(cfg);
  write_config_copy(cfg);
  DataBundle data = load_bundle(cfg.dataset);

  nlohmann::json acc = nlohmann::json::object();
  for (const char* name : {"ckpt_best", "ckpt_final", "ckpt_pruned", "ckpt_finetuned"}) {
    const fs::path dir = out / name;
    if (!fs::exists(dir / "layers.json")) continue;
    Model model = load_checkpoint(dir.string());
    acc[name] = evaluate_split(model, data.test, cfg.train);
  }
  if (acc.empty()) {
    throw StateError("'" + out.string() + "' holds no checkpoints; run train first");
  }

  const nlohmann::json result = {{"dataset", cfg.dataset.name},
                                 {"test_size", data.test.size()},
                                 {"accuracy", acc}};
  write_json_file(out / "eval.json", result);
  update_manifest(cfg, "eval", {{"eval", {{"accuracy", acc}}}});
  return out.string();
}

std::string run_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  if (out_dir.empty()) throw ConfigError("report needs an output directory");

  std::vector<ReportRow> rows;
  for (const std::string& dir : run_dirs) {
    const fs::path run(dir);
    if (!fs::exists(run / "manifest.json")) {
      throw StateError("'" + dir + "' has no manifest; not a completed run directory");
    }
    const nlohmann::json manifest = read_json_file(run / "manifest.json");
    if (!fs::exists(run / "eval.json")) {
      throw StateError("'" + dir + "' has no eval.json; run eval before report");
    }
    const nlohmann::json eval = read_json_file(run / "eval.json");
    const nlohmann::json& metrics = manifest.at("metrics");

    ReportRow row;
    row.model = manifest.value("name", dir);
    row.pruned = metrics.contains("prune");
    const nlohmann::json cost = row.pruned ? read_json_file(run / "cost_after.json")
                                           : read_json_file(run / "cost.json");
    row.params_m = cost.at("million_params").get<double>();
    row.gflops = cost.at("giga_flops").get<double>();
    if (row.pruned) {
      row.scorer = metrics.at("prune").value("scorer", "");
      row.params_pruned_pct = metrics.at("prune").at("params_pruned_pct").get<double>();
      row.flops_pruned_pct = metrics.at("prune").at("flops_pruned_pct").get<double>();
    }

    const nlohmann::json& acc = eval.at("accuracy");
    if (acc.contains("ckpt_finetuned")) {
      row.acc_pct = 100.0 * acc.at("ckpt_finetuned").get<double>();
    } else if (acc.contains("ckpt_pruned")) {
      row.acc_pct = 100.0 * acc.at("ckpt_pruned").get<double>();
    } else {
      row.acc_pct = 100.0 * acc.at("ckpt_best").get<double>();
    }
    rows.push_back(std::move(row));
  }

  // the first unpruned run anchors the deltas; with nothing unpruned, the
  // first run does
  size_t baseline = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].pruned) {
      baseline = i;
      break;
    }
  }
  for (size_t i = 0; i < rows.size(); ++i) {
    if (i == baseline) continue;
    rows[i].has_delta = true;
    rows[i].delta_pct = rows[i].acc_pct - rows[baseline].acc_pct;
  }

  fs::create_directories(out_dir);
  const fs::path csv_path = fs::path(out_dir) / "report.csv";
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write '" + csv_path.string() + "'");
    csv << "model,scorer,params_m,params_pruned_pct,gflops,flops_pruned_pct,acc_pct,"
           "delta_acc_pct\n";
    for (const ReportRow& r : rows) {
      csv << r.model << "," << r.scorer << "," << render_full(r.params_m) << ",";
      csv << (r.pruned ? render_full(r.params_pruned_pct) : "-") << ",";
      csv << render_full(r.gflops) << ",";
      csv << (r.pruned ? render_full(r.flops_pruned_pct) : "-") << ",";
      csv << render_full(r.acc_pct) << ",";
      csv << (r.has_delta ? render_full(r.delta_pct) : "-") << "\n";
    }
  }

  std::vector<std::vector<std::string>> text_rows;
  for (const ReportRow& r : rows) {
    text_rows.push_back({r.model, r.scorer.empty() ? "-" : r.scorer, render_pct(r.params_m),
                         r.pruned ? render_pct(r.params_pruned_pct) : "-", render_pct(r.gflops),
                         r.pruned ? render_pct(r.flops_pruned_pct) : "-", render_pct(r.acc_pct),
                         r.has_delta ? render_pct(r.delta_pct) : "-"});
  }
  const std::string table = aligned_table({"Model", "Scorer", "Params(M)", "Pruned(%)", "GFLOPs",
                                           "Pruned(%)", "Acc(%)", "dAcc"},
                                          text_rows);
  std::ofstream txt(fs::path(out_dir) / "report.txt");
  if (!txt) throw IoError("cannot write report.txt");
  txt << table;
  return csv_path.string();
}

std::string run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out = run_dir(cfg);
  write_config_copy(cfg);
  DataBundle data = load_bundle(cfg.dataset);

  TrainConfig tc = cfg.train;
  tc.epochs = cfg.sweep.epochs;
  tc.seed = cfg.seed;

  struct Cell {
    std::string section;
    std::string variant;
    ModelSpec spec;
  };
  std::vector<Cell> cells;
  ModelSpec plain = cfg.model;
  plain.attention = "none";
  cells.push_back({"baseline", "none", plain});
  for (const std::string& name : cfg.sweep.arrangements) {
    ModelSpec spec = cfg.model;
    spec.attention = "sca";
    spec.sca.arrangement = arrangement_from_name(name);
    cells.push_back({"arrangement", name, spec});
  }
  for (int g : cfg.sweep.spatial_groups) {
    ModelSpec spec = cfg.model;
    spec.attention = "sca";
    spec.sca.spatial_groups = g;
    cells.push_back({"spatial_groups", std::to_string(g), spec});
  }
  for (int g : cfg.sweep.gn_groups) {
    ModelSpec spec = cfg.model;
    spec.attention = "sca";
    spec.sca.gn_groups = g;
    cells.push_back({"gn_groups", std::to_string(g), spec});
  }

  nlohmann::json results = nlohmann::json::array();
  std::vector<std::vector<std::string>> text_rows;
  for (const Cell& cell : cells) {
    Model model = build_model(cell.spec, data.train.num_classes, cfg.seed);
    TrainResult r = train_model(model, data.train, data.test, tc);
    const CostReport cost = count_flops(model, 3, dataset_hw(cfg.dataset), dataset_hw(cfg.dataset));
    results.push_back({{"section", cell.section},
                       {"variant", cell.variant},
                       {"best_test_accuracy", r.best_test_accuracy},
                       {"params", cost.params},
                       {"flops", cost.flops}});
    text_rows.push_back({cell.section, cell.variant, render_pct(100.0 * r.best_test_accuracy),
                         render_pct(cost.million_params())});
  }

  write_json_file(out / "sweep.json",
                  {{"epochs", cfg.sweep.epochs}, {"seed", cfg.seed}, {"cells", results}});

  const fs::path csv_path = out / "sweep.csv";
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write '" + csv_path.string() + "'");
    csv << "section,variant,acc_pct,params,flops\n";
    for (const auto& row : results) {
      csv << row.at("section").get<std::string>() << "," << row.at("variant").get<std::string>()
          << "," << render_full(100.0 * row.at("best_test_accuracy").get<double>()) << ","
          << row.at("params").get<int64_t>() << "," << row.at("flops").get<int64_t>() << "\n";
    }
  }
  std::ofstream txt(out / "sweep.txt");
  if (!txt) throw IoError("cannot write sweep.txt");
  txt << aligned_table({"Section", "Variant", "Acc(%)", "Params(M)"}, text_rows);

  update_manifest(cfg, "sweep",
                  {{"sweep", {{"cells", cells.size()}, {"epochs", cfg.sweep.epochs}}}});
  return csv_path.string();
}

std::string run_verb(const std::string& verb, const ExperimentConfig& cfg,
                     const std::vector<std::string>& extra_runs) {
  if (verb == "train") return run_train(cfg);
  if (verb == "collect") return run_collect(cfg);
  if (verb == "prune") return run_prune(cfg);
  if (verb == "finetune") return run_finetune(cfg);
  if (verb == "eval") return run_eval(cfg);
  if (verb == "sweep") return run_sweep(cfg);
  if (verb == "report") {
    std::vector<std::string> runs = cfg.report_runs;
    runs.insert(runs.end(), extra_runs.begin(), extra_runs.end());
    return run_report(runs, cfg.out_dir);
  }
  throw ConfigError("unknown verb '" + verb + "'");
}

}  // namespace scap
