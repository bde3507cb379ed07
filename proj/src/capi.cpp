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

#include "scaprune/scaprune.h"

#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/dataset.hpp"
#include "core/experiment.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/pruner.hpp"
#include "core/stats.hpp"
#include "core/training.hpp"

struct scap_model {
  scap::Model impl;
};
struct scap_dataset {
  scap::DataBundle impl;
};
struct scap_table {
  scap::ChannelScaleTable impl;
};
struct scap_plan {
  scap::PruningPlan impl;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
scap_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return SCAP_OK;
  } catch (const scap::ConfigError& e) {
    g_last_error = e.what();
    return SCAP_ERR_CONFIG;
  } catch (const scap::IoError& e) {
    g_last_error = e.what();
    return SCAP_ERR_IO;
  } catch (const scap::NumericError& e) {
    g_last_error = e.what();
    return SCAP_ERR_NUMERIC;
  } catch (const scap::StateError& e) {
    g_last_error = e.what();
    return SCAP_ERR_STATE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SCAP_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown failure";
    return SCAP_ERR_UNKNOWN;
  }
}

scap_status require(bool ok, const char* message) {
  if (ok) return SCAP_OK;
  g_last_error = message;
  return SCAP_ERR_CONFIG;
}

std::string to_string_or_empty(const char* s) { return s == nullptr ? std::string() : s; }

}  // namespace

extern "C" {

const char* scap_version(void) { return "1.0.0"; }

const char* scap_last_error(void) { return g_last_error.c_str(); }

scap_status scap_model_build(const char* arch, int depth, int num_classes, const char* attention,
                             uint64_t seed, scap_model** out) {
  if (scap_status s = require(arch && attention && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    scap::ModelSpec spec;
    spec.arch = arch;
    spec.depth = depth;
    spec.attention = attention;
    auto handle = std::make_unique<scap_model>();
    handle->impl = scap::build_model(spec, num_classes, seed);
    *out = handle.release();
  });
}

scap_status scap_model_load(const char* checkpoint_dir, scap_model** out) {
  if (scap_status s = require(checkpoint_dir && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<scap_model>();
    handle->impl = scap::load_checkpoint(checkpoint_dir);
    *out = handle.release();
  });
}

scap_status scap_model_save(const scap_model* model, const char* checkpoint_dir) {
  if (scap_status s = require(model && checkpoint_dir, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    scap::save_checkpoint(model->impl, checkpoint_dir, {{"stage", "api"}});
  });
}

scap_status scap_model_param_count(const scap_model* model, int64_t* out) {
  if (scap_status s = require(model && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] { *out = scap::count_params(model->impl).params; });
}

scap_status scap_model_flops(const scap_model* model, int64_t hw, int64_t* out) {
  if (scap_status s = require(model && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] { *out = scap::count_flops(model->impl, 3, hw, hw).flops; });
}

scap_status scap_model_remove_attention(scap_model* model, int* removed) {
  if (scap_status s = require(model != nullptr, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    const int n = scap::remove_attention(model->impl);
    if (removed) *removed = n;
  });
}

void scap_model_free(scap_model* model) { delete model; }

scap_status scap_dataset_load_cifar(const char* root, const char* name, scap_dataset** out) {
  if (scap_status s = require(root && name && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<scap_dataset>();
    handle->impl = scap::load_cifar(root, name);
    *out = handle.release();
  });
}

scap_status scap_dataset_synthetic(int classes, int64_t train_per_class, int64_t test_per_class,
                                   uint64_t seed, int64_t image_hw, scap_dataset** out) {
  if (scap_status s = require(out != nullptr, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<scap_dataset>();
    handle->impl = scap::make_synthetic(classes, train_per_class, test_per_class, seed, image_hw);
    *out = handle.release();
  });
}

scap_status scap_dataset_subset(const scap_dataset* dataset, int64_t per_class,
                                scap_dataset** out) {
  if (scap_status s = require(dataset && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<scap_dataset>();
    handle->impl.train = scap::subset_per_class(dataset->impl.train, per_class);
    handle->impl.test = dataset->impl.test;
    *out = handle.release();
  });
}

scap_status scap_dataset_sizes(const scap_dataset* dataset, int64_t* train_size,
                               int64_t* test_size, int* num_classes) {
  if (scap_status s = require(dataset != nullptr, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    if (train_size) *train_size = dataset->impl.train.size();
    if (test_size) *test_size = dataset->impl.test.size();
    if (num_classes) *num_classes = dataset->impl.train.num_classes;
  });
}

void scap_dataset_free(scap_dataset* dataset) { delete dataset; }

scap_status scap_eval_accuracy(scap_model* model, const scap_dataset* dataset,
                               int use_train_split, double* out) {
  if (scap_status s = require(model && dataset && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    scap::TrainConfig cfg;
    cfg.batch_size = 256;
    *out = scap::evaluate_split(
        model->impl, use_train_split ? dataset->impl.train : dataset->impl.test, cfg);
  });
}

scap_status scap_table_load(const char* path, scap_table** out) {
  if (scap_status s = require(path && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<scap_table>();
    handle->impl = scap::load_table(path);
    *out = handle.release();
  });
}

scap_status scap_table_save(const scap_table* table, const char* path) {
  if (scap_status s = require(table && path, "null argument"); s != SCAP_OK) return s;
  return guarded([&] { scap::save_table(table->impl, path); });
}

void scap_table_free(scap_table* table) { delete table; }

scap_status scap_plan_uniform(const scap_table* table, double ratio, scap_plan** out) {
  if (scap_status s = require(table && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    std::map<std::string, double> ratios;
    for (const auto& [id, ls] : table->impl.layers) ratios[id] = ratio;
    auto handle = std::make_unique<scap_plan>();
    handle->impl = scap::plan_pruning(table->impl, ratios);
    *out = handle.release();
  });
}

scap_status scap_plan_load(const char* path, scap_plan** out) {
  if (scap_status s = require(path && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<scap_plan>();
    handle->impl = scap::load_plan(path);
    *out = handle.release();
  });
}

scap_status scap_plan_save(const scap_plan* plan, const char* path) {
  if (scap_status s = require(plan && path, "null argument"); s != SCAP_OK) return s;
  return guarded([&] { scap::save_plan(plan->impl, path); });
}

scap_status scap_plan_apply(const scap_model* model, const scap_plan* plan, scap_model** out) {
  if (scap_status s = require(model && plan && out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    auto handle = std::make_unique<scap_model>();
    handle->impl = scap::apply_plan(model->impl, plan->impl);
    *out = handle.release();
  });
}

void scap_plan_free(scap_plan* plan) { delete plan; }

scap_status scap_run(const char* verb, const char* config_path, const char* overrides_json,
                     char** artifact_path_out) {
  if (scap_status s = require(verb && artifact_path_out, "null argument"); s != SCAP_OK) return s;
  return guarded([&] {
    scap::ExperimentConfig cfg;
    const std::string path = to_string_or_empty(config_path);
    if (!path.empty()) cfg = scap::load_experiment_config(path);

    scap::Overrides overrides;
    std::vector<std::string> runs;
    const std::string raw = to_string_or_empty(overrides_json);
    if (!raw.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(raw);
      } catch (const nlohmann::json::exception& e) {
        throw scap::ConfigError(std::string("overrides are not valid JSON: ") + e.what());
      }
      if (!j.is_object()) throw scap::ConfigError("overrides must be a JSON object");
      for (const auto& [key, value] : j.items()) {
        if (key == "out") {
          overrides.out = value.get<std::string>();
        } else if (key == "seed") {
          overrides.seed = value.get<uint64_t>();
        } else if (key == "subset") {
          overrides.subset = value.get<int64_t>();
        } else if (key == "ratio") {
          overrides.ratio = value.get<double>();
        } else if (key == "ratios_file") {
          overrides.ratios_file = value.get<std::string>();
        } else if (key == "scorer") {
          overrides.scorer = value.get<std::string>();
        } else if (key == "runs") {
          runs = value.get<std::vector<std::string>>();
        } else {
          throw scap::ConfigError("unknown override '" + key + "'");
        }
      }
    }
    scap::apply_overrides(cfg, overrides);

    const std::string artifact = scap::run_verb(verb, cfg, runs);
    char* copy = static_cast<char*>(std::malloc(artifact.size() + 1));
    if (copy == nullptr) throw std::bad_alloc();
    std::memcpy(copy, artifact.c_str(), artifact.size() + 1);
    *artifact_path_out = copy;
  });
}

void scap_string_free(char* s) { std::free(s); }

}  // extern "C"
