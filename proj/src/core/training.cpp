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

#include "core/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "core/common.hpp"

namespace scap {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (optimizer != "sgd") throw ConfigError("unknown optimizer '" + optimizer + "'");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) {
    throw ConfigError("weight decay must be finite and >= 0");
  }
  if (!(decay_factor > 0.0) || !std::isfinite(decay_factor)) {
    throw ConfigError("decay factor must be positive");
  }
  for (double m : milestones) {
    if (!(m > 0.0) || !(m < 1.0)) throw ConfigError("milestones must lie in (0,1)");
  }
}

double TrainConfig::lr_at(int epoch) const {
  double value = lr;
  for (double m : milestones) {
    if (epoch >= static_cast<int>(std::floor(m * epochs))) value *= decay_factor;
  }
  return value;
}

namespace {

// Trainable parameters first, then running statistics, in model order.
std::vector<std::pair<std::string, Tensor*>> all_state_refs(Model& m) {
  std::vector<std::pair<std::string, Tensor*>> refs;
  for (auto& np : m.named_params()) {
    refs.emplace_back(np.layer_id + "." + np.ref.name, np.ref.value);
  }
  for (auto& ns : m.named_state()) {
    refs.emplace_back(ns.layer_id + "." + ns.ref.name, ns.ref.value);
  }
  return refs;
}

}  // namespace

StateSnapshot snapshot_state(Model& m) {
  StateSnapshot s;
  for (auto& [key, tensor] : all_state_refs(m)) s.entries.emplace_back(key, tensor->data);
  return s;
}

void restore_state(Model& m, const StateSnapshot& s) {
  auto refs = all_state_refs(m);
  if (refs.size() != s.entries.size()) {
    throw StateError("snapshot entry count does not match the model");
  }
  for (size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].first != s.entries[i].first) {
      throw StateError("snapshot entry '" + s.entries[i].first + "' does not match '" +
                       refs[i].first + "'");
    }
    if (refs[i].second->data.size() != s.entries[i].second.size()) {
      throw StateError("snapshot entry '" + refs[i].first + "' has the wrong size");
    }
    refs[i].second->data = s.entries[i].second;
  }
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor& grad) {
  if (logits.ndim != 2) throw ConfigError("loss expects (batch, classes) logits");
  const int64_t batch = logits.dims[0];
  const int64_t classes = logits.dims[1];
  if (batch < 1) throw ConfigError("loss needs at least one sample");
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw ConfigError("label count does not match the batch");
  }

  grad.resize({batch, classes});
  double total = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    const int y = labels[static_cast<size_t>(b)];
    if (y < 0 || y >= classes) throw ConfigError("label out of range");
    const double* row = logits.ptr() + b * classes;
    double peak = row[0];
    for (int64_t k = 1; k < classes; ++k) peak = std::max(peak, row[k]);
    double denom = 0.0;
    for (int64_t k = 0; k < classes; ++k) denom += std::exp(row[k] - peak);
    total += peak + std::log(denom) - row[y];
    double* g = grad.ptr() + b * classes;
    for (int64_t k = 0; k < classes; ++k) {
      g[k] = std::exp(row[k] - peak) / denom / static_cast<double>(batch);
    }
    g[y] -= 1.0 / static_cast<double>(batch);
  }
  return total / static_cast<double>(batch);
}

namespace {

int64_t batch_argmax_matches(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t batch = logits.dims[0];
  const int64_t classes = logits.dims[1];
  int64_t hits = 0;
  for (int64_t b = 0; b < batch; ++b) {
    const double* row = logits.ptr() + b * classes;
    int64_t best = 0;
    for (int64_t k = 1; k < classes; ++k) {
      if (row[k] > row[best]) best = k;
    }
    if (best == labels[static_cast<size_t>(b)]) ++hits;
  }
  return hits;
}

void append_log_line(const std::string& path, const EpochRecord& r) {
  if (path.empty()) return;
  nlohmann::json line = {{"epoch", r.epoch},       {"split", r.split},
                         {"loss", r.loss},         {"accuracy", r.accuracy},
                         {"lr", r.lr},             {"wall_seconds", r.wall_seconds}};
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to log '" + path + "'");
  out << line.dump() << "\n";
}

TrainResult run_loop(Model& model, const Dataset& train, const Dataset& test,
                     const TrainConfig& cfg, const std::string& log_path) {
  cfg.validate();
  train.validate();
  test.validate();
  if (train.num_classes != model.meta.num_classes) {
    throw ConfigError("dataset classes do not match the model head");
  }

  auto params = model.named_params();
  std::vector<std::vector<double>> velocity(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    velocity[i].assign(params[i].ref.value->data.size(), 0.0);
  }

  BatchOptions train_opt;
  train_opt.crop = cfg.augment_crop;
  train_opt.flip = cfg.augment_flip;
  train_opt.normalize = cfg.normalize;

  std::vector<int64_t> order(static_cast<size_t>(train.size()));
  for (int64_t i = 0; i < train.size(); ++i) order[static_cast<size_t>(i)] = i;

  TrainResult result;
  StateSnapshot best;
  Tensor images, logits, grad_logits;
  std::vector<int> labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = cfg.lr_at(epoch);
    Rng shuffle_rng(Rng::mix(cfg.seed, rng_stream::kShuffle, static_cast<uint64_t>(epoch)));
    Rng augment_rng(Rng::mix(cfg.seed, rng_stream::kAugment, static_cast<uint64_t>(epoch)));
    Rng dropout_rng(Rng::mix(cfg.seed, rng_stream::kDropout, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int64_t seen = 0, hits = 0;
    for (int64_t start = 0; start < train.size(); start += cfg.batch_size) {
      const int64_t stop = std::min<int64_t>(start + cfg.batch_size, train.size());
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      assemble_batch(train, idx, train_opt, &augment_rng, images, labels);

      FwdCtx ctx{true, true, &dropout_rng};
      model.forward(images, logits, ctx);
      const double loss = softmax_cross_entropy(logits, labels, grad_logits);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch + 1) + ", sample offset " + std::to_string(start));
      }
      loss_sum += loss * static_cast<double>(stop - start);
      hits += batch_argmax_matches(logits, labels);
      seen += stop - start;

      model.zero_grads();
      model.backward(grad_logits);
      for (size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i].ref.value->data;
        auto& grad = params[i].ref.grad->data;
        auto& vel = velocity[i];
        for (size_t j = 0; j < value.size(); ++j) {
          vel[j] = cfg.momentum * vel[j] + grad[j] + cfg.weight_decay * value[j];
          value[j] -= lr * vel[j];
        }
      }
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    EpochRecord train_row{epoch + 1, "train", loss_sum / static_cast<double>(seen),
                          static_cast<double>(hits) / static_cast<double>(seen), lr, wall};
    result.log.push_back(train_row);
    append_log_line(log_path, train_row);

    const double test_acc = evaluate_split(model, test, cfg);
    const double eval_wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() - wall;
    EpochRecord test_row{epoch + 1, "test", 0.0, test_acc, lr, eval_wall};
    result.log.push_back(test_row);
    append_log_line(log_path, test_row);

    if (result.best_epoch == 0 || test_acc > result.best_test_accuracy) {
      result.best_test_accuracy = test_acc;
      result.best_epoch = epoch + 1;
      best = snapshot_state(model);
    }
    result.final_test_accuracy = test_acc;
  }

  result.final_state = snapshot_state(model);
  restore_state(model, best);
  return result;
}

}  // namespace

TrainResult train_model(Model& model, const Dataset& train, const Dataset& test,
                        const TrainConfig& cfg, const std::string& log_path) {
  return run_loop(model, train, test, cfg, log_path);
}

TrainResult finetune_model(Model& model, const Dataset& train, const Dataset& test,
                           const TrainConfig& cfg, const std::string& log_path) {
  return run_loop(model, train, test, cfg, log_path);
}

ChannelScaleTable collect_statistics(Model& model, const Dataset& train, const TrainConfig& cfg,
                                     const std::string& scorer) {
  cfg.validate();
  train.validate();
  ChannelScaleTable table = make_scale_table(model, scorer);

  BatchOptions opt;
  opt.normalize = cfg.normalize;
  Tensor images, logits;
  std::vector<int> labels;
  for (int64_t start = 0; start < train.size(); start += cfg.batch_size) {
    const int64_t stop = std::min<int64_t>(start + cfg.batch_size, train.size());
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
    assemble_batch(train, idx, opt, nullptr, images, labels);
    model.forward(images, logits, FwdCtx{});
    accumulate_from_model(table, model);
  }
  table.finalize();
  return table;
}

double evaluate_split(Model& model, const Dataset& d, const TrainConfig& cfg) {
  d.validate();
  if (d.size() == 0) throw ConfigError("cannot evaluate an empty split");
  BatchOptions opt;
  opt.normalize = cfg.normalize;
  Tensor images, logits;
  std::vector<int> labels;
  int64_t hits = 0;
  for (int64_t start = 0; start < d.size(); start += cfg.batch_size) {
    const int64_t stop = std::min<int64_t>(start + cfg.batch_size, d.size());
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    for (int64_t i = start; i < stop; ++i) idx[static_cast<size_t>(i - start)] = i;
    assemble_batch(d, idx, opt, nullptr, images, labels);
    model.forward(images, logits, FwdCtx{});
    hits += batch_argmax_matches(logits, labels);
  }
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

}  // namespace scap
