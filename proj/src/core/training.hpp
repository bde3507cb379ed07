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
#include <string>
#include <utility>
#include <vector>

#include "core/dataset.hpp"
#include "core/model.hpp"
#include "core/stats.hpp"
#include "core/tensor.hpp"

namespace scap {

// Momentum-SGD recipe with step decay. lr 0 is accepted and performs null
// updates, which the determinism tests rely on.
struct TrainConfig {
  int epochs = 1;
  int64_t batch_size = 128;
  std::string optimizer = "sgd";
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> milestones{0.5, 0.75};  // fractions of epochs
  double decay_factor = 0.1;
  uint64_t seed = 0;
  bool augment_crop = true;
  bool augment_flip = true;
  bool normalize = true;

  void validate() const;  // throws ConfigError
  // lr after step decay, for 0-based epoch index.
  double lr_at(int epoch) const;
};

struct EpochRecord {
  int epoch = 0;          // 1-based
  std::string split;      // "train" or "test"
  double loss = 0.0;      // test rows carry 0 (loss is not evaluated there)
  double accuracy = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

// Flat copy of every parameter and running-statistic tensor, keyed by
// layer.name, for best-epoch bookkeeping.
struct StateSnapshot {
  std::vector<std::pair<std::string, std::vector<double>>> entries;
};

StateSnapshot snapshot_state(Model& m);
void restore_state(Model& m, const StateSnapshot& s);  // StateError on mismatch

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_test_accuracy = 0.0;
  int best_epoch = 0;  // 1-based
  double final_test_accuracy = 0.0;
  StateSnapshot final_state;  // weights after the last epoch
};

// Mean softmax cross-entropy over the batch; fills grad with dLoss/dlogits.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor& grad);

// Runs the full loop: per-epoch shuffle, augmentation, momentum-SGD with the
// configured schedule, test evaluation after every epoch. On return the model
// holds the weights of its best test epoch; result.final_state holds the
// last-epoch weights. When log_path is non-empty every epoch record is
// appended there as one JSON line. Throws NumericError when the loss turns
// non-finite.
TrainResult train_model(Model& model, const Dataset& train, const Dataset& test,
                        const TrainConfig& cfg, const std::string& log_path = "");

// Same loop warm-starting from the given weights. Kept separate to mirror the
// pipeline stages; behavior is identical to train_model.
TrainResult finetune_model(Model& model, const Dataset& train, const Dataset& test,
                           const TrainConfig& cfg, const std::string& log_path = "");

// Dedicated frozen pass: evaluation-mode forwards over the train split in
// file order (normalization per cfg, no augmentation, no shuffling), feeding
// every sample's attention maps into a fresh scale table. The model is not
// modified.
ChannelScaleTable collect_statistics(Model& model, const Dataset& train, const TrainConfig& cfg,
                                     const std::string& scorer = "cpsca");

// Top-1 accuracy of the model on the split, honoring cfg.normalize.
double evaluate_split(Model& model, const Dataset& d, const TrainConfig& cfg);

}  // namespace scap
