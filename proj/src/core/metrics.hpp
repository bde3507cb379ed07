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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/model.hpp"

namespace scap {

// Cost accounting conventions, applied uniformly everywhere:
//   parameters  trainable tensors only; batch-norm running statistics are
//               state, not parameters
//   conv/linear 2 * k^2 * C_in * C_out * H_out * W_out (multiplies and adds
//               counted separately; bias not counted)
//   batch norm  2 per output element
//   relu        1 per element
//   max pool    k^2 per output element
//   global avg  1 per input element
//   residual    1 per output element
//   dropout, flatten  free
//   sca         spatial part HW*(5C + 11g) + C, channel part 3*C*HW + 19C,
//               summed according to the arrangement
//   se          2*C*HW + 4*mid*C + mid + 4C
struct LayerCost {
  std::string layer_id;
  std::string kind;
  int64_t params = 0;
  int64_t flops = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  int64_t params = 0;
  int64_t flops = 0;

  double giga_flops() const { return static_cast<double>(flops) / 1e9; }
  double million_params() const { return static_cast<double>(params) / 1e6; }
};

// Per-layer parameter counts; flops fields stay zero.
CostReport count_params(const Model& model);

// Per-layer parameter and flop counts for one sample of the given shape.
// Throws ConfigError when the model cannot consume that shape.
CostReport count_flops(const Model& model, int64_t in_channels, int64_t height, int64_t width);

struct EvalResult {
  int64_t correct = 0;
  int64_t total = 0;
  double top1 = 0.0;
};

// Top-1 accuracy of `model` on (N,C,H,W) images with integer labels. Runs in
// eval mode; the result does not depend on batch_size. Ties resolve to the
// lowest logit index.
EvalResult evaluate_accuracy(Model& model, const Tensor& images, const std::vector<int>& labels,
                             int64_t batch_size = 256);

struct LatencyReport {
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  int repeats = 0;
  int warmup = 0;
  int threads = 1;
};

// Median wall-clock time of an eval-mode forward pass. repeats must be at
// least 10; a few untimed warmup passes run first.
LatencyReport measure_latency(Model& model, std::array<int64_t, 4> input_shape, int repeats);

}  // namespace scap
