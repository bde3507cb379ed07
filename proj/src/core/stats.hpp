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
#include <string>
#include <vector>

#include <json.hpp>

#include "core/model.hpp"
#include "core/tensor.hpp"

namespace scap {

struct LayerScale {
  int64_t channels = 0;
  int64_t samples = 0;
  std::vector<double> sum;   // compensated (Kahan) running sums, one per channel
  std::vector<double> comp;  // running compensation terms
  std::vector<double> w;     // finalized per-channel mean
  std::vector<int64_t> order;  // channel indices by ascending w, ties by index
};

// Per-layer, per-channel importance accumulator. Channel weights of every
// sample are summed individually (never batch-averaged first) with
// compensated summation, so the final mean is independent of batch order.
class ChannelScaleTable {
 public:
  std::string scorer = "cpsca";
  int64_t sample_count = 0;  // set at finalization; uniform across layers
  bool finalized = false;
  std::map<std::string, LayerScale> layers;

  // Declares a scored layer. Re-registering with the same width is a no-op.
  void register_layer(const std::string& id, int64_t channels);

  // Adds each sample of a (B,C,1,1) or (B,C) map into the layer's sums.
  void accumulate(const std::string& id, const Tensor& map);

  // Computes per-channel means and the ascending rank order. Requires every
  // registered layer to have seen the same positive number of samples.
  void finalize();
};

// Registers every prunable convolution of the model.
ChannelScaleTable make_scale_table(const Model& model, const std::string& scorer);

// Harvests the attention maps produced by the model's last forward pass into
// the table, one entry per prunable host convolution.
void accumulate_from_model(ChannelScaleTable& table, const Model& model);

// Text form: every weight rendered with 17 significant digits, which decimal
// round-trips a double exactly.
nlohmann::json table_to_json(const ChannelScaleTable& table);
ChannelScaleTable table_from_json(const nlohmann::json& j);
void save_table(const ChannelScaleTable& table, const std::string& path);
ChannelScaleTable load_table(const std::string& path);

}  // namespace scap
