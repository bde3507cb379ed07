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

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "core/layers.hpp"

namespace scap {

struct ModelMeta {
  std::string arch;       // "vgg" or "resnet"
  int depth = 0;
  int num_classes = 0;
  std::string attention;  // "none", "sca", "se"
};

// Ordered layer sequence with residual taps resolved by layer id. Single
// writer for training; concurrent readers must not share an instance because
// layers cache forward state.
class Model {
 public:
  ModelMeta meta;
  std::vector<std::unique_ptr<Layer>> layers;

  Layer* find(const std::string& id);
  const Layer* find(const std::string& id) const;
  int64_t index_of(const std::string& id) const;  // -1 when absent

  void forward(const Tensor& x, Tensor& out, const FwdCtx& ctx);
  // Gradient w.r.t. the logits of the last cached forward; optionally
  // returns the gradient w.r.t. the network input.
  void backward(const Tensor& grad_logits, Tensor* grad_input = nullptr);

  struct NamedParam {
    std::string layer_id;
    ParamRef ref;
  };
  struct NamedState {
    std::string layer_id;
    StateRef ref;
  };
  std::vector<NamedParam> named_params();
  std::vector<NamedState> named_state();
  void zero_grads();
  int64_t trainable_param_count();

  std::vector<std::string> prunable_conv_ids() const;
  // Zeroes the post-normalization activations of the flagged channels of the
  // batch norm that directly follows `conv_id`. Emulates pruning that conv's
  // output channels without touching the graph.
  void set_channel_mask(const std::string& conv_id, const std::vector<uint8_t>& mask);
  void clear_channel_masks();

 private:
  std::unordered_map<std::string, Tensor> taps_;
};

// --- Builders ----------------------------------------------------------
//
// Both builders create the plain backbone and then run insert_attention when
// `attention` is "sca" or "se". The SCAConfig's group counts are adapted per
// insertion to the largest divisor of the gated channel count.

Model build_vgg(int depth, int num_classes, const std::string& attention, const SCAConfig& cfg,
                uint64_t seed);
Model build_resnet(int depth, int num_classes, const std::string& attention, const SCAConfig& cfg,
                   uint64_t seed);

// Inserts one attention module per marked convolution: after the conv's relu
// when the conv-bn-relu pattern holds, otherwise (pre-addition residual
// branch tail) directly after the conv's batch norm. Returns the insertion
// count.
int insert_attention(Model& model, const std::string& kind, const SCAConfig& cfg, uint64_t seed);

// Deletes every attention layer, preserving all other parameters. Returns
// the number of layers removed.
int remove_attention(Model& model);

// --- Serialization -----------------------------------------------------

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

// Checkpoint directory layout: layers.json (structure), manifest.json
// (dataset/epoch/seed/config hash plus caller extras), params/<layer>.<name>.bin
// blobs for every parameter and running statistic.
void save_checkpoint(const Model& model, const std::string& dir, const nlohmann::json& manifest);
Model load_checkpoint(const std::string& dir);
nlohmann::json read_manifest(const std::string& dir);

void write_tensor_blob(const std::string& path, const Tensor& t);
Tensor read_tensor_blob(const std::string& path);

}  // namespace scap
