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

#include "core/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "core/common.hpp"

namespace scap {

namespace {

// Fills one layer of a weight-derived table: a single pseudo-sample holding
// the raw scores, so the finalized mean equals the scores themselves.
void set_direct_scores(ChannelScaleTable& table, const std::string& id,
                       const std::vector<double>& scores) {
  table.register_layer(id, static_cast<int64_t>(scores.size()));
  Tensor one;
  one.resize({1, static_cast<int64_t>(scores.size())});
  std::memcpy(one.ptr(), scores.data(), scores.size() * sizeof(double));
  table.accumulate(id, one);
}

const BatchNorm* norm_behind(const Model& model, const std::string& conv_id) {
  const int64_t at = model.index_of(conv_id);
  for (size_t i = static_cast<size_t>(at) + 1; i < model.layers.size(); ++i) {
    if (auto* bn = dynamic_cast<const BatchNorm*>(model.layers[i].get())) return bn;
    if (dynamic_cast<const Conv2d*>(model.layers[i].get()) ||
        dynamic_cast<const Linear*>(model.layers[i].get())) {
      break;
    }
  }
  return nullptr;
}

}  // namespace

ChannelScaleTable l1_scores(const Model& model) {
  ChannelScaleTable table;
  table.scorer = "l1";
  for (const auto& l : model.layers) {
    auto* conv = dynamic_cast<const Conv2d*>(l.get());
    if (conv == nullptr || !conv->prunable) continue;
    const int64_t per_filter = conv->weight.numel() / conv->out_channels;
    std::vector<double> scores(static_cast<size_t>(conv->out_channels), 0.0);
    for (int64_t j = 0; j < conv->out_channels; ++j) {
      const double* f = conv->weight.ptr() + j * per_filter;
      double acc = 0.0;
      for (int64_t k = 0; k < per_filter; ++k) acc += std::fabs(f[k]);
      scores[static_cast<size_t>(j)] = acc;
    }
    set_direct_scores(table, conv->id(), scores);
  }
  if (table.layers.empty()) throw ConfigError("model has no prunable convolutions");
  table.finalize();
  return table;
}

ChannelScaleTable slimming_scores(const Model& model) {
  ChannelScaleTable table;
  table.scorer = "slimming";
  for (const auto& l : model.layers) {
    auto* conv = dynamic_cast<const Conv2d*>(l.get());
    if (conv == nullptr || !conv->prunable) continue;
    const BatchNorm* bn = norm_behind(model, conv->id());
    if (bn == nullptr) {
      throw StateError("no batch norm follows prunable conv '" + conv->id() + "'");
    }
    std::vector<double> scores(static_cast<size_t>(bn->channels));
    for (int64_t j = 0; j < bn->channels; ++j) {
      scores[static_cast<size_t>(j)] = std::fabs(bn->gamma.ptr()[j]);
    }
    set_direct_scores(table, conv->id(), scores);
  }
  if (table.layers.empty()) throw ConfigError("model has no prunable convolutions");
  table.finalize();
  return table;
}

ChannelScaleTable cpse_scores(Model& model, const Tensor& images, int64_t batch_size) {
  if (model.meta.attention != "se") {
    throw StateError("squeeze-excite scoring needs a model built with attention 'se'");
  }
  if (images.ndim != 4 || images.dims[0] < 1) throw ConfigError("images must be (N,C,H,W)");
  if (batch_size < 1) throw ConfigError("batch size must be positive");

  ChannelScaleTable table = make_scale_table(model, "cpse");
  const int64_t n = images.dims[0];
  const int64_t sample = images.numel() / n;
  Tensor batch, out;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t m = std::min(batch_size, n - start);
    batch.resize({m, images.dims[1], images.dims[2], images.dims[3]});
    std::memcpy(batch.ptr(), images.ptr() + start * sample,
                static_cast<size_t>(m * sample) * sizeof(double));
    model.forward(batch, out, FwdCtx{});
    accumulate_from_model(table, model);
  }
  table.finalize();
  return table;
}

}  // namespace scap
