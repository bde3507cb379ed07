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

#include "core/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>

#include "core/common.hpp"

namespace scap {

namespace {

int64_t layer_param_count(Layer& layer) {
  int64_t n = 0;
  for (auto& p : layer.param_refs()) n += p.value->numel();
  return n;
}

int64_t sca_flops(const SCALayer& att, int64_t hw) {
  const int64_t C = att.channels;
  const int64_t g = att.cfg.spatial_groups;
  const int64_t spatial = hw * (5 * C + 11 * g) + C;
  const int64_t channel = 3 * C * hw + 19 * C;
  switch (att.cfg.arrangement) {
    case Arrangement::kSpatialOnly:
      return spatial;
    case Arrangement::kChannelOnly:
      return channel;
    default:
      return spatial + channel;
  }
}

// Shape of the activation between layers while walking the graph statically.
struct ShapeState {
  bool flat = false;
  int64_t c = 0, h = 0, w = 0;  // spatial form
  int64_t features = 0;         // flattened form
};

int64_t flops_for(Layer& layer, ShapeState& s) {
  const std::string kind = layer.kind();
  if (kind == "conv") {
    auto& conv = static_cast<Conv2d&>(layer);
    if (s.flat) throw ConfigError("convolution '" + conv.id() + "' after flatten");
    if (s.c != conv.in_channels) {
      throw ConfigError("convolution '" + conv.id() + "' expects " +
                        std::to_string(conv.in_channels) + " channels, got " +
                        std::to_string(s.c));
    }
    const int64_t ho = (s.h + 2 * conv.padding - conv.kernel) / conv.stride + 1;
    const int64_t wo = (s.w + 2 * conv.padding - conv.kernel) / conv.stride + 1;
    if (ho < 1 || wo < 1) throw ConfigError("convolution '" + conv.id() + "' output collapses");
    const int64_t f =
        2 * conv.kernel * conv.kernel * conv.in_channels * conv.out_channels * ho * wo;
    s.c = conv.out_channels;
    s.h = ho;
    s.w = wo;
    return f;
  }
  if (kind == "bn") {
    auto& bn = static_cast<BatchNorm&>(layer);
    if (s.flat || s.c != bn.channels) throw ConfigError("norm '" + bn.id() + "' shape mismatch");
    return 2 * s.c * s.h * s.w;
  }
  if (kind == "relu") return s.flat ? s.features : s.c * s.h * s.w;
  if (kind == "maxpool") {
    auto& pool = static_cast<MaxPool&>(layer);
    if (s.flat) throw ConfigError("pool '" + pool.id() + "' after flatten");
    const int64_t ho = (s.h - pool.kernel) / pool.stride + 1;
    const int64_t wo = (s.w - pool.kernel) / pool.stride + 1;
    if (ho < 1 || wo < 1) throw ConfigError("pool '" + pool.id() + "' output collapses");
    const int64_t f = pool.kernel * pool.kernel * s.c * ho * wo;
    s.h = ho;
    s.w = wo;
    return f;
  }
  if (kind == "gap") {
    if (s.flat) throw ConfigError("pool '" + layer.id() + "' after flatten");
    const int64_t f = s.c * s.h * s.w;
    s.h = 1;
    s.w = 1;
    return f;
  }
  if (kind == "flatten") {
    if (!s.flat) {
      s.features = s.c * s.h * s.w;
      s.flat = true;
    }
    return 0;
  }
  if (kind == "linear") {
    auto& fc = static_cast<Linear&>(layer);
    if (!s.flat) throw ConfigError("linear '" + fc.id() + "' needs flattened input");
    if (s.features != fc.in_features) {
      throw ConfigError("linear '" + fc.id() + "' expects " + std::to_string(fc.in_features) +
                        " features, got " + std::to_string(s.features));
    }
    s.features = fc.out_features;
    return 2 * fc.in_features * fc.out_features;
  }
  if (kind == "dropout") return 0;
  if (kind == "residual_add") {
    auto& add = static_cast<ResidualAdd&>(layer);
    if (s.flat || s.c != add.out_channels) {
      throw ConfigError("residual '" + add.id() + "' shape mismatch");
    }
    return s.c * s.h * s.w;
  }
  if (kind == "sca") {
    auto& att = static_cast<SCALayer&>(layer);
    if (s.flat || s.c != att.channels) {
      throw ConfigError("attention '" + att.id() + "' shape mismatch");
    }
    return sca_flops(att, s.h * s.w);
  }
  if (kind == "se") {
    auto& se = static_cast<SELayer&>(layer);
    if (s.flat || s.c != se.channels) {
      throw ConfigError("attention '" + se.id() + "' shape mismatch");
    }
    const int64_t hw = s.h * s.w;
    return 2 * se.channels * hw + 4 * se.mid * se.channels + se.mid + 4 * se.channels;
  }
  throw ConfigError(std::string("unknown layer kind '") + kind + "' in cost walk");
}

}  // namespace

CostReport count_params(const Model& model) {
  CostReport report;
  for (const auto& l : model.layers) {
    // param_refs hands out mutable views; counting only reads them
    auto& layer = const_cast<Layer&>(*l);
    LayerCost cost{layer.id(), layer.kind(), layer_param_count(layer), 0};
    report.params += cost.params;
    report.layers.push_back(std::move(cost));
  }
  return report;
}

CostReport count_flops(const Model& model, int64_t in_channels, int64_t height, int64_t width) {
  if (in_channels < 1 || height < 1 || width < 1) throw ConfigError("bad input shape");
  CostReport report;
  ShapeState s;
  s.c = in_channels;
  s.h = height;
  s.w = width;
  for (const auto& l : model.layers) {
    auto& layer = const_cast<Layer&>(*l);
    LayerCost cost{layer.id(), layer.kind(), layer_param_count(layer), flops_for(layer, s)};
    report.params += cost.params;
    report.flops += cost.flops;
    report.layers.push_back(std::move(cost));
  }
  return report;
}

EvalResult evaluate_accuracy(Model& model, const Tensor& images, const std::vector<int>& labels,
                             int64_t batch_size) {
  if (images.ndim != 4) throw ConfigError("evaluation images must be (N,C,H,W)");
  const int64_t n = images.dims[0];
  if (n == 0) throw ConfigError("empty evaluation set");
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ConfigError("label count " + std::to_string(labels.size()) + " does not match " +
                      std::to_string(n) + " images");
  }
  if (batch_size < 1) throw ConfigError("batch size must be positive");

  const int64_t sample = images.numel() / n;
  EvalResult result;
  result.total = n;
  Tensor batch, logits;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t m = std::min(batch_size, n - start);
    batch.resize({m, images.dims[1], images.dims[2], images.dims[3]});
    std::memcpy(batch.ptr(), images.ptr() + start * sample,
                static_cast<size_t>(m * sample) * sizeof(double));
    model.forward(batch, logits, FwdCtx{});
    if (logits.ndim != 2 || logits.dims[0] != m) throw NumericError("unexpected logit shape");
    const int64_t classes = logits.dims[1];
    for (int64_t i = 0; i < m; ++i) {
      const int label = labels[static_cast<size_t>(start + i)];
      if (label < 0 || label >= classes) {
        throw ConfigError("label " + std::to_string(label) + " outside " +
                          std::to_string(classes) + " classes");
      }
      const double* row = logits.ptr() + i * classes;
      int64_t best = 0;
      for (int64_t c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == label) ++result.correct;
    }
  }
  result.top1 = static_cast<double>(result.correct) / static_cast<double>(result.total);
  return result;
}

LatencyReport measure_latency(Model& model, std::array<int64_t, 4> input_shape, int repeats) {
  if (repeats < 10) throw ConfigError("latency measurement needs at least 10 repeats");
  Tensor x;
  x.resize({input_shape[0], input_shape[1], input_shape[2], input_shape[3]});
  for (int64_t i = 0; i < x.numel(); ++i) {
    x.ptr()[i] = 0.001 * static_cast<double>(i % 1024) - 0.5;
  }

  LatencyReport report;
  report.repeats = repeats;
  report.warmup = 3;
  report.threads = 1;

  Tensor out;
  for (int i = 0; i < report.warmup; ++i) model.forward(x, out, FwdCtx{});

  std::vector<double> samples;
  samples.reserve(static_cast<size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(x, out, FwdCtx{});
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  report.min_ms = samples.front();
  report.max_ms = samples.back();
  const size_t mid = samples.size() / 2;
  report.median_ms =
      samples.size() % 2 == 1 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
  return report;
}

}  // namespace scap
