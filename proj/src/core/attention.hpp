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

#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace scap {

// How the spatial and channel submodules are combined. The sequential
// spatial-first order is the default; for the parallel arrangement both maps
// are computed from the raw input and applied multiplicatively.
enum class Arrangement {
  kSpatialOnly,
  kChannelOnly,
  kSpatialThenChannel,
  kChannelThenSpatial,
  kParallel,
};

const char* arrangement_name(Arrangement a);
Arrangement arrangement_from_name(const std::string& name);

struct SCAConfig {
  int spatial_groups = 64;  // g: channel groups of the spatial submodule
  int gn_groups = 4;        // G: channel groups of the normalization
  double eps_spatial = 1e-5;  // added to the std itself (outside the sqrt)
  double eps_gn = 1e-5;       // added to the variance (inside the sqrt)
  Arrangement arrangement = Arrangement::kSpatialThenChannel;

  // Throws ConfigError unless both group counts divide `channels`.
  void validate_for_channels(int64_t channels) const;

  // Largest divisor of `channels` that does not exceed `requested`; used to
  // adapt the default group counts to narrow layers.
  static int fit_groups(int requested, int64_t channels);
};

// Learnable state of one attention module over C channels: a per-group
// affine for the spatial branch and independent per-channel affines for the
// avg- and max-pooled channel branches. Identity at init.
struct SCAParams {
  Tensor spatial_scale;  // [g]
  Tensor spatial_shift;  // [g]
  Tensor gn_avg_gamma;   // [C]
  Tensor gn_avg_beta;    // [C]
  Tensor gn_max_gamma;   // [C]
  Tensor gn_max_beta;    // [C]

  int64_t param_count() const;
  bool all_finite() const;
};

// Identity-initialized parameters for a module over `channels` channels.
// Throws ConfigError if the config's group counts do not divide `channels`.
SCAParams init_params(int64_t channels, const SCAConfig& cfg);

// Gradients w.r.t. SCAParams, laid out identically.
struct SCAParamGrads {
  Tensor spatial_scale;
  Tensor spatial_shift;
  Tensor gn_avg_gamma;
  Tensor gn_avg_beta;
  Tensor gn_max_gamma;
  Tensor gn_max_beta;

  static SCAParamGrads zeros_like(const SCAParams& p);
  void accumulate(const SCAParamGrads& o);
};

// Intermediates of the spatial submodule kept for the backward pass.
struct SpatialCache {
  Tensor input;        // (B, C, H, W)
  Tensor similarity;   // (B, g, n): per-position similarity scores
  Tensor normalized;   // (B, g, n): scores after per-group standardization
  Tensor descriptor;   // (B, g, C/g): summed avg+max group descriptor
  Tensor mean;         // (B, g)
  Tensor std;          // (B, g): biased std of the similarities
  std::vector<int> max_pos;  // (B * g * C/g): argmax position per group channel
  Tensor map;          // (B, g, H, W)
};

// Intermediates of the channel submodule.
struct ChannelCache {
  Tensor input;       // (B, C, H, W)
  Tensor avg_pool;    // (B, C)
  Tensor max_pool;    // (B, C)
  std::vector<int> max_pos;  // (B * C): argmax spatial position per channel
  Tensor avg_norm;    // (B, C): standardized avg descriptor, pre-affine
  Tensor max_norm;    // (B, C)
  Tensor avg_mean, avg_std;  // (B, G)
  Tensor max_mean, max_std;  // (B, G)
  Tensor map;         // (B, C)
};

// --- Spatial attention -----------------------------------------------------
//
// Splits channels into g groups. Per group, a global descriptor is formed by
// summing the spatial average- and max-pooled group features; the dot product
// between the descriptor and each position's local feature gives a per-
// position score, which is standardized over the positions of that group
// (std + eps in the denominator), passed through the per-group affine and a
// sigmoid. The resulting (B, g, H, W) map scales every channel of its group.
//
// Returns the map in `a_s` (B, g, H, W) and the refined features in `x_s`
// (same shape as x). When `cache` is non-null the intermediate state needed
// by spatial_attention_backward is kept.
void spatial_attention_forward(const Tensor& x, const SCAParams& params, const SCAConfig& cfg,
                               Tensor& a_s, Tensor& x_s, SpatialCache* cache = nullptr);

// Backward for the spatial submodule given d(loss)/d(x_s). Accumulates into
// `grads` and writes d(loss)/dx to `grad_x`.
void spatial_attention_backward(const SpatialCache& cache, const SCAParams& params,
                                const SCAConfig& cfg, const Tensor& grad_xs, Tensor& grad_x,
                                SCAParamGrads& grads);

// --- Channel attention -----------------------------------------------------
//
// Global average- and max-pools each channel, normalizes each pooled
// descriptor over channel groups of size C/G (variance + eps inside the
// sqrt), applies the branch affines, sums the branches and takes a sigmoid.
// The resulting (B, C, 1, 1) map scales each channel.
void channel_attention_forward(const Tensor& x_s, const SCAParams& params, const SCAConfig& cfg,
                               Tensor& a_c, Tensor& x_out, ChannelCache* cache = nullptr);

void channel_attention_backward(const ChannelCache& cache, const SCAParams& params,
                                const SCAConfig& cfg, const Tensor& grad_out, Tensor& grad_xs,
                                SCAParamGrads& grads);

// --- Full module -----------------------------------------------------------

struct SCACache {
  Arrangement arrangement = Arrangement::kSpatialThenChannel;
  SpatialCache spatial;
  ChannelCache channel;
  bool has_spatial = false;
  bool has_channel = false;
  // Parallel arrangement only: raw input and both maps, so the product rule
  // can be applied in backward.
  Tensor input;
  Tensor a_s, a_c;
};

// Runs the configured arrangement. `a_c` always has shape (B, C, 1, 1); for
// arrangements without a channel submodule it is all-ones. `x_out` has the
// shape of `x`.
void sca_forward(const Tensor& x, const SCAParams& params, const SCAConfig& cfg, Tensor& x_out,
                 Tensor& a_c, SCACache* cache = nullptr);

void sca_backward(const SCACache& cache, const SCAParams& params, const SCAConfig& cfg,
                  const Tensor& grad_out, Tensor& grad_x, SCAParamGrads& grads);

}  // namespace scap
