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
#include <vector>

#include "core/model.hpp"
#include "core/rng.hpp"

namespace testutil {

// Small random chain network: a few conv-norm-relu blocks, an optional mid
// pool, a pooled or direct flatten, and a linear head. Every conv is
// prunable. Weights, norm affines, and running statistics are randomized so
// equivalence checks exercise non-trivial paths.
struct ToyNet {
  scap::Model model;
  std::vector<std::string> convs;  // prunable ids in graph order
  int64_t input_hw = 8;
  int64_t classes = 3;
};

inline ToyNet random_toy_net(scap::Rng& rng) {
  ToyNet toy;
  toy.model.meta = {"custom", 0, static_cast<int>(toy.classes), "none"};
  const int blocks = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4
  const bool use_gap = rng.bernoulli(0.7);
  const int pool_after = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(blocks)));

  int64_t channels = 3;
  int64_t hw = toy.input_hw;
  for (int b = 0; b < blocks; ++b) {
    const int64_t width = 2 + static_cast<int64_t>(rng.uniform_int(7));  // 2..8
    const bool bias = rng.bernoulli(0.5);
    const std::string tag = std::to_string(b + 1);
    auto conv =
        std::make_unique<scap::Conv2d>("conv" + tag, channels, width, 3, 1, 1, bias, true);
    toy.convs.push_back(conv->id());
    toy.model.layers.push_back(std::move(conv));
    toy.model.layers.push_back(std::make_unique<scap::BatchNorm>("bn" + tag, width));
    toy.model.layers.push_back(std::make_unique<scap::ReLU>("relu" + tag));
    if (b + 1 == pool_after && hw >= 4) {
      toy.model.layers.push_back(std::make_unique<scap::MaxPool>("pool" + tag, 2, 2));
      hw /= 2;
    }
    channels = width;
  }
  if (use_gap) {
    toy.model.layers.push_back(std::make_unique<scap::GlobalAvgPool>("gap"));
    hw = 1;
  }
  toy.model.layers.push_back(std::make_unique<scap::Flatten>("flatten"));
  toy.model.layers.push_back(
      std::make_unique<scap::Linear>("fc", channels * hw * hw, toy.classes));

  for (auto& layer : toy.model.layers) {
    if (auto* conv = dynamic_cast<scap::Conv2d*>(layer.get())) {
      conv->init_he(rng);
    } else if (auto* bn = dynamic_cast<scap::BatchNorm*>(layer.get())) {
      for (int64_t c = 0; c < bn->channels; ++c) {
        bn->gamma.ptr()[c] = rng.uniform(0.5, 1.5);
        bn->beta.ptr()[c] = rng.uniform(-0.3, 0.3);
        bn->running_mean.ptr()[c] = rng.uniform(-0.5, 0.5);
        bn->running_var.ptr()[c] = rng.uniform(0.5, 2.0);
      }
    } else if (auto* fc = dynamic_cast<scap::Linear*>(layer.get())) {
      fc->init_normal(rng, 0.05);
    }
  }
  return toy;
}

inline scap::Tensor random_images(scap::Rng& rng, int64_t batch, int64_t hw) {
  scap::Tensor x;
  x.resize({batch, 3, hw, hw});
  for (int64_t i = 0; i < x.numel(); ++i) x.ptr()[i] = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace testutil
