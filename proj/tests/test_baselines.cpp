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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "core/baselines.hpp"
#include "core/common.hpp"
#include "core/rng.hpp"

using namespace scap;

namespace {

// conv(1->2, k2) with hand-set filters, followed by its norm
Model two_filter_net() {
  Model m;
  m.meta = {"custom", 0, 0, "none"};
  auto conv = std::make_unique<Conv2d>("c", 1, 2, 2, 1, 0, false, true);
  // filter 0: [[1,-1],[2,0]]  filter 1: all zero
  conv->weight.ptr()[0] = 1.0;
  conv->weight.ptr()[1] = -1.0;
  conv->weight.ptr()[2] = 2.0;
  conv->weight.ptr()[3] = 0.0;
  m.layers.push_back(std::move(conv));
  m.layers.push_back(std::make_unique<BatchNorm>("b", 2));
  return m;
}

}  // namespace

TEST_CASE("filter norms sum absolute weights") {
  Model m = two_filter_net();
  ChannelScaleTable t = l1_scores(m);
  CHECK(t.scorer == "l1");
  CHECK(t.finalized);
  CHECK(t.layers.at("c").w[0] == 4.0);
  CHECK(t.layers.at("c").w[1] == 0.0);
  CHECK(t.layers.at("c").order == std::vector<int64_t>{1, 0});
}

TEST_CASE("filter norms are homogeneous and rank-preserving under scaling") {
  Model m = build_vgg(16, 10, "none", SCAConfig{}, 8);
  ChannelScaleTable before = l1_scores(m);
  for (auto& p : m.named_params()) {
    if (p.ref.name == "weight") {
      for (int64_t i = 0; i < p.ref.value->numel(); ++i) p.ref.value->ptr()[i] *= 2.0;
    }
  }
  ChannelScaleTable after = l1_scores(m);
  for (const auto& [id, ls] : before.layers) {
    const auto& scaled = after.layers.at(id);
    CHECK(scaled.order == ls.order);
    for (size_t j = 0; j < ls.w.size(); ++j) {
      CHECK(scaled.w[j] == doctest::Approx(2.0 * ls.w[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("filter norms are permutation-equivariant") {
  Model m = two_filter_net();
  auto* conv = dynamic_cast<Conv2d*>(m.find("c"));
  ChannelScaleTable before = l1_scores(m);
  // swap the two filters
  for (int64_t k = 0; k < 4; ++k) {
    std::swap(conv->weight.ptr()[k], conv->weight.ptr()[4 + k]);
  }
  ChannelScaleTable after = l1_scores(m);
  CHECK(after.layers.at("c").w[0] == before.layers.at("c").w[1]);
  CHECK(after.layers.at("c").w[1] == before.layers.at("c").w[0]);
}

TEST_CASE("norm-scale scores take absolute gamma") {
  Model m = two_filter_net();
  auto* bn = dynamic_cast<BatchNorm*>(m.find("b"));
  bn->gamma.ptr()[0] = 0.5;
  bn->gamma.ptr()[1] = -0.7;
  ChannelScaleTable t = slimming_scores(m);
  CHECK(t.scorer == "slimming");
  CHECK(t.layers.at("c").w[0] == 0.5);
  CHECK(t.layers.at("c").w[1] == 0.7);
  CHECK(t.layers.at("c").order == std::vector<int64_t>{0, 1});

  bn->gamma.ptr()[0] = 0.7;  // tie in |gamma|
  ChannelScaleTable tie = slimming_scores(m);
  CHECK(tie.layers.at("c").order == std::vector<int64_t>{0, 1});
}

TEST_CASE("norm-scale scoring requires a trailing norm") {
  Model m;
  m.meta = {"custom", 0, 0, "none"};
  m.layers.push_back(std::make_unique<Conv2d>("c", 1, 2, 3, 1, 1, false, true));
  CHECK_THROWS_AS(slimming_scores(m), StateError);
}

TEST_CASE("norm-scale scores survive a checkpoint round-trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "scaprune_slim_ckpt";
  fs::remove_all(dir);

  Model m = build_resnet(20, 10, "none", SCAConfig{}, 12);
  Rng rng(99);
  for (auto& p : m.named_params()) {
    if (p.ref.name == "gamma") {
      for (int64_t i = 0; i < p.ref.value->numel(); ++i) {
        p.ref.value->ptr()[i] = rng.uniform(-1.5, 1.5);
      }
    }
  }
  save_checkpoint(m, dir.string(), {{"note", "slim"}});
  Model r = load_checkpoint(dir.string());
  ChannelScaleTable a = slimming_scores(m);
  ChannelScaleTable b = slimming_scores(r);
  for (const auto& [id, ls] : a.layers) {
    CHECK(b.layers.at(id).w == ls.w);
    CHECK(b.layers.at(id).order == ls.order);
  }
  fs::remove_all(dir);
}

TEST_CASE("squeeze-excite scores average gates over the dataset") {
  Model m = build_resnet(20, 10, "se", SCAConfig{}, 30);
  Rng rng(41);
  Tensor images;
  images.resize({3, 3, 16, 16});
  for (int64_t i = 0; i < images.numel(); ++i) images.ptr()[i] = rng.uniform(-1.0, 1.0);

  // oracle: forward each sample alone and average its maps
  ChannelScaleTable oracle = make_scale_table(m, "cpse");
  Tensor one, out;
  for (int64_t s = 0; s < 3; ++s) {
    one.resize({1, 3, 16, 16});
    for (int64_t i = 0; i < one.numel(); ++i) one.ptr()[i] = images.ptr()[s * one.numel() + i];
    m.forward(one, out, FwdCtx{});
    accumulate_from_model(oracle, m);
  }
  oracle.finalize();

  ChannelScaleTable t = cpse_scores(m, images, 2);  // uneven batch split: 2 + 1
  CHECK(t.scorer == "cpse");
  CHECK(t.sample_count == 3);
  CHECK(t.layers.size() == 9);
  for (const auto& [id, ls] : t.layers) {
    const auto& ref = oracle.layers.at(id);
    for (size_t j = 0; j < ls.w.size(); ++j) {
      CHECK(ls.w[j] == doctest::Approx(ref.w[j]).epsilon(1e-12));
      CHECK(ls.w[j] > 0.0);
      CHECK(ls.w[j] < 1.0);
    }
  }
}

TEST_CASE("squeeze-excite scores of a constant dataset equal one sample's gates") {
  Model m = build_resnet(8, 10, "se", SCAConfig{}, 17);
  Tensor images = Tensor::full({4, 3, 16, 16}, 0.3);
  ChannelScaleTable all = cpse_scores(m, images, 4);

  Tensor one = Tensor::full({1, 3, 16, 16}, 0.3);
  ChannelScaleTable single = cpse_scores(m, one, 1);
  for (const auto& [id, ls] : all.layers) {
    const auto& ref = single.layers.at(id);
    for (size_t j = 0; j < ls.w.size(); ++j) {
      CHECK(ls.w[j] == doctest::Approx(ref.w[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("squeeze-excite scoring rejects models without gates") {
  Model m = build_resnet(8, 10, "none", SCAConfig{}, 17);
  Tensor images = Tensor::full({1, 3, 16, 16}, 0.3);
  CHECK_THROWS_AS(cpse_scores(m, images), StateError);
}
