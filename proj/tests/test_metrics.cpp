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

#include "core/common.hpp"
#include "core/metrics.hpp"
#include "core/rng.hpp"

using namespace scap;

namespace {

SCAConfig default_cfg() { return SCAConfig{}; }

Model single_conv(int64_t in_c, int64_t out_c, int64_t k, bool bias) {
  Model m;
  m.meta = {"custom", 0, 0, "none"};
  m.layers.push_back(std::make_unique<Conv2d>("c", in_c, out_c, k, 1, k / 2, bias, false));
  return m;
}

const LayerCost& find_cost(const CostReport& r, const std::string& id) {
  for (const auto& c : r.layers) {
    if (c.layer_id == id) return c;
  }
  throw std::runtime_error("no cost row for " + id);
}

}  // namespace

TEST_CASE("parameter counting for elementary graphs") {
  CHECK(count_params(Model{}).params == 0);
  CHECK(count_params(single_conv(3, 64, 3, true)).params == 1792);
  CHECK(count_params(single_conv(3, 64, 3, false)).params == 1728);

  Model bn;
  bn.layers.push_back(std::make_unique<BatchNorm>("b", 4));
  CHECK(count_params(bn).params == 8);  // affine only, running stats are state
}

TEST_CASE("flop counting for elementary graphs") {
  Model m = single_conv(3, 64, 3, true);
  CostReport r = count_flops(m, 3, 32, 32);
  CHECK(r.flops == 3538944);
  CHECK(find_cost(r, "c").flops == 3538944);
  CHECK(find_cost(r, "c").params == 1792);

  Model tiny = single_conv(1, 1, 1, false);
  CHECK(count_flops(tiny, 1, 1, 1).flops == 2);
}

TEST_CASE("flop linearity in output width") {
  Model wide = single_conv(16, 64, 3, false);
  Model narrow = single_conv(16, 32, 3, false);
  CHECK(count_flops(wide, 16, 8, 8).flops == 2 * count_flops(narrow, 16, 8, 8).flops);
}

TEST_CASE("backbone cost anchors") {
  Model vgg16 = build_vgg(16, 10, "none", default_cfg(), 1);
  CostReport v16 = count_flops(vgg16, 3, 32, 32);
  CHECK(v16.params == 16865354);
  CHECK(v16.flops == 631627776);
  CHECK(std::fabs(v16.giga_flops() - 0.63163) / 0.63163 < 0.05);
  CHECK(std::fabs(v16.million_params() - 16.87) / 16.87 < 0.05);

  Model vgg19 = build_vgg(19, 10, "none", default_cfg(), 1);
  CHECK(count_flops(vgg19, 3, 32, 32).flops == 801576960);

  Model r56 = build_resnet(56, 10, "none", default_cfg(), 1);
  CostReport c56 = count_flops(r56, 3, 32, 32);
  CHECK(c56.params == 853018);
  CHECK(c56.flops == 252830976);
  CHECK(std::fabs(c56.giga_flops() - 0.25257) / 0.25257 < 0.02);
  CHECK(std::fabs(c56.million_params() - 0.85) / 0.85 < 0.02);

  Model r20 = build_resnet(20, 10, "none", default_cfg(), 1);
  CHECK(std::fabs(count_params(r20).params / 1e6 - 0.27) / 0.27 < 0.02);
}

TEST_CASE("report totals equal the sum of the breakdown") {
  Model m = build_resnet(20, 10, "sca", default_cfg(), 1);
  CostReport r = count_flops(m, 3, 32, 32);
  int64_t p = 0, f = 0;
  for (const auto& c : r.layers) {
    p += c.params;
    f += c.flops;
    if (c.kind == "conv" || c.kind == "linear") CHECK(c.flops % 2 == 0);
  }
  CHECK(p == r.params);
  CHECK(f == r.flops);
  CHECK(r.params == count_params(m).params);
}

TEST_CASE("attention modules add cost without touching backbone convolutions") {
  Model bare = build_vgg(16, 10, "none", default_cfg(), 2);
  Model inst = build_vgg(16, 10, "sca", default_cfg(), 2);
  CostReport rb = count_flops(bare, 3, 32, 32);
  CostReport ri = count_flops(inst, 3, 32, 32);
  CHECK(ri.flops > rb.flops);
  CHECK(ri.params - rb.params == 18560);
  for (const auto& c : rb.layers) {
    if (c.kind == "conv") CHECK(find_cost(ri, c.layer_id).flops == c.flops);
  }
}

TEST_CASE("flop walk rejects inconsistent shapes") {
  Model m;
  m.layers.push_back(std::make_unique<Flatten>("f"));
  m.layers.push_back(std::make_unique<Linear>("fc", 100, 10));
  CHECK_THROWS_AS(count_flops(m, 3, 4, 4), ConfigError);  // 48 features into 100

  Model deep = single_conv(3, 8, 3, false);
  CHECK_THROWS_AS(count_flops(deep, 4, 32, 32), ConfigError);  // channel mismatch
  CHECK_THROWS_AS(count_flops(deep, 3, 0, 32), ConfigError);
}

TEST_CASE("constant logits score chance level on a balanced set") {
  Model m;
  m.meta = {"custom", 0, 10, "none"};
  m.layers.push_back(std::make_unique<Flatten>("f"));
  m.layers.push_back(std::make_unique<Linear>("fc", 12, 10));
  // weights and biases stay zero: every class gets the same logit

  Tensor images = Tensor::zeros({20, 3, 2, 2});
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 10);
  EvalResult res = evaluate_accuracy(m, images, labels, 7);
  CHECK(res.total == 20);
  CHECK(res.top1 == doctest::Approx(0.10));
}

TEST_CASE("accuracy is independent of batch size") {
  Model m = build_resnet(8, 10, "none", default_cfg(), 6);
  Rng rng(31);
  Tensor images;
  images.resize({13, 3, 16, 16});
  for (int64_t i = 0; i < images.numel(); ++i) images.ptr()[i] = rng.uniform(-1.0, 1.0);
  std::vector<int> labels;
  for (int i = 0; i < 13; ++i) labels.push_back(rng.uniform_int(10));

  EvalResult a = evaluate_accuracy(m, images, labels, 1);
  EvalResult b = evaluate_accuracy(m, images, labels, 5);
  EvalResult c = evaluate_accuracy(m, images, labels, 64);
  CHECK(a.correct == b.correct);
  CHECK(b.correct == c.correct);
}

TEST_CASE("accuracy evaluation validates its inputs") {
  Model m = build_resnet(8, 10, "none", default_cfg(), 6);
  Tensor none = Tensor::zeros({0, 3, 16, 16});
  CHECK_THROWS_AS(evaluate_accuracy(m, none, {}), ConfigError);

  Tensor one = Tensor::zeros({1, 3, 16, 16});
  CHECK_THROWS_AS(evaluate_accuracy(m, one, {0, 1}), ConfigError);
  CHECK_THROWS_AS(evaluate_accuracy(m, one, {99}), ConfigError);
}

TEST_CASE("latency measurement reports a stable median") {
  Model m = build_resnet(8, 10, "none", default_cfg(), 6);
  CHECK_THROWS_AS(measure_latency(m, {1, 3, 32, 32}, 9), ConfigError);

  LatencyReport a = measure_latency(m, {1, 3, 32, 32}, 11);
  LatencyReport b = measure_latency(m, {1, 3, 32, 32}, 11);
  CHECK(a.median_ms > 0.0);
  CHECK(a.min_ms <= a.median_ms);
  CHECK(a.median_ms <= a.max_ms);
  CHECK(std::fabs(a.median_ms - b.median_ms) / std::max(a.median_ms, b.median_ms) < 0.20);
}
