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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "core/common.hpp"
#include "core/rng.hpp"
#include "core/stats.hpp"

using namespace scap;

namespace {

Tensor map_of(std::initializer_list<double> values) {
  Tensor t;
  t.resize({1, static_cast<int64_t>(values.size()), 1, 1});
  int64_t i = 0;
  for (double v : values) t.ptr()[i++] = v;
  return t;
}

}  // namespace

TEST_CASE("single-sample accumulation is the identity") {
  ChannelScaleTable table;
  table.register_layer("c", 2);
  table.accumulate("c", map_of({0.2, 0.8}));
  CHECK(table.layers["c"].samples == 1);
  CHECK(table.layers["c"].sum[0] == 0.2);
  CHECK(table.layers["c"].sum[1] == 0.8);
  table.finalize();
  CHECK(table.sample_count == 1);
  CHECK(table.layers["c"].w[0] == 0.2);
  CHECK(table.layers["c"].w[1] == 0.8);
}

TEST_CASE("two batches average exactly") {
  ChannelScaleTable table;
  table.register_layer("c", 2);
  table.accumulate("c", map_of({0.2, 0.8}));
  table.accumulate("c", map_of({0.4, 0.6}));
  table.finalize();
  CHECK(table.layers["c"].w[0] == (0.2 + 0.4) / 2.0);
  CHECK(table.layers["c"].w[1] == (0.8 + 0.6) / 2.0);
  CHECK(table.layers["c"].w[0] == doctest::Approx(0.3));
  CHECK(table.layers["c"].w[1] == doctest::Approx(0.7));
}

TEST_CASE("a batch of identical maps averages to itself") {
  ChannelScaleTable table;
  table.register_layer("c", 2);
  Tensor batch;
  batch.resize({3, 2, 1, 1});
  for (int64_t b = 0; b < 3; ++b) {
    batch.ptr()[b * 2] = 0.5;
    batch.ptr()[b * 2 + 1] = 0.5;
  }
  table.accumulate("c", batch);
  table.finalize();
  CHECK(table.sample_count == 3);
  CHECK(table.layers["c"].w[0] == 0.5);
  CHECK(table.layers["c"].w[1] == 0.5);
}

TEST_CASE("finalization divides sums and ranks ascending") {
  ChannelScaleTable table;
  table.register_layer("c", 2);
  Tensor batch;
  batch.resize({10, 2});
  for (int64_t b = 0; b < 10; ++b) {
    batch.at2(b, 0) = 0.1;
    batch.at2(b, 1) = 0.3;
  }
  table.accumulate("c", batch);
  table.finalize();
  CHECK(table.layers["c"].w[0] == doctest::Approx(0.1));
  CHECK(table.layers["c"].w[1] == doctest::Approx(0.3));
  CHECK(table.layers["c"].order == std::vector<int64_t>{0, 1});
}

TEST_CASE("rank ties break by channel index") {
  ChannelScaleTable table;
  table.register_layer("c", 3);
  table.accumulate("c", map_of({0.5, 0.5, 0.1}));
  table.finalize();
  CHECK(table.layers["c"].order == std::vector<int64_t>{2, 0, 1});
}

TEST_CASE("accumulation validates its inputs") {
  ChannelScaleTable table;
  table.register_layer("c", 2);
  CHECK_THROWS_AS(table.accumulate("other", map_of({0.5, 0.5})), ConfigError);
  CHECK_THROWS_AS(table.accumulate("c", map_of({0.5, 0.5, 0.5})), ConfigError);
  Tensor spatial;
  spatial.resize({1, 2, 2, 2});
  CHECK_THROWS_AS(table.accumulate("c", spatial), ConfigError);
  CHECK_THROWS_AS(table.register_layer("c", 3), ConfigError);

  ChannelScaleTable empty;
  CHECK_THROWS_AS(empty.finalize(), StateError);

  ChannelScaleTable starved;
  starved.register_layer("c", 2);
  CHECK_THROWS_AS(starved.finalize(), StateError);

  table.accumulate("c", map_of({0.5, 0.5}));
  table.finalize();
  CHECK_THROWS_AS(table.accumulate("c", map_of({0.5, 0.5})), StateError);
  CHECK_THROWS_AS(table.finalize(), StateError);
}

TEST_CASE("uneven per-layer accumulation is rejected") {
  ChannelScaleTable table;
  table.register_layer("a", 2);
  table.register_layer("b", 2);
  table.accumulate("a", map_of({0.5, 0.5}));
  table.accumulate("b", map_of({0.5, 0.5}));
  table.accumulate("a", map_of({0.5, 0.5}));
  CHECK_THROWS_AS(table.finalize(), StateError);
}

TEST_CASE("averaging matches a brute-force oracle and ignores batch order") {
  const int64_t channels = 32, batches = 64, batch = 5;
  Rng rng(Rng::mix(77, 0, 0));
  std::vector<Tensor> maps;
  for (int64_t i = 0; i < batches; ++i) {
    Tensor t;
    t.resize({batch, channels, 1, 1});
    for (int64_t k = 0; k < t.numel(); ++k) t.ptr()[k] = rng.uniform01();
    maps.push_back(std::move(t));
  }

  // naive reference mean per channel, plus per-channel extremes
  std::vector<double> ref(channels, 0.0), lo(channels, 1e9), hi(channels, -1e9);
  for (const auto& t : maps) {
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t c = 0; c < channels; ++c) {
        const double v = t.ptr()[b * channels + c];
        ref[c] += v;
        lo[c] = std::min(lo[c], v);
        hi[c] = std::max(hi[c], v);
      }
    }
  }
  for (auto& v : ref) v /= static_cast<double>(batches * batch);

  ChannelScaleTable fwd;
  fwd.register_layer("c", channels);
  for (const auto& t : maps) fwd.accumulate("c", t);
  fwd.finalize();

  std::vector<size_t> perm(maps.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng shuffle_rng(123);
  shuffle_rng.shuffle(perm);
  ChannelScaleTable rev;
  rev.register_layer("c", channels);
  for (size_t i : perm) rev.accumulate("c", maps[i]);
  rev.finalize();

  for (int64_t c = 0; c < channels; ++c) {
    CHECK(std::fabs(fwd.layers["c"].w[c] - ref[c]) < 1e-12);
    CHECK(std::fabs(fwd.layers["c"].w[c] - rev.layers["c"].w[c]) < 1e-9);
    CHECK(fwd.layers["c"].w[c] >= lo[c]);
    CHECK(fwd.layers["c"].w[c] <= hi[c]);
  }
}

TEST_CASE("scale tables round-trip through their text form") {
  namespace fs = std::filesystem;
  ChannelScaleTable table;
  table.scorer = "cpsca";
  table.register_layer("conv1", 4);
  table.register_layer("conv2", 2);
  Rng rng(5);
  for (int i = 0; i < 7; ++i) {
    table.accumulate("conv1", map_of({rng.uniform01(), rng.uniform01(), rng.uniform01(),
                                      rng.uniform01()}));
    table.accumulate("conv2", map_of({rng.uniform01(), rng.uniform01()}));
  }
  table.finalize();

  ChannelScaleTable back = table_from_json(table_to_json(table));
  CHECK(back.scorer == "cpsca");
  CHECK(back.sample_count == 7);
  for (const auto& [id, ls] : table.layers) {
    CHECK(back.layers.at(id).w == ls.w);  // 17 digits reproduce doubles exactly
    CHECK(back.layers.at(id).order == ls.order);
  }

  const fs::path path = fs::temp_directory_path() / "scaprune_table_test.json";
  save_table(table, path.string());
  ChannelScaleTable loaded = load_table(path.string());
  CHECK(loaded.layers.at("conv1").w == table.layers.at("conv1").w);
  fs::remove(path);

  CHECK_THROWS_AS(load_table("/nonexistent/table.json"), IoError);
  ChannelScaleTable raw;
  raw.register_layer("c", 2);
  CHECK_THROWS_AS(table_to_json(raw), StateError);
}

TEST_CASE("model harvesting fills one entry per prunable host") {
  SCAConfig cfg;
  Model m = build_resnet(20, 10, "sca", cfg, 21);
  ChannelScaleTable table = make_scale_table(m, "cpsca");
  CHECK(table.layers.size() == 9);  // one prunable conv per block
  CHECK(table.layers.count("s1b1_conv1") == 1);
  CHECK(table.layers.count("s1b1_conv2") == 0);

  ChannelScaleTable fresh = make_scale_table(m, "cpsca");
  CHECK_THROWS_AS(accumulate_from_model(fresh, m), StateError);  // no forward yet

  Tensor x;
  x.resize({2, 3, 32, 32});
  Rng rng(3);
  for (int64_t i = 0; i < x.numel(); ++i) x.ptr()[i] = rng.uniform(-1.0, 1.0);
  Tensor out;
  m.forward(x, out, FwdCtx{});
  accumulate_from_model(table, m);
  m.forward(x, out, FwdCtx{});
  accumulate_from_model(table, m);
  table.finalize();
  CHECK(table.sample_count == 4);
  for (const auto& [id, ls] : table.layers) {
    for (double v : ls.w) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  Model bare = build_resnet(20, 10, "none", cfg, 21);
  ChannelScaleTable t2 = make_scale_table(bare, "cpsca");
  CHECK_THROWS_AS(accumulate_from_model(t2, bare), StateError);
}
