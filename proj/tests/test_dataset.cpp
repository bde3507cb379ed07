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

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "core/common.hpp"
#include "core/dataset.hpp"

using namespace scap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("scaprune_data_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_cifar10_file(const fs::path& p, const std::vector<int>& file_labels, uint8_t base) {
  std::ofstream out(p, std::ios::binary);
  for (size_t r = 0; r < file_labels.size(); ++r) {
    out.put(static_cast<char>(file_labels[r]));
    const uint8_t v = static_cast<uint8_t>(base + r);
    for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(v));
  }
}

}  // namespace

TEST_CASE("synthetic data is deterministic and class-interleaved") {
  DataBundle a = make_synthetic(4, 10, 5, 3, 8);
  CHECK(a.train.size() == 40);
  CHECK(a.test.size() == 20);
  CHECK(a.train.num_classes == 4);
  CHECK(a.train.image_hw == 8);
  for (int64_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.labels[static_cast<size_t>(i)] == static_cast<int>(i % 4));
  }

  DataBundle b = make_synthetic(4, 10, 5, 3, 8);
  CHECK(a.train.pixels == b.train.pixels);
  CHECK(a.test.pixels == b.test.pixels);

  DataBundle c = make_synthetic(4, 10, 5, 4, 8);
  CHECK(a.train.pixels != c.train.pixels);
  CHECK(a.train.pixels != a.test.pixels);

  // same class, different samples: close to the shared template but not equal
  const int64_t elems = a.train.image_elems();
  bool differs = false;
  for (int64_t p = 0; p < elems; ++p) {
    if (a.train.pixels[static_cast<size_t>(p)] !=
        a.train.pixels[static_cast<size_t>(4 * elems + p)]) {
      differs = true;
      break;
    }
  }
  CHECK(differs);

  for (int ch = 0; ch < 3; ++ch) {
    CHECK(a.train.channel_mean[static_cast<size_t>(ch)] > 0.1);
    CHECK(a.train.channel_mean[static_cast<size_t>(ch)] < 0.9);
    CHECK(a.train.channel_std[static_cast<size_t>(ch)] > 0.0);
    CHECK(a.test.channel_mean[static_cast<size_t>(ch)] ==
          a.train.channel_mean[static_cast<size_t>(ch)]);
  }

  CHECK_THROWS_AS(make_synthetic(1, 5, 5, 0, 8), ConfigError);
  CHECK_THROWS_AS(make_synthetic(4, 0, 5, 0, 8), ConfigError);
}

TEST_CASE("per-class subsets take the first images in order") {
  DataBundle b = make_synthetic(4, 10, 5, 7, 8);
  Dataset sub = subset_per_class(b.train, 3);
  CHECK(sub.size() == 12);

  // labels interleave, so the first 12 source images are exactly the subset
  const int64_t elems = b.train.image_elems();
  CHECK(std::equal(sub.pixels.begin(), sub.pixels.end(), b.train.pixels.begin(),
                   b.train.pixels.begin() + 12 * elems));
  std::array<int, 4> counts{0, 0, 0, 0};
  for (int label : sub.labels) counts[static_cast<size_t>(label)]++;
  for (int count : counts) CHECK(count == 3);
  CHECK(sub.channel_mean == b.train.channel_mean);
  CHECK(sub.channel_std == b.train.channel_std);

  CHECK_THROWS_AS(subset_per_class(b.train, 0), ConfigError);
  CHECK_THROWS_AS(subset_per_class(b.train, 11), ConfigError);
}

TEST_CASE("subset order follows file order, not class blocks") {
  Dataset d;
  d.name = "synthetic";
  d.split = "train";
  d.num_classes = 2;
  d.image_hw = 1;
  d.labels = {1, 1, 0, 1, 0, 0};
  for (uint8_t i = 0; i < 6; ++i) {
    for (int c = 0; c < 3; ++c) d.pixels.push_back(static_cast<uint8_t>(10 * i));
  }
  Dataset sub = subset_per_class(d, 2);
  CHECK(sub.labels == std::vector<int>{1, 1, 0, 0});
  CHECK(sub.pixels[0] == 0);
  CHECK(sub.pixels[3] == 10);
  CHECK(sub.pixels[6] == 20);
  CHECK(sub.pixels[9] == 40);
}

TEST_CASE("plain batches reproduce the stored bytes") {
  DataBundle b = make_synthetic(3, 4, 2, 11, 8);
  Tensor all = materialize_images(b.train, false);
  CHECK(all.dims == std::array<int64_t, 4>{12, 3, 8, 8});
  CHECK(all.ndim == 4);
  for (int64_t i = 0; i < all.numel(); ++i) {
    CHECK(all.ptr()[i] ==
          static_cast<double>(b.train.pixels[static_cast<size_t>(i)]) / 255.0);
  }

  Tensor batch;
  std::vector<int> labels;
  assemble_batch(b.train, {5, 0}, BatchOptions{}, nullptr, batch, labels);
  CHECK(labels == std::vector<int>{2, 0});
  const int64_t elems = b.train.image_elems();
  for (int64_t p = 0; p < elems; ++p) {
    CHECK(batch.ptr()[p] == all.ptr()[5 * elems + p]);
    CHECK(batch.ptr()[elems + p] == all.ptr()[p]);
  }

  CHECK_THROWS_AS(assemble_batch(b.train, {99}, BatchOptions{}, nullptr, batch, labels),
                  ConfigError);
}

TEST_CASE("normalization subtracts the stored channel statistics") {
  DataBundle b = make_synthetic(3, 4, 2, 13, 8);
  Tensor raw = materialize_images(b.train, false);
  Tensor norm = materialize_images(b.train, true);
  const int64_t plane = 64;
  for (int64_t i = 0; i < norm.numel(); ++i) {
    const int64_t c = (i / plane) % 3;
    const double expected = (raw.ptr()[i] - b.train.channel_mean[static_cast<size_t>(c)]) /
                            b.train.channel_std[static_cast<size_t>(c)];
    CHECK(norm.ptr()[i] == doctest::Approx(expected).epsilon(1e-12));
  }

  // normalized full train split has near-zero channel means
  for (int64_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (int64_t i = 0; i < norm.dims[0]; ++i) {
      for (int64_t p = 0; p < plane; ++p) sum += norm.at4(i, c, p / 8, p % 8);
    }
    CHECK(std::fabs(sum / static_cast<double>(norm.dims[0] * plane)) < 1e-9);
  }
}

TEST_CASE("cropping shifts a zero-padded window") {
  // pixel value encodes its position so the window placement is observable
  Dataset d;
  d.name = "synthetic";
  d.split = "train";
  d.num_classes = 2;
  d.image_hw = 8;
  d.labels = {0};
  for (int c = 0; c < 3; ++c) {
    for (int p = 0; p < 64; ++p) d.pixels.push_back(static_cast<uint8_t>(p + 1));
  }

  BatchOptions opt;
  opt.crop = true;
  Rng rng(42);
  Tensor batch;
  std::vector<int> labels;
  assemble_batch(d, {0, 0, 0, 0, 0}, opt, &rng, batch, labels);

  Rng replay(42);
  for (int64_t b = 0; b < 5; ++b) {
    const int64_t dy = static_cast<int64_t>(replay.uniform_int(9)) - 4;
    const int64_t dx = static_cast<int64_t>(replay.uniform_int(9)) - 4;
    for (int64_t y = 0; y < 8; ++y) {
      for (int64_t x = 0; x < 8; ++x) {
        const int64_t sy = y + dy, sx = x + dx;
        const double expected = (sy >= 0 && sy < 8 && sx >= 0 && sx < 8)
                                    ? static_cast<double>(sy * 8 + sx + 1) / 255.0
                                    : 0.0;
        CHECK(batch.at4(b, 0, y, x) == expected);
        CHECK(batch.at4(b, 2, y, x) == expected);
      }
    }
  }
}

TEST_CASE("flips mirror columns and draws stay aligned per sample") {
  Dataset d;
  d.name = "synthetic";
  d.split = "train";
  d.num_classes = 2;
  d.image_hw = 4;
  d.labels = {0};
  for (int c = 0; c < 3; ++c) {
    for (int p = 0; p < 16; ++p) d.pixels.push_back(static_cast<uint8_t>(p));
  }

  BatchOptions opt;
  opt.flip = true;
  Rng rng(5);
  Tensor batch;
  std::vector<int> labels;
  std::vector<int64_t> idx(16, 0);
  assemble_batch(d, idx, opt, &rng, batch, labels);

  Rng replay(5);
  int flipped = 0;
  for (int64_t b = 0; b < 16; ++b) {
    const bool mirror = replay.bernoulli(0.5);
    if (mirror) ++flipped;
    for (int64_t y = 0; y < 4; ++y) {
      for (int64_t x = 0; x < 4; ++x) {
        const int64_t sx = mirror ? 3 - x : x;
        CHECK(batch.at4(b, 1, y, x) == static_cast<double>(y * 4 + sx) / 255.0);
      }
    }
  }
  CHECK(flipped > 0);
  CHECK(flipped < 16);

  CHECK_THROWS_AS(assemble_batch(d, idx, opt, nullptr, batch, labels), ConfigError);

  // identical stream, identical batch
  Rng r1(9), r2(9);
  Tensor b1, b2;
  opt.crop = true;
  assemble_batch(d, idx, opt, &r1, b1, labels);
  assemble_batch(d, idx, opt, &r2, b2, labels);
  CHECK(b1.data == b2.data);
}

TEST_CASE("reading the binary archive layout") {
  TempDir tmp;
  int next = 0;
  for (int f = 1; f <= 5; ++f) {
    std::vector<int> labels;
    for (int r = 0; r < 3; ++r) labels.push_back(next++ % 10);
    write_cifar10_file(tmp.path / ("data_batch_" + std::to_string(f) + ".bin"), labels,
                       static_cast<uint8_t>(f * 20));
  }
  write_cifar10_file(tmp.path / "test_batch.bin", {7, 8}, 200);

  DataBundle b = load_cifar(tmp.path.string(), "cifar10");
  CHECK(b.train.size() == 15);
  CHECK(b.test.size() == 2);
  CHECK(b.train.num_classes == 10);
  CHECK(b.train.labels[0] == 0);
  CHECK(b.train.labels[3] == 3);   // second file starts where the first ended
  CHECK(b.train.labels[14] == 4);
  CHECK(b.test.labels == std::vector<int>{7, 8});

  // record r of file f is filled with f*20+r
  CHECK(b.train.pixels[0] == 20);
  CHECK(b.train.pixels[3 * 3072] == 40);  // first record of data_batch_2
  CHECK(b.train.pixels[4 * 3072] == 41);
  CHECK(b.test.pixels[3072] == 201);

  // constant-valued images make the channel stats exact
  double expected_mean = 0.0;
  for (int f = 1; f <= 5; ++f) {
    for (int r = 0; r < 3; ++r) expected_mean += static_cast<double>(f * 20 + r) / 255.0;
  }
  expected_mean /= 15.0;
  for (int c = 0; c < 3; ++c) {
    CHECK(b.train.channel_mean[static_cast<size_t>(c)] ==
          doctest::Approx(expected_mean).epsilon(1e-12));
    CHECK(b.test.channel_mean[static_cast<size_t>(c)] ==
          b.train.channel_mean[static_cast<size_t>(c)]);
  }
}

TEST_CASE("hundred-class archives use the fine label") {
  TempDir tmp;
  auto write100 = [](const fs::path& p, const std::vector<std::pair<int, int>>& recs) {
    std::ofstream out(p, std::ios::binary);
    for (const auto& [coarse, fine] : recs) {
      out.put(static_cast<char>(coarse));
      out.put(static_cast<char>(fine));
      for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(fine));
    }
  };
  write100(tmp.path / "train.bin", {{3, 42}, {19, 99}, {0, 0}});
  write100(tmp.path / "test.bin", {{5, 13}});

  DataBundle b = load_cifar(tmp.path.string(), "cifar100");
  CHECK(b.train.size() == 3);
  CHECK(b.train.num_classes == 100);
  CHECK(b.train.labels == std::vector<int>{42, 99, 0});
  CHECK(b.test.labels == std::vector<int>{13});
  CHECK(b.train.pixels[0] == 42);
  CHECK(b.train.pixels[3072] == 99);
}

TEST_CASE("malformed archives are rejected") {
  TempDir tmp;
  CHECK_THROWS_AS(load_cifar((tmp.path / "absent").string(), "cifar10"), IoError);
  CHECK_THROWS_AS(load_cifar(tmp.path.string(), "mnist"), ConfigError);

  for (int f = 1; f <= 5; ++f) {
    write_cifar10_file(tmp.path / ("data_batch_" + std::to_string(f) + ".bin"), {1}, 0);
  }
  {
    std::ofstream out(tmp.path / "test_batch.bin", std::ios::binary);
    for (int i = 0; i < 100; ++i) out.put(0);  // not a whole record
  }
  CHECK_THROWS_AS(load_cifar(tmp.path.string(), "cifar10"), IoError);

  write_cifar10_file(tmp.path / "test_batch.bin", {200}, 0);  // label byte out of range
  CHECK_THROWS_AS(load_cifar(tmp.path.string(), "cifar10"), IoError);
}

TEST_CASE("dataset field validation") {
  Dataset d;
  d.name = "synthetic";
  d.split = "train";
  d.num_classes = 2;
  d.image_hw = 1;
  d.labels = {0, 1};
  d.pixels.assign(6, 0);
  CHECK_NOTHROW(d.validate());

  d.labels = {0, 2};
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d.labels = {0, 1};
  d.pixels.assign(5, 0);
  CHECK_THROWS_AS(d.validate(), ConfigError);
  d.pixels.assign(6, 0);
  d.num_classes = 0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}
