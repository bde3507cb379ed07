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

#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/common.hpp"

namespace scap {

namespace {

std::vector<uint8_t> read_all_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
    throw IoError("short read on '" + path + "'");
  }
  return bytes;
}

// Appends one archive file's records to the dataset. label_offset selects the
// label byte within each record header (cifar100 stores coarse then fine).
void append_records(Dataset& d, const std::string& path, int64_t header_bytes,
                    int64_t label_offset) {
  const std::vector<uint8_t> bytes = read_all_bytes(path);
  const int64_t record = header_bytes + d.image_elems();
  if (bytes.empty() || static_cast<int64_t>(bytes.size()) % record != 0) {
    throw IoError("'" + path + "' is not a whole number of " + std::to_string(record) +
                  "-byte records");
  }
  const int64_t count = static_cast<int64_t>(bytes.size()) / record;
  for (int64_t i = 0; i < count; ++i) {
    const uint8_t* rec = bytes.data() + i * record;
    const int label = rec[label_offset];
    if (label >= d.num_classes) {
      throw IoError("'" + path + "' record " + std::to_string(i) + " has label " +
                    std::to_string(label) + " outside " + std::to_string(d.num_classes) +
                    " classes");
    }
    d.labels.push_back(label);
    d.pixels.insert(d.pixels.end(), rec + header_bytes, rec + record);
  }
}

void compute_channel_stats(Dataset& d) {
  const int64_t plane = d.image_hw * d.image_hw;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sum_sq = 0.0;
    int64_t n = 0;
    for (int64_t i = 0; i < d.size(); ++i) {
      const uint8_t* img = d.pixels.data() + i * d.image_elems();
      for (int64_t p = 0; p < plane; ++p) {
        const double v = static_cast<double>(img[c * plane + p]) / 255.0;
        sum += v;
        sum_sq += v * v;
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
    d.channel_mean[static_cast<size_t>(c)] = mean;
    d.channel_std[static_cast<size_t>(c)] = std::max(std::sqrt(var), 1e-8);
  }
}

}  // namespace

void Dataset::validate() const {
  if (num_classes < 1) throw ConfigError("dataset has no classes");
  if (image_hw < 1) throw ConfigError("dataset image size must be positive");
  if (static_cast<int64_t>(pixels.size()) != size() * image_elems()) {
    throw ConfigError("dataset pixel buffer does not match label count");
  }
  for (int label : labels) {
    if (label < 0 || label >= num_classes) throw ConfigError("dataset label out of range");
  }
}

DataBundle load_cifar(const std::string& root, const std::string& name) {
  namespace fs = std::filesystem;
  DataBundle b;
  b.train.split = "train";
  b.test.split = "test";
  if (name == "cifar10") {
    for (Dataset* d : {&b.train, &b.test}) {
      d->name = name;
      d->num_classes = 10;
    }
    for (int i = 1; i <= 5; ++i) {
      append_records(b.train, (fs::path(root) / ("data_batch_" + std::to_string(i) + ".bin")).string(),
                     1, 0);
    }
    append_records(b.test, (fs::path(root) / "test_batch.bin").string(), 1, 0);
  } else if (name == "cifar100") {
    for (Dataset* d : {&b.train, &b.test}) {
      d->name = name;
      d->num_classes = 100;
    }
    append_records(b.train, (fs::path(root) / "train.bin").string(), 2, 1);
    append_records(b.test, (fs::path(root) / "test.bin").string(), 2, 1);
  } else {
    throw ConfigError("unknown dataset '" + name + "' (expected cifar10 or cifar100)");
  }
  compute_channel_stats(b.train);
  b.test.channel_mean = b.train.channel_mean;
  b.test.channel_std = b.train.channel_std;
  b.train.validate();
  b.test.validate();
  return b;
}

Dataset subset_per_class(const Dataset& d, int64_t per_class) {
  if (per_class < 1) throw ConfigError("per-class subset size must be at least 1");
  Dataset out;
  out.name = d.name;
  out.split = d.split;
  out.num_classes = d.num_classes;
  out.image_hw = d.image_hw;
  out.channel_mean = d.channel_mean;
  out.channel_std = d.channel_std;

  std::vector<int64_t> taken(static_cast<size_t>(d.num_classes), 0);
  for (int64_t i = 0; i < d.size(); ++i) {
    int64_t& have = taken[static_cast<size_t>(d.labels[static_cast<size_t>(i)])];
    if (have >= per_class) continue;
    ++have;
    out.labels.push_back(d.labels[static_cast<size_t>(i)]);
    const uint8_t* img = d.pixels.data() + i * d.image_elems();
    out.pixels.insert(out.pixels.end(), img, img + d.image_elems());
  }
  for (int c = 0; c < d.num_classes; ++c) {
    if (taken[static_cast<size_t>(c)] < per_class) {
      throw ConfigError("class " + std::to_string(c) + " has only " +
                        std::to_string(taken[static_cast<size_t>(c)]) + " of " +
                        std::to_string(per_class) + " requested images");
    }
  }
  return out;
}

DataBundle make_synthetic(int num_classes, int64_t train_per_class, int64_t test_per_class,
                          uint64_t seed, int64_t image_hw) {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (train_per_class < 1 || test_per_class < 1) {
    throw ConfigError("synthetic split sizes must be at least 1");
  }
  if (image_hw < 1) throw ConfigError("synthetic image size must be positive");

  const int64_t elems = 3 * image_hw * image_hw;
  std::vector<std::vector<double>> templates(static_cast<size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    Rng rng(Rng::mix(seed, rng_stream::kSynthetic, static_cast<uint64_t>(k)));
    auto& t = templates[static_cast<size_t>(k)];
    t.resize(static_cast<size_t>(elems));
    for (double& v : t) v = rng.uniform(0.2, 0.8);
  }

  auto fill = [&](Dataset& d, int64_t per_class, uint64_t stream_tag) {
    d.name = "synthetic";
    d.num_classes = num_classes;
    d.image_hw = image_hw;
    Rng rng(Rng::mix(seed, rng_stream::kSynthetic, 1000 + stream_tag));
    const int64_t total = per_class * num_classes;
    d.pixels.reserve(static_cast<size_t>(total * elems));
    for (int64_t i = 0; i < total; ++i) {
      const int label = static_cast<int>(i % num_classes);
      d.labels.push_back(label);
      const auto& t = templates[static_cast<size_t>(label)];
      for (int64_t p = 0; p < elems; ++p) {
        const double v = std::clamp(t[static_cast<size_t>(p)] + rng.uniform(-0.15, 0.15), 0.0, 1.0);
        d.pixels.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
      }
    }
  };

  DataBundle b;
  b.train.split = "train";
  b.test.split = "test";
  fill(b.train, train_per_class, 1);
  fill(b.test, test_per_class, 2);
  compute_channel_stats(b.train);
  b.test.channel_mean = b.train.channel_mean;
  b.test.channel_std = b.train.channel_std;
  return b;
}

void assemble_batch(const Dataset& d, const std::vector<int64_t>& indices,
                    const BatchOptions& opt, Rng* rng, Tensor& images,
                    std::vector<int>& labels) {
  if ((opt.crop || opt.flip) && rng == nullptr) {
    throw ConfigError("augmentation requires a random stream");
  }
  const int64_t hw = d.image_hw;
  const int64_t plane = hw * hw;
  images.resize({static_cast<int64_t>(indices.size()), 3, hw, hw});
  labels.clear();
  labels.reserve(indices.size());

  const int64_t pad = 4;
  double* out = images.ptr();
  for (size_t b = 0; b < indices.size(); ++b) {
    const int64_t i = indices[b];
    if (i < 0 || i >= d.size()) throw ConfigError("batch index out of range");
    labels.push_back(d.labels[static_cast<size_t>(i)]);
    const uint8_t* img = d.pixels.data() + i * d.image_elems();

    // one offset pair and one flip decision per sample, drawn even when the
    // result is a no-op so the stream advances identically for every sample
    int64_t dy = 0, dx = 0;
    bool mirror = false;
    if (opt.crop) {
      dy = static_cast<int64_t>(rng->uniform_int(static_cast<uint64_t>(2 * pad + 1))) - pad;
      dx = static_cast<int64_t>(rng->uniform_int(static_cast<uint64_t>(2 * pad + 1))) - pad;
    }
    if (opt.flip) mirror = rng->bernoulli(0.5);

    for (int64_t c = 0; c < 3; ++c) {
      const double mean = opt.normalize ? d.channel_mean[static_cast<size_t>(c)] : 0.0;
      const double inv_std = opt.normalize ? 1.0 / d.channel_std[static_cast<size_t>(c)] : 1.0;
      for (int64_t y = 0; y < hw; ++y) {
        const int64_t sy = y + dy;
        for (int64_t x = 0; x < hw; ++x) {
          int64_t sx = x + dx;
          if (mirror) sx = hw - 1 - sx;
          double v = 0.0;
          if (sy >= 0 && sy < hw && sx >= 0 && sx < hw) {
            v = static_cast<double>(img[c * plane + sy * hw + sx]) / 255.0;
          }
          out[(static_cast<int64_t>(b) * 3 + c) * plane + y * hw + x] = (v - mean) * inv_std;
        }
      }
    }
  }
}

Tensor materialize_images(const Dataset& d, bool normalize) {
  std::vector<int64_t> all(static_cast<size_t>(d.size()));
  for (int64_t i = 0; i < d.size(); ++i) all[static_cast<size_t>(i)] = i;
  Tensor images;
  std::vector<int> labels;
  BatchOptions opt;
  opt.normalize = normalize;
  assemble_batch(d, all, opt, nullptr, images, labels);
  return images;
}

}  // namespace scap
