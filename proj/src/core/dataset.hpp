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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace scap {

// Labeled image set held fully in memory. Pixels are stored as raw bytes in
// channel-major order per image (R plane, G plane, B plane) and expanded to
// doubles in [0,1] at batch-assembly time. channel_mean/channel_std are the
// per-channel statistics of the originating train split, in [0,1] units;
// derived sets (test split, subsets) carry the train statistics so that
// normalization stays aligned across splits.
struct Dataset {
  std::string name;   // "cifar10", "cifar100" or "synthetic"
  std::string split;  // "train" or "test"
  int num_classes = 0;
  int64_t image_hw = 32;
  std::vector<uint8_t> pixels;  // size() * 3 * image_hw * image_hw
  std::vector<int> labels;
  std::array<double, 3> channel_mean{0.0, 0.0, 0.0};
  std::array<double, 3> channel_std{1.0, 1.0, 1.0};

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t image_elems() const { return 3 * image_hw * image_hw; }
  void validate() const;  // throws ConfigError on inconsistent fields
};

struct DataBundle {
  Dataset train;
  Dataset test;
};

// Reads the standard binary archives from a local directory. cifar10 expects
// data_batch_1..5.bin and test_batch.bin (1 label byte + 3072 pixel bytes per
// record); cifar100 expects train.bin and test.bin (coarse byte skipped, fine
// label byte used). Record counts are derived from file sizes; the standard
// archives yield the 50000/10000 split. Throws IoError on missing or
// malformed files.
DataBundle load_cifar(const std::string& root, const std::string& name);

// First n images of every class, in file order. The result keeps the source
// normalization statistics. Throws ConfigError when n < 1 or a class has
// fewer than n images.
Dataset subset_per_class(const Dataset& d, int64_t per_class);

// Deterministic learnable set: one random template per class plus bounded
// per-sample noise, labels interleaved 0,1,...,K-1,0,1,... so per-class
// subsetting slices a prefix. Train and test draw from disjoint streams of
// the same seed.
DataBundle make_synthetic(int num_classes, int64_t train_per_class, int64_t test_per_class,
                          uint64_t seed, int64_t image_hw = 32);

struct BatchOptions {
  bool crop = false;       // zero-pad 4 then random 32x32 window
  bool flip = false;       // horizontal mirror with probability 1/2
  bool normalize = false;  // (v - mean[c]) / std[c]
};

// Expands the given sample indices into a (B,3,H,W) double tensor. rng is
// consumed one sample at a time in index order, so a fixed rng state yields a
// fixed batch regardless of how the epoch is split into batches. rng may be
// null when neither crop nor flip is set.
void assemble_batch(const Dataset& d, const std::vector<int64_t>& indices,
                    const BatchOptions& opt, Rng* rng, Tensor& images,
                    std::vector<int>& labels);

// Whole split as one (N,3,H,W) tensor, optionally normalized, no
// augmentation. Convenience for evaluation.
Tensor materialize_images(const Dataset& d, bool normalize);

}  // namespace scap
