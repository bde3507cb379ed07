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
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace scap {

// Dense row-major tensor of doubles, up to 4 dims. Feature maps are
// (batch, channels, height, width); weights use whatever rank they need.
struct Tensor {
  std::vector<double> data;
  std::array<int64_t, 4> dims{0, 0, 0, 0};
  int ndim = 0;

  Tensor() = default;
  explicit Tensor(std::initializer_list<int64_t> shape) { resize(shape); }

  static Tensor zeros(std::initializer_list<int64_t> shape) {
    Tensor t;
    t.resize(shape);
    return t;
  }
  static Tensor full(std::initializer_list<int64_t> shape, double v) {
    Tensor t;
    t.resize(shape);
    t.fill(v);
    return t;
  }

  void resize(std::initializer_list<int64_t> shape);
  void resize(const std::vector<int64_t>& shape);

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < ndim; ++i) n *= dims[i];
    return ndim == 0 ? 0 : n;
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& operator[](int64_t i) { return data[i]; }
  double operator[](int64_t i) const { return data[i]; }

  // NCHW accessors.
  double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data[((n * dims[1] + c) * dims[2] + h) * dims[3] + w];
  }
  double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[((n * dims[1] + c) * dims[2] + h) * dims[3] + w];
  }
  double& at2(int64_t i, int64_t j) { return data[i * dims[1] + j]; }
  double at2(int64_t i, int64_t j) const { return data[i * dims[1] + j]; }

  bool same_shape(const Tensor& o) const {
    if (ndim != o.ndim) return false;
    for (int i = 0; i < ndim; ++i)
      if (dims[i] != o.dims[i]) return false;
    return true;
  }

  bool all_finite() const;
  std::string shape_str() const;
};

// C = alpha * op(A) * op(B) + beta * C, row-major. Thin wrapper over BLAS.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc);

// Pins the BLAS backend to one thread so results do not depend on the host's
// thread count. Called once from library init paths; idempotent.
void pin_blas_single_thread();

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace scap
