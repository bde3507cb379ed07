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

#include "core/tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "core/common.hpp"

namespace scap {

void Tensor::resize(std::initializer_list<int64_t> shape) {
  resize(std::vector<int64_t>(shape));
}

void Tensor::resize(const std::vector<int64_t>& shape) {
  if (shape.size() > 4) throw std::invalid_argument("tensor rank > 4");
  ndim = static_cast<int>(shape.size());
  dims = {0, 0, 0, 0};
  int64_t n = ndim == 0 ? 0 : 1;
  for (int i = 0; i < ndim; ++i) {
    if (shape.begin()[i] < 0) throw std::invalid_argument("negative dim");
    dims[i] = shape.begin()[i];
    n *= dims[i];
  }
  data.assign(static_cast<size_t>(n), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (int i = 0; i < ndim; ++i) {
    s += std::to_string(dims[i]);
    if (i + 1 < ndim) s += ",";
  }
  return s + ")";
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

void pin_blas_single_thread() {
#ifdef OPENBLAS_VERSION
  openblas_set_num_threads(1);
#endif
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace scap
