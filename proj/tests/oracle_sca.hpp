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

// Deliberately naive reference implementation of the attention equations,
// written independently of the library code. Everything is straight-line
// arithmetic over std::vector so that a disagreement points at the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

struct SpatialResult {
  std::vector<double> a_s;  // B * g * H * W
  std::vector<double> x_s;  // B * C * H * W
};

struct ChannelResult {
  std::vector<double> a_c;   // B * C
  std::vector<double> x_out;  // B * C * H * W
};

inline double sigmoid_ref(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline SpatialResult spatial_ref(const std::vector<double>& x, int64_t B, int64_t C, int64_t H,
                                 int64_t W, int64_t g, double eps,
                                 const std::vector<double>& scale,
                                 const std::vector<double>& shift) {
  const int64_t n = H * W;
  const int64_t s = C / g;
  SpatialResult r;
  r.a_s.assign(static_cast<size_t>(B * g * n), 0.0);
  r.x_s.assign(static_cast<size_t>(B * C * n), 0.0);
  auto xv = [&](int64_t b, int64_t c, int64_t i) { return x[(b * C + c) * n + i]; };
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t k = 0; k < g; ++k) {
      std::vector<double> f_avg(s, 0.0), f_max(s, 0.0);
      for (int64_t c = 0; c < s; ++c) {
        double acc = 0.0;
        double best = xv(b, k * s + c, 0);
        for (int64_t i = 0; i < n; ++i) {
          acc += xv(b, k * s + c, i);
          best = std::max(best, xv(b, k * s + c, i));
        }
        f_avg[c] = acc / static_cast<double>(n);
        f_max[c] = best;
      }
      std::vector<double> w(n, 0.0);
      for (int64_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int64_t c = 0; c < s; ++c) {
          dot += f_avg[c] * xv(b, k * s + c, i) + f_max[c] * xv(b, k * s + c, i);
        }
        w[i] = dot;
      }
      double mu = 0.0;
      for (int64_t i = 0; i < n; ++i) mu += w[i];
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < n; ++i) var += (w[i] - mu) * (w[i] - mu);
      var /= static_cast<double>(n);
      const double sigma = std::sqrt(var);
      for (int64_t i = 0; i < n; ++i) {
        const double normalized = (w[i] - mu) / (sigma + eps);
        r.a_s[(b * g + k) * n + i] = sigmoid_ref(scale[k] * normalized + shift[k]);
      }
      for (int64_t c = 0; c < s; ++c) {
        for (int64_t i = 0; i < n; ++i) {
          r.x_s[(b * C + k * s + c) * n + i] = xv(b, k * s + c, i) * r.a_s[(b * g + k) * n + i];
        }
      }
    }
  }
  return r;
}

inline ChannelResult channel_ref(const std::vector<double>& x, int64_t B, int64_t C, int64_t H,
                                 int64_t W, int64_t G, double eps,
                                 const std::vector<double>& gamma_avg,
                                 const std::vector<double>& beta_avg,
                                 const std::vector<double>& gamma_max,
                                 const std::vector<double>& beta_max) {
  const int64_t n = H * W;
  const int64_t m = C / G;
  ChannelResult r;
  r.a_c.assign(static_cast<size_t>(B * C), 0.0);
  r.x_out.assign(static_cast<size_t>(B * C * n), 0.0);
  for (int64_t b = 0; b < B; ++b) {
    std::vector<double> avg(C, 0.0), mx(C, 0.0);
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      double best = x[(b * C + c) * n];
      for (int64_t i = 0; i < n; ++i) {
        acc += x[(b * C + c) * n + i];
        best = std::max(best, x[(b * C + c) * n + i]);
      }
      avg[c] = acc / static_cast<double>(n);
      mx[c] = best;
    }
    std::vector<double> gn_avg(C, 0.0), gn_max(C, 0.0);
    for (int64_t grp = 0; grp < G; ++grp) {
      double mu_a = 0.0, mu_m = 0.0;
      for (int64_t c = 0; c < m; ++c) {
        mu_a += avg[grp * m + c];
        mu_m += mx[grp * m + c];
      }
      mu_a /= static_cast<double>(m);
      mu_m /= static_cast<double>(m);
      double v_a = 0.0, v_m = 0.0;
      for (int64_t c = 0; c < m; ++c) {
        v_a += (avg[grp * m + c] - mu_a) * (avg[grp * m + c] - mu_a);
        v_m += (mx[grp * m + c] - mu_m) * (mx[grp * m + c] - mu_m);
      }
      v_a /= static_cast<double>(m);
      v_m /= static_cast<double>(m);
      for (int64_t c = 0; c < m; ++c) {
        const int64_t ch = grp * m + c;
        gn_avg[ch] = gamma_avg[ch] * (avg[ch] - mu_a) / std::sqrt(v_a + eps) + beta_avg[ch];
        gn_max[ch] = gamma_max[ch] * (mx[ch] - mu_m) / std::sqrt(v_m + eps) + beta_max[ch];
      }
    }
    for (int64_t c = 0; c < C; ++c) {
      r.a_c[b * C + c] = sigmoid_ref(gn_max[c] + gn_avg[c]);
      for (int64_t i = 0; i < n; ++i) {
        r.x_out[(b * C + c) * n + i] = x[(b * C + c) * n + i] * r.a_c[b * C + c];
      }
    }
  }
  return r;
}

}  // namespace oracle
