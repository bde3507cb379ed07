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

#include "core/attention.hpp"

#include <cmath>
#include <cstring>

#include "core/common.hpp"

namespace scap {

namespace {

void check_spatial_params(const SCAParams& p, const SCAConfig& cfg) {
  if (p.spatial_scale.numel() != cfg.spatial_groups || p.spatial_shift.numel() != cfg.spatial_groups) {
    throw ConfigError("spatial affine length " + std::to_string(p.spatial_scale.numel()) +
                      " does not match group count " + std::to_string(cfg.spatial_groups));
  }
}

void check_channel_params(const SCAParams& p, int64_t channels) {
  if (p.gn_avg_gamma.numel() != channels || p.gn_avg_beta.numel() != channels ||
      p.gn_max_gamma.numel() != channels || p.gn_max_beta.numel() != channels) {
    throw ConfigError("channel affine length does not match channel count " +
                      std::to_string(channels));
  }
}

void require_4d(const Tensor& x, const char* what) {
  if (x.ndim != 4) throw ConfigError(std::string(what) + " expects a 4-d input, got " + x.shape_str());
  if (!x.all_finite()) throw NumericError(std::string(what) + " input contains non-finite values");
}

void ensure_grad_shapes(SCAParamGrads& g, const SCAParams& p) {
  auto fit = [](Tensor& t, const Tensor& ref) {
    if (t.numel() != ref.numel()) {
      t.resize({ref.numel()});
      t.zero();
    }
  };
  fit(g.spatial_scale, p.spatial_scale);
  fit(g.spatial_shift, p.spatial_shift);
  fit(g.gn_avg_gamma, p.gn_avg_gamma);
  fit(g.gn_avg_beta, p.gn_avg_beta);
  fit(g.gn_max_gamma, p.gn_max_gamma);
  fit(g.gn_max_beta, p.gn_max_beta);
}

// Gradient of the similarity standardization; the denominator is std + eps,
// so the quotient-rule term carries 1/std and is dropped for a constant
// group where std is exactly zero (the numerator vanishes there too).
void standardize_backward(const double* upstream, const double* values, int64_t n, double mean,
                          double sd, double eps, double* out) {
  const double denom = sd + eps;
  double up_mean = 0.0, up_dot = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    up_mean += upstream[i];
    up_dot += upstream[i] * (values[i] - mean);
  }
  up_mean /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    double t = (upstream[i] - up_mean) / denom;
    if (sd > 0.0) {
      t -= (values[i] - mean) * up_dot / (static_cast<double>(n) * sd * denom * denom);
    }
    out[i] = t;
  }
}

// Backpropagates d(loss)/d(a_s) through the spatial map computation alone,
// accumulating into grad_x and grads. dmap has shape (B, g, n).
void spatial_map_backward(const SpatialCache& cache, const SCAParams& params, const SCAConfig& cfg,
                          const Tensor& dmap, Tensor& grad_x, SCAParamGrads& grads) {
  const Tensor& x = cache.input;
  const int64_t B = x.dims[0], C = x.dims[1], n = x.dims[2] * x.dims[3];
  const int64_t g = cfg.spatial_groups, s = C / g;

  std::vector<double> dz(n), dsim(n), ddesc(s);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t k = 0; k < g; ++k) {
      const int64_t gi = b * g + k;
      const double* map = cache.map.ptr() + gi * n;
      const double* nrm = cache.normalized.ptr() + gi * n;
      const double* sim = cache.similarity.ptr() + gi * n;
      const double* dm = dmap.ptr() + gi * n;
      const double scale = params.spatial_scale.ptr()[k];

      double dscale = 0.0, dshift = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double dpre = dm[i] * map[i] * (1.0 - map[i]);
        dscale += dpre * nrm[i];
        dshift += dpre;
        dz[i] = dpre * scale;
      }
      grads.spatial_scale.ptr()[k] += dscale;
      grads.spatial_shift.ptr()[k] += dshift;

      standardize_backward(dz.data(), sim, n, cache.mean.ptr()[gi], cache.std.ptr()[gi],
                           cfg.eps_spatial, dsim.data());

      const double* desc = cache.descriptor.ptr() + gi * s;
      const double* xg = x.ptr() + (b * C + k * s) * n;
      double* gx = grad_x.ptr() + (b * C + k * s) * n;
      const int* amax = cache.max_pos.data() + gi * s;
      for (int64_t c = 0; c < s; ++c) {
        const double* row = xg + c * n;
        double* grow = gx + c * n;
        double dd = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          grow[i] += dsim[i] * desc[c];
          dd += dsim[i] * row[i];
        }
        ddesc[c] = dd;
      }
      for (int64_t c = 0; c < s; ++c) {
        double* grow = gx + c * n;
        const double per_pos = ddesc[c] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) grow[i] += per_pos;
        grow[amax[c]] += ddesc[c];
      }
    }
  }
}

// Backpropagates d(loss)/d(a_c) through the channel map computation alone,
// accumulating into grad_x and grads. dmap has shape (B, C).
void channel_map_backward(const ChannelCache& cache, const SCAParams& params, const SCAConfig& cfg,
                          const Tensor& dmap, Tensor& grad_x, SCAParamGrads& grads) {
  const Tensor& x = cache.input;
  const int64_t B = x.dims[0], C = x.dims[1], n = x.dims[2] * x.dims[3];
  const int64_t G = cfg.gn_groups, m = C / G;

  std::vector<double> ga(m), gm(m);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t grp = 0; grp < G; ++grp) {
      const int64_t c0 = grp * m;
      const double* za = cache.avg_norm.ptr() + b * C + c0;
      const double* zm = cache.max_norm.ptr() + b * C + c0;
      const double* map = cache.map.ptr() + b * C + c0;
      const double* dm = dmap.ptr() + b * C + c0;

      double ga_mean = 0.0, ga_dot = 0.0, gm_mean = 0.0, gm_dot = 0.0;
      for (int64_t c = 0; c < m; ++c) {
        const double dpre = dm[c] * map[c] * (1.0 - map[c]);
        grads.gn_avg_gamma.ptr()[c0 + c] += dpre * za[c];
        grads.gn_avg_beta.ptr()[c0 + c] += dpre;
        grads.gn_max_gamma.ptr()[c0 + c] += dpre * zm[c];
        grads.gn_max_beta.ptr()[c0 + c] += dpre;
        ga[c] = dpre * params.gn_avg_gamma.ptr()[c0 + c];
        gm[c] = dpre * params.gn_max_gamma.ptr()[c0 + c];
        ga_mean += ga[c];
        ga_dot += ga[c] * za[c];
        gm_mean += gm[c];
        gm_dot += gm[c] * zm[c];
      }
      ga_mean /= static_cast<double>(m);
      ga_dot /= static_cast<double>(m);
      gm_mean /= static_cast<double>(m);
      gm_dot /= static_cast<double>(m);

      const double sd_a = cache.avg_std.ptr()[b * G + grp];
      const double sd_m = cache.max_std.ptr()[b * G + grp];
      for (int64_t c = 0; c < m; ++c) {
        const double d_avg = (ga[c] - ga_mean - za[c] * ga_dot) / sd_a;
        const double d_max = (gm[c] - gm_mean - zm[c] * gm_dot) / sd_m;
        double* grow = grad_x.ptr() + (b * C + c0 + c) * n;
        const double per_pos = d_avg / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) grow[i] += per_pos;
        grow[cache.max_pos[b * C + c0 + c]] += d_max;
      }
    }
  }
}

}  // namespace

const char* arrangement_name(Arrangement a) {
  switch (a) {
    case Arrangement::kSpatialOnly: return "spatial_only";
    case Arrangement::kChannelOnly: return "channel_only";
    case Arrangement::kSpatialThenChannel: return "spatial_then_channel";
    case Arrangement::kChannelThenSpatial: return "channel_then_spatial";
    case Arrangement::kParallel: return "parallel";
  }
  throw ConfigError("invalid arrangement value");
}

Arrangement arrangement_from_name(const std::string& name) {
  if (name == "spatial_only") return Arrangement::kSpatialOnly;
  if (name == "channel_only") return Arrangement::kChannelOnly;
  if (name == "spatial_then_channel") return Arrangement::kSpatialThenChannel;
  if (name == "channel_then_spatial") return Arrangement::kChannelThenSpatial;
  if (name == "parallel") return Arrangement::kParallel;
  throw ConfigError("unknown arrangement '" + name + "'");
}

void SCAConfig::validate_for_channels(int64_t channels) const {
  if (channels <= 0) throw ConfigError("channel count must be positive");
  if (spatial_groups <= 0 || gn_groups <= 0) throw ConfigError("group counts must be positive");
  if (channels % spatial_groups != 0) {
    throw ConfigError("spatial group count " + std::to_string(spatial_groups) +
                      " does not divide " + std::to_string(channels) + " channels");
  }
  if (channels % gn_groups != 0) {
    throw ConfigError("normalization group count " + std::to_string(gn_groups) +
                      " does not divide " + std::to_string(channels) + " channels");
  }
  if (!(eps_spatial > 0.0) || !(eps_gn > 0.0)) throw ConfigError("eps must be positive");
}

int SCAConfig::fit_groups(int requested, int64_t channels) {
  if (channels <= 0) throw ConfigError("channel count must be positive");
  if (requested < 1) requested = 1;
  int best = 1;
  for (int64_t d = 1; d <= channels && d <= requested; ++d) {
    if (channels % d == 0) best = static_cast<int>(d);
  }
  return best;
}

int64_t SCAParams::param_count() const {
  return spatial_scale.numel() + spatial_shift.numel() + gn_avg_gamma.numel() +
         gn_avg_beta.numel() + gn_max_gamma.numel() + gn_max_beta.numel();
}

bool SCAParams::all_finite() const {
  return spatial_scale.all_finite() && spatial_shift.all_finite() && gn_avg_gamma.all_finite() &&
         gn_avg_beta.all_finite() && gn_max_gamma.all_finite() && gn_max_beta.all_finite();
}

SCAParams init_params(int64_t channels, const SCAConfig& cfg) {
  cfg.validate_for_channels(channels);
  SCAParams p;
  p.spatial_scale = Tensor::full({cfg.spatial_groups}, 1.0);
  p.spatial_shift = Tensor::zeros({cfg.spatial_groups});
  p.gn_avg_gamma = Tensor::full({channels}, 1.0);
  p.gn_avg_beta = Tensor::zeros({channels});
  p.gn_max_gamma = Tensor::full({channels}, 1.0);
  p.gn_max_beta = Tensor::zeros({channels});
  return p;
}

SCAParamGrads SCAParamGrads::zeros_like(const SCAParams& p) {
  SCAParamGrads g;
  g.spatial_scale = Tensor::zeros({p.spatial_scale.numel()});
  g.spatial_shift = Tensor::zeros({p.spatial_shift.numel()});
  g.gn_avg_gamma = Tensor::zeros({p.gn_avg_gamma.numel()});
  g.gn_avg_beta = Tensor::zeros({p.gn_avg_beta.numel()});
  g.gn_max_gamma = Tensor::zeros({p.gn_max_gamma.numel()});
  g.gn_max_beta = Tensor::zeros({p.gn_max_beta.numel()});
  return g;
}

void SCAParamGrads::accumulate(const SCAParamGrads& o) {
  auto add = [](Tensor& dst, const Tensor& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst.ptr()[i] += src.ptr()[i];
  };
  add(spatial_scale, o.spatial_scale);
  add(spatial_shift, o.spatial_shift);
  add(gn_avg_gamma, o.gn_avg_gamma);
  add(gn_avg_beta, o.gn_avg_beta);
  add(gn_max_gamma, o.gn_max_gamma);
  add(gn_max_beta, o.gn_max_beta);
}

void spatial_attention_forward(const Tensor& x, const SCAParams& params, const SCAConfig& cfg,
                               Tensor& a_s, Tensor& x_s, SpatialCache* cache) {
  require_4d(x, "spatial attention");
  const int64_t B = x.dims[0], C = x.dims[1], H = x.dims[2], W = x.dims[3];
  cfg.validate_for_channels(C);
  check_spatial_params(params, cfg);
  const int64_t g = cfg.spatial_groups, s = C / g, n = H * W;
  if (n < 1) throw ConfigError("spatial attention needs at least one position");

  a_s.resize({B, g, H, W});
  x_s.resize({B, C, H, W});
  if (cache) {
    cache->similarity.resize({B, g, n});
    cache->normalized.resize({B, g, n});
    cache->descriptor.resize({B, g, s});
    cache->mean.resize({B, g});
    cache->std.resize({B, g});
    cache->max_pos.assign(static_cast<size_t>(B * g * s), 0);
  }

  std::vector<double> desc(s);
  std::vector<int> amax(s);
  std::vector<double> sim(n);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t k = 0; k < g; ++k) {
      const double* xg = x.ptr() + (b * C + k * s) * n;
      for (int64_t c = 0; c < s; ++c) {
        const double* row = xg + c * n;
        double sum = row[0], mx = row[0];
        int arg = 0;
        for (int64_t i = 1; i < n; ++i) {
          sum += row[i];
          if (row[i] > mx) {
            mx = row[i];
            arg = static_cast<int>(i);
          }
        }
        desc[c] = sum / static_cast<double>(n) + mx;
        amax[c] = arg;
      }

      double mean = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        double w = 0.0;
        for (int64_t c = 0; c < s; ++c) w += desc[c] * xg[c * n + i];
        sim[i] = w;
        mean += w;
      }
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double d = sim[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double sd = std::sqrt(var);
      const double denom = sd + cfg.eps_spatial;

      const double scale = params.spatial_scale.ptr()[k];
      const double shift = params.spatial_shift.ptr()[k];
      const int64_t gi = b * g + k;
      double* map = a_s.ptr() + gi * n;
      for (int64_t i = 0; i < n; ++i) {
        const double z = (sim[i] - mean) / denom;
        map[i] = sigmoid(scale * z + shift);
        if (cache) {
          cache->similarity.ptr()[gi * n + i] = sim[i];
          cache->normalized.ptr()[gi * n + i] = z;
        }
      }

      double* xsg = x_s.ptr() + (b * C + k * s) * n;
      for (int64_t c = 0; c < s; ++c) {
        for (int64_t i = 0; i < n; ++i) xsg[c * n + i] = xg[c * n + i] * map[i];
      }

      if (cache) {
        std::memcpy(cache->descriptor.ptr() + gi * s, desc.data(), sizeof(double) * s);
        std::memcpy(cache->max_pos.data() + gi * s, amax.data(), sizeof(int) * s);
        cache->mean.ptr()[gi] = mean;
        cache->std.ptr()[gi] = sd;
      }
    }
  }
  if (cache) {
    cache->input = x;
    cache->map = a_s;
  }
}

void spatial_attention_backward(const SpatialCache& cache, const SCAParams& params,
                                const SCAConfig& cfg, const Tensor& grad_xs, Tensor& grad_x,
                                SCAParamGrads& grads) {
  const Tensor& x = cache.input;
  if (!grad_xs.same_shape(x)) {
    throw ConfigError("gradient shape " + grad_xs.shape_str() + " does not match input " +
                      x.shape_str());
  }
  ensure_grad_shapes(grads, params);
  const int64_t B = x.dims[0], C = x.dims[1], n = x.dims[2] * x.dims[3];
  const int64_t g = cfg.spatial_groups, s = C / g;

  grad_x.resize({x.dims[0], x.dims[1], x.dims[2], x.dims[3]});
  grad_x.zero();

  Tensor dmap = Tensor::zeros({B, g, n});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t k = 0; k < g; ++k) {
      const int64_t gi = b * g + k;
      const double* map = cache.map.ptr() + gi * n;
      double* dm = dmap.ptr() + gi * n;
      for (int64_t c = 0; c < s; ++c) {
        const int64_t off = (b * C + k * s + c) * n;
        const double* go = grad_xs.ptr() + off;
        const double* xv = x.ptr() + off;
        double* gx = grad_x.ptr() + off;
        for (int64_t i = 0; i < n; ++i) {
          dm[i] += go[i] * xv[i];
          gx[i] += go[i] * map[i];
        }
      }
    }
  }
  spatial_map_backward(cache, params, cfg, dmap, grad_x, grads);
}

void channel_attention_forward(const Tensor& x_s, const SCAParams& params, const SCAConfig& cfg,
                               Tensor& a_c, Tensor& x_out, ChannelCache* cache) {
  require_4d(x_s, "channel attention");
  const int64_t B = x_s.dims[0], C = x_s.dims[1], H = x_s.dims[2], W = x_s.dims[3];
  cfg.validate_for_channels(C);
  check_channel_params(params, C);
  const int64_t G = cfg.gn_groups, m = C / G, n = H * W;
  if (n < 1) throw ConfigError("channel attention needs at least one position");

  a_c.resize({B, C, 1, 1});
  x_out.resize({B, C, H, W});
  if (cache) {
    cache->avg_pool.resize({B, C});
    cache->max_pool.resize({B, C});
    cache->max_pos.assign(static_cast<size_t>(B * C), 0);
    cache->avg_norm.resize({B, C});
    cache->max_norm.resize({B, C});
    cache->avg_mean.resize({B, G});
    cache->avg_std.resize({B, G});
    cache->max_mean.resize({B, G});
    cache->max_std.resize({B, G});
    cache->map.resize({B, C});
  }

  std::vector<double> avg(C), mx(C);
  std::vector<int> amax(C);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const double* row = x_s.ptr() + (b * C + c) * n;
      double sum = row[0], best = row[0];
      int arg = 0;
      for (int64_t i = 1; i < n; ++i) {
        sum += row[i];
        if (row[i] > best) {
          best = row[i];
          arg = static_cast<int>(i);
        }
      }
      avg[c] = sum / static_cast<double>(n);
      mx[c] = best;
      amax[c] = arg;
    }

    for (int64_t grp = 0; grp < G; ++grp) {
      const int64_t c0 = grp * m;
      double mu_a = 0.0, mu_m = 0.0;
      for (int64_t c = 0; c < m; ++c) {
        mu_a += avg[c0 + c];
        mu_m += mx[c0 + c];
      }
      mu_a /= static_cast<double>(m);
      mu_m /= static_cast<double>(m);
      double v_a = 0.0, v_m = 0.0;
      for (int64_t c = 0; c < m; ++c) {
        const double da = avg[c0 + c] - mu_a;
        const double dm = mx[c0 + c] - mu_m;
        v_a += da * da;
        v_m += dm * dm;
      }
      v_a /= static_cast<double>(m);
      v_m /= static_cast<double>(m);
      const double sd_a = std::sqrt(v_a + cfg.eps_gn);
      const double sd_m = std::sqrt(v_m + cfg.eps_gn);

      for (int64_t c = 0; c < m; ++c) {
        const int64_t ch = c0 + c;
        const double za = (avg[ch] - mu_a) / sd_a;
        const double zm = (mx[ch] - mu_m) / sd_m;
        const double pre = params.gn_avg_gamma.ptr()[ch] * za + params.gn_avg_beta.ptr()[ch] +
                           params.gn_max_gamma.ptr()[ch] * zm + params.gn_max_beta.ptr()[ch];
        const double s = sigmoid(pre);
        a_c.ptr()[b * C + ch] = s;
        if (cache) {
          cache->avg_norm.ptr()[b * C + ch] = za;
          cache->max_norm.ptr()[b * C + ch] = zm;
          cache->map.ptr()[b * C + ch] = s;
        }
      }
      if (cache) {
        cache->avg_mean.ptr()[b * G + grp] = mu_a;
        cache->avg_std.ptr()[b * G + grp] = sd_a;
        cache->max_mean.ptr()[b * G + grp] = mu_m;
        cache->max_std.ptr()[b * G + grp] = sd_m;
      }
    }

    for (int64_t c = 0; c < C; ++c) {
      const double s = a_c.ptr()[b * C + c];
      const double* src = x_s.ptr() + (b * C + c) * n;
      double* dst = x_out.ptr() + (b * C + c) * n;
      for (int64_t i = 0; i < n; ++i) dst[i] = src[i] * s;
    }
    if (cache) {
      std::memcpy(cache->avg_pool.ptr() + b * C, avg.data(), sizeof(double) * C);
      std::memcpy(cache->max_pool.ptr() + b * C, mx.data(), sizeof(double) * C);
      std::memcpy(cache->max_pos.data() + b * C, amax.data(), sizeof(int) * C);
    }
  }
  if (cache) cache->input = x_s;
}

void channel_attention_backward(const ChannelCache& cache, const SCAParams& params,
                                const SCAConfig& cfg, const Tensor& grad_out, Tensor& grad_xs,
                                SCAParamGrads& grads) {
  const Tensor& x = cache.input;
  if (!grad_out.same_shape(x)) {
    throw ConfigError("gradient shape " + grad_out.shape_str() + " does not match input " +
                      x.shape_str());
  }
  ensure_grad_shapes(grads, params);
  const int64_t B = x.dims[0], C = x.dims[1], n = x.dims[2] * x.dims[3];

  grad_xs.resize({x.dims[0], x.dims[1], x.dims[2], x.dims[3]});
  grad_xs.zero();

  Tensor dmap = Tensor::zeros({B, C});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const int64_t off = (b * C + c) * n;
      const double* go = grad_out.ptr() + off;
      const double* xv = x.ptr() + off;
      double* gx = grad_xs.ptr() + off;
      const double s = cache.map.ptr()[b * C + c];
      double dm = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        dm += go[i] * xv[i];
        gx[i] += go[i] * s;
      }
      dmap.ptr()[b * C + c] = dm;
    }
  }
  channel_map_backward(cache, params, cfg, dmap, grad_xs, grads);
}

void sca_forward(const Tensor& x, const SCAParams& params, const SCAConfig& cfg, Tensor& x_out,
                 Tensor& a_c, SCACache* cache) {
  if (cache) {
    cache->arrangement = cfg.arrangement;
    cache->has_spatial = false;
    cache->has_channel = false;
  }
  switch (cfg.arrangement) {
    case Arrangement::kSpatialOnly: {
      Tensor a_s;
      spatial_attention_forward(x, params, cfg, a_s, x_out, cache ? &cache->spatial : nullptr);
      a_c = Tensor::full({x.dims[0], x.dims[1], 1, 1}, 1.0);
      if (cache) cache->has_spatial = true;
      return;
    }
    case Arrangement::kChannelOnly: {
      channel_attention_forward(x, params, cfg, a_c, x_out, cache ? &cache->channel : nullptr);
      if (cache) cache->has_channel = true;
      return;
    }
    case Arrangement::kSpatialThenChannel: {
      Tensor a_s, x_s;
      spatial_attention_forward(x, params, cfg, a_s, x_s, cache ? &cache->spatial : nullptr);
      channel_attention_forward(x_s, params, cfg, a_c, x_out, cache ? &cache->channel : nullptr);
      if (cache) {
        cache->has_spatial = true;
        cache->has_channel = true;
      }
      return;
    }
    case Arrangement::kChannelThenSpatial: {
      Tensor x_c, a_s;
      channel_attention_forward(x, params, cfg, a_c, x_c, cache ? &cache->channel : nullptr);
      spatial_attention_forward(x_c, params, cfg, a_s, x_out, cache ? &cache->spatial : nullptr);
      if (cache) {
        cache->has_spatial = true;
        cache->has_channel = true;
      }
      return;
    }
    case Arrangement::kParallel: {
      Tensor a_s, x_s_unused, x_c_unused;
      spatial_attention_forward(x, params, cfg, a_s, x_s_unused, cache ? &cache->spatial : nullptr);
      channel_attention_forward(x, params, cfg, a_c, x_c_unused, cache ? &cache->channel : nullptr);
      const int64_t B = x.dims[0], C = x.dims[1], n = x.dims[2] * x.dims[3];
      const int64_t g = cfg.spatial_groups, s = C / g;
      x_out.resize({x.dims[0], x.dims[1], x.dims[2], x.dims[3]});
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
          const double ac = a_c.ptr()[b * C + c];
          const double* map = a_s.ptr() + (b * g + c / s) * n;
          const double* src = x.ptr() + (b * C + c) * n;
          double* dst = x_out.ptr() + (b * C + c) * n;
          for (int64_t i = 0; i < n; ++i) dst[i] = src[i] * map[i] * ac;
        }
      }
      if (cache) {
        cache->has_spatial = true;
        cache->has_channel = true;
        cache->input = x;
        cache->a_s = a_s;
        cache->a_c = a_c;
      }
      return;
    }
  }
  throw ConfigError("invalid arrangement value");
}

void sca_backward(const SCACache& cache, const SCAParams& params, const SCAConfig& cfg,
                  const Tensor& grad_out, Tensor& grad_x, SCAParamGrads& grads) {
  ensure_grad_shapes(grads, params);
  switch (cache.arrangement) {
    case Arrangement::kSpatialOnly:
      spatial_attention_backward(cache.spatial, params, cfg, grad_out, grad_x, grads);
      return;
    case Arrangement::kChannelOnly:
      channel_attention_backward(cache.channel, params, cfg, grad_out, grad_x, grads);
      return;
    case Arrangement::kSpatialThenChannel: {
      Tensor grad_xs;
      channel_attention_backward(cache.channel, params, cfg, grad_out, grad_xs, grads);
      spatial_attention_backward(cache.spatial, params, cfg, grad_xs, grad_x, grads);
      return;
    }
    case Arrangement::kChannelThenSpatial: {
      Tensor grad_xc;
      spatial_attention_backward(cache.spatial, params, cfg, grad_out, grad_xc, grads);
      channel_attention_backward(cache.channel, params, cfg, grad_xc, grad_x, grads);
      return;
    }
    case Arrangement::kParallel: {
      const Tensor& x = cache.input;
      if (!grad_out.same_shape(x)) {
        throw ConfigError("gradient shape " + grad_out.shape_str() + " does not match input " +
                          x.shape_str());
      }
      const int64_t B = x.dims[0], C = x.dims[1], n = x.dims[2] * x.dims[3];
      const int64_t g = cfg.spatial_groups, s = C / g;
      grad_x.resize({x.dims[0], x.dims[1], x.dims[2], x.dims[3]});
      grad_x.zero();
      Tensor dmap_s = Tensor::zeros({B, g, n});
      Tensor dmap_c = Tensor::zeros({B, C});
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
          const int64_t off = (b * C + c) * n;
          const double ac = cache.a_c.ptr()[b * C + c];
          const double* map = cache.a_s.ptr() + (b * g + c / s) * n;
          const double* go = grad_out.ptr() + off;
          const double* xv = x.ptr() + off;
          double* gx = grad_x.ptr() + off;
          double* dms = dmap_s.ptr() + (b * g + c / s) * n;
          double dmc = 0.0;
          for (int64_t i = 0; i < n; ++i) {
            gx[i] += go[i] * map[i] * ac;
            dms[i] += go[i] * xv[i] * ac;
            dmc += go[i] * xv[i] * map[i];
          }
          dmap_c.ptr()[b * C + c] += dmc;
        }
      }
      spatial_map_backward(cache.spatial, params, cfg, dmap_s, grad_x, grads);
      channel_map_backward(cache.channel, params, cfg, dmap_c, grad_x, grads);
      return;
    }
  }
  throw ConfigError("invalid arrangement value");
}

}  // namespace scap
