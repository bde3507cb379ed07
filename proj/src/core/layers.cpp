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

#include "core/layers.hpp"

#include <cmath>
#include <cstring>

#include "core/common.hpp"

namespace scap {

namespace {

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Unfolds one sample into a (C*k*k, H_out*W_out) matrix.
void im2col(const double* in, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, double* col) {
  const int64_t n_out = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t kh = 0; kh < k; ++kh) {
      for (int64_t kw = 0; kw < k; ++kw) {
        double* dst = col + ((c * k + kh) * k + kw) * n_out;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          const int64_t ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= H) {
            for (int64_t ow = 0; ow < Wo; ++ow) dst[oh * Wo + ow] = 0.0;
            continue;
          }
          const double* src_row = in + (c * H + ih) * W;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            const int64_t iw = ow * stride + kw - pad;
            dst[oh * Wo + ow] = (iw < 0 || iw >= W) ? 0.0 : src_row[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
                int64_t pad, int64_t Ho, int64_t Wo, double* in_grad) {
  const int64_t n_out = Ho * Wo;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t kh = 0; kh < k; ++kh) {
      for (int64_t kw = 0; kw < k; ++kw) {
        const double* src = col + ((c * k + kh) * k + kw) * n_out;
        for (int64_t oh = 0; oh < Ho; ++oh) {
          const int64_t ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= H) continue;
          double* dst_row = in_grad + (c * H + ih) * W;
          for (int64_t ow = 0; ow < Wo; ++ow) {
            const int64_t iw = ow * stride + kw - pad;
            if (iw >= 0 && iw < W) dst_row[iw] += src[oh * Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

// --- Conv2d ------------------------------------------------------------

Conv2d::Conv2d(std::string id, int64_t in_c, int64_t out_c, int64_t k, int64_t stride, int64_t pad,
               bool bias, bool prunable)
    : Layer(std::move(id)), in_channels(in_c), out_channels(out_c), kernel(k), stride(stride),
      padding(pad), has_bias(bias), prunable(prunable) {
  if (in_c <= 0 || out_c <= 0 || k <= 0 || stride <= 0 || pad < 0) {
    throw ConfigError("invalid convolution geometry");
  }
  weight = Tensor::zeros({out_c, in_c, k, k});
  grad_weight = Tensor::zeros({out_c, in_c, k, k});
  if (has_bias) {
    this->bias = Tensor::zeros({out_c});
    grad_bias = Tensor::zeros({out_c});
  }
}

void Conv2d::init_he(Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(out_channels * kernel * kernel));
  for (int64_t i = 0; i < weight.numel(); ++i) weight.ptr()[i] = rng.normal() * stddev;
  if (has_bias) bias.zero();
}

std::vector<ParamRef> Conv2d::param_refs() {
  std::vector<ParamRef> refs{{"weight", &weight, &grad_weight}};
  if (has_bias) refs.push_back({"bias", &bias, &grad_bias});
  return refs;
}

void Conv2d::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim != 4 || in.dims[1] != in_channels) {
    throw ConfigError("conv '" + id() + "' expects (B," + std::to_string(in_channels) +
                      ",H,W), got " + in.shape_str());
  }
  const int64_t B = in.dims[0], H = in.dims[2], W = in.dims[3];
  const int64_t Ho = conv_out_extent(H, kernel, stride, padding);
  const int64_t Wo = conv_out_extent(W, kernel, stride, padding);
  if (Ho <= 0 || Wo <= 0) throw ConfigError("conv '" + id() + "' output would be empty");
  const int64_t ckk = in_channels * kernel * kernel;
  const int64_t n_out = Ho * Wo;

  out.resize({B, out_channels, Ho, Wo});
  col_.resize(static_cast<size_t>(ckk * n_out));
  for (int64_t b = 0; b < B; ++b) {
    im2col(in.ptr() + b * in_channels * H * W, in_channels, H, W, kernel, stride, padding, Ho, Wo,
           col_.data());
    gemm(false, false, out_channels, n_out, ckk, 1.0, weight.ptr(), ckk, col_.data(), n_out, 0.0,
         out.ptr() + b * out_channels * n_out, n_out);
    if (has_bias) {
      for (int64_t o = 0; o < out_channels; ++o) {
        double* row = out.ptr() + (b * out_channels + o) * n_out;
        const double bv = bias.ptr()[o];
        for (int64_t i = 0; i < n_out; ++i) row[i] += bv;
      }
    }
  }
  if (ctx.cache) cached_in_ = in;
}

void Conv2d::backward(const Tensor& grad_out, Tensor& grad_in) {
  const Tensor& in = cached_in_;
  if (in.numel() == 0) throw StateError("conv '" + id() + "' backward without cached forward");
  const int64_t B = in.dims[0], H = in.dims[2], W = in.dims[3];
  const int64_t Ho = grad_out.dims[2], Wo = grad_out.dims[3];
  const int64_t ckk = in_channels * kernel * kernel;
  const int64_t n_out = Ho * Wo;

  grad_in.resize({B, in_channels, H, W});
  grad_in.zero();
  col_.resize(static_cast<size_t>(ckk * n_out));
  std::vector<double> dcol(static_cast<size_t>(ckk * n_out));
  for (int64_t b = 0; b < B; ++b) {
    const double* dout = grad_out.ptr() + b * out_channels * n_out;
    im2col(in.ptr() + b * in_channels * H * W, in_channels, H, W, kernel, stride, padding, Ho, Wo,
           col_.data());
    gemm(false, true, out_channels, ckk, n_out, 1.0, dout, n_out, col_.data(), n_out, 1.0,
         grad_weight.ptr(), ckk);
    gemm(true, false, ckk, n_out, out_channels, 1.0, weight.ptr(), ckk, dout, n_out, 0.0,
         dcol.data(), n_out);
    col2im_add(dcol.data(), in_channels, H, W, kernel, stride, padding, Ho, Wo,
               grad_in.ptr() + b * in_channels * H * W);
    if (has_bias) {
      for (int64_t o = 0; o < out_channels; ++o) {
        double acc = 0.0;
        const double* row = dout + o * n_out;
        for (int64_t i = 0; i < n_out; ++i) acc += row[i];
        grad_bias.ptr()[o] += acc;
      }
    }
  }
}

// --- BatchNorm -----------------------------------------------------------

BatchNorm::BatchNorm(std::string id, int64_t channels, double eps, double momentum)
    : Layer(std::move(id)), channels(channels), eps(eps), momentum(momentum) {
  if (channels <= 0) throw ConfigError("batch norm needs a positive channel count");
  gamma = Tensor::full({channels}, 1.0);
  beta = Tensor::zeros({channels});
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::full({channels}, 1.0);
  grad_gamma = Tensor::zeros({channels});
  grad_beta = Tensor::zeros({channels});
}

std::vector<ParamRef> BatchNorm::param_refs() {
  return {{"gamma", &gamma, &grad_gamma}, {"beta", &beta, &grad_beta}};
}

std::vector<StateRef> BatchNorm::state_refs() {
  return {{"running_mean", &running_mean}, {"running_var", &running_var}};
}

void BatchNorm::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim != 4 || in.dims[1] != channels) {
    throw ConfigError("bn '" + id() + "' expects (B," + std::to_string(channels) + ",H,W), got " +
                      in.shape_str());
  }
  const int64_t B = in.dims[0], n = in.dims[2] * in.dims[3];
  const int64_t m = B * n;
  out.resize({in.dims[0], in.dims[1], in.dims[2], in.dims[3]});
  if (ctx.cache) {
    cached_xhat_.resize({in.dims[0], in.dims[1], in.dims[2], in.dims[3]});
    cached_invstd_.assign(static_cast<size_t>(channels), 0.0);
    cached_training_ = ctx.training;
  }

  for (int64_t c = 0; c < channels; ++c) {
    double mean, invstd, var = 0.0;
    if (ctx.training) {
      double acc = 0.0;
      for (int64_t b = 0; b < B; ++b) {
        const double* row = in.ptr() + (b * channels + c) * n;
        for (int64_t i = 0; i < n; ++i) acc += row[i];
      }
      mean = acc / static_cast<double>(m);
      for (int64_t b = 0; b < B; ++b) {
        const double* row = in.ptr() + (b * channels + c) * n;
        for (int64_t i = 0; i < n; ++i) {
          const double d = row[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      invstd = 1.0 / std::sqrt(var + eps);
      const double var_unbiased = (m > 1) ? var * static_cast<double>(m) / (m - 1) : var;
      running_mean.ptr()[c] = (1.0 - momentum) * running_mean.ptr()[c] + momentum * mean;
      running_var.ptr()[c] = (1.0 - momentum) * running_var.ptr()[c] + momentum * var_unbiased;
    } else {
      mean = running_mean.ptr()[c];
      invstd = 1.0 / std::sqrt(running_var.ptr()[c] + eps);
    }

    const bool masked = !channel_mask.empty() && channel_mask[static_cast<size_t>(c)] != 0;
    const double gc = gamma.ptr()[c], bc = beta.ptr()[c];
    for (int64_t b = 0; b < B; ++b) {
      const double* row = in.ptr() + (b * channels + c) * n;
      double* dst = out.ptr() + (b * channels + c) * n;
      double* xh = ctx.cache ? cached_xhat_.ptr() + (b * channels + c) * n : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        const double xhat = (row[i] - mean) * invstd;
        if (xh) xh[i] = xhat;
        dst[i] = masked ? 0.0 : gc * xhat + bc;
      }
    }
    if (ctx.cache) cached_invstd_[static_cast<size_t>(c)] = invstd;
  }
}

void BatchNorm::backward(const Tensor& grad_out, Tensor& grad_in) {
  if (cached_xhat_.numel() == 0) throw StateError("bn '" + id() + "' backward without cached forward");
  const int64_t B = cached_xhat_.dims[0], n = cached_xhat_.dims[2] * cached_xhat_.dims[3];
  const int64_t m = B * n;
  grad_in.resize({cached_xhat_.dims[0], cached_xhat_.dims[1], cached_xhat_.dims[2],
                  cached_xhat_.dims[3]});

  for (int64_t c = 0; c < channels; ++c) {
    const bool masked = !channel_mask.empty() && channel_mask[static_cast<size_t>(c)] != 0;
    if (masked) {
      for (int64_t b = 0; b < B; ++b) {
        double* dst = grad_in.ptr() + (b * channels + c) * n;
        for (int64_t i = 0; i < n; ++i) dst[i] = 0.0;
      }
      continue;
    }
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t b = 0; b < B; ++b) {
      const double* dy = grad_out.ptr() + (b * channels + c) * n;
      const double* xh = cached_xhat_.ptr() + (b * channels + c) * n;
      for (int64_t i = 0; i < n; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh[i];
      }
    }
    grad_gamma.ptr()[c] += sum_dy_xhat;
    grad_beta.ptr()[c] += sum_dy;

    const double gc = gamma.ptr()[c];
    const double invstd = cached_invstd_[static_cast<size_t>(c)];
    if (cached_training_) {
      const double k1 = sum_dy / static_cast<double>(m);
      const double k2 = sum_dy_xhat / static_cast<double>(m);
      for (int64_t b = 0; b < B; ++b) {
        const double* dy = grad_out.ptr() + (b * channels + c) * n;
        const double* xh = cached_xhat_.ptr() + (b * channels + c) * n;
        double* dst = grad_in.ptr() + (b * channels + c) * n;
        for (int64_t i = 0; i < n; ++i) dst[i] = gc * invstd * (dy[i] - k1 - xh[i] * k2);
      }
    } else {
      for (int64_t b = 0; b < B; ++b) {
        const double* dy = grad_out.ptr() + (b * channels + c) * n;
        double* dst = grad_in.ptr() + (b * channels + c) * n;
        for (int64_t i = 0; i < n; ++i) dst[i] = gc * invstd * dy[i];
      }
    }
  }
}

// --- ReLU ----------------------------------------------------------------

void ReLU::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  out = in;
  if (ctx.cache) {
    mask_.assign(static_cast<size_t>(in.numel()), 0);
    in_dims_ = in.dims;
    in_ndim_ = in.ndim;
  }
  for (int64_t i = 0; i < in.numel(); ++i) {
    if (in.ptr()[i] > 0.0) {
      if (ctx.cache) mask_[static_cast<size_t>(i)] = 1;
    } else {
      out.ptr()[i] = 0.0;
    }
  }
}

void ReLU::backward(const Tensor& grad_out, Tensor& grad_in) {
  if (mask_.size() != static_cast<size_t>(grad_out.numel())) {
    throw StateError("relu '" + id() + "' backward without cached forward");
  }
  grad_in = grad_out;
  grad_in.dims = in_dims_;
  grad_in.ndim = in_ndim_;
  for (int64_t i = 0; i < grad_out.numel(); ++i) {
    if (!mask_[static_cast<size_t>(i)]) grad_in.ptr()[i] = 0.0;
  }
}

// --- MaxPool ---------------------------------------------------------------

void MaxPool::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim != 4) throw ConfigError("maxpool expects a 4-d input, got " + in.shape_str());
  const int64_t B = in.dims[0], C = in.dims[1], H = in.dims[2], W = in.dims[3];
  if (H < kernel || W < kernel) throw ConfigError("maxpool window exceeds input extent");
  const int64_t Ho = (H - kernel) / stride + 1;
  const int64_t Wo = (W - kernel) / stride + 1;
  out.resize({B, C, Ho, Wo});
  if (ctx.cache) {
    argmax_.assign(static_cast<size_t>(out.numel()), 0);
    in_dims_ = in.dims;
  }
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const double* src = in.ptr() + (b * C + c) * H * W;
      double* dst = out.ptr() + (b * C + c) * Ho * Wo;
      for (int64_t oh = 0; oh < Ho; ++oh) {
        for (int64_t ow = 0; ow < Wo; ++ow) {
          double best = src[(oh * stride) * W + ow * stride];
          int64_t best_at = (oh * stride) * W + ow * stride;
          for (int64_t kh = 0; kh < kernel; ++kh) {
            for (int64_t kw = 0; kw < kernel; ++kw) {
              const int64_t at = (oh * stride + kh) * W + (ow * stride + kw);
              if (src[at] > best) {
                best = src[at];
                best_at = at;
              }
            }
          }
          dst[oh * Wo + ow] = best;
          if (ctx.cache) argmax_[static_cast<size_t>((b * C + c) * Ho * Wo + oh * Wo + ow)] = best_at;
        }
      }
    }
  }
}

void MaxPool::backward(const Tensor& grad_out, Tensor& grad_in) {
  if (argmax_.size() != static_cast<size_t>(grad_out.numel())) {
    throw StateError("maxpool '" + id() + "' backward without cached forward");
  }
  grad_in.resize({in_dims_[0], in_dims_[1], in_dims_[2], in_dims_[3]});
  grad_in.zero();
  const int64_t B = grad_out.dims[0], C = grad_out.dims[1];
  const int64_t n_out = grad_out.dims[2] * grad_out.dims[3];
  const int64_t n_in = in_dims_[2] * in_dims_[3];
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const double* dy = grad_out.ptr() + (b * C + c) * n_out;
      double* dst = grad_in.ptr() + (b * C + c) * n_in;
      const int64_t* am = argmax_.data() + (b * C + c) * n_out;
      for (int64_t i = 0; i < n_out; ++i) dst[am[i]] += dy[i];
    }
  }
}

// --- GlobalAvgPool ---------------------------------------------------------

void GlobalAvgPool::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim != 4) throw ConfigError("global pool expects a 4-d input, got " + in.shape_str());
  const int64_t B = in.dims[0], C = in.dims[1], n = in.dims[2] * in.dims[3];
  out.resize({B, C, 1, 1});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = in.ptr() + bc * n;
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += src[i];
    out.ptr()[bc] = acc / static_cast<double>(n);
  }
  if (ctx.cache) in_dims_ = in.dims;
}

void GlobalAvgPool::backward(const Tensor& grad_out, Tensor& grad_in) {
  const int64_t B = in_dims_[0], C = in_dims_[1], n = in_dims_[2] * in_dims_[3];
  if (B == 0) throw StateError("global pool '" + id() + "' backward without cached forward");
  grad_in.resize({in_dims_[0], in_dims_[1], in_dims_[2], in_dims_[3]});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double g = grad_out.ptr()[bc] / static_cast<double>(n);
    double* dst = grad_in.ptr() + bc * n;
    for (int64_t i = 0; i < n; ++i) dst[i] = g;
  }
}

// --- Flatten ---------------------------------------------------------------

void Flatten::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim < 2) throw ConfigError("flatten expects at least 2 dims, got " + in.shape_str());
  int64_t rest = 1;
  for (int i = 1; i < in.ndim; ++i) rest *= in.dims[i];
  out = in;
  out.dims = {in.dims[0], rest, 0, 0};
  out.ndim = 2;
  if (ctx.cache) {
    in_dims_ = in.dims;
    in_ndim_ = in.ndim;
  }
}

void Flatten::backward(const Tensor& grad_out, Tensor& grad_in) {
  if (in_ndim_ == 0) throw StateError("flatten '" + id() + "' backward without cached forward");
  grad_in = grad_out;
  grad_in.dims = in_dims_;
  grad_in.ndim = in_ndim_;
}

// --- Linear ------------------------------------------------------------

Linear::Linear(std::string id, int64_t in_f, int64_t out_f, bool bias)
    : Layer(std::move(id)), in_features(in_f), out_features(out_f), has_bias(bias) {
  if (in_f <= 0 || out_f <= 0) throw ConfigError("invalid linear geometry");
  weight = Tensor::zeros({out_f, in_f});
  grad_weight = Tensor::zeros({out_f, in_f});
  if (has_bias) {
    this->bias = Tensor::zeros({out_f});
    grad_bias = Tensor::zeros({out_f});
  }
}

void Linear::init_normal(Rng& rng, double stddev) {
  for (int64_t i = 0; i < weight.numel(); ++i) weight.ptr()[i] = rng.normal() * stddev;
  if (has_bias) bias.zero();
}

std::vector<ParamRef> Linear::param_refs() {
  std::vector<ParamRef> refs{{"weight", &weight, &grad_weight}};
  if (has_bias) refs.push_back({"bias", &bias, &grad_bias});
  return refs;
}

void Linear::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim != 2 || in.dims[1] != in_features) {
    throw ConfigError("linear '" + id() + "' expects (B," + std::to_string(in_features) +
                      "), got " + in.shape_str());
  }
  const int64_t B = in.dims[0];
  out.resize({B, out_features});
  gemm(false, true, B, out_features, in_features, 1.0, in.ptr(), in_features, weight.ptr(),
       in_features, 0.0, out.ptr(), out_features);
  if (has_bias) {
    for (int64_t b = 0; b < B; ++b) {
      double* row = out.ptr() + b * out_features;
      for (int64_t o = 0; o < out_features; ++o) row[o] += bias.ptr()[o];
    }
  }
  if (ctx.cache) cached_in_ = in;
}

void Linear::backward(const Tensor& grad_out, Tensor& grad_in) {
  const Tensor& in = cached_in_;
  if (in.numel() == 0) throw StateError("linear '" + id() + "' backward without cached forward");
  const int64_t B = in.dims[0];
  gemm(true, false, out_features, in_features, B, 1.0, grad_out.ptr(), out_features, in.ptr(),
       in_features, 1.0, grad_weight.ptr(), in_features);
  if (has_bias) {
    for (int64_t b = 0; b < B; ++b) {
      const double* row = grad_out.ptr() + b * out_features;
      for (int64_t o = 0; o < out_features; ++o) grad_bias.ptr()[o] += row[o];
    }
  }
  grad_in.resize({B, in_features});
  gemm(false, false, B, in_features, out_features, 1.0, grad_out.ptr(), out_features, weight.ptr(),
       in_features, 0.0, grad_in.ptr(), in_features);
}

// --- Dropout ---------------------------------------------------------------

void Dropout::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must lie in [0,1)");
  out = in;
  cached_training_ = ctx.training;
  if (!ctx.training || p == 0.0) {
    keep_.clear();
    return;
  }
  if (!ctx.rng) throw StateError("dropout '" + id() + "' needs an rng in training mode");
  keep_.assign(static_cast<size_t>(in.numel()), 1);
  const double scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < in.numel(); ++i) {
    if (ctx.rng->bernoulli(p)) {
      keep_[static_cast<size_t>(i)] = 0;
      out.ptr()[i] = 0.0;
    } else {
      out.ptr()[i] *= scale;
    }
  }
}

void Dropout::backward(const Tensor& grad_out, Tensor& grad_in) {
  grad_in = grad_out;
  if (!cached_training_ || p == 0.0) return;
  if (keep_.size() != static_cast<size_t>(grad_out.numel())) {
    throw StateError("dropout '" + id() + "' backward without cached forward");
  }
  const double scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < grad_out.numel(); ++i) {
    grad_in.ptr()[i] = keep_[static_cast<size_t>(i)] ? grad_out.ptr()[i] * scale : 0.0;
  }
}

// --- ResidualAdd -------------------------------------------------------

void ResidualAdd::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (!tap_) throw StateError("residual add '" + id() + "' has no shortcut source bound");
  const Tensor& tap = *tap_;
  out = in;
  const int64_t B = in.dims[0], C = in.dims[1], Ho = in.dims[2], Wo = in.dims[3];
  if (shortcut == ShortcutKind::kIdentity) {
    if (!tap.same_shape(in)) {
      throw ConfigError("residual add '" + id() + "' shape mismatch: " + in.shape_str() + " vs " +
                        tap.shape_str());
    }
    for (int64_t i = 0; i < in.numel(); ++i) out.ptr()[i] += tap.ptr()[i];
  } else {
    const int64_t Ci = tap.dims[1], Hi = tap.dims[2], Wi = tap.dims[3];
    if (C != out_channels || Ci != in_channels || Hi != 2 * Ho || Wi != 2 * Wo) {
      throw ConfigError("residual add '" + id() + "' pad/subsample mismatch: " + in.shape_str() +
                        " vs " + tap.shape_str());
    }
    const int64_t pad_front = (out_channels - in_channels) / 2;
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t c = 0; c < Ci; ++c) {
        const double* src = tap.ptr() + (b * Ci + c) * Hi * Wi;
        double* dst = out.ptr() + (b * C + c + pad_front) * Ho * Wo;
        for (int64_t h = 0; h < Ho; ++h) {
          for (int64_t w = 0; w < Wo; ++w) dst[h * Wo + w] += src[(2 * h) * Wi + 2 * w];
        }
      }
    }
  }
  if (ctx.cache) tap_dims_ = tap.dims;
}

void ResidualAdd::backward(const Tensor& grad_out, Tensor& grad_in) {
  grad_in = grad_out;
  tap_grad_.resize({tap_dims_[0], tap_dims_[1], tap_dims_[2], tap_dims_[3]});
  if (shortcut == ShortcutKind::kIdentity) {
    tap_grad_ = grad_out;
    tap_grad_.dims = tap_dims_;
  } else {
    tap_grad_.zero();
    const int64_t B = grad_out.dims[0], C = grad_out.dims[1];
    const int64_t Ho = grad_out.dims[2], Wo = grad_out.dims[3];
    const int64_t Ci = tap_dims_[1], Hi = tap_dims_[2], Wi = tap_dims_[3];
    const int64_t pad_front = (out_channels - in_channels) / 2;
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t c = 0; c < Ci; ++c) {
        const double* dy = grad_out.ptr() + (b * C + c + pad_front) * Ho * Wo;
        double* dst = tap_grad_.ptr() + (b * Ci + c) * Hi * Wi;
        for (int64_t h = 0; h < Ho; ++h) {
          for (int64_t w = 0; w < Wo; ++w) dst[(2 * h) * Wi + 2 * w] += dy[h * Wo + w];
        }
      }
    }
  }
}

// --- SCALayer ------------------------------------------------------------

SCALayer::SCALayer(std::string id, std::string host_conv_id, int64_t channels, const SCAConfig& cfg)
    : Layer(std::move(id)), host_conv_id(std::move(host_conv_id)), channels(channels), cfg(cfg) {
  params = init_params(channels, cfg);
  grads = SCAParamGrads::zeros_like(params);
}

std::vector<ParamRef> SCALayer::param_refs() {
  return {{"spatial_scale", &params.spatial_scale, &grads.spatial_scale},
          {"spatial_shift", &params.spatial_shift, &grads.spatial_shift},
          {"gn_avg_gamma", &params.gn_avg_gamma, &grads.gn_avg_gamma},
          {"gn_avg_beta", &params.gn_avg_beta, &grads.gn_avg_beta},
          {"gn_max_gamma", &params.gn_max_gamma, &grads.gn_max_gamma},
          {"gn_max_beta", &params.gn_max_beta, &grads.gn_max_beta}};
}

void SCALayer::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim != 4 || in.dims[1] != channels) {
    throw ConfigError("attention '" + id() + "' expects (B," + std::to_string(channels) +
                      ",H,W), got " + in.shape_str());
  }
  sca_forward(in, params, cfg, out, last_ac_, ctx.cache ? &cache_ : nullptr);
}

void SCALayer::backward(const Tensor& grad_out, Tensor& grad_in) {
  sca_backward(cache_, params, cfg, grad_out, grad_in, grads);
}

// --- SELayer ---------------------------------------------------------------

SELayer::SELayer(std::string id, std::string host_conv_id, int64_t channels, int64_t reduction)
    : Layer(std::move(id)), host_conv_id(std::move(host_conv_id)), channels(channels),
      mid(std::max<int64_t>(1, channels / reduction)) {
  w1 = Tensor::zeros({mid, channels});
  b1 = Tensor::zeros({mid});
  w2 = Tensor::zeros({channels, mid});
  b2 = Tensor::zeros({channels});
  grad_w1 = Tensor::zeros({mid, channels});
  grad_b1 = Tensor::zeros({mid});
  grad_w2 = Tensor::zeros({channels, mid});
  grad_b2 = Tensor::zeros({channels});
}

void SELayer::init(Rng& rng) {
  const double s1 = std::sqrt(2.0 / static_cast<double>(channels));
  const double s2 = std::sqrt(2.0 / static_cast<double>(mid));
  for (int64_t i = 0; i < w1.numel(); ++i) w1.ptr()[i] = rng.normal() * s1;
  for (int64_t i = 0; i < w2.numel(); ++i) w2.ptr()[i] = rng.normal() * s2;
  b1.zero();
  b2.zero();
}

std::vector<ParamRef> SELayer::param_refs() {
  return {{"w1", &w1, &grad_w1},
          {"b1", &b1, &grad_b1},
          {"w2", &w2, &grad_w2},
          {"b2", &b2, &grad_b2}};
}

void SELayer::forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) {
  if (in.ndim != 4 || in.dims[1] != channels) {
    throw ConfigError("se '" + id() + "' expects (B," + std::to_string(channels) + ",H,W), got " +
                      in.shape_str());
  }
  const int64_t B = in.dims[0], n = in.dims[2] * in.dims[3];
  pooled_.resize({B, channels});
  for (int64_t bc = 0; bc < B * channels; ++bc) {
    const double* src = in.ptr() + bc * n;
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += src[i];
    pooled_.ptr()[bc] = acc / static_cast<double>(n);
  }

  hidden_.resize({B, mid});
  gemm(false, true, B, mid, channels, 1.0, pooled_.ptr(), channels, w1.ptr(), channels, 0.0,
       hidden_.ptr(), mid);
  for (int64_t b = 0; b < B; ++b) {
    double* row = hidden_.ptr() + b * mid;
    for (int64_t j = 0; j < mid; ++j) row[j] = std::max(0.0, row[j] + b1.ptr()[j]);
  }

  gate_.resize({B, channels});
  gemm(false, true, B, channels, mid, 1.0, hidden_.ptr(), mid, w2.ptr(), mid, 0.0, gate_.ptr(),
       channels);
  last_ac_.resize({B, channels, 1, 1});
  for (int64_t b = 0; b < B; ++b) {
    double* row = gate_.ptr() + b * channels;
    for (int64_t c = 0; c < channels; ++c) {
      row[c] = sigmoid(row[c] + b2.ptr()[c]);
      last_ac_.ptr()[b * channels + c] = row[c];
    }
  }

  out.resize({in.dims[0], in.dims[1], in.dims[2], in.dims[3]});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const double z = gate_.ptr()[b * channels + c];
      const double* src = in.ptr() + (b * channels + c) * n;
      double* dst = out.ptr() + (b * channels + c) * n;
      for (int64_t i = 0; i < n; ++i) dst[i] = src[i] * z;
    }
  }
  if (ctx.cache) cached_in_ = in;
}

void SELayer::backward(const Tensor& grad_out, Tensor& grad_in) {
  const Tensor& in = cached_in_;
  if (in.numel() == 0) throw StateError("se '" + id() + "' backward without cached forward");
  const int64_t B = in.dims[0], n = in.dims[2] * in.dims[3];

  Tensor dgate = Tensor::zeros({B, channels});
  grad_in.resize({in.dims[0], in.dims[1], in.dims[2], in.dims[3]});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const int64_t off = (b * channels + c) * n;
      const double z = gate_.ptr()[b * channels + c];
      const double* dy = grad_out.ptr() + off;
      const double* xv = in.ptr() + off;
      double* dst = grad_in.ptr() + off;
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        acc += dy[i] * xv[i];
        dst[i] = dy[i] * z;
      }
      dgate.ptr()[b * channels + c] = acc * z * (1.0 - z);
    }
  }

  // Second linear stage.
  gemm(true, false, channels, mid, B, 1.0, dgate.ptr(), channels, hidden_.ptr(), mid, 1.0,
       grad_w2.ptr(), mid);
  for (int64_t b = 0; b < B; ++b) {
    const double* row = dgate.ptr() + b * channels;
    for (int64_t c = 0; c < channels; ++c) grad_b2.ptr()[c] += row[c];
  }
  Tensor dhidden = Tensor::zeros({B, mid});
  gemm(false, false, B, mid, channels, 1.0, dgate.ptr(), channels, w2.ptr(), mid, 0.0,
       dhidden.ptr(), mid);
  for (int64_t b = 0; b < B; ++b) {
    double* row = dhidden.ptr() + b * mid;
    const double* h = hidden_.ptr() + b * mid;
    for (int64_t j = 0; j < mid; ++j) {
      if (h[j] <= 0.0) row[j] = 0.0;
    }
  }

  // First linear stage.
  gemm(true, false, mid, channels, B, 1.0, dhidden.ptr(), mid, pooled_.ptr(), channels, 1.0,
       grad_w1.ptr(), channels);
  for (int64_t b = 0; b < B; ++b) {
    const double* row = dhidden.ptr() + b * mid;
    for (int64_t j = 0; j < mid; ++j) grad_b1.ptr()[j] += row[j];
  }
  Tensor dpool = Tensor::zeros({B, channels});
  gemm(false, false, B, channels, mid, 1.0, dhidden.ptr(), mid, w1.ptr(), channels, 0.0,
       dpool.ptr(), channels);

  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      const double g = dpool.ptr()[b * channels + c] / static_cast<double>(n);
      double* dst = grad_in.ptr() + (b * channels + c) * n;
      for (int64_t i = 0; i < n; ++i) dst[i] += g;
    }
  }
}

}  // namespace scap
