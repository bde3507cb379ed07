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

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/attention.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace scap {

// A trainable tensor of a layer together with its gradient buffer.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// Non-trainable persistent state (batch-norm running statistics).
struct StateRef {
  std::string name;
  Tensor* value;
};

struct FwdCtx {
  bool training = false;  // batch statistics and active dropout
  bool cache = false;     // retain intermediates for backward
  Rng* rng = nullptr;     // dropout mask source; required when training
};

class Layer {
 public:
  explicit Layer(std::string id) : id_(std::move(id)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& id() const { return id_; }
  virtual const char* kind() const = 0;
  virtual void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) = 0;
  // Uses the intermediates retained by the last cached forward.
  virtual void backward(const Tensor& grad_out, Tensor& grad_in) = 0;
  virtual std::vector<ParamRef> param_refs() { return {}; }
  virtual std::vector<StateRef> state_refs() { return {}; }
  // Channel attention map of the last forward, or null for plain layers.
  virtual const Tensor* attention_map() const { return nullptr; }

  void zero_grads() {
    for (auto& p : param_refs()) p.grad->zero();
  }

 private:
  std::string id_;
};

class Conv2d : public Layer {
 public:
  Conv2d(std::string id, int64_t in_c, int64_t out_c, int64_t k, int64_t stride, int64_t pad,
         bool bias, bool prunable);

  const char* kind() const override { return "conv"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;
  std::vector<ParamRef> param_refs() override;

  void init_he(Rng& rng);

  int64_t in_channels, out_channels, kernel, stride, padding;
  bool has_bias;
  bool prunable;
  // Builders flag the convolutions that receive an attention module when
  // insertion is requested.
  bool attention_site = false;
  Tensor weight;  // (out, in, k, k)
  Tensor bias;    // (out)
  Tensor grad_weight, grad_bias;

 private:
  Tensor cached_in_;
  std::vector<double> col_;
};

class BatchNorm : public Layer {
 public:
  BatchNorm(std::string id, int64_t channels, double eps = 1e-5, double momentum = 0.1);

  const char* kind() const override { return "bn"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;
  std::vector<ParamRef> param_refs() override;
  std::vector<StateRef> state_refs() override;

  int64_t channels;
  double eps, momentum;
  Tensor gamma, beta, running_mean, running_var;
  Tensor grad_gamma, grad_beta;
  // When non-empty, output channels flagged 1 are forced to zero after the
  // affine. Used to emulate pruning without changing the graph.
  std::vector<uint8_t> channel_mask;

 private:
  Tensor cached_xhat_;
  std::vector<double> cached_invstd_;
  bool cached_training_ = false;
};

class ReLU : public Layer {
 public:
  explicit ReLU(std::string id) : Layer(std::move(id)) {}
  const char* kind() const override { return "relu"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;

 private:
  std::vector<uint8_t> mask_;
  std::array<int64_t, 4> in_dims_{};
  int in_ndim_ = 0;
};

class MaxPool : public Layer {
 public:
  MaxPool(std::string id, int64_t k, int64_t stride) : Layer(std::move(id)), kernel(k), stride(stride) {}
  const char* kind() const override { return "maxpool"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;

  int64_t kernel, stride;

 private:
  std::vector<int64_t> argmax_;
  std::array<int64_t, 4> in_dims_{};
};

class GlobalAvgPool : public Layer {
 public:
  explicit GlobalAvgPool(std::string id) : Layer(std::move(id)) {}
  const char* kind() const override { return "gap"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;

 private:
  std::array<int64_t, 4> in_dims_{};
};

class Flatten : public Layer {
 public:
  explicit Flatten(std::string id) : Layer(std::move(id)) {}
  const char* kind() const override { return "flatten"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;

 private:
  std::array<int64_t, 4> in_dims_{};
  int in_ndim_ = 0;
};

class Linear : public Layer {
 public:
  Linear(std::string id, int64_t in_f, int64_t out_f, bool bias = true);

  const char* kind() const override { return "linear"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;
  std::vector<ParamRef> param_refs() override;

  void init_normal(Rng& rng, double stddev = 0.01);

  int64_t in_features, out_features;
  bool has_bias;
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
  Tensor grad_weight, grad_bias;

 private:
  Tensor cached_in_;
};

class Dropout : public Layer {
 public:
  Dropout(std::string id, double p) : Layer(std::move(id)), p(p) {}
  const char* kind() const override { return "dropout"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;

  double p;

 private:
  std::vector<uint8_t> keep_;
  bool cached_training_ = false;
};

enum class ShortcutKind { kIdentity, kPadSubsample };

// Adds a previously recorded activation (the shortcut) to its input. The
// shortcut source is set by the model walk before forward; the gradient to
// the source is retrieved after backward.
class ResidualAdd : public Layer {
 public:
  ResidualAdd(std::string id, std::string source_id, ShortcutKind sk, int64_t in_c, int64_t out_c)
      : Layer(std::move(id)), source_id(std::move(source_id)), shortcut(sk), in_channels(in_c),
        out_channels(out_c) {}

  const char* kind() const override { return "residual_add"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;

  void set_shortcut(const Tensor* tap) { tap_ = tap; }
  const Tensor& shortcut_grad() const { return tap_grad_; }

  std::string source_id;
  ShortcutKind shortcut;
  int64_t in_channels;   // channels of the tapped activation
  int64_t out_channels;  // channels after padding (equals in for identity)

 private:
  const Tensor* tap_ = nullptr;
  Tensor tap_grad_;
  std::array<int64_t, 4> tap_dims_{};
};

// Attention module wrapper; exposes the channel map of the last forward for
// statistics collection. host_conv_id names the convolution whose output
// channels this module gates.
class SCALayer : public Layer {
 public:
  SCALayer(std::string id, std::string host_conv_id, int64_t channels, const SCAConfig& cfg);

  const char* kind() const override { return "sca"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;
  std::vector<ParamRef> param_refs() override;
  const Tensor* attention_map() const override { return &last_ac_; }

  std::string host_conv_id;
  int64_t channels;
  SCAConfig cfg;
  SCAParams params;
  SCAParamGrads grads;

 private:
  SCACache cache_;
  Tensor last_ac_;
};

// Squeeze-and-excitation gate with the usual two-layer bottleneck.
class SELayer : public Layer {
 public:
  SELayer(std::string id, std::string host_conv_id, int64_t channels, int64_t reduction = 16);

  const char* kind() const override { return "se"; }
  void forward(const Tensor& in, Tensor& out, const FwdCtx& ctx) override;
  void backward(const Tensor& grad_out, Tensor& grad_in) override;
  std::vector<ParamRef> param_refs() override;
  const Tensor* attention_map() const override { return &last_ac_; }

  void init(Rng& rng);

  std::string host_conv_id;
  int64_t channels, mid;
  Tensor w1, b1;  // (mid, C), (mid)
  Tensor w2, b2;  // (C, mid), (C)
  Tensor grad_w1, grad_b1, grad_w2, grad_b2;

 private:
  Tensor cached_in_, pooled_, hidden_, gate_;
  Tensor last_ac_;
};

}  // namespace scap
