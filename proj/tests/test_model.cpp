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

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/model.hpp"

using namespace scap;

namespace {

SCAConfig default_cfg() { return SCAConfig{}; }

int count_kind(const Model& m, const char* kind) {
  int n = 0;
  for (const auto& l : m.layers) {
    if (std::string(l->kind()) == kind) ++n;
  }
  return n;
}

std::map<std::string, std::vector<double>> snapshot_params(Model& m) {
  std::map<std::string, std::vector<double>> snap;
  for (auto& p : m.named_params()) {
    snap[p.layer_id + "." + p.ref.name] = p.ref.value->data;
  }
  return snap;
}

Tensor ramp_input(int64_t b, int64_t c, int64_t h, int64_t w) {
  Tensor x;
  x.resize({b, c, h, w});
  for (int64_t i = 0; i < x.numel(); ++i) {
    x.ptr()[i] = 0.01 * static_cast<double>(i % 197) - 0.5;
  }
  return x;
}

}  // namespace

TEST_CASE("vgg16 builder shape and parameter budget") {
  Model m = build_vgg(16, 10, "none", default_cfg(), 1);
  CHECK(count_kind(m, "conv") == 13);
  CHECK(count_kind(m, "bn") == 13);
  CHECK(count_kind(m, "maxpool") == 5);
  CHECK(count_kind(m, "linear") == 2);
  CHECK(count_kind(m, "dropout") == 1);
  CHECK(m.trainable_param_count() == 16865354);
  CHECK(m.prunable_conv_ids().size() == 13);
  CHECK(m.meta.arch == "vgg");
  CHECK(m.meta.attention == "none");

  for (const auto& l : m.layers) {
    if (auto* conv = dynamic_cast<Conv2d*>(l.get())) {
      CHECK(conv->has_bias);
      CHECK(conv->prunable);
      CHECK(conv->attention_site);
    }
  }

  Tensor x = ramp_input(1, 3, 32, 32);
  Tensor logits;
  m.forward(x, logits, FwdCtx{});
  REQUIRE(logits.ndim == 2);
  CHECK(logits.dims[0] == 1);
  CHECK(logits.dims[1] == 10);
  CHECK(logits.all_finite());
}

TEST_CASE("vgg19 builder parameter budget") {
  Model m = build_vgg(19, 10, "none", default_cfg(), 1);
  CHECK(count_kind(m, "conv") == 16);
  CHECK(m.trainable_param_count() == 22177610);
}

TEST_CASE("resnet builder parameter budgets across depths") {
  CHECK(build_resnet(20, 10, "none", default_cfg(), 1).trainable_param_count() == 269722);
  CHECK(build_resnet(56, 10, "none", default_cfg(), 1).trainable_param_count() == 853018);
  CHECK(build_resnet(110, 10, "none", default_cfg(), 1).trainable_param_count() == 1727962);
}

TEST_CASE("resnet56 block structure") {
  Model m = build_resnet(56, 10, "none", default_cfg(), 1);
  CHECK(count_kind(m, "conv") == 55);
  CHECK(count_kind(m, "residual_add") == 27);
  CHECK(count_kind(m, "linear") == 1);
  CHECK(m.prunable_conv_ids().size() == 27);

  auto* stem = dynamic_cast<Conv2d*>(m.find("conv0"));
  REQUIRE(stem != nullptr);
  CHECK_FALSE(stem->has_bias);
  CHECK_FALSE(stem->prunable);
  CHECK_FALSE(stem->attention_site);

  auto* c1 = dynamic_cast<Conv2d*>(m.find("s2b1_conv1"));
  REQUIRE(c1 != nullptr);
  CHECK(c1->stride == 2);
  CHECK(c1->prunable);
  CHECK(c1->attention_site);
  auto* c2 = dynamic_cast<Conv2d*>(m.find("s2b1_conv2"));
  REQUIRE(c2 != nullptr);
  CHECK_FALSE(c2->prunable);
  CHECK(c2->attention_site);

  auto* down = dynamic_cast<ResidualAdd*>(m.find("s2b1_add"));
  REQUIRE(down != nullptr);
  CHECK(down->shortcut == ShortcutKind::kPadSubsample);
  auto* plain = dynamic_cast<ResidualAdd*>(m.find("s2b2_add"));
  REQUIRE(plain != nullptr);
  CHECK(plain->shortcut == ShortcutKind::kIdentity);
  CHECK(plain->source_id == "s2b1_relu2");

  Tensor x = ramp_input(2, 3, 32, 32);
  Tensor logits;
  m.forward(x, logits, FwdCtx{});
  CHECK(logits.dims[0] == 2);
  CHECK(logits.dims[1] == 10);
  CHECK(logits.all_finite());
}

TEST_CASE("builders reject unsupported depths") {
  CHECK_THROWS_AS(build_vgg(13, 10, "none", default_cfg(), 1), ConfigError);
  CHECK_THROWS_AS(build_resnet(57, 10, "none", default_cfg(), 1), ConfigError);
  CHECK_THROWS_AS(build_resnet(7, 10, "none", default_cfg(), 1), ConfigError);
  CHECK_THROWS_AS(build_vgg(16, 1, "none", default_cfg(), 1), ConfigError);
}

TEST_CASE("same seed rebuilds identical weights, different seed does not") {
  Model a = build_resnet(20, 10, "none", default_cfg(), 42);
  Model b = build_resnet(20, 10, "none", default_cfg(), 42);
  Model c = build_resnet(20, 10, "none", default_cfg(), 43);
  auto sa = snapshot_params(a), sb = snapshot_params(b), sc = snapshot_params(c);
  CHECK(sa == sb);
  CHECK(sa != sc);
}

TEST_CASE("attention insertion adds the documented parameter budget") {
  SUBCASE("vgg16 with channel-spatial attention") {
    Model m = build_vgg(16, 10, "none", default_cfg(), 5);
    const int64_t before = m.trainable_param_count();
    const int added = insert_attention(m, "sca", default_cfg(), 5);
    CHECK(added == 13);
    // per conv: 2*min(64, C) spatial affine terms plus 4*C group-norm terms
    CHECK(m.trainable_param_count() - before == 18560);
    CHECK(m.trainable_param_count() == 16883914);
    CHECK(m.meta.attention == "sca");
    CHECK(insert_attention(m, "sca", default_cfg(), 5) == 0);

    // module sits between the host relu and the next layer
    const int64_t at = m.index_of("conv1_att");
    REQUIRE(at >= 0);
    CHECK(m.layers[at - 1]->id() == "relu1");
  }

  SUBCASE("resnet56 gates both block convolutions") {
    Model m = build_resnet(56, 10, "none", default_cfg(), 5);
    const int64_t before = m.trainable_param_count();
    const int added = insert_attention(m, "sca", default_cfg(), 5);
    CHECK(added == 54);
    CHECK(m.trainable_param_count() - before == 12096);
    CHECK(m.trainable_param_count() == 865114);

    // pre-addition site: module directly follows the block's second norm
    const int64_t at = m.index_of("s1b1_conv2_att");
    REQUIRE(at >= 0);
    CHECK(m.layers[at - 1]->id() == "s1b1_bn2");
    CHECK(m.layers[at + 1]->id() == "s1b1_add");
  }

  SUBCASE("squeeze-excite mirror instruments the same sites") {
    Model m = build_vgg(16, 10, "none", default_cfg(), 5);
    const int64_t before = m.trainable_param_count();
    CHECK(insert_attention(m, "se", default_cfg(), 5) == 13);
    CHECK(m.trainable_param_count() > before);
    CHECK(m.meta.attention == "se");
  }
}

TEST_CASE("removing attention restores the backbone bit for bit") {
  for (const std::string kind : {"sca", "se"}) {
    Model m = build_resnet(20, 10, "none", default_cfg(), 11);
    auto before = snapshot_params(m);
    REQUIRE(insert_attention(m, kind, default_cfg(), 11) == 18);
    Tensor x = ramp_input(1, 3, 32, 32);
    Tensor logits;
    m.forward(x, logits, FwdCtx{});  // exercise the instrumented graph first
    CHECK(remove_attention(m) == 18);
    CHECK(snapshot_params(m) == before);
    CHECK(m.meta.attention == "none");
    CHECK(count_kind(m, kind.c_str()) == 0);
  }
}

TEST_CASE("builder with attention equals build-then-insert") {
  Model direct = build_vgg(16, 10, "sca", default_cfg(), 7);
  Model staged = build_vgg(16, 10, "none", default_cfg(), 7);
  insert_attention(staged, "sca", default_cfg(), 7);
  CHECK(snapshot_params(direct) == snapshot_params(staged));
  CHECK(model_to_json(direct) == model_to_json(staged));
}

TEST_CASE("instrumented forward exposes channel attention maps") {
  Model m = build_resnet(20, 10, "sca", default_cfg(), 3);
  Tensor x = ramp_input(2, 3, 32, 32);
  Tensor logits;
  m.forward(x, logits, FwdCtx{});
  int seen = 0;
  for (const auto& l : m.layers) {
    const Tensor* map = l->attention_map();
    if (map == nullptr) continue;
    ++seen;
    REQUIRE(map->numel() > 0);
    CHECK(map->dims[0] == 2);
    for (int64_t i = 0; i < map->numel(); ++i) {
      CHECK(map->ptr()[i] > 0.0);
      CHECK(map->ptr()[i] < 1.0);
    }
  }
  CHECK(seen == 18);
}

TEST_CASE("attention group counts adapt to narrow layers") {
  Model m = build_resnet(20, 10, "sca", default_cfg(), 3);
  auto* att = dynamic_cast<SCALayer*>(m.find("s1b1_conv1_att"));
  REQUIRE(att != nullptr);
  CHECK(att->channels == 16);
  CHECK(att->cfg.spatial_groups == 16);  // 64 requested, 16 channels available
  CHECK(att->cfg.gn_groups == 4);
  CHECK(att->params.param_count() == 2 * 16 + 4 * 16);
}

TEST_CASE("model json round-trips every layer kind") {
  for (const std::string arch : {"vgg", "resnet"}) {
    Model m = arch == "vgg" ? build_vgg(16, 10, "sca", default_cfg(), 2)
                            : build_resnet(20, 100, "se", default_cfg(), 2);
    nlohmann::json j = model_to_json(m);
    Model r = model_from_json(j);
    CHECK(model_to_json(r) == j);
    CHECK(r.layers.size() == m.layers.size());
    CHECK(r.meta.num_classes == m.meta.num_classes);
  }
}

TEST_CASE("checkpoint round-trip preserves weights state and manifest") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "scaprune_ckpt_test";
  fs::remove_all(dir);

  Model m = build_resnet(20, 10, "sca", default_cfg(), 9);
  // make running statistics non-trivial before saving
  Tensor x = ramp_input(2, 3, 32, 32);
  Tensor out;
  m.forward(x, out, FwdCtx{true, false, nullptr});

  nlohmann::json manifest = {{"seed", 9}, {"epoch", 3}, {"note", "unit"}};
  save_checkpoint(m, dir.string(), manifest);
  CHECK(fs::exists(dir / "layers.json"));
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "params" / "conv0.weight.bin"));

  nlohmann::json back = read_manifest(dir.string());
  CHECK(back["seed"] == 9);
  CHECK(back["note"] == "unit");

  Model r = load_checkpoint(dir.string());
  CHECK(snapshot_params(r) == snapshot_params(m));
  for (auto& s : m.named_state()) {
    auto* lr = r.find(s.layer_id);
    REQUIRE(lr != nullptr);
    for (auto& sr : lr->state_refs()) {
      if (sr.name == s.ref.name) CHECK(sr.value->data == s.ref.value->data);
    }
  }

  Tensor la, lb;
  m.forward(x, la, FwdCtx{});
  r.forward(x, lb, FwdCtx{});
  REQUIRE(la.numel() == lb.numel());
  for (int64_t i = 0; i < la.numel(); ++i) CHECK(la.ptr()[i] == lb.ptr()[i]);

  fs::remove_all(dir);
}

TEST_CASE("tensor blobs reject corrupt files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "scaprune_blob_test";
  fs::create_directories(dir);

  Tensor t = Tensor::full({2, 3, 1, 1}, 1.5);
  const std::string good = (dir / "good.bin").string();
  write_tensor_blob(good, t);
  Tensor back = read_tensor_blob(good);
  CHECK(back.same_shape(t));
  CHECK(back.data == t.data);

  const std::string bad = (dir / "bad.bin").string();
  std::ofstream(bad) << "not a tensor";
  CHECK_THROWS_AS(read_tensor_blob(bad), IoError);

  // truncated payload
  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() - 8);
  CHECK_THROWS_AS(read_tensor_blob(bad), IoError);

  CHECK_THROWS_AS(read_tensor_blob((dir / "absent.bin").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("channel masks apply to the norm behind a convolution") {
  Model m = build_vgg(16, 10, "none", default_cfg(), 4);
  std::vector<uint8_t> mask(64, 0);
  mask[3] = 1;
  m.set_channel_mask("conv1", mask);
  auto* bn = dynamic_cast<BatchNorm*>(m.find("bn1"));
  REQUIRE(bn != nullptr);
  CHECK(bn->channel_mask == mask);

  m.clear_channel_masks();
  CHECK(bn->channel_mask.empty());

  CHECK_THROWS_AS(m.set_channel_mask("nope", mask), ConfigError);
  CHECK_THROWS_AS(m.set_channel_mask("conv1", std::vector<uint8_t>(3, 0)), ConfigError);
}

TEST_CASE("training forward and backward run through the full graph") {
  Model m = build_resnet(20, 10, "sca", default_cfg(), 13);
  Tensor x = ramp_input(2, 3, 32, 32);
  Tensor logits;
  m.forward(x, logits, FwdCtx{true, true, nullptr});

  Tensor grad = Tensor::full({2, 10}, 0.1);
  Tensor grad_input;
  m.backward(grad, &grad_input);
  CHECK(grad_input.same_shape(x));
  CHECK(grad_input.all_finite());

  int64_t nonzero_tensors = 0, total = 0;
  for (auto& p : m.named_params()) {
    ++total;
    for (int64_t i = 0; i < p.ref.grad->numel(); ++i) {
      if (p.ref.grad->ptr()[i] != 0.0) {
        ++nonzero_tensors;
        break;
      }
    }
  }
  // every parameter tensor in the graph receives some gradient signal
  CHECK(nonzero_tensors == total);
}
