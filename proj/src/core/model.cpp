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

#include "core/model.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_set>

#include "core/common.hpp"

namespace scap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) {
    throw StateError("gradient accumulation shape mismatch: " + dst.shape_str() + " vs " +
                     src.shape_str());
  }
  for (int64_t i = 0; i < dst.numel(); ++i) dst.ptr()[i] += src.ptr()[i];
}

}  // namespace

Layer* Model::find(const std::string& id) {
  for (auto& l : layers) {
    if (l->id() == id) return l.get();
  }
  return nullptr;
}

const Layer* Model::find(const std::string& id) const {
  for (const auto& l : layers) {
    if (l->id() == id) return l.get();
  }
  return nullptr;
}

int64_t Model::index_of(const std::string& id) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i]->id() == id) return static_cast<int64_t>(i);
  }
  return -1;
}

void Model::forward(const Tensor& x, Tensor& out, const FwdCtx& ctx) {
  std::unordered_set<std::string> tapped;
  for (const auto& l : layers) {
    if (const auto* ra = dynamic_cast<const ResidualAdd*>(l.get())) tapped.insert(ra->source_id);
  }
  taps_.clear();

  Tensor a = x, b;
  for (auto& l : layers) {
    if (auto* ra = dynamic_cast<ResidualAdd*>(l.get())) {
      auto it = taps_.find(ra->source_id);
      if (it == taps_.end()) {
        throw StateError("residual add '" + ra->id() + "' references unknown source '" +
                         ra->source_id + "'");
      }
      ra->set_shortcut(&it->second);
    }
    l->forward(a, b, ctx);
    if (tapped.count(l->id())) taps_[l->id()] = b;
    std::swap(a, b);
  }
  out = std::move(a);
}

void Model::backward(const Tensor& grad_logits, Tensor* grad_input) {
  std::unordered_map<std::string, Tensor> tap_grads;
  Tensor cur = grad_logits, gin;
  for (int64_t i = static_cast<int64_t>(layers.size()) - 1; i >= 0; --i) {
    auto pending = tap_grads.find(layers[i]->id());
    if (pending != tap_grads.end()) {
      add_into(cur, pending->second);
      tap_grads.erase(pending);
    }
    layers[i]->backward(cur, gin);
    if (auto* ra = dynamic_cast<ResidualAdd*>(layers[i].get())) {
      auto [it, fresh] = tap_grads.try_emplace(ra->source_id, ra->shortcut_grad());
      if (!fresh) add_into(it->second, ra->shortcut_grad());
    }
    std::swap(cur, gin);
  }
  if (grad_input) *grad_input = std::move(cur);
}

std::vector<Model::NamedParam> Model::named_params() {
  std::vector<NamedParam> out;
  for (auto& l : layers) {
    for (auto& p : l->param_refs()) out.push_back({l->id(), p});
  }
  return out;
}

std::vector<Model::NamedState> Model::named_state() {
  std::vector<NamedState> out;
  for (auto& l : layers) {
    for (auto& s : l->state_refs()) out.push_back({l->id(), s});
  }
  return out;
}

void Model::zero_grads() {
  for (auto& l : layers) l->zero_grads();
}

int64_t Model::trainable_param_count() {
  int64_t total = 0;
  for (auto& np : named_params()) total += np.ref.value->numel();
  return total;
}

std::vector<std::string> Model::prunable_conv_ids() const {
  std::vector<std::string> ids;
  for (const auto& l : layers) {
    if (const auto* c = dynamic_cast<const Conv2d*>(l.get())) {
      if (c->prunable) ids.push_back(c->id());
    }
  }
  return ids;
}

void Model::set_channel_mask(const std::string& conv_id, const std::vector<uint8_t>& mask) {
  const int64_t at = index_of(conv_id);
  if (at < 0) throw ConfigError("no layer '" + conv_id + "' to mask");
  for (size_t i = static_cast<size_t>(at) + 1; i < layers.size(); ++i) {
    if (auto* bn = dynamic_cast<BatchNorm*>(layers[i].get())) {
      if (bn->channels != static_cast<int64_t>(mask.size())) {
        throw ConfigError("mask size " + std::to_string(mask.size()) + " does not match '" +
                          bn->id() + "' channels " + std::to_string(bn->channels));
      }
      bn->channel_mask = mask;
      return;
    }
    if (dynamic_cast<Conv2d*>(layers[i].get()) || dynamic_cast<Linear*>(layers[i].get())) break;
  }
  throw ConfigError("no batch norm follows '" + conv_id + "' to carry the mask");
}

void Model::clear_channel_masks() {
  for (auto& l : layers) {
    if (auto* bn = dynamic_cast<BatchNorm*>(l.get())) bn->channel_mask.clear();
  }
}

// --- Builders ----------------------------------------------------------

namespace {

void init_backbone(Model& m, uint64_t seed) {
  Rng rng(Rng::mix(seed, 0, rng_stream::kInit));
  for (auto& l : m.layers) {
    if (auto* c = dynamic_cast<Conv2d*>(l.get())) {
      c->init_he(rng);
    } else if (auto* fc = dynamic_cast<Linear*>(l.get())) {
      fc->init_normal(rng);
    }
  }
}

}  // namespace

Model build_vgg(int depth, int num_classes, const std::string& attention, const SCAConfig& cfg,
                uint64_t seed) {
  if (depth != 16 && depth != 19) {
    throw ConfigError("unsupported vgg depth " + std::to_string(depth));
  }
  if (num_classes < 2) throw ConfigError("need at least two classes");
  const std::vector<int> plan16 = {64, 64,  -1, 128, 128, -1, 256, 256, 256,
                                   -1, 512, 512, 512, -1, 512, 512, 512, -1};
  const std::vector<int> plan19 = {64,  64,  -1,  128, 128, -1,  256, 256, 256, 256, -1, 512,
                                   512, 512, 512, -1,  512, 512, 512, 512, -1};
  const auto& plan = (depth == 16) ? plan16 : plan19;

  Model m;
  m.meta = {"vgg", depth, num_classes, "none"};
  int conv_idx = 0, pool_idx = 0;
  int64_t channels = 3;
  for (int entry : plan) {
    if (entry == -1) {
      ++pool_idx;
      m.layers.push_back(std::make_unique<MaxPool>("pool" + std::to_string(pool_idx), 2, 2));
      continue;
    }
    ++conv_idx;
    const std::string tag = std::to_string(conv_idx);
    auto conv = std::make_unique<Conv2d>("conv" + tag, channels, entry, 3, 1, 1, true, true);
    conv->attention_site = true;
    m.layers.push_back(std::move(conv));
    m.layers.push_back(std::make_unique<BatchNorm>("bn" + tag, entry));
    m.layers.push_back(std::make_unique<ReLU>("relu" + tag));
    channels = entry;
  }
  m.layers.push_back(std::make_unique<Flatten>("flatten"));
  m.layers.push_back(std::make_unique<Linear>("fc1", 512, 4096));
  m.layers.push_back(std::make_unique<ReLU>("fc1_relu"));
  m.layers.push_back(std::make_unique<Dropout>("fc1_drop", 0.5));
  m.layers.push_back(std::make_unique<Linear>("fc2", 4096, num_classes));

  init_backbone(m, seed);
  if (attention != "none") insert_attention(m, attention, cfg, seed);
  return m;
}

Model build_resnet(int depth, int num_classes, const std::string& attention, const SCAConfig& cfg,
                   uint64_t seed) {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw ConfigError("unsupported resnet depth " + std::to_string(depth) +
                      " (need 6n+2, n >= 1)");
  }
  if (num_classes < 2) throw ConfigError("need at least two classes");
  const int blocks_per_stage = (depth - 2) / 6;
  const int64_t widths[3] = {16, 32, 64};

  Model m;
  m.meta = {"resnet", depth, num_classes, "none"};
  m.layers.push_back(std::make_unique<Conv2d>("conv0", 3, 16, 3, 1, 1, false, false));
  m.layers.push_back(std::make_unique<BatchNorm>("bn0", 16));
  m.layers.push_back(std::make_unique<ReLU>("relu0"));

  std::string block_input = "relu0";
  int64_t in_w = 16;
  for (int s = 0; s < 3; ++s) {
    const int64_t w = widths[s];
    for (int b = 0; b < blocks_per_stage; ++b) {
      const std::string pre = "s" + std::to_string(s + 1) + "b" + std::to_string(b + 1) + "_";
      const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      auto conv1 = std::make_unique<Conv2d>(pre + "conv1", in_w, w, 3, stride, 1, false, true);
      conv1->attention_site = true;
      m.layers.push_back(std::move(conv1));
      m.layers.push_back(std::make_unique<BatchNorm>(pre + "bn1", w));
      m.layers.push_back(std::make_unique<ReLU>(pre + "relu1"));
      auto conv2 = std::make_unique<Conv2d>(pre + "conv2", w, w, 3, 1, 1, false, false);
      conv2->attention_site = true;
      m.layers.push_back(std::move(conv2));
      m.layers.push_back(std::make_unique<BatchNorm>(pre + "bn2", w));
      const ShortcutKind sk = (in_w == w) ? ShortcutKind::kIdentity : ShortcutKind::kPadSubsample;
      m.layers.push_back(std::make_unique<ResidualAdd>(pre + "add", block_input, sk, in_w, w));
      m.layers.push_back(std::make_unique<ReLU>(pre + "relu2"));
      block_input = pre + "relu2";
      in_w = w;
    }
  }
  m.layers.push_back(std::make_unique<GlobalAvgPool>("gap"));
  m.layers.push_back(std::make_unique<Flatten>("flatten"));
  m.layers.push_back(std::make_unique<Linear>("fc", 64, num_classes));

  init_backbone(m, seed);
  if (attention != "none") insert_attention(m, attention, cfg, seed);
  return m;
}

int insert_attention(Model& model, const std::string& kind, const SCAConfig& cfg, uint64_t seed) {
  if (kind != "sca" && kind != "se") throw ConfigError("unknown attention kind '" + kind + "'");
  struct Insertion {
    size_t at;
    std::string host;
    int64_t channels;
  };
  std::vector<Insertion> plan;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const auto* conv = dynamic_cast<const Conv2d*>(model.layers[i].get());
    if (!conv || !conv->attention_site) continue;
    if (model.find(conv->id() + "_att")) continue;  // already instrumented
    if (i + 2 < model.layers.size() && std::string(model.layers[i + 1]->kind()) == "bn" &&
        std::string(model.layers[i + 2]->kind()) == "relu") {
      plan.push_back({i + 3, conv->id(), conv->out_channels});
    } else if (i + 1 < model.layers.size() && std::string(model.layers[i + 1]->kind()) == "bn") {
      plan.push_back({i + 2, conv->id(), conv->out_channels});
    } else {
      throw StateError("conv '" + conv->id() + "' is flagged for attention but lacks a norm");
    }
  }

  Rng rng(Rng::mix(seed, 0, rng_stream::kAttentionInit));
  int inserted = 0;
  for (auto it = plan.rbegin(); it != plan.rend(); ++it) {
    std::unique_ptr<Layer> layer;
    if (kind == "sca") {
      SCAConfig fitted = cfg;
      fitted.spatial_groups = SCAConfig::fit_groups(cfg.spatial_groups, it->channels);
      fitted.gn_groups = SCAConfig::fit_groups(cfg.gn_groups, it->channels);
      layer = std::make_unique<SCALayer>(it->host + "_att", it->host, it->channels, fitted);
    } else {
      auto se = std::make_unique<SELayer>(it->host + "_att", it->host, it->channels, 16);
      se->init(rng);
      layer = std::move(se);
    }
    model.layers.insert(model.layers.begin() + static_cast<int64_t>(it->at), std::move(layer));
    ++inserted;
  }
  if (inserted > 0) model.meta.attention = kind;
  return inserted;
}

int remove_attention(Model& model) {
  int removed = 0;
  for (auto it = model.layers.begin(); it != model.layers.end();) {
    const std::string kind = (*it)->kind();
    if (kind == "sca" || kind == "se") {
      it = model.layers.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  if (removed > 0) model.meta.attention = "none";
  return removed;
}

// --- Serialization -----------------------------------------------------

json model_to_json(const Model& model) {
  json layers = json::array();
  for (const auto& l : model.layers) {
    json e;
    e["id"] = l->id();
    e["kind"] = l->kind();
    if (const auto* c = dynamic_cast<const Conv2d*>(l.get())) {
      e["in"] = c->in_channels;
      e["out"] = c->out_channels;
      e["k"] = c->kernel;
      e["stride"] = c->stride;
      e["pad"] = c->padding;
      e["bias"] = c->has_bias;
      e["prunable"] = c->prunable;
      e["attention_site"] = c->attention_site;
    } else if (const auto* bn = dynamic_cast<const BatchNorm*>(l.get())) {
      e["channels"] = bn->channels;
      e["eps"] = bn->eps;
      e["momentum"] = bn->momentum;
    } else if (const auto* mp = dynamic_cast<const MaxPool*>(l.get())) {
      e["k"] = mp->kernel;
      e["stride"] = mp->stride;
    } else if (const auto* fc = dynamic_cast<const Linear*>(l.get())) {
      e["in"] = fc->in_features;
      e["out"] = fc->out_features;
      e["bias"] = fc->has_bias;
    } else if (const auto* dr = dynamic_cast<const Dropout*>(l.get())) {
      e["p"] = dr->p;
    } else if (const auto* ra = dynamic_cast<const ResidualAdd*>(l.get())) {
      e["source"] = ra->source_id;
      e["shortcut"] = (ra->shortcut == ShortcutKind::kIdentity) ? "identity" : "pad_subsample";
      e["in_channels"] = ra->in_channels;
      e["out_channels"] = ra->out_channels;
    } else if (const auto* att = dynamic_cast<const SCALayer*>(l.get())) {
      e["host"] = att->host_conv_id;
      e["channels"] = att->channels;
      e["spatial_groups"] = att->cfg.spatial_groups;
      e["gn_groups"] = att->cfg.gn_groups;
      e["eps_spatial"] = att->cfg.eps_spatial;
      e["eps_gn"] = att->cfg.eps_gn;
      e["arrangement"] = arrangement_name(att->cfg.arrangement);
    } else if (const auto* se = dynamic_cast<const SELayer*>(l.get())) {
      e["host"] = se->host_conv_id;
      e["channels"] = se->channels;
      e["mid"] = se->mid;
    }
    layers.push_back(std::move(e));
  }
  return json{{"model",
               {{"arch", model.meta.arch},
                {"depth", model.meta.depth},
                {"num_classes", model.meta.num_classes},
                {"attention", model.meta.attention}}},
              {"layers", std::move(layers)}};
}

Model model_from_json(const json& j) {
  Model m;
  const auto& meta = j.at("model");
  m.meta.arch = meta.at("arch").get<std::string>();
  m.meta.depth = meta.at("depth").get<int>();
  m.meta.num_classes = meta.at("num_classes").get<int>();
  m.meta.attention = meta.at("attention").get<std::string>();

  for (const auto& e : j.at("layers")) {
    const std::string kind = e.at("kind").get<std::string>();
    const std::string id = e.at("id").get<std::string>();
    if (kind == "conv") {
      auto c = std::make_unique<Conv2d>(id, e.at("in").get<int64_t>(), e.at("out").get<int64_t>(),
                                        e.at("k").get<int64_t>(), e.at("stride").get<int64_t>(),
                                        e.at("pad").get<int64_t>(), e.at("bias").get<bool>(),
                                        e.at("prunable").get<bool>());
      c->attention_site = e.value("attention_site", false);
      m.layers.push_back(std::move(c));
    } else if (kind == "bn") {
      m.layers.push_back(std::make_unique<BatchNorm>(id, e.at("channels").get<int64_t>(),
                                                     e.at("eps").get<double>(),
                                                     e.at("momentum").get<double>()));
    } else if (kind == "relu") {
      m.layers.push_back(std::make_unique<ReLU>(id));
    } else if (kind == "maxpool") {
      m.layers.push_back(
          std::make_unique<MaxPool>(id, e.at("k").get<int64_t>(), e.at("stride").get<int64_t>()));
    } else if (kind == "gap") {
      m.layers.push_back(std::make_unique<GlobalAvgPool>(id));
    } else if (kind == "flatten") {
      m.layers.push_back(std::make_unique<Flatten>(id));
    } else if (kind == "linear") {
      m.layers.push_back(std::make_unique<Linear>(id, e.at("in").get<int64_t>(),
                                                  e.at("out").get<int64_t>(),
                                                  e.at("bias").get<bool>()));
    } else if (kind == "dropout") {
      m.layers.push_back(std::make_unique<Dropout>(id, e.at("p").get<double>()));
    } else if (kind == "residual_add") {
      const std::string sk = e.at("shortcut").get<std::string>();
      m.layers.push_back(std::make_unique<ResidualAdd>(
          id, e.at("source").get<std::string>(),
          sk == "identity" ? ShortcutKind::kIdentity : ShortcutKind::kPadSubsample,
          e.at("in_channels").get<int64_t>(), e.at("out_channels").get<int64_t>()));
    } else if (kind == "sca") {
      SCAConfig cfg;
      cfg.spatial_groups = e.at("spatial_groups").get<int>();
      cfg.gn_groups = e.at("gn_groups").get<int>();
      cfg.eps_spatial = e.at("eps_spatial").get<double>();
      cfg.eps_gn = e.at("eps_gn").get<double>();
      cfg.arrangement = arrangement_from_name(e.at("arrangement").get<std::string>());
      m.layers.push_back(std::make_unique<SCALayer>(id, e.at("host").get<std::string>(),
                                                    e.at("channels").get<int64_t>(), cfg));
    } else if (kind == "se") {
      auto se = std::make_unique<SELayer>(id, e.at("host").get<std::string>(),
                                          e.at("channels").get<int64_t>(), 16);
      if (se->mid != e.at("mid").get<int64_t>()) {
        throw IoError("se layer '" + id + "' bottleneck width mismatch");
      }
      m.layers.push_back(std::move(se));
    } else {
      throw IoError("unknown layer kind '" + kind + "' in model document");
    }
  }
  return m;
}

void write_tensor_blob(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  const char magic[8] = {'S', 'C', 'P', 'T', 'N', 'S', 'R', '1'};
  f.write(magic, 8);
  const int64_t nd = t.ndim;
  f.write(reinterpret_cast<const char*>(&nd), 8);
  f.write(reinterpret_cast<const char*>(t.dims.data()), 32);
  f.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 8));
  if (!f) throw IoError("short write to '" + path + "'");
}

Tensor read_tensor_blob(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "SCPTNSR1", 8) != 0) {
    throw IoError("'" + path + "' is not a tensor blob");
  }
  int64_t nd = 0;
  std::array<int64_t, 4> dims{};
  f.read(reinterpret_cast<char*>(&nd), 8);
  f.read(reinterpret_cast<char*>(dims.data()), 32);
  if (!f || nd < 1 || nd > 4) throw IoError("'" + path + "' has a corrupt header");
  Tensor t;
  std::vector<int64_t> shape;
  for (int64_t i = 0; i < nd; ++i) shape.push_back(dims[static_cast<size_t>(i)]);
  t.resize(shape);
  f.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 8));
  if (!f) throw IoError("'" + path + "' is truncated");
  return t;
}

void save_checkpoint(const Model& model, const std::string& dir, const json& manifest) {
  fs::create_directories(fs::path(dir) / "params");
  {
    std::ofstream f(fs::path(dir) / "layers.json");
    if (!f) throw IoError("cannot write layers.json under '" + dir + "'");
    f << model_to_json(model).dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("cannot write manifest.json under '" + dir + "'");
    f << manifest.dump(2) << "\n";
  }
  auto& mutable_model = const_cast<Model&>(model);  // param enumeration is non-mutating
  for (auto& np : mutable_model.named_params()) {
    write_tensor_blob((fs::path(dir) / "params" / (np.layer_id + "." + np.ref.name + ".bin")).string(),
                      *np.ref.value);
  }
  for (auto& ns : mutable_model.named_state()) {
    write_tensor_blob((fs::path(dir) / "params" / (ns.layer_id + "." + ns.ref.name + ".bin")).string(),
                      *ns.ref.value);
  }
}

Model load_checkpoint(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "layers.json");
  if (!f) throw IoError("no layers.json under '" + dir + "'");
  json j;
  f >> j;
  Model m = model_from_json(j);
  for (auto& np : m.named_params()) {
    const auto path = fs::path(dir) / "params" / (np.layer_id + "." + np.ref.name + ".bin");
    Tensor t = read_tensor_blob(path.string());
    if (t.numel() != np.ref.value->numel()) {
      throw IoError("blob '" + path.string() + "' does not match the declared layer shape");
    }
    t.dims = np.ref.value->dims;
    t.ndim = np.ref.value->ndim;
    *np.ref.value = std::move(t);
  }
  for (auto& ns : m.named_state()) {
    const auto path = fs::path(dir) / "params" / (ns.layer_id + "." + ns.ref.name + ".bin");
    Tensor t = read_tensor_blob(path.string());
    if (t.numel() != ns.ref.value->numel()) {
      throw IoError("blob '" + path.string() + "' does not match the declared layer shape");
    }
    t.dims = ns.ref.value->dims;
    t.ndim = ns.ref.value->ndim;
    *ns.ref.value = std::move(t);
  }
  return m;
}

json read_manifest(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw IoError("no manifest.json under '" + dir + "'");
  json j;
  f >> j;
  return j;
}

}  // namespace scap
