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

#include "core/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "core/common.hpp"

namespace scap {

namespace {

std::string render17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool transparent_kind(const std::string& kind) {
  return kind == "bn" || kind == "relu" || kind == "maxpool" || kind == "gap" ||
         kind == "flatten" || kind == "dropout" || kind == "sca" || kind == "se";
}

// The layer whose inputs shrink when `conv_id` loses output channels:
// the next conv or linear downstream. A residual join in between couples the
// channels to the shortcut and makes the layer unprunable.
struct Consumer {
  enum Kind { kNone, kConv, kLinear, kResidual } kind = kNone;
  std::string id;
};

Consumer find_consumer(const Model& model, const std::string& conv_id) {
  const int64_t at = model.index_of(conv_id);
  for (size_t i = static_cast<size_t>(at) + 1; i < model.layers.size(); ++i) {
    const std::string kind = model.layers[i]->kind();
    if (kind == "conv") return {Consumer::kConv, model.layers[i]->id()};
    if (kind == "linear") return {Consumer::kLinear, model.layers[i]->id()};
    if (kind == "residual_add") return {Consumer::kResidual, model.layers[i]->id()};
    if (!transparent_kind(kind)) break;
  }
  return {};
}

const BatchNorm* norm_behind(const Model& model, const std::string& conv_id) {
  const int64_t at = model.index_of(conv_id);
  for (size_t i = static_cast<size_t>(at) + 1; i < model.layers.size(); ++i) {
    if (auto* bn = dynamic_cast<const BatchNorm*>(model.layers[i].get())) return bn;
    if (dynamic_cast<const Conv2d*>(model.layers[i].get()) ||
        dynamic_cast<const Linear*>(model.layers[i].get())) {
      break;
    }
  }
  return nullptr;
}

std::vector<int64_t> survivors_of(int64_t channels, const std::vector<int64_t>& removed) {
  std::vector<int64_t> keep;
  keep.reserve(static_cast<size_t>(channels) - removed.size());
  size_t r = 0;
  for (int64_t c = 0; c < channels; ++c) {
    if (r < removed.size() && removed[r] == c) {
      ++r;
    } else {
      keep.push_back(c);
    }
  }
  return keep;
}

void copy_sliced_conv(const Conv2d& src, Conv2d& dst, const std::vector<int64_t>& out_keep,
                      const std::vector<int64_t>& in_keep) {
  const int64_t k2 = src.kernel * src.kernel;
  for (size_t jo = 0; jo < out_keep.size(); ++jo) {
    for (size_t ji = 0; ji < in_keep.size(); ++ji) {
      const double* from =
          src.weight.ptr() + (out_keep[jo] * src.in_channels + in_keep[ji]) * k2;
      double* to = dst.weight.ptr() +
                   (static_cast<int64_t>(jo) * dst.in_channels + static_cast<int64_t>(ji)) * k2;
      std::copy(from, from + k2, to);
    }
    if (src.has_bias) dst.bias.ptr()[jo] = src.bias.ptr()[out_keep[jo]];
  }
}

}  // namespace

PruningPlan plan_pruning(const ChannelScaleTable& scores,
                         const std::map<std::string, double>& ratios) {
  if (!scores.finalized) throw StateError("scores must be finalized before planning");
  PruningPlan plan;
  plan.scorer = scores.scorer;
  plan.score_hash = hex64(fnv1a(table_to_json(scores).dump()));
  for (const auto& [id, ratio] : ratios) {
    auto it = scores.layers.find(id);
    if (it == scores.layers.end()) throw ConfigError("no scores for layer '" + id + "'");
    if (!(ratio >= 0.0 && ratio < 1.0)) {
      throw ConfigError("ratio " + render17(ratio) + " for '" + id + "' outside [0,1)");
    }
    const LayerScale& ls = it->second;
    const auto count = static_cast<int64_t>(std::floor(ratio * static_cast<double>(ls.channels)));
    std::vector<int64_t> removed(ls.order.begin(), ls.order.begin() + count);
    std::sort(removed.begin(), removed.end());
    plan.remove[id] = std::move(removed);
    plan.ratios[id] = ratio;
  }
  return plan;
}

PlanReport validate_plan(const Model& model, const PruningPlan& plan) {
  PlanReport report;
  for (const auto& l : model.layers) {
    const std::string kind = l->kind();
    if (kind == "sca" || kind == "se") {
      report.violations.push_back("attention layer '" + l->id() + "' still inserted");
    }
  }
  for (const auto& [id, removed] : plan.remove) {
    const auto* conv = dynamic_cast<const Conv2d*>(model.find(id));
    if (conv == nullptr) {
      report.violations.push_back("no convolution '" + id + "'");
      continue;
    }
    if (!conv->prunable) report.violations.push_back("'" + id + "' is not prunable");

    bool indices_ok = true;
    for (size_t i = 0; i < removed.size(); ++i) {
      if (removed[i] < 0 || removed[i] >= conv->out_channels) {
        report.violations.push_back("'" + id + "' index " + std::to_string(removed[i]) +
                                    " outside " + std::to_string(conv->out_channels) +
                                    " channels");
        indices_ok = false;
        break;
      }
      if (i > 0 && removed[i] <= removed[i - 1]) {
        report.violations.push_back("'" + id + "' indices not strictly ascending");
        indices_ok = false;
        break;
      }
    }
    if (!indices_ok) continue;

    const int64_t survivors = conv->out_channels - static_cast<int64_t>(removed.size());
    report.survivors[id] = survivors;
    if (survivors < 1) report.violations.push_back("'" + id + "' would keep no channels");

    auto rit = plan.ratios.find(id);
    if (rit != plan.ratios.end()) {
      const auto expected = static_cast<int64_t>(
          std::floor(rit->second * static_cast<double>(conv->out_channels)));
      if (expected != static_cast<int64_t>(removed.size())) {
        report.violations.push_back("'" + id + "' removes " + std::to_string(removed.size()) +
                                    " channels, ratio implies " + std::to_string(expected));
      }
    }

    if (!removed.empty() && find_consumer(model, id).kind == Consumer::kResidual) {
      report.violations.push_back("'" + id + "' feeds a residual join (shortcut coupling)");
    }
  }
  return report;
}

Model apply_plan(const Model& model, const PruningPlan& plan) {
  PlanReport report = validate_plan(model, plan);
  if (!report.ok()) {
    std::string msg = "plan rejected:";
    for (const auto& v : report.violations) msg += " [" + v + "]";
    throw ConfigError(msg);
  }

  // survivor lists per pruned conv, then per-layer input slices they induce
  std::map<std::string, std::vector<int64_t>> out_keep;   // conv id -> kept outputs
  std::map<std::string, std::vector<int64_t>> in_keep;    // conv id -> kept inputs
  std::map<std::string, std::vector<int64_t>> bn_keep;    // bn id -> kept channels
  std::map<std::string, std::vector<int64_t>> fc_keep;    // linear id -> kept feature cols
  for (const auto& [id, removed] : plan.remove) {
    if (removed.empty()) continue;
    const auto* conv = dynamic_cast<const Conv2d*>(model.find(id));
    std::vector<int64_t> keep = survivors_of(conv->out_channels, removed);
    if (const BatchNorm* bn = norm_behind(model, id)) bn_keep[bn->id()] = keep;
    const Consumer consumer = find_consumer(model, id);
    if (consumer.kind == Consumer::kConv) {
      in_keep[consumer.id] = keep;
    } else if (consumer.kind == Consumer::kLinear) {
      const auto* fc = dynamic_cast<const Linear*>(model.find(consumer.id));
      if (fc->in_features % conv->out_channels != 0) {
        throw ConfigError("linear '" + consumer.id + "' input " +
                          std::to_string(fc->in_features) + " not divisible by " +
                          std::to_string(conv->out_channels) + " channels of '" + id + "'");
      }
      const int64_t span = fc->in_features / conv->out_channels;
      std::vector<int64_t> cols;
      cols.reserve(keep.size() * static_cast<size_t>(span));
      for (int64_t c : keep) {
        for (int64_t s = 0; s < span; ++s) cols.push_back(c * span + s);
      }
      fc_keep[consumer.id] = std::move(cols);
    }
    out_keep[id] = std::move(keep);
  }

  // shrink the structural description, then rebuild and fill
  nlohmann::json desc = model_to_json(model);
  for (auto& e : desc.at("layers")) {
    const std::string id = e.at("id").get<std::string>();
    if (auto it = out_keep.find(id); it != out_keep.end()) {
      e["out"] = static_cast<int64_t>(it->second.size());
    }
    if (auto it = in_keep.find(id); it != in_keep.end()) {
      e["in"] = static_cast<int64_t>(it->second.size());
    }
    if (auto it = bn_keep.find(id); it != bn_keep.end()) {
      e["channels"] = static_cast<int64_t>(it->second.size());
    }
    if (auto it = fc_keep.find(id); it != fc_keep.end()) {
      e["in"] = static_cast<int64_t>(it->second.size());
    }
  }
  Model pruned = model_from_json(desc);

  for (size_t i = 0; i < model.layers.size(); ++i) {
    auto& src_layer = const_cast<Layer&>(*model.layers[i]);
    Layer& dst_layer = *pruned.layers[i];
    if (auto* src = dynamic_cast<Conv2d*>(&src_layer)) {
      auto& dst = static_cast<Conv2d&>(dst_layer);
      std::vector<int64_t> ok, ik;
      if (auto it = out_keep.find(src->id()); it != out_keep.end()) {
        ok = it->second;
      } else {
        ok.resize(static_cast<size_t>(src->out_channels));
        for (int64_t c = 0; c < src->out_channels; ++c) ok[static_cast<size_t>(c)] = c;
      }
      if (auto it = in_keep.find(src->id()); it != in_keep.end()) {
        ik = it->second;
      } else {
        ik.resize(static_cast<size_t>(src->in_channels));
        for (int64_t c = 0; c < src->in_channels; ++c) ik[static_cast<size_t>(c)] = c;
      }
      copy_sliced_conv(*src, dst, ok, ik);
    } else if (auto* bn = dynamic_cast<BatchNorm*>(&src_layer)) {
      auto& dst = static_cast<BatchNorm&>(dst_layer);
      if (auto it = bn_keep.find(bn->id()); it != bn_keep.end()) {
        const auto& keep = it->second;
        for (size_t j = 0; j < keep.size(); ++j) {
          dst.gamma.ptr()[j] = bn->gamma.ptr()[keep[j]];
          dst.beta.ptr()[j] = bn->beta.ptr()[keep[j]];
          dst.running_mean.ptr()[j] = bn->running_mean.ptr()[keep[j]];
          dst.running_var.ptr()[j] = bn->running_var.ptr()[keep[j]];
        }
      } else {
        dst.gamma = bn->gamma;
        dst.beta = bn->beta;
        dst.running_mean = bn->running_mean;
        dst.running_var = bn->running_var;
      }
    } else if (auto* fc = dynamic_cast<Linear*>(&src_layer)) {
      auto& dst = static_cast<Linear&>(dst_layer);
      if (auto it = fc_keep.find(fc->id()); it != fc_keep.end()) {
        const auto& cols = it->second;
        for (int64_t r = 0; r < fc->out_features; ++r) {
          for (size_t c = 0; c < cols.size(); ++c) {
            dst.weight.at2(r, static_cast<int64_t>(c)) = fc->weight.at2(r, cols[c]);
          }
        }
      } else {
        dst.weight = fc->weight;
      }
      if (fc->has_bias) dst.bias = fc->bias;
    }
  }
  return pruned;
}

nlohmann::json plan_to_json(const PruningPlan& plan) {
  nlohmann::json j;
  j["schema"] = "pruning_plan";
  j["schema_version"] = 1;
  j["scorer"] = plan.scorer;
  j["score_hash"] = plan.score_hash;
  nlohmann::json remove = nlohmann::json::object();
  for (const auto& [id, idx] : plan.remove) remove[id] = idx;
  j["remove"] = std::move(remove);
  nlohmann::json ratios = nlohmann::json::object();
  for (const auto& [id, r] : plan.ratios) ratios[id] = render17(r);
  j["ratios"] = std::move(ratios);
  return j;
}

PruningPlan plan_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "pruning_plan") throw ConfigError("not a pruning plan document");
    PruningPlan plan;
    plan.scorer = j.at("scorer").get<std::string>();
    plan.score_hash = j.at("score_hash").get<std::string>();
    for (const auto& [id, idx] : j.at("remove").items()) {
      plan.remove[id] = idx.get<std::vector<int64_t>>();
    }
    for (const auto& [id, r] : j.at("ratios").items()) {
      plan.ratios[id] = std::stod(r.get<std::string>());
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed pruning plan: ") + e.what());
  }
}

void save_plan(const PruningPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << plan_to_json(plan).dump(2) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

PruningPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse '" + path + "': " + e.what());
  }
  return plan_from_json(j);
}

}  // namespace scap
