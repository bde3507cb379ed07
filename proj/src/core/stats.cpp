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

#include "core/stats.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "core/common.hpp"

namespace scap {

namespace {

std::string render17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void kahan_add(double& sum, double& comp, double v) {
  const double y = v - comp;
  const double t = sum + y;
  comp = (t - sum) - y;
  sum = t;
}

}  // namespace

void ChannelScaleTable::register_layer(const std::string& id, int64_t channels) {
  if (channels < 1) throw ConfigError("layer '" + id + "' needs at least one channel");
  auto it = layers.find(id);
  if (it != layers.end()) {
    if (it->second.channels != channels) {
      throw ConfigError("layer '" + id + "' re-registered with width " +
                        std::to_string(channels) + ", had " +
                        std::to_string(it->second.channels));
    }
    return;
  }
  LayerScale ls;
  ls.channels = channels;
  ls.sum.assign(static_cast<size_t>(channels), 0.0);
  ls.comp.assign(static_cast<size_t>(channels), 0.0);
  layers.emplace(id, std::move(ls));
}

void ChannelScaleTable::accumulate(const std::string& id, const Tensor& map) {
  if (finalized) throw StateError("scale table already finalized");
  auto it = layers.find(id);
  if (it == layers.end()) throw ConfigError("layer '" + id + "' not registered");
  LayerScale& ls = it->second;

  int64_t batch = 0, channels = 0;
  if (map.ndim == 4 && map.dims[2] == 1 && map.dims[3] == 1) {
    batch = map.dims[0];
    channels = map.dims[1];
  } else if (map.ndim == 2) {
    batch = map.dims[0];
    channels = map.dims[1];
  } else {
    throw ConfigError("attention map for '" + id + "' must be (B,C,1,1) or (B,C)");
  }
  if (batch < 1) throw ConfigError("attention map for '" + id + "' has no samples");
  if (channels != ls.channels) {
    throw ConfigError("attention map for '" + id + "' has " + std::to_string(channels) +
                      " channels, expected " + std::to_string(ls.channels));
  }
  if (!map.all_finite()) throw NumericError("non-finite attention map for '" + id + "'");

  const double* p = map.ptr();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels; ++c) {
      kahan_add(ls.sum[static_cast<size_t>(c)], ls.comp[static_cast<size_t>(c)],
                p[b * channels + c]);
    }
  }
  ls.samples += batch;
}

void ChannelScaleTable::finalize() {
  if (finalized) throw StateError("scale table already finalized");
  if (layers.empty()) throw StateError("scale table has no layers");
  int64_t count = -1;
  for (const auto& [id, ls] : layers) {
    if (ls.samples == 0) throw StateError("layer '" + id + "' accumulated no samples");
    if (count == -1) count = ls.samples;
    if (ls.samples != count) {
      throw StateError("uneven accumulation: layer '" + id + "' saw " +
                       std::to_string(ls.samples) + " samples, others " + std::to_string(count));
    }
  }
  sample_count = count;
  for (auto& [id, ls] : layers) {
    ls.w.resize(ls.sum.size());
    for (size_t j = 0; j < ls.sum.size(); ++j) {
      ls.w[j] = ls.sum[j] / static_cast<double>(ls.samples);
    }
    ls.order.resize(ls.w.size());
    std::iota(ls.order.begin(), ls.order.end(), 0);
    std::stable_sort(ls.order.begin(), ls.order.end(),
                     [&](int64_t a, int64_t b) { return ls.w[a] < ls.w[b]; });
  }
  finalized = true;
}

ChannelScaleTable make_scale_table(const Model& model, const std::string& scorer) {
  ChannelScaleTable table;
  table.scorer = scorer;
  for (const auto& l : model.layers) {
    if (auto* conv = dynamic_cast<const Conv2d*>(l.get())) {
      if (conv->prunable) table.register_layer(conv->id(), conv->out_channels);
    }
  }
  if (table.layers.empty()) throw ConfigError("model has no prunable convolutions");
  return table;
}

void accumulate_from_model(ChannelScaleTable& table, const Model& model) {
  int harvested = 0;
  for (const auto& l : model.layers) {
    const Tensor* map = l->attention_map();
    if (map == nullptr) continue;
    std::string host;
    if (auto* sca = dynamic_cast<const SCALayer*>(l.get())) host = sca->host_conv_id;
    if (auto* se = dynamic_cast<const SELayer*>(l.get())) host = se->host_conv_id;
    if (host.empty()) continue;
    auto* conv = dynamic_cast<const Conv2d*>(model.find(host));
    if (conv == nullptr || !conv->prunable) continue;
    if (map->numel() == 0) {
      throw StateError("attention layer '" + l->id() + "' has no map; run a forward pass first");
    }
    table.accumulate(host, *map);
    ++harvested;
  }
  if (harvested == 0) throw StateError("model exposes no attention maps over prunable layers");
}

nlohmann::json table_to_json(const ChannelScaleTable& table) {
  if (!table.finalized) throw StateError("scale table must be finalized before export");
  nlohmann::json j;
  j["schema"] = "scale_table";
  j["schema_version"] = 1;
  j["scorer"] = table.scorer;
  j["sample_count"] = table.sample_count;
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [id, ls] : table.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (double v : ls.w) w.push_back(render17(v));
    layers[id] = {{"channels", ls.channels}, {"w", std::move(w)}};
  }
  j["layers"] = std::move(layers);
  return j;
}

ChannelScaleTable table_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "scale_table") throw ConfigError("not a scale table document");
    ChannelScaleTable table;
    table.scorer = j.at("scorer").get<std::string>();
    const int64_t count = j.at("sample_count").get<int64_t>();
    for (const auto& [id, entry] : j.at("layers").items()) {
      const int64_t channels = entry.at("channels").get<int64_t>();
      table.register_layer(id, channels);
      const auto& w = entry.at("w");
      if (static_cast<int64_t>(w.size()) != channels) {
        throw ConfigError("layer '" + id + "' lists " + std::to_string(w.size()) +
                          " weights for " + std::to_string(channels) + " channels");
      }
      Tensor one;
      one.resize({1, channels});
      for (int64_t c = 0; c < channels; ++c) {
        one.ptr()[c] = std::stod(w[static_cast<size_t>(c)].get<std::string>());
      }
      table.accumulate(id, one);
    }
    table.finalize();
    // imported means are already per-sample; restore the recorded population
    table.sample_count = count;
    return table;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scale table: ") + e.what());
  }
}

void save_table(const ChannelScaleTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << table_to_json(table).dump(2) << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

ChannelScaleTable load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse '" + path + "': " + e.what());
  }
  return table_from_json(j);
}

}  // namespace scap
