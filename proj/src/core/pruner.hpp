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

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/model.hpp"
#include "core/stats.hpp"

namespace scap {

// Which channels leave which convolution, plus enough provenance to audit
// where the ranking came from.
struct PruningPlan {
  std::map<std::string, std::vector<int64_t>> remove;  // ascending indices
  std::map<std::string, double> ratios;
  std::string scorer;
  std::string score_hash;  // fnv-1a of the score table's text form
};

// Selects floor(ratio * C) lowest-ranked channels per layer (ties already
// resolved by the table's index ordering). Layers absent from `ratios` are
// left untouched. Ratios live in [0, 1); at least one channel survives.
PruningPlan plan_pruning(const ChannelScaleTable& scores,
                         const std::map<std::string, double>& ratios);

struct PlanReport {
  std::vector<std::string> violations;
  std::map<std::string, int64_t> survivors;
  bool ok() const { return violations.empty(); }
};

// Pure structural audit: layer existence, prunability, index ranges,
// survivor counts, ratio consistency, residual coupling, leftover attention.
PlanReport validate_plan(const Model& model, const PruningPlan& plan);

// Rebuilds the model without the planned channels: the conv filter, its
// norm entries, and the matching input slices of the next conv or linear
// consumer all go. Survivor running statistics are kept. The input model is
// left untouched; attention must have been removed beforehand.
Model apply_plan(const Model& model, const PruningPlan& plan);

nlohmann::json plan_to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const nlohmann::json& j);
void save_plan(const PruningPlan& plan, const std::string& path);
PruningPlan load_plan(const std::string& path);

}  // namespace scap
