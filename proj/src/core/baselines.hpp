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

#include "core/model.hpp"
#include "core/stats.hpp"

namespace scap {

// Alternative channel importance criteria. All return finalized tables over
// the model's prunable convolutions, directly consumable by the planner.

// Score of output channel j = sum of absolute filter weights (bias excluded).
ChannelScaleTable l1_scores(const Model& model);

// Score of output channel j = |gamma_j| of the batch norm following the
// convolution. Throws when a prunable conv has no trailing norm.
ChannelScaleTable slimming_scores(const Model& model);

// Mean squeeze-excite gate per channel over the given images, collected with
// frozen weights in eval mode. Requires a model built with attention "se".
ChannelScaleTable cpse_scores(Model& model, const Tensor& images, int64_t batch_size = 128);

}  // namespace scap
