// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "faststi/graph.hpp"
#include "faststi/tensor.hpp"

namespace faststi {

// One imputation problem over an L x N window. observed holds placeholder
// values at missing entries; target_mask marks the entries being imputed
// (drawn from observed data during training/evaluation, the complement of
// observed_mask at pure inference). conditioner is the coarse interpolation
// the model conditions on; it is computed from observed-and-not-target
// entries only.
struct ImputationTask {
  Tensor observed;     // [L, N]
  Mask observed_mask;  // 1 where a value exists
  Mask target_mask;    // 1 where a value is imputed / evaluated
  Tensor conditioner;  // [L, N]
  const RoadGraph* graph = nullptr;

  std::size_t L() const { return observed.dim(0); }
  std::size_t N() const { return observed.dim(1); }

  // Entries the sampler conditions on and restores exactly.
  bool is_conditioning(std::size_t l, std::size_t n) const {
    return observed_mask.at(l, n) && !target_mask.at(l, n);
  }
};

}  // namespace faststi
