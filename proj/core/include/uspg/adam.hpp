#pragma once

#include <cstdint>
#include <vector>

#include "uspg/tensor.hpp"

namespace uspg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one group of parameters, updated in lockstep.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  static AdamState for_params(const std::vector<Tensor*>& params);
};

/// One bias-corrected Adam step over a parameter group. Deterministic.
void adam_step(AdamState& state, const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, const AdamConfig& cfg);

}  // namespace uspg
