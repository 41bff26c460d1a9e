#pragma once

#include <vector>

#include "uspg/splat.hpp"
#include "uspg/tape.hpp"

namespace uspg {

/// Tape handles for one GaussianSet's parameter tensors.
struct GaussianVars {
  Var positions, log_scales, rotations, opacity_logits, colors;
};

GaussianVars register_gaussians(Tape& tape, const GaussianSet& g);

/// Records M mid-bin renders of `seg` composed with learnable left-twist
/// deltas on both endpoints (zero-valued at record time). The backward pass
/// routes image gradients through the analytic rasterizer backward and the
/// interpolation Jacobians into the Gaussian fields and the two deltas.
std::vector<Var> splat_sequence_node(Tape& tape, const GaussianVars& gv,
                                     const GaussianSet& gset, Var delta_start,
                                     Var delta_end, const TrajectorySegment& seg,
                                     const Camera& cam, int count);

}  // namespace uspg
