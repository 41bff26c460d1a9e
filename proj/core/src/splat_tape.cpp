#include "uspg/splat_tape.hpp"

#include <memory>
#include <stdexcept>

namespace uspg {

GaussianVars register_gaussians(Tape& tape, const GaussianSet& g) {
  GaussianVars v;
  v.positions = tape.param(g.positions);
  v.log_scales = tape.param(g.log_scales);
  v.rotations = tape.param(g.rotations);
  v.opacity_logits = tape.param(g.opacity_logits);
  v.colors = tape.param(g.colors);
  return v;
}

std::vector<Var> splat_sequence_node(Tape& tape, const GaussianVars& gv,
                                     const GaussianSet& gset, Var delta_start,
                                     Var delta_end, const TrajectorySegment& seg,
                                     const Camera& cam, int count) {
  if (tape.value(delta_start).abs_max() != 0.0 || tape.value(delta_end).abs_max() != 0.0)
    throw std::invalid_argument("splat_sequence_node: twist deltas must be zero at record time");
  auto snapshot = std::make_shared<GaussianSet>(gset);
  std::vector<Var> images;
  images.reserve(static_cast<size_t>(count));
  for (double t : sequence_timestamps(seg.duration, count)) {
    Camera view_cam = cam;
    view_cam.world_to_cam = interpolate_pose(seg, t);
    auto [jac_start, jac_end] = interpolate_pose_jacobians(seg, t);
    Tensor image = rasterize(*snapshot, view_cam).image;
    Var out = tape.custom(
        std::move(image),
        [snapshot, view_cam, jac_start, jac_end, gv, delta_start, delta_end](
            Tape& tp, Var o) {
          const SplatGrads grads =
              rasterize_backward(*snapshot, view_cam, tp.grad(o));
          tp.accumulate_grad(gv.positions, grads.positions);
          tp.accumulate_grad(gv.log_scales, grads.log_scales);
          tp.accumulate_grad(gv.rotations, grads.rotations);
          tp.accumulate_grad(gv.opacity_logits, grads.opacity_logits);
          tp.accumulate_grad(gv.colors, grads.colors);
          const Vec6 gs = jac_start.transpose() * grads.cam_twist;
          const Vec6 ge = jac_end.transpose() * grads.cam_twist;
          for (int i = 0; i < 6; ++i) {
            tp.accumulate_grad(delta_start, i, gs[i]);
            tp.accumulate_grad(delta_end, i, ge[i]);
          }
        });
    images.push_back(out);
  }
  return images;
}

}  // namespace uspg
