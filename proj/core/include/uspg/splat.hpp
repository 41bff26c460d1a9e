#pragma once

#include <vector>

#include "uspg/se3.hpp"
#include "uspg/tensor.hpp"

namespace uspg {

/// Grayscale anisotropic 3D Gaussians. Color and opacity are stored as
/// logits; sigmoid is applied at render time.
struct GaussianSet {
  Tensor positions;       // (N,3)
  Tensor log_scales;      // (N,3)
  Tensor rotations;       // (N,4) quaternion (w,x,y,z)
  Tensor opacity_logits;  // (N)
  Tensor colors;          // (N) logits

  static GaussianSet create(int n);
  int count() const { return positions.shape().rank ? positions.shape()[0] : 0; }
  void renormalize_rotations();
};

struct Camera {
  double fx = 100.0, fy = 100.0, cx = 0.0, cy = 0.0;
  int height = 0, width = 0;
  Pose world_to_cam;
  static constexpr double z_min = 0.01;
};

struct RenderedImage {
  Tensor image;          // (H,W) in [0,1]
  Tensor transmittance;  // (H,W) remaining transmittance
};

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)); quat is normalized here.
Mat3 build_covariance(const Vec3& log_scale, const Eigen::Vector4d& quat);

struct ProjectedGaussian {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();  // includes the +0.3 px^2 floor
  double depth = 0.0;
  bool culled = false;
};

ProjectedGaussian project_gaussian(const GaussianSet& g, int index, const Camera& cam);

/// Depth-sorted front-to-back alpha compositing (ties broken by index).
RenderedImage rasterize(const GaussianSet& g, const Camera& cam);

struct SplatGrads {
  Tensor positions, log_scales, rotations, opacity_logits, colors;
  Vec6 cam_twist = Vec6::Zero();  // left perturbation of world_to_cam

  static SplatGrads zeros(int n);
  void add(const SplatGrads& o);
};

/// Analytic gradients of sum(upstream * image) w.r.t. every Gaussian field
/// and the camera pose twist.
SplatGrads rasterize_backward(const GaussianSet& g, const Camera& cam,
                              const Tensor& upstream);

/// Mid-bin timestamps t_m = (m - 1/2) * T / M.
std::vector<double> sequence_timestamps(double duration, int count);

/// One rasterize per mid-bin pose of the segment; `cam` supplies intrinsics.
std::vector<Tensor> render_sequence(const GaussianSet& g, const TrajectorySegment& seg,
                                    const Camera& cam, int count);

/// Arithmetic mean of same-shaped images.
Tensor synth_blur(const std::vector<Tensor>& images);

}  // namespace uspg
