#include "uspg/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace uspg {

namespace {

constexpr double kCovFloor = 0.3;       // px^2 anti-aliasing floor
constexpr double kAlphaCap = 0.99;
constexpr double kAlphaFloor = 1.0 / 255.0;
constexpr double kTransmitStop = 1e-4;
constexpr double kSigmaCutoff = 9.0;    // 3-sigma ellipse, in Mahalanobis^2

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat3 quat_to_rot(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// dR/dq for a unit quaternion, per component (w,x,y,z).
Mat3 quat_rot_deriv(const Eigen::Vector4d& q, int j) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 d;
  switch (j) {
    case 0: d << 0, -z, y, z, 0, -x, -y, x, 0; break;
    case 1: d << 0, y, z, y, -2 * x, -w, z, w, -2 * x; break;
    case 2: d << -2 * y, x, w, x, 0, z, -w, z, -2 * y; break;
    default: d << -2 * z, -w, x, w, -2 * z, y, x, y, 0; break;
  }
  return 2.0 * d;
}

struct ProjState {
  bool culled = true;
  Vec3 pos = Vec3::Zero();        // world
  Vec3 mean_cam = Vec3::Zero();
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  Mat3 sigma_cam = Mat3::Zero();
  Mat3 s2 = Mat3::Zero();         // diag(exp(2*log_scale))
  Mat3 rot = Mat3::Identity();    // quaternion rotation
  Eigen::Vector4d qn = Eigen::Vector4d::Zero();
  double qnorm = 1.0;
  Eigen::Matrix2d cov2 = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d inv_cov2 = Eigen::Matrix2d::Zero();
  double opacity = 0.0;
  double color = 0.0;
};

ProjState project_state(const GaussianSet& g, int i, const Camera& cam) {
  ProjState s;
  s.pos = Vec3(g.positions.at(i, 0), g.positions.at(i, 1), g.positions.at(i, 2));
  s.mean_cam = cam.world_to_cam.apply(s.pos);
  if (s.mean_cam.z() <= Camera::z_min) return s;
  s.culled = false;

  Eigen::Vector4d q(g.rotations.at(i, 0), g.rotations.at(i, 1),
                    g.rotations.at(i, 2), g.rotations.at(i, 3));
  s.qnorm = q.norm();
  s.qn = q / s.qnorm;
  s.rot = quat_to_rot(s.qn);
  Vec3 e2;
  for (int k = 0; k < 3; ++k) e2[k] = std::exp(2.0 * g.log_scales.at(i, k));
  s.s2 = e2.asDiagonal();
  const Mat3 sigma3 = s.rot * s.s2 * s.rot.transpose();
  s.sigma_cam = cam.world_to_cam.R * sigma3 * cam.world_to_cam.R.transpose();

  const double mx = s.mean_cam.x(), my = s.mean_cam.y(), mz = s.mean_cam.z();
  s.mean2d = Eigen::Vector2d(cam.fx * mx / mz + cam.cx, cam.fy * my / mz + cam.cy);
  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx / mz, 0, -cam.fx * mx / (mz * mz),
      0, cam.fy / mz, -cam.fy * my / (mz * mz);
  s.cov2 = jac * s.sigma_cam * jac.transpose();
  s.cov2(0, 0) += kCovFloor;
  s.cov2(1, 1) += kCovFloor;
  s.inv_cov2 = s.cov2.inverse();
  s.opacity = sigmoid(g.opacity_logits[i]);
  s.color = sigmoid(g.colors[i]);
  return s;
}

std::vector<int> depth_order(const std::vector<ProjState>& states) {
  std::vector<int> idx;
  idx.reserve(states.size());
  for (int i = 0; i < static_cast<int>(states.size()); ++i)
    if (!states[static_cast<size_t>(i)].culled) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return states[static_cast<size_t>(a)].mean_cam.z() <
           states[static_cast<size_t>(b)].mean_cam.z();
  });
  return idx;
}

}  // namespace

GaussianSet GaussianSet::create(int n) {
  GaussianSet g;
  g.positions = Tensor{Shape{n, 3}};
  g.log_scales = Tensor{Shape{n, 3}};
  g.rotations = Tensor{Shape{n, 4}};
  for (int i = 0; i < n; ++i) g.rotations.at(i, 0) = 1.0;
  g.opacity_logits = Tensor{Shape{n}};
  g.colors = Tensor{Shape{n}};
  return g;
}

void GaussianSet::renormalize_rotations() {
  for (int i = 0; i < count(); ++i) {
    double n2 = 0.0;
    for (int j = 0; j < 4; ++j) n2 += rotations.at(i, j) * rotations.at(i, j);
    const double inv = 1.0 / std::sqrt(n2);
    for (int j = 0; j < 4; ++j) rotations.at(i, j) *= inv;
  }
}

Mat3 build_covariance(const Vec3& log_scale, const Eigen::Vector4d& quat) {
  const Eigen::Vector4d qn = quat / quat.norm();
  const Mat3 r = quat_to_rot(qn);
  Vec3 e2;
  for (int k = 0; k < 3; ++k) e2[k] = std::exp(2.0 * log_scale[k]);
  return r * e2.asDiagonal() * r.transpose();
}

ProjectedGaussian project_gaussian(const GaussianSet& g, int index, const Camera& cam) {
  const ProjState s = project_state(g, index, cam);
  ProjectedGaussian out;
  out.culled = s.culled;
  if (!s.culled) {
    out.mean = s.mean2d;
    out.cov = s.cov2;
    out.depth = s.mean_cam.z();
  }
  return out;
}

RenderedImage rasterize(const GaussianSet& g, const Camera& cam) {
  const int n = g.count();
  std::vector<ProjState> states;
  states.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) states.push_back(project_state(g, i, cam));
  const std::vector<int> order = depth_order(states);

  RenderedImage out;
  out.image = Tensor{Shape{cam.height, cam.width}};
  out.transmittance = Tensor{Shape{cam.height, cam.width}, 1.0};
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      double c = 0.0, t = 1.0;
      const Eigen::Vector2d pix(static_cast<double>(x), static_cast<double>(y));
      for (int i : order) {
        const ProjState& s = states[static_cast<size_t>(i)];
        const Eigen::Vector2d d = pix - s.mean2d;
        const double e = d.dot(s.inv_cov2 * d);
        if (e > kSigmaCutoff) continue;
        const double alpha = std::min(kAlphaCap, s.opacity * std::exp(-0.5 * e));
        if (alpha < kAlphaFloor) continue;
        c += t * alpha * s.color;
        t *= 1.0 - alpha;
        if (t < kTransmitStop) break;
      }
      out.image.at(y, x) = c;
      out.transmittance.at(y, x) = t;
    }
  }
  return out;
}

SplatGrads SplatGrads::zeros(int n) {
  SplatGrads s;
  s.positions = Tensor{Shape{n, 3}};
  s.log_scales = Tensor{Shape{n, 3}};
  s.rotations = Tensor{Shape{n, 4}};
  s.opacity_logits = Tensor{Shape{n}};
  s.colors = Tensor{Shape{n}};
  return s;
}

void SplatGrads::add(const SplatGrads& o) {
  for (int i = 0; i < positions.size(); ++i) positions[i] += o.positions[i];
  for (int i = 0; i < log_scales.size(); ++i) log_scales[i] += o.log_scales[i];
  for (int i = 0; i < rotations.size(); ++i) rotations[i] += o.rotations[i];
  for (int i = 0; i < opacity_logits.size(); ++i) opacity_logits[i] += o.opacity_logits[i];
  for (int i = 0; i < colors.size(); ++i) colors[i] += o.colors[i];
  cam_twist += o.cam_twist;
}

SplatGrads rasterize_backward(const GaussianSet& g, const Camera& cam,
                              const Tensor& upstream) {
  if (upstream.shape().rank != 2 || upstream.shape()[0] != cam.height ||
      upstream.shape()[1] != cam.width)
    throw std::invalid_argument("rasterize_backward: upstream shape mismatch");
  const int n = g.count();
  std::vector<ProjState> states;
  states.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) states.push_back(project_state(g, i, cam));
  const std::vector<int> order = depth_order(states);

  SplatGrads out = SplatGrads::zeros(n);
  // Per-gaussian accumulators in projected space.
  std::vector<Eigen::Vector2d> g_mean2d(static_cast<size_t>(n), Eigen::Vector2d::Zero());
  std::vector<Eigen::Matrix2d> g_inv_cov(static_cast<size_t>(n), Eigen::Matrix2d::Zero());
  std::vector<double> g_opacity(static_cast<size_t>(n), 0.0);
  std::vector<double> g_color(static_cast<size_t>(n), 0.0);

  struct Contrib {
    int idx;
    double alpha, gexp, t_before;
  };
  std::vector<Contrib> contribs;
  contribs.reserve(static_cast<size_t>(n));

  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const double u = upstream.at(y, x);
      if (u == 0.0) continue;
      const Eigen::Vector2d pix(static_cast<double>(x), static_cast<double>(y));
      contribs.clear();
      double t = 1.0;
      for (int i : order) {
        const ProjState& s = states[static_cast<size_t>(i)];
        const Eigen::Vector2d d = pix - s.mean2d;
        const double e = d.dot(s.inv_cov2 * d);
        if (e > kSigmaCutoff) continue;
        const double gexp = std::exp(-0.5 * e);
        const double alpha = std::min(kAlphaCap, s.opacity * gexp);
        if (alpha < kAlphaFloor) continue;
        contribs.push_back({i, alpha, gexp, t});
        t *= 1.0 - alpha;
        if (t < kTransmitStop) break;
      }
      // Reverse sweep over this pixel's composite.
      double suffix = 0.0;  // sum of T_k alpha_k c_k for k after i
      for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
        const ProjState& s = states[static_cast<size_t>(it->idx)];
        const double d_color = u * it->t_before * it->alpha;
        const double d_alpha =
            u * (it->t_before * s.color - suffix / (1.0 - it->alpha));
        suffix += it->t_before * it->alpha * s.color;
        g_color[static_cast<size_t>(it->idx)] += d_color;
        if (s.opacity * it->gexp < kAlphaCap) {
          g_opacity[static_cast<size_t>(it->idx)] += d_alpha * it->gexp;
          const double d_gexp = d_alpha * s.opacity;
          const double d_e = -0.5 * it->gexp * d_gexp;
          const Eigen::Vector2d d = pix - s.mean2d;
          const Eigen::Vector2d d_d = 2.0 * d_e * (s.inv_cov2 * d);
          g_mean2d[static_cast<size_t>(it->idx)] -= d_d;
          g_inv_cov[static_cast<size_t>(it->idx)] += d_e * d * d.transpose();
        }
      }
    }
  }

  // Chain projected-space gradients back to 3D parameters and the pose twist.
  const Mat3& rwc = cam.world_to_cam.R;
  for (int i = 0; i < n; ++i) {
    const ProjState& s = states[static_cast<size_t>(i)];
    if (s.culled) continue;
    // Sigmoid chains on logits.
    out.opacity_logits[i] = g_opacity[static_cast<size_t>(i)] * s.opacity * (1.0 - s.opacity);
    out.colors[i] = g_color[static_cast<size_t>(i)] * s.color * (1.0 - s.color);

    // d/dSigma' from d/dSigma'^-1.
    const Eigen::Matrix2d g_cov2 =
        -s.inv_cov2 * g_inv_cov[static_cast<size_t>(i)] * s.inv_cov2;

    const double mx = s.mean_cam.x(), my = s.mean_cam.y(), mz = s.mean_cam.z();
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / mz, 0, -cam.fx * mx / (mz * mz),
        0, cam.fy / mz, -cam.fy * my / (mz * mz);

    const Mat3 g_sigma_cam_from_cov = jac.transpose() * g_cov2 * jac;

    // Camera-space mean gradient: projection of the 2D mean...
    Vec3 g_mean = Vec3::Zero();
    const Eigen::Vector2d& gm2 = g_mean2d[static_cast<size_t>(i)];
    g_mean.x() += gm2.x() * cam.fx / mz;
    g_mean.y() += gm2.y() * cam.fy / mz;
    g_mean.z() += -gm2.x() * cam.fx * mx / (mz * mz) - gm2.y() * cam.fy * my / (mz * mz);
    // ...plus the Jacobian's own dependence on the mean.
    for (int k = 0; k < 3; ++k) {
      Eigen::Matrix<double, 2, 3> dj = Eigen::Matrix<double, 2, 3>::Zero();
      if (k == 0) {
        dj(0, 2) = -cam.fx / (mz * mz);
      } else if (k == 1) {
        dj(1, 2) = -cam.fy / (mz * mz);
      } else {
        dj(0, 0) = -cam.fx / (mz * mz);
        dj(0, 2) = 2.0 * cam.fx * mx / (mz * mz * mz);
        dj(1, 1) = -cam.fy / (mz * mz);
        dj(1, 2) = 2.0 * cam.fy * my / (mz * mz * mz);
      }
      const Eigen::Matrix2d dcov = dj * s.sigma_cam * jac.transpose() +
                                   jac * s.sigma_cam * dj.transpose();
      g_mean[k] += (g_cov2.array() * dcov.array()).sum();
    }

    // Position and pose-translation/rotation contributions through the mean.
    const Vec3 g_pos = rwc.transpose() * g_mean;
    for (int k = 0; k < 3; ++k) out.positions.at(i, k) = g_pos[k];
    out.cam_twist.tail<3>() += g_mean;
    out.cam_twist.head<3>() += s.mean_cam.cross(g_mean);
    // Pose rotation through the camera-space covariance.
    for (int k = 0; k < 3; ++k) {
      const Mat3 ek = skew(Vec3::Unit(k));
      const Mat3 dcov = ek * s.sigma_cam + s.sigma_cam * ek.transpose();
      out.cam_twist[k] += (g_sigma_cam_from_cov.array() * dcov.array()).sum();
    }

    // World covariance chain to scales and quaternion.
    const Mat3 g_sigma3 = rwc.transpose() * g_sigma_cam_from_cov * rwc;
    for (int k = 0; k < 3; ++k) {
      const Vec3 col = s.rot.col(k);
      out.log_scales.at(i, k) =
          2.0 * s.s2(k, k) * col.dot(g_sigma3 * col);
    }
    Eigen::Vector4d g_qn = Eigen::Vector4d::Zero();
    for (int j = 0; j < 4; ++j) {
      const Mat3 dr = quat_rot_deriv(s.qn, j);
      const Mat3 dsigma = dr * s.s2 * s.rot.transpose() + s.rot * s.s2 * dr.transpose();
      g_qn[j] = (g_sigma3.array() * dsigma.array()).sum();
    }
    const Eigen::Vector4d g_q = (g_qn - s.qn * s.qn.dot(g_qn)) / s.qnorm;
    for (int j = 0; j < 4; ++j) out.rotations.at(i, j) = g_q[j];
  }
  return out;
}

std::vector<double> sequence_timestamps(double duration, int count) {
  if (count < 1) throw std::invalid_argument("sequence_timestamps: count < 1");
  std::vector<double> ts(static_cast<size_t>(count));
  for (int m = 0; m < count; ++m)
    ts[static_cast<size_t>(m)] = (m + 0.5) * duration / count;
  return ts;
}

std::vector<Tensor> render_sequence(const GaussianSet& g, const TrajectorySegment& seg,
                                    const Camera& cam, int count) {
  std::vector<Tensor> images;
  images.reserve(static_cast<size_t>(count));
  for (double t : sequence_timestamps(seg.duration, count)) {
    Camera c = cam;
    c.world_to_cam = interpolate_pose(seg, t);
    images.push_back(rasterize(g, c).image);
  }
  return images;
}

Tensor synth_blur(const std::vector<Tensor>& images) {
  if (images.empty()) throw std::invalid_argument("synth_blur: empty input");
  Tensor out = images[0];
  for (size_t i = 1; i < images.size(); ++i) {
    if (images[i].shape() != out.shape())
      throw std::invalid_argument("synth_blur: shape mismatch");
    for (int j = 0; j < out.size(); ++j) out[j] += images[i][j];
  }
  const double inv = 1.0 / static_cast<double>(images.size());
  for (int j = 0; j < out.size(); ++j) out[j] *= inv;
  return out;
}

}  // namespace uspg
