#include "uspg/se3.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uspg {

Pose Pose::inverse() const {
  Pose o;
  o.R = R.transpose();
  o.t = -(o.R * t);
  return o;
}

Pose Pose::operator*(const Pose& o) const {
  Pose r;
  r.R = R * o.R;
  r.t = R * o.t + t;
  return r;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = R;
  m.block<3, 1>(0, 3) = t;
  return m;
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Pose p;
  p.R = m.block<3, 3>(0, 0);
  p.t = m.block<3, 1>(0, 3);
  return p;
}

Vec6 Twist::vec() const {
  Vec6 x;
  x << omega, v;
  return x;
}

Twist Twist::from_vec(const Vec6& x) {
  Twist t;
  t.omega = x.head<3>();
  t.v = x.tail<3>();
  return t;
}

Mat3 skew(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

namespace {

constexpr double kSmallAngle = 1e-8;

// Rodrigues with Taylor fallback.
Mat3 so3_exp(const Vec3& w) {
  const double th = w.norm();
  const Mat3 wx = skew(w);
  if (th < kSmallAngle)
    return Mat3::Identity() + wx + 0.5 * wx * wx;
  const double a = std::sin(th) / th;
  const double b = (1.0 - std::cos(th)) / (th * th);
  return Mat3::Identity() + a * wx + b * wx * wx;
}

// V such that exp([w, v]) translation = V v (left Jacobian of SO(3)).
Mat3 so3_left_jacobian(const Vec3& w) {
  const double th = w.norm();
  const Mat3 wx = skew(w);
  if (th < kSmallAngle)
    return Mat3::Identity() + 0.5 * wx + wx * wx / 6.0;
  const double b = (1.0 - std::cos(th)) / (th * th);
  const double c = (th - std::sin(th)) / (th * th * th);
  return Mat3::Identity() + b * wx + c * wx * wx;
}

Vec3 so3_log(const Mat3& R) {
  const double tr = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double th = std::acos(tr);
  if (th > M_PI - 1e-6)
    throw std::domain_error("se3_log: rotation angle too close to pi");
  Vec3 axis(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (th < kSmallAngle) return 0.5 * axis;
  return th / (2.0 * std::sin(th)) * axis;
}

}  // namespace

Pose se3_exp(const Twist& xi) {
  Pose p;
  p.R = so3_exp(xi.omega);
  p.t = so3_left_jacobian(xi.omega) * xi.v;
  return p;
}

Twist se3_log(const Pose& p) {
  Twist xi;
  xi.omega = so3_log(p.R);
  xi.v = so3_left_jacobian(xi.omega).inverse() * p.t;
  return xi;
}

Mat6 se3_adjoint(const Pose& p) {
  Mat6 a = Mat6::Zero();
  a.block<3, 3>(0, 0) = p.R;
  a.block<3, 3>(3, 3) = p.R;
  a.block<3, 3>(3, 0) = skew(p.t) * p.R;
  return a;
}

Mat6 se3_left_jacobian(const Vec6& xi) {
  // ad(xi) for twist order [omega; v].
  Mat6 ad = Mat6::Zero();
  const Mat3 wx = skew(xi.head<3>());
  ad.block<3, 3>(0, 0) = wx;
  ad.block<3, 3>(3, 3) = wx;
  ad.block<3, 3>(3, 0) = skew(xi.tail<3>());
  // J = sum_{n>=0} ad^n / (n+1)!
  Mat6 j = Mat6::Identity();
  Mat6 term = Mat6::Identity();
  for (int n = 1; n <= 40; ++n) {
    term = (term * ad) / static_cast<double>(n + 1);
    j += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  return j;
}

Pose interpolate_pose_unchecked(const TrajectorySegment& seg, double t) {
  const Twist rel = se3_log(seg.start.inverse() * seg.end);
  const double s = t / seg.duration;
  Twist scaled;
  scaled.omega = s * rel.omega;
  scaled.v = s * rel.v;
  return seg.start * se3_exp(scaled);
}

Pose interpolate_pose(const TrajectorySegment& seg, double t) {
  if (!(seg.duration > 0.0)) throw std::invalid_argument("interpolate_pose: duration <= 0");
  if (t < 0.0 || t > seg.duration)
    throw std::invalid_argument("interpolate_pose: t outside [0, T]");
  return interpolate_pose_unchecked(seg, t);
}

std::pair<Mat6, Mat6> interpolate_pose_jacobians(const TrajectorySegment& seg, double t) {
  if (!(seg.duration > 0.0)) throw std::invalid_argument("interpolate_pose_jacobians: duration <= 0");
  if (t < 0.0 || t > seg.duration)
    throw std::invalid_argument("interpolate_pose_jacobians: t outside [0, T]");
  const double s = t / seg.duration;
  const Vec6 xi = se3_log(seg.start.inverse() * seg.end).vec();
  const Mat6 adj = se3_adjoint(seg.start);
  const Mat6 jl_s = se3_left_jacobian(s * xi);
  const Mat6 jl_inv = se3_left_jacobian(xi).inverse();
  const Mat6 d_end = s * adj * jl_s * jl_inv * adj.inverse();
  return {Mat6::Identity() - d_end, d_end};
}

Pose perturb_pose(const Pose& p, double level, double scene_diag, std::mt19937_64& rng) {
  if (level < 0.0 || level > 1.0)
    throw std::invalid_argument("perturb_pose: level outside [0,1]");
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma_t = level * scene_diag * 0.05;
  Vec3 dt;
  for (int i = 0; i < 3; ++i) dt[i] = sigma_t * gauss(rng);
  Vec3 axis;
  for (int i = 0; i < 3; ++i) axis[i] = gauss(rng);
  const double n = axis.norm();
  axis = n > 0 ? Vec3(axis / n) : Vec3::UnitZ();
  const double angle = level * (M_PI / 6.0) * gauss(rng);
  Pose out;
  out.R = so3_exp(angle * axis) * p.R;
  out.t = p.t + dt;
  return out;
}

PoseErrors pose_errors(const std::vector<Pose>& estimated,
                       const std::vector<Pose>& reference) {
  if (estimated.size() != reference.size() || estimated.empty())
    throw std::invalid_argument("pose_errors: sequence length mismatch");
  const int n = static_cast<int>(estimated.size());

  Vec3 mean_e = Vec3::Zero(), mean_r = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    mean_e += estimated[static_cast<size_t>(i)].t;
    mean_r += reference[static_cast<size_t>(i)].t;
  }
  mean_e /= n;
  mean_r /= n;

  // Umeyama without scale; degenerate point sets get a pure translation fit.
  Mat3 h = Mat3::Zero();
  for (int i = 0; i < n; ++i)
    h += (estimated[static_cast<size_t>(i)].t - mean_e) *
         (reference[static_cast<size_t>(i)].t - mean_r).transpose();
  Mat3 rg = Mat3::Identity();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (n >= 3 && sv(1) > 1e-12 * std::max(sv(0), 1e-300)) {
    Mat3 d = Mat3::Identity();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1;
    rg = svd.matrixV() * d * svd.matrixU().transpose();
  }
  const Vec3 tg = mean_r - rg * mean_e;

  PoseErrors e;
  for (int i = 0; i < n; ++i) {
    const Pose& est = estimated[static_cast<size_t>(i)];
    const Pose& ref = reference[static_cast<size_t>(i)];
    const Vec3 ta = rg * est.t + tg;
    e.translation_mae += (ta - ref.t).lpNorm<1>();
    const Mat3 dr = (rg * est.R).transpose() * ref.R;
    const double c = std::clamp((dr.trace() - 1.0) / 2.0, -1.0, 1.0);
    e.rotation_rad += std::acos(c);
  }
  e.translation_mae /= n;
  e.rotation_rad /= n;
  return e;
}

}  // namespace uspg
