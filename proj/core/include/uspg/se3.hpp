#pragma once

#include <Eigen/Dense>
#include <random>
#include <utility>
#include <vector>

namespace uspg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Rigid transform. Throughout this project a Pose maps world to camera.
struct Pose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static Pose identity() { return Pose{}; }
  Pose inverse() const;
  Pose operator*(const Pose& o) const;
  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Eigen::Matrix4d matrix() const;
  static Pose from_matrix(const Eigen::Matrix4d& m);
};

/// se(3) tangent vector; stacked as [omega; v].
struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();

  Vec6 vec() const;
  static Twist from_vec(const Vec6& x);
};

struct TrajectorySegment {
  Pose start;
  Pose end;
  double duration = 1.0;
};

Mat3 skew(const Vec3& w);

Pose se3_exp(const Twist& xi);
/// Throws std::domain_error when the rotation angle is within 1e-6 of pi.
Twist se3_log(const Pose& p);

/// 6x6 adjoint of T: exp(Adj(T) xi) = T exp(xi) T^-1.
Mat6 se3_adjoint(const Pose& p);
/// Left Jacobian of SE(3), evaluated by power series in ad(xi).
Mat6 se3_left_jacobian(const Vec6& xi);

/// T(t) = start * exp((t/T) * log(start^-1 * end)); t must lie in [0, T].
Pose interpolate_pose(const TrajectorySegment& seg, double t);
/// Same formula without the range check (geodesic extrapolation).
Pose interpolate_pose_unchecked(const TrajectorySegment& seg, double t);

/// Jacobians of the left-perturbation twist of T(t) w.r.t. left-perturbation
/// twists of the endpoints: (d/dxi_start, d/dxi_end).
std::pair<Mat6, Mat6> interpolate_pose_jacobians(const TrajectorySegment& seg, double t);

/// Random perturbation: translation noise sigma = level*scene_diag*0.05 per
/// axis, rotation about a random axis with angle sigma = level*pi/6.
Pose perturb_pose(const Pose& p, double level, double scene_diag, std::mt19937_64& rng);

struct PoseErrors {
  double translation_mae = 0.0;
  double rotation_rad = 0.0;
};

/// Errors after global SE(3) alignment (Umeyama without scale) of the
/// estimated translations onto the reference.
PoseErrors pose_errors(const std::vector<Pose>& estimated,
                       const std::vector<Pose>& reference);

}  // namespace uspg
