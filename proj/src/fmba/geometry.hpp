#pragma once

// SE(3) poses, pinhole projection in normalized image coordinates, and the
// analytic projection Jacobians. Everything here is templated on the scalar
// so the same code runs on doubles and on taped ad::Var values.

#include <Eigen/Core>

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "fmba/ad.hpp"
#include "fmba/errors.hpp"

namespace fmba {

template <typename T>
using Vec2T = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Vec6T = Eigen::Matrix<T, 6, 1>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

using Vec2 = Vec2T<double>;
using Vec3 = Vec3T<double>;
using Vec6 = Vec6T<double>;
using Mat3 = Mat3T<double>;

/// Points whose camera-frame depth is at or below this are unobservable.
inline constexpr double kDepthEpsilon = 1e-6;

template <typename T>
struct PoseT {
  Mat3T<T> rotation = Mat3T<T>::Identity();
  Vec3T<T> translation = Vec3T<T>::Zero();

  static PoseT identity() { return PoseT{}; }
  Vec3T<T> apply(const Vec3T<T>& p) const { return rotation * p + translation; }
};
using Pose = PoseT<double>;

/// Tangent increment: omega is the rotational part (radians), nu the
/// translational part (meters).
template <typename T>
struct TwistT {
  Vec3T<T> omega = Vec3T<T>::Zero();
  Vec3T<T> nu = Vec3T<T>::Zero();

  static TwistT from_vector(const Vec6T<T>& v) { return {v.template head<3>(), v.template tail<3>()}; }
  Vec6T<T> vector() const {
    Vec6T<T> v;
    v << omega, nu;
    return v;
  }
};
using Twist = TwistT<double>;

template <typename T>
struct NormalizedPixelT {
  T x{0.0};
  T y{0.0};
};
using NormalizedPixel = NormalizedPixelT<double>;

/// Maps raster pixels (u right, v down, texel centers at integers) to
/// normalized image-plane coordinates.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
  /// Intrinsics of pyramid level `level` built by repeated 2x2 box downsampling.
  Intrinsics at_level(int level) const;
  NormalizedPixel normalize(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy}; }
  template <typename T>
  Vec2T<T> to_pixel(const NormalizedPixelT<T>& q) const {
    return {q.x * fx + cx, q.y * fy + cy};
  }
};

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

template <typename T>
Mat3T<T> skew(const Vec3T<T>& v) {
  Mat3T<T> m;
  m << T(0), -v.z(), v.y(), v.z(), T(0), -v.x(), -v.y(), v.x(), T(0);
  return m;
}

/// Closed-form SE(3) exponential. Below |omega| = 1e-8 the rotation and
/// V-matrix coefficients switch to their second-order Taylor expansions in
/// theta^2, which also keeps the map differentiable at zero.
template <typename T>
PoseT<T> se3_exp(const TwistT<T>& xi) {
  using std::sin;
  using std::sqrt;
  using ad::sin;
  using ad::sqrt;
  const T theta2 = xi.omega.squaredNorm();
  T a, b, c;
  if (ad::value(theta2) < 1e-16) {
    a = T(1.0) - theta2 / 6.0;
    b = T(0.5) - theta2 / 24.0;
    c = T(1.0 / 6.0) - theta2 / 120.0;
  } else {
    const T theta = sqrt(theta2);
    const T s = sin(theta);
    const T half = sin(theta * 0.5);
    a = s / theta;
    b = half * half * 2.0 / theta2;
    // theta - sin(theta) cancels badly for small angles.
    c = ad::value(theta2) < 1e-6 ? T(1.0 / 6.0) - theta2 / 120.0 + theta2 * theta2 / 5040.0
                                 : (theta - s) / (theta2 * theta);
  }
  const Mat3T<T> w = skew<T>(xi.omega);
  const Mat3T<T> w2 = w * w;
  PoseT<T> out;
  out.rotation = Mat3T<T>::Identity() + w * a + w2 * b;
  const Mat3T<T> v = Mat3T<T>::Identity() + w * b + w2 * c;
  out.translation = v * xi.nu;
  return out;
}

template <typename T>
PoseT<T> compose(const PoseT<T>& a, const PoseT<T>& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <typename T>
PoseT<T> inverse(const PoseT<T>& p) {
  const Mat3T<T> rt = p.rotation.transpose();
  return {rt, -(rt * p.translation)};
}

/// Projects a point; returns false when the transformed depth is at or
/// below kDepthEpsilon.
template <typename T>
bool try_project(const PoseT<T>& pose, const Vec3T<T>& point, NormalizedPixelT<T>& out) {
  const Vec3T<T> pc = pose.apply(point);
  if (ad::value(pc.z()) <= kDepthEpsilon) return false;
  out = {pc.x() / pc.z(), pc.y() / pc.z()};
  return true;
}

template <typename T>
NormalizedPixelT<T> project(const PoseT<T>& pose, const Vec3T<T>& point) {
  NormalizedPixelT<T> q;
  if (!try_project(pose, point, q)) throw Error(ErrorCode::kBehindCamera, "point is behind the camera");
  return q;
}

template <typename T>
Vec3T<T> backproject(const NormalizedPixelT<T>& q, const T& depth) {
  return {depth * q.x, depth * q.y, depth};
}

/// Derivative of the perspective divide at a camera-frame point.
template <typename T>
Eigen::Matrix<T, 2, 3> perspective_jacobian(const Vec3T<T>& pc) {
  const T iz = T(1.0) / pc.z();
  const T iz2 = iz * iz;
  Eigen::Matrix<T, 2, 3> j;
  j << iz, T(0), -pc.x() * iz2, T(0), iz, -pc.y() * iz2;
  return j;
}

template <typename T>
struct ProjectJacobiansT {
  Eigen::Matrix<T, 2, 6> d_twist;  // columns: omega (3), nu (3)
  Eigen::Matrix<T, 2, 3> d_point;
};
using ProjectJacobians = ProjectJacobiansT<double>;

/// Jacobians of project() under the left perturbation exp(xi) * pose and
/// with respect to the world point.
template <typename T>
ProjectJacobiansT<T> project_jacobians(const PoseT<T>& pose, const Vec3T<T>& point) {
  const Vec3T<T> pc = pose.apply(point);
  if (ad::value(pc.z()) <= kDepthEpsilon) throw Error(ErrorCode::kBehindCamera, "point is behind the camera");
  const Eigen::Matrix<T, 2, 3> jp = perspective_jacobian<T>(pc);
  ProjectJacobiansT<T> out;
  out.d_twist.template leftCols<3>() = -(jp * skew<T>(pc));
  out.d_twist.template rightCols<3>() = jp;
  out.d_point = jp * pose.rotation;
  return out;
}

/// Unit quaternion with nonnegative scalar part (Shepperd's method).
template <typename T>
std::array<T, 4> quaternion_from_rotation(const Mat3T<T>& r) {
  using std::sqrt;
  using ad::sqrt;
  const T tr = r(0, 0) + r(1, 1) + r(2, 2);
  std::array<T, 4> q;  // w, x, y, z
  const double v00 = ad::value(r(0, 0));
  const double v11 = ad::value(r(1, 1));
  const double v22 = ad::value(r(2, 2));
  const double vtr = ad::value(tr);
  if (vtr >= v00 && vtr >= v11 && vtr >= v22) {
    const T s = sqrt(tr + 1.0) * 2.0;
    q = {s * 0.25, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
  } else if (v00 >= v11 && v00 >= v22) {
    const T s = sqrt(T(1.0) + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q = {(r(2, 1) - r(1, 2)) / s, s * 0.25, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
  } else if (v11 >= v22) {
    const T s = sqrt(T(1.0) + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, s * 0.25, (r(1, 2) + r(2, 1)) / s};
  } else {
    const T s = sqrt(T(1.0) + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, s * 0.25};
  }
  if (ad::value(q[0]) < 0.0) {
    for (auto& c : q) c = -c;
  }
  return q;
}

Quaternion to_quaternion(const Mat3& r);
Mat3 rotation_from_quaternion(const Quaternion& q);

/// Rotation angle of r in radians, in [0, pi].
double rotation_angle(const Mat3& r);

/// Largest deviation of R^T R from identity and of det(R) from 1.
double orthonormality_error(const Mat3& r);

/// `qw qx qy qz tx ty tz`
std::string format_pose(const Pose& p);
Pose parse_pose(std::string_view line);
std::vector<Pose> read_poses(const std::string& path);
void write_poses(const std::string& path, const std::vector<Pose>& poses);

template <typename T>
PoseT<T> pose_cast(const Pose& p) {
  return {p.rotation.cast<T>(), p.translation.cast<T>()};
}

template <typename T>
Pose pose_value(const PoseT<T>& p) {
  Pose out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.rotation(r, c) = ad::value(p.rotation(r, c));
    out.translation(r) = ad::value(p.translation(r));
  }
  return out;
}

}  // namespace fmba
