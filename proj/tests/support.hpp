#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <random>

#include "fmba/geometry.hpp"

namespace fmba::test {

/// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

inline Vec6 random_twist(std::mt19937_64& rng, double rot, double trans) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec6 x;
  for (int i = 0; i < 3; ++i) x[i] = rot * u(rng);
  for (int i = 3; i < 6; ++i) x[i] = trans * u(rng);
  return x;
}

inline Pose random_pose(std::mt19937_64& rng, double rot = 0.5, double trans = 0.5) {
  return se3_exp(Twist::from_vector(random_twist(rng, rot, trans)));
}

}  // namespace fmba::test

namespace fmba::test {

/// Error code raised by `f`, or nullopt when it returns normally.
template <typename F>
std::optional<ErrorCode> error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace fmba::test
