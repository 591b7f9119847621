#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>

#include "fmba/metrics.hpp"
#include "support.hpp"

using namespace fmba;
using fmba::test::error_of;

namespace {

/// RMSE after the Kabsch alignment of `pred` onto `gt`, computed directly.
double kabsch_rmse(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  const auto n = static_cast<Eigen::Index>(pred.size());
  Eigen::Matrix3Xd p(3, n), g(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.col(i) = pred[static_cast<std::size_t>(i)];
    g.col(i) = gt[static_cast<std::size_t>(i)];
  }
  const Vec3 pm = p.rowwise().mean(), gm = g.rowwise().mean();
  p.colwise() -= pm;
  g.colwise() -= gm;
  Eigen::JacobiSVD<Mat3> svd(g * p.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1;
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  return std::sqrt((r * p - g).colwise().squaredNorm().mean());
}

std::vector<Vec3> transformed(const std::vector<Vec3>& pts, const Pose& t) {
  std::vector<Vec3> out;
  for (const auto& x : pts) out.push_back(t.apply(x));
  return out;
}

FeatureGrid grid_of(std::initializer_list<double> values) {
  FeatureGrid g(static_cast<int>(values.size()), 1, 1);
  std::copy(values.begin(), values.end(), g.data().begin());
  return g;
}

}  // namespace

TEST_CASE("pose_metrics examples") {
  std::mt19937_64 rng(71);
  std::vector<Pose> gt = {Pose::identity(), test::random_pose(rng), test::random_pose(rng)};
  PoseMetrics m = pose_metrics(gt, gt);
  CHECK(m.rotation_deg < 1e-6);
  CHECK(m.translation_deg < 1e-6);
  CHECK(m.translation_cm == 0.0);

  std::vector<Pose> a = {Pose::identity(), Pose::identity()};
  a[1].translation = Vec3(0.3, 0.1, -0.2);
  std::vector<Pose> b = a;
  b[1].rotation = se3_exp(Twist{Vec3(0.0, 10.0 * std::numbers::pi / 180.0, 0.0), Vec3::Zero()}).rotation;
  m = pose_metrics(b, a);
  CHECK(m.rotation_deg == doctest::Approx(10.0).epsilon(1e-10));
  CHECK(m.translation_deg == 0.0);
  CHECK(m.translation_cm == 0.0);

  a[1] = b[1] = Pose::identity();
  a[1].translation = Vec3(1, 0, 0);
  b[1].translation = Vec3(0, 1, 0);
  m = pose_metrics(a, b);
  CHECK(m.translation_deg == doctest::Approx(90.0));
  CHECK(m.translation_cm == doctest::Approx(100.0 * std::sqrt(2.0)));

  b[1].translation = Vec3::Zero();
  m = pose_metrics(a, b);
  CHECK(m.translation_deg == 0.0);
  CHECK(m.degenerate_direction);
  CHECK(error_of([&] { pose_metrics(a, {Pose::identity()}); }).has_value());
}

TEST_CASE("depth_metrics examples") {
  const FeatureGrid gt = grid_of({2.0, 2.0});
  const DepthMetrics m = depth_metrics(grid_of({1.0, 2.0}), gt);
  CHECK(m.abs_rel == doctest::Approx(0.25));
  CHECK(m.rmse_linear == doctest::Approx(std::sqrt(0.5)));
  CHECK(m.sqr_rel == doctest::Approx(0.25));

  const FeatureGrid g = grid_of({1.0, 2.5, 4.0, 0.7});
  const DepthMetrics same = depth_metrics(g, g);
  CHECK(same.abs_rel == 0.0);
  CHECK(same.sqr_rel == 0.0);
  CHECK(same.rmse_linear == 0.0);
  CHECK(same.rmse_log == 0.0);
  CHECK(same.rmse_log_scale_inv == 0.0);

  FeatureGrid twice = g;
  for (auto& x : twice.data()) x *= 2.0;
  const DepthMetrics d = depth_metrics(twice, g);
  CHECK(d.abs_rel == doctest::Approx(1.0));
  CHECK(d.rmse_log_scale_inv < 1e-15);

  const DepthMetrics with_zero = depth_metrics(grid_of({0.0, 2.0}), gt);
  CHECK(with_zero.invalid_fraction == 0.5);
  CHECK(with_zero.rmse_log == 0.0);
  CHECK(with_zero.abs_rel == doctest::Approx(0.5));

  const std::vector<std::uint8_t> mask = {0, 1};
  CHECK(depth_metrics(grid_of({1.0, 2.0}), gt, mask).abs_rel == 0.0);
  CHECK(error_of([&] { depth_metrics(g, g, std::vector<std::uint8_t>(4, 0)); }) == ErrorCode::kEmptyMask);
  CHECK(error_of([&] { depth_metrics(grid_of({1.0}), gt); }).has_value());
}

TEST_CASE("rmse_log_scale_inv is exactly invariant to positive scaling") {
  std::mt19937_64 rng(72);
  std::uniform_real_distribution<double> u(0.5, 5.0), s(0.01, 100.0);
  FeatureGrid pred(8, 6, 1), gt(8, 6, 1);
  for (auto& x : pred.data()) x = u(rng);
  for (auto& x : gt.data()) x = u(rng);
  const double base = depth_metrics(pred, gt).rmse_log_scale_inv;
  for (int i = 0; i < 20; ++i) {
    FeatureGrid scaled = pred;
    const double k = s(rng);
    for (auto& x : scaled.data()) x *= k;
    CHECK(depth_metrics(scaled, gt).rmse_log_scale_inv == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("ate examples") {
  std::mt19937_64 rng(73);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> traj;
  for (int i = 0; i < 6; ++i) traj.emplace_back(n(rng), n(rng), n(rng));
  CHECK(ate(traj, traj) < 1e-12);
  for (int t = 0; t < 20; ++t) {
    CHECK(ate(transformed(traj, test::random_pose(rng, 3.0, 5.0)), traj) < 1e-9);
  }

  std::vector<Vec3> line, moved;
  for (int i = 0; i < 5; ++i) line.emplace_back(i, 0, 0);
  moved = line;
  moved[2] += Vec3(0, 1, 0);
  CHECK(std::abs(ate(moved, line) - kabsch_rmse(moved, line)) < 1e-9);
  CHECK(ate(moved, line) > 0.0);

  for (int t = 0; t < 20; ++t) {
    std::vector<Vec3> a, b;
    for (int i = 0; i < 5; ++i) {
      a.emplace_back(n(rng), n(rng), n(rng));
      b.emplace_back(n(rng), n(rng), n(rng));
    }
    CHECK(std::abs(ate(a, b) - kabsch_rmse(a, b)) < 1e-9);
  }
  CHECK(error_of([&] { ate(line, std::vector<Vec3>(line.begin(), line.begin() + 3)); }) ==
        ErrorCode::kLengthMismatch);
}

TEST_CASE("camera centers of world-to-camera poses") {
  Pose p;
  p.translation = Vec3(1, 2, 3);
  const auto c = camera_centers({Pose::identity(), p});
  CHECK(c[0].isZero(0.0));
  CHECK(c[1] == Vec3(-1, -2, -3));
}

TEST_CASE("metrics JSON carries null for absent fields") {
  MetricsReport r;
  r.pose.rotation_deg = 1.5;
  const std::string j = r.to_json();
  CHECK(j.find("\"rotation_deg\"") != std::string::npos);
  CHECK(j.find("null") != std::string::npos);
  r.depth = DepthMetrics{};
  r.ate = 0.25;
  CHECK(r.to_json().find("\"ate\": 0.25") != std::string::npos);
}
