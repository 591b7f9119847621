#include <doctest.h>

#include <cmath>
#include <random>

#include "fmba/residuals.hpp"
#include "fmba/scene.hpp"
#include "support.hpp"

using namespace fmba;
using fmba::test::error_of;
using fmba::test::rel_err;

namespace {

SyntheticScene small_scene(std::uint64_t seed, int views = 2) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 24;
  spec.views = views;
  spec.seed = seed;
  return generate_scene(spec);
}

PixelSet level_pixels(const SyntheticScene& s, int level, int stride) {
  return make_pixel_set(s.intrinsics, s.spec.width, s.spec.height, level, stride, s.basis.width(), s.basis.height());
}

/// Dense (rows over every visible (view, pixel, channel)) Jacobian assembled
/// from the blocks, columns [twists of views 1.., w].
Eigen::MatrixXd dense_jacobian(const JacobianBlocks& jb, const ResidualBlock& rb, int view_count) {
  const int k = jb.basis_count;
  const int cols = 6 * (view_count - 1) + k;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rb.values.size()), cols);
  for (const auto& vj : jb.views) {
    const int g = vj.view - 1;
    for (std::size_t a = 0; a < vj.pixels.size(); ++a) {
      for (int c = 0; c < jb.channels; ++c) {
        const Eigen::Index row = (static_cast<Eigen::Index>(g) * rb.pixels + vj.pixels[a]) * rb.channels + c;
        const Eigen::Index src = static_cast<Eigen::Index>(a) * jb.channels + c;
        j.block(row, 6 * g, 1, 6) = vj.pose.row(src);
        j.block(row, 6 * (view_count - 1), 1, k) = vj.weights.row(src);
      }
    }
  }
  return j;
}

Eigen::VectorXd as_vector(const ResidualBlock& b) {
  return Eigen::Map<const Eigen::VectorXd>(b.values.data(), static_cast<Eigen::Index>(b.values.size()));
}

}  // namespace

TEST_CASE("geometric_residual examples") {
  const std::vector<Pose> poses = {Pose::identity()};
  const std::vector<Vec3> points = {Vec3(0, 0, 1), Vec3(1, 2, 2), Vec3(0, 0, -1)};
  const std::vector<Correspondence> obs = {{0, 0, {0.0, 0.0}}, {0, 1, {0.25, 1.5}}, {0, 2, {0.0, 0.0}}};
  const ResidualBlock b = geometric_residual(poses, points, obs);
  CHECK(b.values[0] == 0.0);
  CHECK(b.values[1] == 0.0);
  CHECK(b.values[2] == 0.25);
  CHECK(b.values[3] == -0.5);
  // A point behind the camera is masked, not an error.
  CHECK_FALSE(b.visible(0, 2));
  CHECK(b.values[4] == 0.0);
  CHECK(b.active == 2);

  const std::vector<Correspondence> bad = {{1, 0, {0.0, 0.0}}};
  CHECK(error_of([&] { geometric_residual(poses, points, bad); }) == ErrorCode::kIndexOutOfRange);
}

TEST_CASE("photometric_residual is zero for identical images at the identity") {
  FeatureGrid img(16, 12, 1);
  for (int v = 0; v < 12; ++v) {
    for (int u = 0; u < 16; ++u) img.at(u, v, 0) = std::sin(0.3 * u) + std::cos(0.2 * v);
  }
  const Intrinsics k{14.0, 14.0, 7.5, 5.5};
  std::vector<NormalizedPixel> pixels;
  std::vector<double> depths;
  for (int v = 1; v < 11; v += 3) {
    for (int u = 1; u < 15; u += 3) {
      pixels.push_back(k.normalize(u, v));
      depths.push_back(1.0 + 0.1 * u);
    }
  }
  const ResidualBlock b = photometric_residual(img, img, k, Pose::identity(), depths, pixels);
  CHECK(b.active == static_cast<int>(pixels.size()));
  for (double r : b.values) CHECK(std::abs(r) < 1e-12);

  depths.pop_back();
  CHECK(error_of([&] { photometric_residual(img, img, k, Pose::identity(), depths, pixels); }) ==
        ErrorCode::kDimensionMismatch);
}

TEST_CASE("photometric_residual masks pixels warped outside the target") {
  FeatureGrid img(16, 12, 1, 1.0);
  const Intrinsics k{14.0, 14.0, 7.5, 5.5};
  const std::vector<NormalizedPixel> pixels = {k.normalize(2, 6), k.normalize(14, 6)};
  const std::vector<double> depths = {1.0, 1.0};
  Pose shift;
  shift.translation = Vec3(0.2, 0, 0);  // moves everything about 2.8 texels right
  const ResidualBlock b = photometric_residual(img, img, k, shift, depths, pixels);
  CHECK(b.visible(0, 0));
  CHECK_FALSE(b.visible(0, 1));
}

TEST_CASE("featuremetric residual vanishes at the ground truth") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SyntheticScene s = small_scene(seed, 3);
    const auto pyramids = image_pyramids(s, 1);
    const PixelSet pixels = level_pixels(s, 0, 1);
    const ResidualBlock b = featuremetric_residual(pyramids, 0, s.intrinsics, s.poses, s.basis, s.w_gt, pixels);
    CHECK(b.active > 0);
    double worst = 0.0;
    for (double r : b.values) worst = std::max(worst, std::abs(r));
    CHECK(worst < 1e-9 * s.spec.intensity);
  }
}

TEST_CASE("featuremetric residual masks unobservable pixels and contributes zeros") {
  const SyntheticScene s = small_scene(4);
  const auto pyramids = image_pyramids(s, 1);
  const PixelSet pixels = level_pixels(s, 0, 1);
  std::vector<Pose> far = s.poses;
  far[1].translation = Vec3(5.0, 0.0, 0.0);
  const ResidualBlock b = featuremetric_residual(pyramids, 0, s.intrinsics, far, s.basis, s.w_gt, pixels);
  CHECK(b.active == 0);
  for (double r : b.values) CHECK(r == 0.0);
  // All depth weights zero means every depth is 0: everything is masked.
  const DepthWeights zero = DepthWeights::Zero(s.basis.count());
  CHECK(featuremetric_residual(pyramids, 0, s.intrinsics, s.poses, s.basis, zero, pixels).active == 0);
}

TEST_CASE("featuremetric residual rejects inconsistent inputs") {
  const SyntheticScene s = small_scene(5);
  const auto pyramids = image_pyramids(s, 2);
  const PixelSet pixels = level_pixels(s, 0, 2);
  const DepthWeights short_w = DepthWeights::Ones(s.basis.count() - 1);
  CHECK(error_of([&] { featuremetric_residual(pyramids, 0, s.intrinsics, s.poses, s.basis, short_w, pixels); }) ==
        ErrorCode::kDimensionMismatch);
  CHECK(error_of([&] { featuremetric_residual(pyramids, 2, s.intrinsics, s.poses, s.basis, s.w0, pixels); }) ==
        ErrorCode::kIndexOutOfRange);
  const std::vector<Pose> one = {Pose::identity()};
  CHECK(error_of([&] { featuremetric_residual(pyramids, 0, s.intrinsics, one, s.basis, s.w0, pixels); }) ==
        ErrorCode::kDimensionMismatch);
}

TEST_CASE("featuremetric_jacobian matches central differences") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed : {6u, 7u}) {
    for (int level : {0, 1}) {
      const SyntheticScene s = small_scene(seed, 3);
      const auto pyramids = image_pyramids(s, 2);
      const PixelSet pixels = level_pixels(s, level, 2);
      // A generic point between identity and ground truth, off every texel line.
      std::vector<Pose> poses = s.poses;
      for (std::size_t i = 1; i < poses.size(); ++i) {
        poses[i] = compose(se3_exp(Twist::from_vector(test::random_twist(rng, 0.01, 0.02))), poses[i]);
      }
      DepthWeights w = s.w_gt;
      w[0] *= 1.03;

      const auto residual = [&](const std::vector<Pose>& p, const DepthWeights& ww) {
        return featuremetric_residual(pyramids, level, s.intrinsics, p, s.basis, ww, pixels);
      };
      const ResidualBlock base = residual(poses, w);
      const JacobianBlocks jb = featuremetric_jacobian(pyramids, level, s.intrinsics, poses, s.basis, w, pixels);
      const Eigen::MatrixXd analytic = dense_jacobian(jb, base, 3);

      constexpr double h = 1e-7;
      Eigen::MatrixXd numeric = Eigen::MatrixXd::Zero(analytic.rows(), analytic.cols());
      for (int view = 1; view < 3; ++view) {
        for (int a = 0; a < 6; ++a) {
          Vec6 e = Vec6::Zero();
          e[a] = h;
          auto plus = poses, minus = poses;
          plus[view] = compose(se3_exp(Twist::from_vector(e)), poses[view]);
          minus[view] = compose(se3_exp(Twist::from_vector(-e)), poses[view]);
          numeric.col(6 * (view - 1) + a) = (as_vector(residual(plus, w)) - as_vector(residual(minus, w))) / (2 * h);
        }
      }
      for (int k = 0; k < s.basis.count(); ++k) {
        DepthWeights wp = w, wm = w;
        wp[k] += h;
        wm[k] -= h;
        numeric.col(12 + k) = (as_vector(residual(poses, wp)) - as_vector(residual(poses, wm))) / (2 * h);
      }
      // Rows whose mask changes under the perturbation are not differentiable.
      for (Eigen::Index r = 0; r < analytic.rows(); ++r) {
        if (!base.visible(static_cast<int>(r / base.channels / base.pixels),
                          static_cast<int>((r / base.channels) % base.pixels))) {
          CHECK(analytic.row(r).isZero(0.0));
          numeric.row(r).setZero();
        }
      }
      CHECK(rel_err(analytic, numeric) <= 1e-4);
      CHECK(jb.views.size() == 2);
      CHECK(jb.basis_count == s.basis.count());
    }
  }
}
