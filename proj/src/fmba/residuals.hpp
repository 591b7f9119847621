#pragma once

// Geometric, photometric and feature-metric residuals with visibility masks
// and analytic Jacobians with respect to view poses (left twist) and the
// depth weights.

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "fmba/depth_param.hpp"
#include "fmba/feature_grid.hpp"
#include "fmba/geometry.hpp"

namespace fmba {

/// Reference-view pixel at one pyramid level.
struct PixelSample {
  double u = 0.0;  // level raster position
  double v = 0.0;
  NormalizedPixel q;
  double bu = 0.0;  // basis raster position
  double bv = 0.0;
};

struct PixelSet {
  int level = 0;
  std::vector<PixelSample> samples;
  std::size_t size() const { return samples.size(); }
};

/// Stride-s subgrid of a level raster. `basis_width/height` of 0 leave the
/// basis positions at zero.
PixelSet make_pixel_set(const Intrinsics& finest, int finest_width, int finest_height, int level, int stride,
                        int basis_width = 0, int basis_height = 0);

/// Pixel samples for arbitrary normalized coordinates on a grid with
/// intrinsics `k`.
PixelSet pixel_set_from_normalized(const Intrinsics& k, std::span<const NormalizedPixel> pixels);

struct Correspondence {
  int view = 0;
  int point = 0;
  NormalizedPixel observed;
};

/// Stacked residual over (view, pixel) pairs. Masked entries are exactly 0.
struct ResidualBlock {
  int channels = 0;
  int views = 0;   // residual groups (non-reference views, or correspondences)
  int pixels = 0;  // entries per group
  std::vector<double> values;  // (group * pixels + j) * channels + c
  std::vector<std::uint8_t> mask;
  int active = 0;  // unmasked (group, pixel) pairs

  bool visible(int group, int j) const { return mask[static_cast<std::size_t>(group) * pixels + j] != 0; }
};

/// Jacobian rows of the active residuals of one non-reference view.
struct ViewJacobian {
  int view = 0;                     // index into the pose list (>= 1)
  std::vector<int> pixels;          // active pixel index per row group
  Eigen::MatrixXd pose;             // (active * C) x 6, columns omega then nu
  Eigen::MatrixXd weights;          // (active * C) x K
  Eigen::VectorXd residual;         // matching residual rows
};

struct JacobianBlocks {
  int channels = 0;
  int basis_count = 0;
  std::vector<ViewJacobian> views;
};

/// Per-view evaluation used by the solver. Rows are stored row-major with
/// columns [omega(3), nu(3), w(K)] and residuals alongside.
template <typename T>
struct ViewSystemT {
  int channels = 0;
  int cols = 6;
  std::vector<int> active;
  std::vector<std::uint8_t> mask;
  std::vector<T> residual;  // active * channels
  std::vector<T> rows;      // active * channels * cols
};

/// Depth of each pixel either as explicit depths or as ReLU(w^T B[j]) with
/// B[j] the precomputed basis column.
template <typename T>
struct DepthInput {
  std::span<const T> depths;
  std::span<const T> columns;  // pixels * K
  const VectorT<T>* weights = nullptr;
  int basis_count = 0;
};

/// Reference values F_1(q_j) for every pixel of the set.
template <typename T>
std::vector<T> sample_reference(const GridT<T>& reference, const PixelSet& pixels) {
  const int c = reference.channels();
  std::vector<T> out(pixels.size() * static_cast<std::size_t>(c));
  for (std::size_t j = 0; j < pixels.size(); ++j) {
    sample_bilinear(reference, pixels.samples[j].u, pixels.samples[j].v, out.data() + j * c);
  }
  return out;
}

/// Basis columns B(q_j) for every pixel of the set.
template <typename T>
std::vector<T> sample_basis_columns(const DepthBasisT<T>& basis, const PixelSet& pixels) {
  const int k = basis.count();
  std::vector<T> out(pixels.size() * static_cast<std::size_t>(k));
  for (std::size_t j = 0; j < pixels.size(); ++j) {
    sample_bilinear(basis.maps, pixels.samples[j].bu, pixels.samples[j].bv, out.data() + j * k);
  }
  return out;
}

/// Warps every pixel of the set into `target` through `pose`, and fills the
/// residual F_target(pi(T, d q)) - F_ref(q) plus, if requested, its
/// Jacobian rows. Pixels are masked when the depth or the transformed depth
/// is at or below kDepthEpsilon, or when the warped position leaves the
/// target raster.
/// Warped positions this far outside the raster (in texels) still count as
/// visible, so that round-off at the identity warp cannot drop border pixels.
inline constexpr double kBoundsSlack = 1e-9;

template <typename T>
void evaluate_view(std::span<const T> reference_values, const GridT<T>& target, const Intrinsics& k,
                   const PoseT<T>& pose, const PixelSet& pixels, const DepthInput<T>& depth, bool jacobian,
                   bool weight_columns, ViewSystemT<T>& out) {
  const int c = target.channels();
  const int kb = depth.basis_count;
  const bool with_w = jacobian && weight_columns && depth.weights != nullptr;
  out.channels = c;
  out.cols = 6 + (with_w ? kb : 0);
  out.active.clear();
  out.residual.clear();
  out.rows.clear();
  out.mask.assign(pixels.size(), 0);

  std::vector<T> value(static_cast<std::size_t>(c)), du(static_cast<std::size_t>(c)), dv(static_cast<std::size_t>(c));
  const double wmax = target.width() - 1;
  const double hmax = target.height() - 1;
  for (std::size_t j = 0; j < pixels.size(); ++j) {
    const PixelSample& s = pixels.samples[j];
    T d;
    bool relu_active = true;
    if (depth.weights != nullptr) {
      const T* col = depth.columns.data() + j * kb;
      T z = col[0] * (*depth.weights)[0];
      for (int i = 1; i < kb; ++i) z += col[i] * (*depth.weights)[i];
      relu_active = ad::value(z) > 0.0;
      d = ad::relu(z);
    } else {
      d = depth.depths[j];
    }
    if (ad::value(d) <= kDepthEpsilon) continue;
    const Vec3T<T> ray(T(s.q.x), T(s.q.y), T(1.0));
    const Vec3T<T> pc = pose.rotation * (ray * d) + pose.translation;
    if (ad::value(pc.z()) <= kDepthEpsilon) continue;
    const T iz = T(1.0) / pc.z();
    const T u = pc.x() * iz * k.fx + k.cx;
    const T v = pc.y() * iz * k.fy + k.cy;
    if (!(ad::value(u) >= -kBoundsSlack && ad::value(u) <= wmax + kBoundsSlack && ad::value(v) >= -kBoundsSlack &&
          ad::value(v) <= hmax + kBoundsSlack)) {
      continue;
    }

    out.mask[j] = 1;
    out.active.push_back(static_cast<int>(j));
    const T* ref = reference_values.data() + j * c;
    if (!jacobian) {
      sample_bilinear(target, u, v, value.data());
      for (int ch = 0; ch < c; ++ch) out.residual.push_back(value[ch] - ref[ch]);
      continue;
    }
    sample_bilinear_grad(target, u, v, value.data(), du.data(), dv.data());
    // d(u, v)/d pc, scaled by the focal lengths.
    Eigen::Matrix<T, 2, 3> jp = perspective_jacobian<T>(pc);
    jp.row(0) *= T(k.fx);
    jp.row(1) *= T(k.fy);
    const Eigen::Matrix<T, 2, 3> j_rot = -(jp * skew<T>(pc));
    const Vec2T<T> j_depth = jp * (pose.rotation * ray);
    for (int ch = 0; ch < c; ++ch) {
      out.residual.push_back(value[ch] - ref[ch]);
      const T gu = du[ch];
      const T gv = dv[ch];
      for (int a = 0; a < 3; ++a) out.rows.push_back(gu * j_rot(0, a) + gv * j_rot(1, a));
      for (int a = 0; a < 3; ++a) out.rows.push_back(gu * jp(0, a) + gv * jp(1, a));
      if (with_w) {
        const T g = gu * j_depth(0) + gv * j_depth(1);
        const T* col = depth.columns.data() + j * kb;
        for (int i = 0; i < kb; ++i) out.rows.push_back(relu_active ? T(g * col[i]) : T(0.0));
      }
    }
  }
}

ResidualBlock geometric_residual(std::span<const Pose> poses, std::span<const Vec3> points,
                                 std::span<const Correspondence> correspondences);

ResidualBlock photometric_residual(const FeatureGrid& reference, const FeatureGrid& target, const Intrinsics& k,
                                   const Pose& pose, std::span<const double> depths,
                                   std::span<const NormalizedPixel> pixels);

/// Feature-metric residual of views 1..N-1 against view 0 at one pyramid
/// level. `finest` are the level-0 intrinsics. poses[0] is the gauge-fixed
/// reference and is not read.
ResidualBlock featuremetric_residual(std::span<const FeaturePyramid> pyramids, int level, const Intrinsics& finest,
                                     std::span<const Pose> poses, const DepthBasis& basis, const DepthWeights& w,
                                     const PixelSet& pixels);
ResidualBlock featuremetric_residual(std::span<const FeaturePyramid> pyramids, int level, const Intrinsics& finest,
                                     std::span<const Pose> poses, const DepthBasis& basis, const DepthWeights& w,
                                     std::span<const NormalizedPixel> pixels);

JacobianBlocks featuremetric_jacobian(std::span<const FeaturePyramid> pyramids, int level, const Intrinsics& finest,
                                      std::span<const Pose> poses, const DepthBasis& basis, const DepthWeights& w,
                                      const PixelSet& pixels);

}  // namespace fmba
