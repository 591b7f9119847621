#pragma once

// Dense depth of the reference view as D = ReLU(w^T B): K basis depth maps
// stored as the channels of one grid, combined by a K-vector of weights.

#include <Eigen/Core>

#include "fmba/feature_grid.hpp"
#include "fmba/geometry.hpp"

namespace fmba {

template <typename T>
using VectorT = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct DepthBasisT {
  GridT<T> maps;  // channels = K

  int count() const { return maps.channels(); }
  int width() const { return maps.width(); }
  int height() const { return maps.height(); }
};
using DepthBasis = DepthBasisT<double>;
using DepthWeights = Eigen::VectorXd;

inline void check_weights(int basis_count, Eigen::Index weight_count) {
  if (basis_count != weight_count) {
    throw Error(ErrorCode::kDimensionMismatch, "depth weights have " + std::to_string(weight_count) +
                                                   " entries but the basis has " + std::to_string(basis_count) +
                                                   " maps");
  }
}

/// Uniform 1/K weights: the untrained initial combination.
inline DepthWeights uniform_weights(int k) { return DepthWeights::Constant(k, 1.0 / k); }

/// ReLU(w^T B) at basis resolution, single channel.
FeatureGrid depth_from_weights(const DepthBasis& basis, const DepthWeights& w);

/// The depth every solve starts from: ReLU(w0^T B).
FeatureGrid initial_depth(const DepthBasis& basis, const DepthWeights& w0);

struct PixelDepth {
  double depth;
  Eigen::VectorXd gradient;  // d depth / d w
};

/// Depth at basis pixel index j (row-major) and its gradient in w.
PixelDepth depth_at_pixel(const DepthBasis& basis, const DepthWeights& w, long j);

/// Position in basis raster coordinates of a finest-level image pixel.
inline Vec2T<double> basis_position(const DepthBasis& basis, int image_width, int image_height, double u, double v) {
  const double sx = static_cast<double>(basis.width()) / image_width;
  const double sy = static_cast<double>(basis.height()) / image_height;
  return {(u + 0.5) * sx - 0.5, (v + 0.5) * sy - 0.5};
}

/// Linear combination w^T B(q) before the ReLU, with B bilinearly
/// upsampled to a continuous basis position.
template <typename T>
T combination_at(const DepthBasisT<T>& basis, const VectorT<T>& w, double bu, double bv, T* column) {
  sample_bilinear(basis.maps, bu, bv, column);
  T z = column[0] * w[0];
  for (int k = 1; k < basis.count(); ++k) z += column[k] * w[k];
  return z;
}

/// ReLU(w^T B) upsampled to a width x height image raster.
template <typename T>
GridT<T> depth_map(const DepthBasisT<T>& basis, const VectorT<T>& w, int width, int height) {
  check_weights(basis.count(), w.size());
  GridT<T> d(width, height, 1);
  std::vector<T> column(static_cast<std::size_t>(basis.count()));
  const double sx = static_cast<double>(basis.width()) / width;
  const double sy = static_cast<double>(basis.height()) / height;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      d.at(u, v, 0) = ad::relu(combination_at<T>(basis, w, (u + 0.5) * sx - 0.5, (v + 0.5) * sy - 0.5, column.data()));
    }
  }
  return d;
}

/// Depth upsampled to a width x height image raster.
FeatureGrid depth_at_resolution(const DepthBasis& basis, const DepthWeights& w, int width, int height);

}  // namespace fmba
