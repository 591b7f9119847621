#pragma once

// Same-size 2-D convolution with replicate padding, for plain grids and as a
// single tape op on tracked grids.

#include <Eigen/Core>

#include "fmba/ad_ops.hpp"
#include "fmba/feature_grid.hpp"

namespace fmba {

/// `weights` is out x (kernel * kernel * in) with taps ordered (dy, dx, in),
/// dy and dx running from -kernel/2 to kernel/2. `kernel` must be odd.
FeatureGrid conv2d(const FeatureGrid& input, const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias, int kernel);

GridT<ad::Var> conv2d(const GridT<ad::Var>& input, const ad::VarMatrix& weights, const ad::VarVector& bias,
                      int kernel);

template <typename T>
GridT<T> relu(GridT<T> g) {
  for (auto& x : g.data()) x = ad::relu(x);
  return g;
}

}  // namespace fmba
