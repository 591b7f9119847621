#include "fmba/depth_param.hpp"

#include <vector>

namespace fmba {

FeatureGrid depth_from_weights(const DepthBasis& basis, const DepthWeights& w) {
  check_weights(basis.count(), w.size());
  FeatureGrid d(basis.width(), basis.height(), 1);
  const int k = basis.count();
  for (std::size_t j = 0; j < basis.maps.texel_count(); ++j) {
    const double* b = basis.maps.data().data() + j * k;
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += b[i] * w[i];
    d.data()[j] = ad::relu(z);
  }
  return d;
}

FeatureGrid initial_depth(const DepthBasis& basis, const DepthWeights& w0) { return depth_from_weights(basis, w0); }

PixelDepth depth_at_pixel(const DepthBasis& basis, const DepthWeights& w, long j) {
  check_weights(basis.count(), w.size());
  if (j < 0 || static_cast<std::size_t>(j) >= basis.maps.texel_count()) {
    throw Error(ErrorCode::kIndexOutOfRange, "pixel index " + std::to_string(j) + " outside the basis");
  }
  const int k = basis.count();
  const Eigen::Map<const Eigen::VectorXd> column(basis.maps.data().data() + static_cast<std::size_t>(j) * k, k);
  const double z = column.dot(w);
  PixelDepth out{ad::relu(z), Eigen::VectorXd::Zero(k)};
  if (z > 0.0) out.gradient = column;
  return out;
}

FeatureGrid depth_at_resolution(const DepthBasis& basis, const DepthWeights& w, int width, int height) {
  return depth_map<double>(basis, w, width, height);
}

}  // namespace fmba
