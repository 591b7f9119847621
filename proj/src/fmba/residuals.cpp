#include "fmba/residuals.hpp"

#include <cmath>

namespace fmba {

namespace {

int level_size(int finest, int level) {
  int s = finest;
  for (int l = 0; l < level; ++l) s = std::max(1, s / 2);
  return s;
}

void fill_basis_position(PixelSample& s, const Intrinsics& finest, int fw, int fh, int bw, int bh) {
  if (bw <= 0 || bh <= 0) return;
  const Vec2 p0 = finest.to_pixel(s.q);
  const double sx = static_cast<double>(bw) / fw;
  const double sy = static_cast<double>(bh) / fh;
  s.bu = (p0.x() + 0.5) * sx - 0.5;
  s.bv = (p0.y() + 0.5) * sy - 0.5;
}

ResidualBlock block_from_views(const std::vector<ViewSystemT<double>>& views, int channels, int pixels) {
  ResidualBlock b;
  b.channels = channels;
  b.views = static_cast<int>(views.size());
  b.pixels = pixels;
  b.values.assign(static_cast<std::size_t>(b.views) * pixels * channels, 0.0);
  b.mask.assign(static_cast<std::size_t>(b.views) * pixels, 0);
  for (int i = 0; i < b.views; ++i) {
    const auto& v = views[static_cast<std::size_t>(i)];
    for (std::size_t a = 0; a < v.active.size(); ++a) {
      const std::size_t j = static_cast<std::size_t>(v.active[a]);
      b.mask[static_cast<std::size_t>(i) * pixels + j] = 1;
      for (int c = 0; c < channels; ++c) {
        b.values[(static_cast<std::size_t>(i) * pixels + j) * channels + c] = v.residual[a * channels + c];
      }
    }
    b.active += static_cast<int>(v.active.size());
  }
  return b;
}

void check_featuremetric_inputs(std::span<const FeaturePyramid> pyramids, int level, std::span<const Pose> poses,
                                const DepthBasis& basis, const DepthWeights& w) {
  if (pyramids.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two views");
  if (poses.size() != pyramids.size()) throw Error(ErrorCode::kDimensionMismatch, "one pose per view is required");
  check_weights(basis.count(), w.size());
  for (const auto& p : pyramids) {
    if (level < 0 || level >= p.size()) throw Error(ErrorCode::kIndexOutOfRange, "pyramid level out of range");
    if (p.channels() != pyramids[0].channels()) throw Error(ErrorCode::kDimensionMismatch, "channel counts differ");
  }
}

std::vector<ViewSystemT<double>> featuremetric_views(std::span<const FeaturePyramid> pyramids, int level,
                                                     const Intrinsics& finest, std::span<const Pose> poses,
                                                     const DepthBasis& basis, const DepthWeights& w,
                                                     const PixelSet& pixels, bool jacobian) {
  check_featuremetric_inputs(pyramids, level, poses, basis, w);
  const Intrinsics kl = finest.at_level(level);
  const auto ref = sample_reference(pyramids[0][level], pixels);
  const auto columns = sample_basis_columns(basis, pixels);
  DepthInput<double> depth;
  depth.columns = columns;
  depth.weights = &w;
  depth.basis_count = basis.count();
  std::vector<ViewSystemT<double>> views(pyramids.size() - 1);
  for (std::size_t i = 1; i < pyramids.size(); ++i) {
    evaluate_view<double>(ref, pyramids[i][level], kl, poses[i], pixels, depth, jacobian, true, views[i - 1]);
  }
  return views;
}

}  // namespace

PixelSet make_pixel_set(const Intrinsics& finest, int finest_width, int finest_height, int level, int stride,
                        int basis_width, int basis_height) {
  if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "pixel stride must be >= 1");
  const int w = level_size(finest_width, level);
  const int h = level_size(finest_height, level);
  const Intrinsics k = finest.at_level(level);
  PixelSet set;
  set.level = level;
  for (int v = 0; v < h; v += stride) {
    for (int u = 0; u < w; u += stride) {
      PixelSample s;
      s.u = u;
      s.v = v;
      s.q = k.normalize(u, v);
      fill_basis_position(s, finest, finest_width, finest_height, basis_width, basis_height);
      set.samples.push_back(s);
    }
  }
  return set;
}

PixelSet pixel_set_from_normalized(const Intrinsics& k, std::span<const NormalizedPixel> pixels) {
  PixelSet set;
  set.samples.reserve(pixels.size());
  for (const auto& q : pixels) {
    PixelSample s;
    const Vec2 p = k.to_pixel(q);
    s.u = p.x();
    s.v = p.y();
    s.q = q;
    set.samples.push_back(s);
  }
  return set;
}

ResidualBlock geometric_residual(std::span<const Pose> poses, std::span<const Vec3> points,
                                 std::span<const Correspondence> correspondences) {
  ResidualBlock b;
  b.channels = 2;
  b.views = 1;
  b.pixels = static_cast<int>(correspondences.size());
  b.values.assign(correspondences.size() * 2, 0.0);
  b.mask.assign(correspondences.size(), 0);
  for (std::size_t n = 0; n < correspondences.size(); ++n) {
    const auto& c = correspondences[n];
    if (c.view < 0 || static_cast<std::size_t>(c.view) >= poses.size() || c.point < 0 ||
        static_cast<std::size_t>(c.point) >= points.size()) {
      throw Error(ErrorCode::kIndexOutOfRange, "correspondence references a missing view or point");
    }
    NormalizedPixel q;
    if (!try_project<double>(poses[static_cast<std::size_t>(c.view)], points[static_cast<std::size_t>(c.point)], q)) {
      continue;
    }
    b.mask[n] = 1;
    b.values[2 * n] = q.x - c.observed.x;
    b.values[2 * n + 1] = q.y - c.observed.y;
    ++b.active;
  }
  return b;
}

ResidualBlock photometric_residual(const FeatureGrid& reference, const FeatureGrid& target, const Intrinsics& k,
                                   const Pose& pose, std::span<const double> depths,
                                   std::span<const NormalizedPixel> pixels) {
  if (depths.size() != pixels.size()) throw Error(ErrorCode::kDimensionMismatch, "one depth per pixel is required");
  if (reference.channels() != target.channels()) throw Error(ErrorCode::kDimensionMismatch, "channel counts differ");
  for (double d : depths) {
    if (!(d >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "depths must be nonnegative");
  }
  const PixelSet set = pixel_set_from_normalized(k, pixels);
  const auto ref = sample_reference(reference, set);
  DepthInput<double> depth;
  depth.depths = depths;
  std::vector<ViewSystemT<double>> views(1);
  evaluate_view<double>(ref, target, k, pose, set, depth, false, false, views[0]);
  return block_from_views(views, target.channels(), static_cast<int>(set.size()));
}

ResidualBlock featuremetric_residual(std::span<const FeaturePyramid> pyramids, int level, const Intrinsics& finest,
                                     std::span<const Pose> poses, const DepthBasis& basis, const DepthWeights& w,
                                     const PixelSet& pixels) {
  const auto views = featuremetric_views(pyramids, level, finest, poses, basis, w, pixels, false);
  return block_from_views(views, pyramids[0].channels(), static_cast<int>(pixels.size()));
}

ResidualBlock featuremetric_residual(std::span<const FeaturePyramid> pyramids, int level, const Intrinsics& finest,
                                     std::span<const Pose> poses, const DepthBasis& basis, const DepthWeights& w,
                                     std::span<const NormalizedPixel> pixels) {
  if (pyramids.empty()) throw Error(ErrorCode::kInvalidArgument, "need at least two views");
  PixelSet set = pixel_set_from_normalized(finest.at_level(level), pixels);
  const auto& fine = pyramids[0][0];
  for (auto& s : set.samples) fill_basis_position(s, finest, fine.width(), fine.height(), basis.width(), basis.height());
  return featuremetric_residual(pyramids, level, finest, poses, basis, w, set);
}

JacobianBlocks featuremetric_jacobian(std::span<const FeaturePyramid> pyramids, int level, const Intrinsics& finest,
                                      std::span<const Pose> poses, const DepthBasis& basis, const DepthWeights& w,
                                      const PixelSet& pixels) {
  const auto views = featuremetric_views(pyramids, level, finest, poses, basis, w, pixels, true);
  JacobianBlocks out;
  out.channels = pyramids[0].channels();
  out.basis_count = basis.count();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    const auto rows = static_cast<Eigen::Index>(v.residual.size());
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(v.rows.data(), rows,
                                                                                                     v.cols);
    ViewJacobian vj;
    vj.view = static_cast<int>(i + 1);
    vj.pixels = v.active;
    vj.pose = m.leftCols(6);
    vj.weights = m.rightCols(v.cols - 6);
    vj.residual = Eigen::Map<const Eigen::VectorXd>(v.residual.data(), rows);
    out.views.push_back(std::move(vj));
  }
  return out;
}

}  // namespace fmba
