#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fmba/ad.hpp"
#include "fmba/errors.hpp"

namespace fmba {

/// Row-major H x W x C grid, channel-interleaved. Texel centers sit at
/// integer raster positions.
template <typename T>
class GridT {
 public:
  GridT() = default;
  GridT(int width, int height, int channels, T fill = T(0))
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 1 || height < 1 || channels < 1) {
      throw Error(ErrorCode::kInvalidArgument, "grid dimensions must be positive");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t texel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  std::size_t offset(int u, int v) const {
    return (static_cast<std::size_t>(v) * width_ + u) * channels_;
  }
  T& at(int u, int v, int c) { return data_[offset(u, v) + c]; }
  const T& at(int u, int v, int c) const { return data_[offset(u, v) + c]; }
  const T* texel(int u, int v) const { return data_.data() + offset(u, v); }
  T* texel(int u, int v) { return data_.data() + offset(u, v); }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  /// Single-channel view of channel c.
  GridT channel(int c) const {
    GridT out(width_, height_, 1);
    for (std::size_t i = 0; i < texel_count(); ++i) out.data_[i] = data_[i * channels_ + c];
    return out;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

using FeatureGrid = GridT<double>;

/// Levels ordered finest first; each level halves the previous one.
template <typename T>
struct PyramidT {
  std::vector<GridT<T>> levels;

  int size() const { return static_cast<int>(levels.size()); }
  int channels() const { return levels.empty() ? 0 : levels.front().channels(); }
  const GridT<T>& operator[](int l) const { return levels[static_cast<std::size_t>(l)]; }
};
using FeaturePyramid = PyramidT<double>;

/// Throws unless the grid is at least 2x2 with finite entries.
void validate_grid(const FeatureGrid& g);

namespace detail {

struct Cell {
  int x0, y0;
  int x1, y1;
  bool clamped_x, clamped_y;
};

/// Positions closer than this to a texel center choose their cell as if they
/// sat exactly on it, so round-off cannot flip the one-sided gradient there.
inline constexpr double kCenterSnap = 1e-9;

inline void locate(double pos, int size, int& i0, int& i1, bool& clamped) {
  if (const double r = std::round(pos); std::abs(pos - r) < kCenterSnap) pos = r;
  clamped = !(pos >= 0.0 && pos <= size - 1);
  if (size == 1) {
    i0 = i1 = 0;
    clamped = true;
    return;
  }
  const double p = std::clamp(pos, 0.0, static_cast<double>(size - 1));
  i0 = std::min(static_cast<int>(std::floor(p)), size - 2);
  i1 = i0 + 1;
}

}  // namespace detail

/// Bilinear sample of all channels at continuous raster position (u, v).
/// Positions outside the grid are clamped to the border.
template <typename G, typename P, typename R = decltype(std::declval<G>() * std::declval<P>())>
void sample_bilinear(const GridT<G>& grid, const P& u, const P& v, R* out) {
  int x0, x1, y0, y1;
  bool cx, cy;
  detail::locate(ad::value(u), grid.width(), x0, x1, cx);
  detail::locate(ad::value(v), grid.height(), y0, y1, cy);
  const P fx = cx ? P(std::clamp(ad::value(u), 0.0, double(grid.width() - 1)) - x0) : P(u - double(x0));
  const P fy = cy ? P(std::clamp(ad::value(v), 0.0, double(grid.height() - 1)) - y0) : P(v - double(y0));
  const P w00 = (P(1.0) - fx) * (P(1.0) - fy);
  const P w10 = fx * (P(1.0) - fy);
  const P w01 = (P(1.0) - fx) * fy;
  const P w11 = fx * fy;
  const G* t00 = grid.texel(x0, y0);
  const G* t10 = grid.texel(x1, y0);
  const G* t01 = grid.texel(x0, y1);
  const G* t11 = grid.texel(x1, y1);
  for (int c = 0; c < grid.channels(); ++c) {
    out[c] = t00[c] * w00 + t10[c] * w10 + t01[c] * w01 + t11[c] * w11;
  }
}

/// Bilinear sample plus its derivative with respect to (u, v). The
/// derivative is zero along any direction in which the position was clamped.
template <typename G, typename P, typename R = decltype(std::declval<G>() * std::declval<P>())>
void sample_bilinear_grad(const GridT<G>& grid, const P& u, const P& v, R* value, R* du, R* dv) {
  int x0, x1, y0, y1;
  bool cx, cy;
  detail::locate(ad::value(u), grid.width(), x0, x1, cx);
  detail::locate(ad::value(v), grid.height(), y0, y1, cy);
  const P fx = cx ? P(std::clamp(ad::value(u), 0.0, double(grid.width() - 1)) - x0) : P(u - double(x0));
  const P fy = cy ? P(std::clamp(ad::value(v), 0.0, double(grid.height() - 1)) - y0) : P(v - double(y0));
  const P gx = P(1.0) - fx;
  const P gy = P(1.0) - fy;
  const G* t00 = grid.texel(x0, y0);
  const G* t10 = grid.texel(x1, y0);
  const G* t01 = grid.texel(x0, y1);
  const G* t11 = grid.texel(x1, y1);
  for (int c = 0; c < grid.channels(); ++c) {
    const R top = t00[c] * gx + t10[c] * fx;
    const R bottom = t01[c] * gx + t11[c] * fx;
    value[c] = top * gy + bottom * fy;
    du[c] = cx ? R(0.0) : R((t10[c] - t00[c]) * gy + (t11[c] - t01[c]) * fy);
    dv[c] = cy ? R(0.0) : R(bottom - top);
  }
}

Eigen::VectorXd sample_bilinear(const FeatureGrid& grid, double u, double v);

struct GridSample {
  Eigen::VectorXd value;
  Eigen::MatrixXd gradient;  // C x 2, columns d/du and d/dv
};
GridSample sample_bilinear_grad(const FeatureGrid& grid, double u, double v);

/// 2x2 box-filter downsample (floor of odd dimensions).
template <typename T>
GridT<T> downsample(const GridT<T>& g) {
  const int w = std::max(1, g.width() / 2);
  const int h = std::max(1, g.height() / 2);
  GridT<T> out(w, h, g.channels());
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const int u0 = std::min(2 * u, g.width() - 1), u1 = std::min(2 * u + 1, g.width() - 1);
      const int v0 = std::min(2 * v, g.height() - 1), v1 = std::min(2 * v + 1, g.height() - 1);
      for (int c = 0; c < g.channels(); ++c) {
        out.at(u, v, c) = (g.at(u0, v0, c) + g.at(u1, v0, c) + g.at(u0, v1, c) + g.at(u1, v1, c)) * 0.25;
      }
    }
  }
  return out;
}

/// Throws TooManyLevels unless levels >= 1 and 2^(levels-1) <= min(w, h).
void check_pyramid_levels(int width, int height, int levels);

template <typename T>
PyramidT<T> build_pyramid(const GridT<T>& grid, int levels) {
  check_pyramid_levels(grid.width(), grid.height(), levels);
  PyramidT<T> p;
  p.levels.reserve(static_cast<std::size_t>(levels));
  p.levels.push_back(grid);
  for (int l = 1; l < levels; ++l) p.levels.push_back(downsample(p.levels.back()));
  return p;
}

/// Interior texels strictly smaller than all eight neighbours.
int count_local_minima(const FeatureGrid& distance_map);

/// Little-endian `u32 width, u32 height, u32 channels` then f32 texels.
void write_fgrid(const std::string& path, const FeatureGrid& g);
FeatureGrid read_fgrid(const std::string& path);
std::vector<unsigned char> encode_fgrid(const FeatureGrid& g);
FeatureGrid decode_fgrid(const std::vector<unsigned char>& bytes);

template <typename T>
FeatureGrid grid_value(const GridT<T>& g) {
  FeatureGrid out(g.width(), g.height(), g.channels());
  for (std::size_t i = 0; i < g.data().size(); ++i) out.data()[i] = ad::value(g.data()[i]);
  return out;
}

template <typename T>
GridT<T> grid_cast(const FeatureGrid& g) {
  GridT<T> out(g.width(), g.height(), g.channels());
  for (std::size_t i = 0; i < g.data().size(); ++i) out.data()[i] = T(g.data()[i]);
  return out;
}

}  // namespace fmba
