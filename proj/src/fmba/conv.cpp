#include "fmba/conv.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace fmba {

namespace {

void check_shapes(int in_channels, Eigen::Index rows, Eigen::Index cols, Eigen::Index bias, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "convolution kernel must be odd");
  if (cols != static_cast<Eigen::Index>(kernel) * kernel * in_channels || bias != rows) {
    throw Error(ErrorCode::kDimensionMismatch,
                "convolution weights are " + std::to_string(rows) + "x" + std::to_string(cols) + " for " +
                    std::to_string(in_channels) + " input channels and kernel " + std::to_string(kernel));
  }
}

/// Gathers the replicate-padded patch around every texel into one row of a
/// (W*H) x (k*k*in) matrix.
Eigen::MatrixXd im2col(const FeatureGrid& g, int kernel) {
  const int r = kernel / 2;
  const int c = g.channels();
  Eigen::MatrixXd cols(static_cast<Eigen::Index>(g.texel_count()), kernel * kernel * c);
  Eigen::Index row = 0;
  for (int v = 0; v < g.height(); ++v) {
    for (int u = 0; u < g.width(); ++u, ++row) {
      int tap = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int y = std::clamp(v + dy, 0, g.height() - 1);
        for (int dx = -r; dx <= r; ++dx, ++tap) {
          const int x = std::clamp(u + dx, 0, g.width() - 1);
          const double* t = g.texel(x, y);
          for (int ch = 0; ch < c; ++ch) cols(row, tap * c + ch) = t[ch];
        }
      }
    }
  }
  return cols;
}

FeatureGrid from_rows(const Eigen::MatrixXd& out, int width, int height) {
  FeatureGrid g(width, height, static_cast<int>(out.cols()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(g.data().data(), out.rows(),
                                                                                     out.cols()) = out;
  return g;
}

}  // namespace

FeatureGrid conv2d(const FeatureGrid& input, const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias, int kernel) {
  check_shapes(input.channels(), weights.rows(), weights.cols(), bias.size(), kernel);
  Eigen::MatrixXd out = im2col(input, kernel) * weights.transpose();
  out.rowwise() += bias.transpose();
  return from_rows(out, input.width(), input.height());
}

GridT<ad::Var> conv2d(const GridT<ad::Var>& input, const ad::VarMatrix& weights, const ad::VarVector& bias,
                      int kernel) {
  check_shapes(input.channels(), weights.rows(), weights.cols(), bias.size(), kernel);
  const FeatureGrid in = grid_value(input);
  const Eigen::MatrixXd w = ad::values(weights);
  const Eigen::MatrixXd patches = im2col(in, kernel);
  Eigen::MatrixXd out = patches * w.transpose();
  out.rowwise() += ad::values(bias).transpose();

  const int width = input.width();
  const int height = input.height();
  const int out_channels = static_cast<int>(w.rows());
  GridT<ad::Var> result(width, height, out_channels);
  const std::size_t n_out = result.data().size();

  ad::Tape* tape = ad::find_tape(input.data());
  if (tape == nullptr) tape = ad::find_tape(std::span<const ad::Var>(weights.data(), static_cast<std::size_t>(weights.size())));
  if (tape == nullptr) tape = ad::find_tape(std::span<const ad::Var>(bias.data(), static_cast<std::size_t>(bias.size())));
  if (tape == nullptr) {
    for (std::size_t i = 0; i < n_out; ++i) {
      result.data()[i] = ad::Var(out(static_cast<Eigen::Index>(i) / out_channels, static_cast<Eigen::Index>(i) % out_channels));
    }
    return result;
  }

  std::vector<std::int32_t> in_ids(input.data().size());
  bool input_tracked = false;
  for (std::size_t i = 0; i < in_ids.size(); ++i) {
    in_ids[i] = input.data()[i].id;
    input_tracked = input_tracked || in_ids[i] >= 0;
  }
  std::vector<std::int32_t> w_ids(static_cast<std::size_t>(weights.size()));
  for (Eigen::Index i = 0; i < weights.size(); ++i) w_ids[static_cast<std::size_t>(i)] = weights.data()[i].id;
  std::vector<std::int32_t> b_ids(static_cast<std::size_t>(bias.size()));
  for (Eigen::Index i = 0; i < bias.size(); ++i) b_ids[static_cast<std::size_t>(i)] = bias.data()[i].id;

  const int in_channels = input.channels();
  const auto first = tape->custom(
      static_cast<std::int32_t>(n_out),
      [=, in_ids = std::move(in_ids), w_ids = std::move(w_ids), b_ids = std::move(b_ids)](ad::Adjoints& adj,
                                                                                         std::int32_t first) {
        const Eigen::Index texels = patches.rows();
        Eigen::MatrixXd gy(texels, out_channels);
        for (Eigen::Index t = 0; t < texels; ++t) {
          for (int o = 0; o < out_channels; ++o) gy(t, o) = adj[first + static_cast<std::int32_t>(t * out_channels + o)];
        }
        if (gy.isZero(0.0)) return;
        const Eigen::MatrixXd gw = gy.transpose() * patches;  // out x taps, column-major like `weights`
        for (Eigen::Index i = 0; i < gw.size(); ++i) adj.add(w_ids[static_cast<std::size_t>(i)], gw.data()[i]);
        const Eigen::VectorXd gb = gy.colwise().sum().transpose();
        for (Eigen::Index o = 0; o < gb.size(); ++o) adj.add(b_ids[static_cast<std::size_t>(o)], gb[o]);
        if (!input_tracked) return;
        const Eigen::MatrixXd gp = gy * w;  // texels x taps
        const int r = kernel / 2;
        Eigen::Index row = 0;
        for (int v = 0; v < height; ++v) {
          for (int u = 0; u < width; ++u, ++row) {
            int tap = 0;
            for (int dy = -r; dy <= r; ++dy) {
              const int y = std::clamp(v + dy, 0, height - 1);
              for (int dx = -r; dx <= r; ++dx, ++tap) {
                const int x = std::clamp(u + dx, 0, width - 1);
                const std::size_t base = (static_cast<std::size_t>(y) * width + x) * in_channels;
                for (int ch = 0; ch < in_channels; ++ch) adj.add(in_ids[base + ch], gp(row, tap * in_channels + ch));
              }
            }
          }
        }
      });
  for (std::size_t i = 0; i < n_out; ++i) {
    const double v = out(static_cast<Eigen::Index>(i) / out_channels, static_cast<Eigen::Index>(i) % out_channels);
    result.data()[i] = ad::Var(v, first + static_cast<std::int32_t>(i), tape);
  }
  return result;
}

}  // namespace fmba
