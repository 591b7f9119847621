#include "fmba/feature_grid.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fmba {

void validate_grid(const FeatureGrid& g) {
  if (g.width() < 2 || g.height() < 2) throw Error(ErrorCode::kInvalidArgument, "grid must be at least 2x2");
  for (double x : g.data()) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kInvalidArgument, "grid contains non-finite values");
  }
}

Eigen::VectorXd sample_bilinear(const FeatureGrid& grid, double u, double v) {
  Eigen::VectorXd out(grid.channels());
  sample_bilinear(grid, u, v, out.data());
  return out;
}

GridSample sample_bilinear_grad(const FeatureGrid& grid, double u, double v) {
  GridSample s;
  s.value.resize(grid.channels());
  s.gradient.resize(grid.channels(), 2);
  Eigen::VectorXd du(grid.channels()), dv(grid.channels());
  sample_bilinear_grad(grid, u, v, s.value.data(), du.data(), dv.data());
  s.gradient.col(0) = du;
  s.gradient.col(1) = dv;
  return s;
}

void check_pyramid_levels(int width, int height, int levels) {
  if (levels < 1) throw Error(ErrorCode::kTooManyLevels, "pyramid needs at least one level");
  if (levels > 30 || (1LL << (levels - 1)) > std::min(width, height)) {
    throw Error(ErrorCode::kTooManyLevels, "too many pyramid levels for a " + std::to_string(width) + "x" +
                                               std::to_string(height) + " grid");
  }
}

int count_local_minima(const FeatureGrid& distance_map) {
  if (distance_map.channels() != 1) {
    throw Error(ErrorCode::kDimensionMismatch, "local minima are counted on single-channel maps");
  }
  int count = 0;
  for (int v = 1; v + 1 < distance_map.height(); ++v) {
    for (int u = 1; u + 1 < distance_map.width(); ++u) {
      const double c = distance_map.at(u, v, 0);
      bool minimum = true;
      for (int dv = -1; dv <= 1 && minimum; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          if ((du != 0 || dv != 0) && !(c < distance_map.at(u + du, v + dv, 0))) {
            minimum = false;
            break;
          }
        }
      }
      if (minimum) ++count;
    }
  }
  return count;
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

}  // namespace

std::vector<unsigned char> encode_fgrid(const FeatureGrid& g) {
  std::vector<unsigned char> out;
  out.reserve(12 + 4 * g.data().size());
  put_u32(out, static_cast<std::uint32_t>(g.width()));
  put_u32(out, static_cast<std::uint32_t>(g.height()));
  put_u32(out, static_cast<std::uint32_t>(g.channels()));
  for (double x : g.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  return out;
}

FeatureGrid decode_fgrid(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 12) throw Error(ErrorCode::kIo, "fgrid header truncated");
  const std::uint32_t w = get_u32(bytes.data());
  const std::uint32_t h = get_u32(bytes.data() + 4);
  const std::uint32_t c = get_u32(bytes.data() + 8);
  if (w == 0 || h == 0 || c == 0 || w > (1u << 16) || h > (1u << 16) || c > (1u << 16)) {
    throw Error(ErrorCode::kIo, "fgrid header has invalid dimensions");
  }
  const std::size_t n = std::size_t(w) * h * c;
  if (bytes.size() != 12 + 4 * n) throw Error(ErrorCode::kIo, "fgrid payload size does not match header");
  FeatureGrid g(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  for (std::size_t i = 0; i < n; ++i) {
    g.data()[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes.data() + 12 + 4 * i)));
  }
  return g;
}

void write_fgrid(const std::string& path, const FeatureGrid& g) {
  const auto bytes = encode_fgrid(g);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

FeatureGrid read_fgrid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_fgrid(bytes);
}

}  // namespace fmba
