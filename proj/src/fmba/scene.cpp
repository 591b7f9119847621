#include "fmba/scene.hpp"

#include <Eigen/Geometry>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

namespace fmba {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Wave {
  double fx, fy, phase, amp;
};

double eval_waves(const std::vector<Wave>& waves, double x, double y) {
  double s = 0.0;
  for (const auto& w : waves) s += w.amp * std::cos(kTwoPi * (w.fx * x + w.fy * y) + w.phase);
  return s;
}

Wave random_wave(std::mt19937_64& rng, double fmin, double fmax, double amp) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double f = fmin + (fmax - fmin) * u01(rng);
  const double dir = kTwoPi * u01(rng);
  return {f * std::cos(dir), f * std::sin(dir), kTwoPi * u01(rng), amp};
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

Pose random_pose(std::mt19937_64& rng, double rotation_rad, double translation) {
  std::uniform_real_distribution<double> mag(0.5, 1.0);
  Pose p;
  p.rotation = Eigen::AngleAxisd(rotation_rad * mag(rng), random_unit(rng)).toRotationMatrix();
  p.translation = random_unit(rng) * (translation * mag(rng));
  return p;
}

std::vector<Wave> appearance_waves(std::mt19937_64& rng, double fmax, double contrast) {
  std::vector<Wave> waves;
  constexpr int kTerms = 12;
  double norm = 0.0;
  for (int m = 0; m < kTerms; ++m) {
    Wave w = random_wave(rng, 0.5, fmax, 1.0);
    w.amp = 1.0 / std::hypot(w.fx, w.fy);
    norm += 0.5 * w.amp * w.amp;
    waves.push_back(w);
  }
  for (auto& w : waves) w.amp *= contrast / std::sqrt(norm);
  return waves;
}

class DepthField {
 public:
  DepthField(const DepthBasis& basis, const DepthWeights& w, const Intrinsics& k, int width, int height)
      : basis_(basis), w_(w), k_(k), sx_(double(basis.width()) / width), sy_(double(basis.height()) / height),
        column_(static_cast<std::size_t>(basis.count())) {}

  double operator()(double x, double y) {
    const Vec2 p = k_.to_pixel(NormalizedPixel{x, y});
    const double bu = (p.x() + 0.5) * sx_ - 0.5;
    const double bv = (p.y() + 0.5) * sy_ - 0.5;
    return ad::relu(combination_at<double>(basis_, w_, bu, bv, column_.data()));
  }

 private:
  const DepthBasis& basis_;
  const DepthWeights& w_;
  Intrinsics k_;
  double sx_, sy_;
  std::vector<double> column_;
};

// Reference normalized coordinates whose surface point projects onto the
// target normalized position `target`.
bool invert_warp(DepthField& depth, const Pose& pose, const NormalizedPixel& target, double mean_depth,
                 NormalizedPixel& q) {
  const Vec3 guess = pose.rotation.transpose() * (Vec3(target.x, target.y, 1.0) * mean_depth - pose.translation);
  if (guess.z() <= kDepthEpsilon) return false;
  Vec2 x(guess.x() / guess.z(), guess.y() / guess.z());
  auto residual = [&](const Vec2& a, Vec2& r) {
    const double d = depth(a.x(), a.y());
    const Vec3 pc = pose.apply(Vec3(a.x(), a.y(), 1.0) * d);
    if (d <= kDepthEpsilon || pc.z() <= kDepthEpsilon) return false;
    r = Vec2(pc.x() / pc.z() - target.x, pc.y() / pc.z() - target.y);
    return true;
  };
  for (int it = 0; it < 40; ++it) {
    Vec2 r;
    if (!residual(x, r)) return false;
    if (r.norm() < 1e-13) break;
    Eigen::Matrix2d j;
    constexpr double h = 1e-7;
    for (int a = 0; a < 2; ++a) {
      Vec2 xp = x, xm = x, rp, rm;
      xp[a] += h;
      xm[a] -= h;
      if (!residual(xp, rp) || !residual(xm, rm)) return false;
      j.col(a) = (rp - rm) / (2.0 * h);
    }
    const Vec2 step = j.fullPivLu().solve(r);
    if (!step.allFinite()) return false;
    x -= step;
  }
  Vec2 r;
  if (!residual(x, r) || r.norm() > 1e-9) return false;
  q = {x.x(), x.y()};
  return true;
}

// Minimum-norm joint change of all images making the bilinear sample of
// every view at the ground-truth warp of each reference texel equal to that
// reference texel. The reference texels are unknowns too, which keeps the
// constraint rows independent even where a view sees the surface at a lower
// resolution than the reference.
bool is_identity(const Pose& p) { return p.rotation == Mat3::Identity() && p.translation.isZero(0.0); }

void enforce_consistency(std::vector<FeatureGrid>& images, const FeatureGrid& depth, const Intrinsics& k,
                         const std::vector<Pose>& poses) {
  const int w = depth.width();
  const int h = depth.height();
  const int c = images.front().channels();
  const int texels = w * h;
  std::vector<Eigen::Triplet<double>> triplets;
  int row = 0;
  for (std::size_t i = 1; i < images.size(); ++i) {
    if (is_identity(poses[i])) continue;
    const int offset = static_cast<int>(i) * texels;
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const double d = depth.at(u, v, 0);
        if (d <= kDepthEpsilon) continue;
        const NormalizedPixel q = k.normalize(u, v);
        const Vec3 pc = poses[i].apply(Vec3(q.x, q.y, 1.0) * d);
        if (pc.z() <= kDepthEpsilon) continue;
        const double x = pc.x() / pc.z() * k.fx + k.cx;
        const double y = pc.y() / pc.z() * k.fy + k.cy;
        if (!(x >= 0.0 && x <= w - 1 && y >= 0.0 && y <= h - 1)) continue;
        const int x0 = std::min(static_cast<int>(std::floor(x)), w - 2);
        const int y0 = std::min(static_cast<int>(std::floor(y)), h - 2);
        const double ax = x - x0;
        const double ay = y - y0;
        const double wt[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
        const int idx[4] = {y0 * w + x0, y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1};
        for (int n = 0; n < 4; ++n) {
          if (wt[n] != 0.0) triplets.emplace_back(row, offset + idx[n], wt[n]);
        }
        triplets.emplace_back(row, v * w + u, -1.0);
        ++row;
      }
    }
  }
  if (row == 0) return;
  const int unknowns = texels * static_cast<int>(images.size());
  Eigen::SparseMatrix<double> a(row, unknowns);
  a.setFromTriplets(triplets.begin(), triplets.end());
  const Eigen::SparseMatrix<double> aat = a * a.transpose();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(aat);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::kInfeasibleSpec, "consistency system is singular");

  Eigen::MatrixXd x(unknowns, c);
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (int t = 0; t < texels; ++t) {
      for (int ch = 0; ch < c; ++ch) x(static_cast<int>(i) * texels + t, ch) = images[i].data()[static_cast<std::size_t>(t) * c + ch];
    }
  }
  const Eigen::MatrixXd r = -(a * x);
  x += a.transpose() * ldlt.solve(r);
  // One refinement pass absorbs the round-off of the first solve.
  const Eigen::MatrixXd r2 = -(a * x);
  x += a.transpose() * ldlt.solve(r2);
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (int t = 0; t < texels; ++t) {
      for (int ch = 0; ch < c; ++ch) images[i].data()[static_cast<std::size_t>(t) * c + ch] = x(static_cast<int>(i) * texels + t, ch);
    }
  }
}

double view_covisibility(const FeatureGrid& depth, const Intrinsics& k, const Pose& pose) {
  const int w = depth.width();
  const int h = depth.height();
  int seen = 0;
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double d = depth.at(u, v, 0);
      if (d <= kDepthEpsilon) continue;
      const NormalizedPixel q = k.normalize(u, v);
      NormalizedPixel p;
      if (!try_project<double>(pose, Vec3(q.x, q.y, 1.0) * d, p)) continue;
      const Vec2 px = k.to_pixel(p);
      if (px.x() >= 0.0 && px.x() <= w - 1 && px.y() >= 0.0 && px.y() <= h - 1) ++seen;
    }
  }
  return static_cast<double>(seen) / (static_cast<double>(w) * h);
}

}  // namespace

const char* family_name(DepthFamily f) {
  switch (f) {
    case DepthFamily::kFrontoPlanar: return "fronto_planar";
    case DepthFamily::kSlantedPlane: return "slanted_plane";
    case DepthFamily::kSmoothRandom: return "smooth_random";
  }
  return "unknown";
}

DepthFamily parse_family(const std::string& name) {
  if (name == "fronto_planar") return DepthFamily::kFrontoPlanar;
  if (name == "slanted_plane") return DepthFamily::kSlantedPlane;
  if (name == "smooth_random") return DepthFamily::kSmoothRandom;
  throw Error(ErrorCode::kInvalidArgument, "unknown depth family '" + name + "'");
}

void SceneSpec::validate() const {
  if (width < 4 || height < 4) throw Error(ErrorCode::kInvalidArgument, "scene must be at least 4x4");
  if (views < 2 || views > 5) throw Error(ErrorCode::kInvalidArgument, "scenes have 2 to 5 views");
  if (!(mean_depth > 0.0)) throw Error(ErrorCode::kInvalidArgument, "mean depth must be positive");
  if (!(depth_variation >= 0.0 && depth_variation < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "depth variation must be in [0, 1)");
  }
  if (!(rotation_deg >= 0.0) || !(translation >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "pose magnitudes must be nonnegative");
  }
  if (!(intensity > 0.0)) throw Error(ErrorCode::kInvalidArgument, "intensity must be positive");
  if (!(noise >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise must be nonnegative");
  if (channels < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one channel");
  if (basis_count < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one basis map");
  if (!(focal_scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "focal scale must be positive");
}

DepthWeights prior_weights(int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "basis count must be at least 1");
  DepthWeights w = DepthWeights::Zero(k);
  w[0] = 1.0;
  return w;
}

SyntheticScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticScene s;
  s.spec = spec;
  const int w = spec.width;
  const int h = spec.height;
  const int k = spec.basis_count;
  s.intrinsics = {spec.focal_scale * w, spec.focal_scale * w, 0.5 * (w - 1), 0.5 * (h - 1)};

  // Prior basis: a constant map and smooth modulations of it.
  const int bw = std::max(2, w / 2);
  const int bh = std::max(2, h / 2);
  std::vector<Wave> shapes;
  for (int i = 1; i < k; ++i) shapes.push_back(random_wave(rng, 0.3, 1.2, 1.0));
  s.basis.maps = FeatureGrid(bw, bh, k);
  std::vector<NormalizedPixel> basis_q;
  for (int v = 0; v < bh; ++v) {
    for (int u = 0; u < bw; ++u) {
      const double u0 = (u + 0.5) * w / bw - 0.5;
      const double v0 = (v + 0.5) * h / bh - 0.5;
      const NormalizedPixel q = s.intrinsics.normalize(u0, v0);
      basis_q.push_back(q);
      s.basis.maps.at(u, v, 0) = spec.mean_depth;
      for (int i = 1; i < k; ++i) {
        s.basis.maps.at(u, v, i) = 0.5 * spec.mean_depth * eval_waves({shapes[i - 1]}, q.x, q.y);
      }
    }
  }
  // Zero-mean modulations keep the mean depth of every combination equal to
  // w_0 times the prior depth.
  for (int i = 1; i < k; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < s.basis.maps.texel_count(); ++j) mean += s.basis.maps.data()[j * k + i];
    mean /= static_cast<double>(s.basis.maps.texel_count());
    for (std::size_t j = 0; j < s.basis.maps.texel_count(); ++j) s.basis.maps.data()[j * k + i] -= mean;
  }

  s.w_gt = DepthWeights::Zero(k);
  std::uniform_real_distribution<double> u11(-1.0, 1.0);
  switch (spec.family) {
    case DepthFamily::kFrontoPlanar: s.w_gt[0] = 1.0; break;
    case DepthFamily::kSmoothRandom: {
      // depth = m (1 + sum a_i psi_i)  <=>  w = (1, 2 a_1, ..., 2 a_{K-1}).
      const double amp = k > 1 ? spec.depth_variation / std::sqrt(static_cast<double>(k - 1)) : 0.0;
      s.w_gt[0] = 1.0;
      for (int i = 1; i < k; ++i) s.w_gt[i] = 2.0 * amp * u11(rng);
      break;
    }
    case DepthFamily::kSlantedPlane: {
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      const double tilt = spec.plane_tilt_deg * std::numbers::pi / 180.0 * u01(rng);
      const double dir = kTwoPi * u01(rng);
      const Vec3 n(std::sin(tilt) * std::cos(dir), std::sin(tilt) * std::sin(dir), std::cos(tilt));
      Eigen::MatrixXd a(static_cast<Eigen::Index>(basis_q.size()), k);
      Eigen::VectorXd b(static_cast<Eigen::Index>(basis_q.size()));
      for (std::size_t j = 0; j < basis_q.size(); ++j) {
        for (int i = 0; i < k; ++i) a(static_cast<Eigen::Index>(j), i) = s.basis.maps.data()[j * k + i];
        b[static_cast<Eigen::Index>(j)] = n.z() / n.dot(Vec3(basis_q[j].x, basis_q[j].y, 1.0));
      }
      b *= spec.mean_depth / b.mean();
      s.w_gt = a.colPivHouseholderQr().solve(b);
      break;
    }
  }
  s.w0 = prior_weights(k);
  s.depth = depth_at_resolution(s.basis, s.w_gt, w, h);

  // Poses, resampled until every view shares half of the reference view.
  const double rot = spec.rotation_deg * std::numbers::pi / 180.0;
  s.poses.assign(1, Pose::identity());
  for (int i = 1; i < spec.views; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      const Pose p = random_pose(rng, rot, spec.translation);
      if (view_covisibility(s.depth, s.intrinsics, p) >= 0.5) {
        s.poses.push_back(p);
        ok = true;
      }
    }
    if (!ok) throw Error(ErrorCode::kInfeasibleSpec, "could not reach 50% co-visibility for view " + std::to_string(i));
  }

  // Appearance painted on the surface, parameterized by reference coordinates.
  std::vector<std::vector<Wave>> paint;
  std::vector<double> base;
  const double fmax = std::max(1.0, s.intrinsics.fx / 8.0);
  std::uniform_real_distribution<double> ub(0.4, 0.6);
  for (int ch = 0; ch < spec.channels; ++ch) {
    paint.push_back(appearance_waves(rng, fmax, 0.15 * spec.intensity));
    base.push_back(ub(rng) * spec.intensity);
  }
  auto paint_at = [&](double x, double y, double* out) {
    for (int ch = 0; ch < spec.channels; ++ch) out[ch] = base[ch] + eval_waves(paint[ch], x, y);
  };

  FeatureGrid ref(w, h, spec.channels);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const NormalizedPixel q = s.intrinsics.normalize(u, v);
      paint_at(q.x, q.y, ref.texel(u, v));
    }
  }
  s.images.push_back(std::move(ref));

  DepthField field(s.basis, s.w_gt, s.intrinsics, w, h);
  for (int i = 1; i < spec.views; ++i) {
    FeatureGrid img(w, h, spec.channels);
    const Pose& pose = s.poses[static_cast<std::size_t>(i)];
    NormalizedPixel last{0.0, 0.0};
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        NormalizedPixel q;
        if (invert_warp(field, pose, s.intrinsics.normalize(u, v), spec.mean_depth, q)) {
          last = q;
        } else {
          q = last;
        }
        paint_at(q.x, q.y, img.texel(u, v));
      }
    }
    s.images.push_back(std::move(img));
  }
  enforce_consistency(s.images, s.depth, s.intrinsics, s.poses);
  // A view that did not move is the reference image itself.
  for (int i = 1; i < spec.views; ++i) {
    if (is_identity(s.poses[static_cast<std::size_t>(i)])) s.images[static_cast<std::size_t>(i)] = s.images[0];
  }

  if (spec.noise > 0.0) {
    std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> n(0.0, spec.noise);
    for (auto& img : s.images) {
      for (auto& x : img.data()) x += n(noise_rng);
    }
  }
  return s;
}

double covisibility(const SyntheticScene& scene, int view) {
  if (view < 0 || view >= scene.views()) throw Error(ErrorCode::kIndexOutOfRange, "view out of range");
  return view_covisibility(scene.depth, scene.intrinsics, scene.poses[static_cast<std::size_t>(view)]);
}

SyntheticScene subset_views(const SyntheticScene& scene, int n) {
  if (n < 2 || n > scene.views()) throw Error(ErrorCode::kInvalidArgument, "view subset out of range");
  SyntheticScene out = scene;
  out.spec.views = n;
  out.poses.resize(static_cast<std::size_t>(n));
  out.images.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<FeaturePyramid> image_pyramids(const SyntheticScene& scene, int levels) {
  std::vector<FeaturePyramid> out;
  for (const auto& img : scene.images) out.push_back(build_pyramid(img, levels));
  return out;
}

void save_scene(const SyntheticScene& scene, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  for (int i = 0; i < scene.views(); ++i) {
    write_fgrid((fs::path(dir) / "images" / ("view_" + std::to_string(i) + ".fgrid")).string(),
                scene.images[static_cast<std::size_t>(i)]);
  }
  write_fgrid((fs::path(dir) / "depth.fgrid").string(), scene.depth);
  write_fgrid((fs::path(dir) / "basis.fgrid").string(), scene.basis.maps);
  write_poses((fs::path(dir) / "poses.txt").string(), scene.poses);
  {
    std::ofstream f(fs::path(dir) / "weights.txt");
    if (!f) throw Error(ErrorCode::kIo, "cannot write weights.txt in " + dir);
    f.precision(17);
    f << "# w_gt\n";
    for (Eigen::Index i = 0; i < scene.w_gt.size(); ++i) f << (i ? " " : "") << scene.w_gt[i];
    f << "\n# w0\n";
    for (Eigen::Index i = 0; i < scene.w0.size(); ++i) f << (i ? " " : "") << scene.w0[i];
    f << "\n";
  }
  const auto& sp = scene.spec;
  nlohmann::json j = {
      {"width", sp.width},
      {"height", sp.height},
      {"views", sp.views},
      {"family", family_name(sp.family)},
      {"mean_depth", sp.mean_depth},
      {"depth_variation", sp.depth_variation},
      {"plane_tilt_deg", sp.plane_tilt_deg},
      {"rotation_deg", sp.rotation_deg},
      {"translation", sp.translation},
      {"noise", sp.noise},
      {"intensity", sp.intensity},
      {"channels", sp.channels},
      {"basis_count", sp.basis_count},
      {"focal_scale", sp.focal_scale},
      {"seed", sp.seed},
      {"intrinsics", {scene.intrinsics.fx, scene.intrinsics.fy, scene.intrinsics.cx, scene.intrinsics.cy}},
  };
  std::ofstream f(fs::path(dir) / "scene.json");
  if (!f) throw Error(ErrorCode::kIo, "cannot write scene.json in " + dir);
  f << j.dump(2) << "\n";
}

SyntheticScene load_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream jf(fs::path(dir) / "scene.json");
  if (!jf) throw Error(ErrorCode::kIo, "cannot read scene.json in " + dir);
  nlohmann::json j;
  try {
    jf >> j;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kIo, std::string("malformed scene.json: ") + e.what());
  }
  SyntheticScene s;
  auto& sp = s.spec;
  sp.width = j.at("width");
  sp.height = j.at("height");
  sp.views = j.at("views");
  sp.family = parse_family(j.at("family"));
  sp.mean_depth = j.at("mean_depth");
  sp.depth_variation = j.at("depth_variation");
  sp.plane_tilt_deg = j.at("plane_tilt_deg");
  sp.rotation_deg = j.at("rotation_deg");
  sp.translation = j.at("translation");
  sp.noise = j.at("noise");
  sp.intensity = j.value("intensity", sp.intensity);
  sp.channels = j.at("channels");
  sp.basis_count = j.at("basis_count");
  sp.focal_scale = j.at("focal_scale");
  sp.seed = j.at("seed");
  const auto& in = j.at("intrinsics");
  s.intrinsics = {in.at(0), in.at(1), in.at(2), in.at(3)};
  for (int i = 0; i < sp.views; ++i) {
    s.images.push_back(read_fgrid((fs::path(dir) / "images" / ("view_" + std::to_string(i) + ".fgrid")).string()));
  }
  s.depth = read_fgrid((fs::path(dir) / "depth.fgrid").string());
  s.basis.maps = read_fgrid((fs::path(dir) / "basis.fgrid").string());
  s.poses = read_poses((fs::path(dir) / "poses.txt").string());
  std::ifstream wf(fs::path(dir) / "weights.txt");
  if (!wf) throw Error(ErrorCode::kIo, "cannot read weights.txt in " + dir);
  std::vector<std::vector<double>> rows;
  for (std::string line; std::getline(wf, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    rows.emplace_back();
    for (double x; is >> x;) rows.back().push_back(x);
  }
  if (rows.size() != 2) throw Error(ErrorCode::kIo, "weights.txt must hold two weight rows");
  s.w_gt = Eigen::Map<const Eigen::VectorXd>(rows[0].data(), static_cast<Eigen::Index>(rows[0].size()));
  s.w0 = Eigen::Map<const Eigen::VectorXd>(rows[1].data(), static_cast<Eigen::Index>(rows[1].size()));
  if (static_cast<int>(s.poses.size()) != sp.views) throw Error(ErrorCode::kIo, "pose count does not match views");
  check_weights(s.basis.count(), s.w_gt.size());
  check_weights(s.basis.count(), s.w0.size());
  return s;
}

}  // namespace fmba
