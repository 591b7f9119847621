#include "fmba/learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include "fmba/conv.hpp"
#include "fmba/solver_impl.hpp"

namespace fmba {

using ad::Var;

namespace {

constexpr int kFeatureKernel = 3;
constexpr int kGroupCount = 15;  // tensors visited by for_each_tensor

template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  for (std::size_t l = 0; l < 4; ++l) {
    f(p.mlp.weights[l]);
    f(p.mlp.biases[l]);
  }
  for (auto& c : p.features) {
    f(c.weights);
    f(c.bias);
  }
  f(p.basis.weights);
  f(p.basis.bias);
  f(p.w0);
}

constexpr std::array<unsigned, kGroupCount> kTensorGroups = {
    kGroupMlp,      kGroupMlp,      kGroupMlp,      kGroupMlp,   kGroupMlp,   kGroupMlp, kGroupMlp, kGroupMlp,
    kGroupFeatures, kGroupFeatures, kGroupFeatures, kGroupFeatures, kGroupBasis, kGroupBasis, kGroupW0};

template <typename T>
TrainableParamsT<T> cast_params(const TrainableParams& p, ad::Tape* tape) {
  TrainableParamsT<T> out;
  out.mlp.weights = {};
  const auto& src = static_cast<const TrainableParamsT<double>&>(p);
  // Copy shapes and kernels first, then overwrite every entry.
  for (std::size_t l = 0; l < 4; ++l) {
    out.mlp.weights[l].resize(src.mlp.weights[l].rows(), src.mlp.weights[l].cols());
    out.mlp.biases[l].resize(src.mlp.biases[l].size());
  }
  for (std::size_t i = 0; i < 2; ++i) {
    out.features[i].kernel = src.features[i].kernel;
    out.features[i].weights.resize(src.features[i].weights.rows(), src.features[i].weights.cols());
    out.features[i].bias.resize(src.features[i].bias.size());
  }
  out.basis.kernel = src.basis.kernel;
  out.basis.weights.resize(src.basis.weights.rows(), src.basis.weights.cols());
  out.basis.bias.resize(src.basis.bias.size());
  out.w0.resize(src.w0.size());

  std::vector<const double*> from;
  std::vector<Eigen::Index> sizes;
  for_each_tensor(src, [&](const auto& t) {
    from.push_back(t.data());
    sizes.push_back(t.size());
  });
  std::size_t k = 0;
  for_each_tensor(out, [&](auto& t) {
    for (Eigen::Index i = 0; i < sizes[k]; ++i) {
      if constexpr (ad::is_var_v<T>) {
        t.data()[i] = tape != nullptr ? tape->variable(from[k][i]) : Var(from[k][i]);
      } else {
        t.data()[i] = from[k][i];
      }
    }
    ++k;
  });
  return out;
}

template <typename T>
PyramidT<T> features_of(const TrainableParamsT<T>& p, const FeatureGrid& image, int levels) {
  const FeaturePyramid raw = build_pyramid(image, levels);
  PyramidT<T> out;
  for (const auto& level : raw.levels) {
    GridT<T> g = grid_cast<T>(level);
    g = relu(conv2d(g, p.features[0].weights, p.features[0].bias, p.features[0].kernel));
    out.levels.push_back(conv2d(g, p.features[1].weights, p.features[1].bias, p.features[1].kernel));
  }
  return out;
}

template <typename T>
DepthBasisT<T> basis_of(const TrainableParamsT<T>& p, const DepthBasis& prior, const FeatureGrid& image) {
  const FeatureGrid half = downsample(image);
  if (half.width() != prior.width() || half.height() != prior.height()) {
    throw Error(ErrorCode::kDimensionMismatch, "the prior basis must be at half the image resolution");
  }
  const int k = prior.count();
  const int r = half.channels();
  GridT<T> input(half.width(), half.height(), k + r);
  for (std::size_t t = 0; t < half.texel_count(); ++t) {
    for (int c = 0; c < k; ++c) input.data()[t * (k + r) + c] = T(prior.maps.data()[t * k + c]);
    for (int c = 0; c < r; ++c) input.data()[t * (k + r) + k + c] = T(half.data()[t * r + c]);
  }
  return {conv2d(input, p.basis.weights, p.basis.bias, p.basis.kernel)};
}

template <typename T>
struct ModelRun {
  std::vector<PyramidT<T>> pyramids;
  DepthBasisT<T> basis;
  detail::RunOutput<T> run;
};

template <typename T>
ModelRun<T> run_model(const TrainableParamsT<T>& p, const SyntheticScene& scene, const SolverConfig& config) {
  config.validate();
  if (scene.views() < 2) throw Error(ErrorCode::kInvalidArgument, "bundle adjustment needs at least two views");
  ModelRun<T> m;
  for (const auto& img : scene.images) m.pyramids.push_back(features_of(p, img, config.levels));
  m.basis = basis_of(p, scene.basis, scene.images.front());
  detail::ProblemT<T> problem;
  for (const auto& py : m.pyramids) problem.pyramids.push_back(&py);
  problem.intrinsics = scene.intrinsics;
  problem.basis = &m.basis;
  problem.w0 = p.w0;
  m.run = detail::run_fixed<T>(problem, config, &p.mlp);
  return m;
}

template <typename T>
T rotation_loss_t(const Mat3T<T>& r, const Mat3& gt) {
  using std::sqrt;
  using ad::sqrt;
  const auto q = quaternion_from_rotation<T>(r);
  const auto g = quaternion_from_rotation<double>(gt);
  T s = ad::square(q[0] - g[0]);
  for (int i = 1; i < 4; ++i) s += ad::square(q[i] - g[i]);
  return sqrt(s);
}

template <typename T>
T translation_loss_t(const Vec3T<T>& t, const Vec3& gt) {
  using std::sqrt;
  using ad::sqrt;
  T s = ad::square(t[0] - gt[0]);
  for (int i = 1; i < 3; ++i) s += ad::square(t[i] - gt[i]);
  return sqrt(s);
}

template <typename T>
T berhu_t(std::span<const T> pred, const FeatureGrid& gt, const std::vector<std::uint8_t>& mask) {
  using std::abs;
  using ad::abs;
  const std::size_t n = gt.texel_count();
  if (pred.size() != n || gt.channels() != 1) throw Error(ErrorCode::kDimensionMismatch, "depth maps differ in size");
  if (!mask.empty() && mask.size() != n) throw Error(ErrorCode::kDimensionMismatch, "mask size differs from depth");
  std::vector<T> err;
  for (std::size_t i = 0; i < n; ++i) {
    const bool on = mask.empty() ? gt.data()[i] > 0.0 : mask[i] != 0;
    if (on) err.push_back(abs(pred[i] - gt.data()[i]));
  }
  if (err.empty()) throw Error(ErrorCode::kEmptyMask, "no valid depth pixels");
  T top = err.front();
  for (const auto& e : err) top = ad::max_of(top, e);
  const T c = top * 0.2;
  T sum(0.0);
  if (!(ad::value(c) > 0.0)) return sum;
  for (const auto& e : err) sum += e <= c ? e : (ad::square(e) + ad::square(c)) / (c * 2.0);
  return sum / static_cast<double>(err.size());
}

template <typename T>
struct LossTerms {
  T rotation{0.0};
  T translation{0.0};
  T depth{0.0};
  T total{0.0};
};

template <typename T>
LossTerms<T> loss_terms(const std::vector<PoseT<T>>& poses, std::span<const T> depth, const SyntheticScene& scene,
                        const LossWeights& w) {
  if (poses.size() != scene.poses.size()) throw Error(ErrorCode::kLengthMismatch, "pose lists differ in length");
  LossTerms<T> l;
  const double views = static_cast<double>(poses.size() - 1);
  for (std::size_t i = 1; i < poses.size(); ++i) {
    l.rotation += rotation_loss_t<T>(poses[i].rotation, scene.poses[i].rotation);
    l.translation += translation_loss_t<T>(poses[i].translation, scene.poses[i].translation);
  }
  l.rotation = l.rotation / views;
  l.translation = l.translation / views;
  l.depth = berhu_t<T>(depth, scene.depth, {});
  l.total = l.rotation * w.rotation + l.translation * w.translation + l.depth * w.depth;
  return l;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(x >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return x;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  void expect(const char* magic, std::size_t n) {
    need(n);
    if (std::memcmp(b_.data() + pos_, magic, n) != 0) throw Error(ErrorCode::kIo, "not a checkpoint file");
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw Error(ErrorCode::kIo, "truncated checkpoint");
  }
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'F', 'M', 'B', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

struct TapeRecord {
  ad::Tape tape;
  std::size_t parameter_count = 0;  // leaves occupy ids [0, parameter_count)
  std::vector<PoseT<Var>> poses;
  VectorT<Var> w;
  GridT<Var> depth;
};

void ModelShape::validate() const {
  if (raw_channels < 1 || feature_channels < 1 || basis_count < 1) {
    throw Error(ErrorCode::kInvalidArgument, "model channel and basis counts must be positive");
  }
}

ModelShape TrainableParams::shape() const {
  ModelShape s;
  s.raw_channels = static_cast<int>(features[0].weights.cols() / (features[0].kernel * features[0].kernel));
  s.feature_channels = static_cast<int>(features[1].weights.rows());
  s.basis_count = static_cast<int>(w0.size());
  return s;
}

std::size_t TrainableParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

std::vector<double> TrainableParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for_each_tensor(*this, [&](const auto& t) { out.insert(out.end(), t.data(), t.data() + t.size()); });
  return out;
}

void TrainableParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "flat parameter vector has " + std::to_string(flat.size()) +
                                                   " entries, expected " + std::to_string(parameter_count()));
  }
  std::size_t k = 0;
  for_each_tensor(*this, [&](auto& t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), t.size(), t.data());
    k += static_cast<std::size_t>(t.size());
  });
}

void TrainableParams::validate() const {
  const int kk = features[0].kernel;
  if (kk < 1 || kk % 2 == 0 || features[1].kernel != kk || basis.kernel != 1) {
    throw Error(ErrorCode::kDimensionMismatch, "unexpected generator kernel sizes");
  }
  const ModelShape s = shape();
  s.validate();
  const int r = s.raw_channels, c = s.feature_channels, k = s.basis_count;
  const auto check = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::kDimensionMismatch, what);
  };
  check(features[0].weights.rows() == c && features[0].weights.cols() == kk * kk * r && features[0].bias.size() == c,
        "first feature layer has inconsistent shape");
  check(features[1].weights.cols() == kk * kk * c && features[1].bias.size() == c,
        "second feature layer has inconsistent shape");
  check(basis.weights.rows() == k && basis.weights.cols() == k + r && basis.bias.size() == k,
        "basis generator has inconsistent shape");
  check(mlp.input_dim() == c, "damping MLP input must match the feature channel count");
  const int h = DampingMLP::kHidden;
  check(mlp.weights[0].rows() == h && mlp.weights[1].rows() == h && mlp.weights[1].cols() == h &&
            mlp.weights[2].rows() == h && mlp.weights[2].cols() == h && mlp.weights[3].rows() == 1 &&
            mlp.weights[3].cols() == h,
        "damping MLP has inconsistent layer sizes");
  for (std::size_t l = 0; l < 4; ++l) check(mlp.biases[l].size() == mlp.weights[l].rows(), "MLP bias size");
  for (double v : flatten()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "parameters must be finite");
  }
}

unsigned parse_groups(const std::string& list) {
  unsigned g = 0;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "mlp") g |= kGroupMlp;
    else if (item == "features") g |= kGroupFeatures;
    else if (item == "basis") g |= kGroupBasis;
    else if (item == "w0") g |= kGroupW0;
    else if (item == "all") g |= kGroupAll;
    else throw Error(ErrorCode::kInvalidArgument, "unknown parameter group '" + item + "'");
  }
  if (g == 0) throw Error(ErrorCode::kInvalidArgument, "no parameter group selected");
  return g;
}

std::string groups_name(unsigned groups) {
  std::string out;
  const std::pair<unsigned, const char*> names[] = {
      {kGroupMlp, "mlp"}, {kGroupFeatures, "features"}, {kGroupBasis, "basis"}, {kGroupW0, "w0"}};
  for (const auto& [bit, name] : names) {
    if ((groups & bit) == 0) continue;
    if (!out.empty()) out += ",";
    out += name;
  }
  return out;
}

std::vector<std::uint8_t> group_mask(const TrainableParams& params, unsigned groups) {
  std::vector<std::uint8_t> mask;
  std::size_t k = 0;
  for_each_tensor(params, [&](const auto& t) {
    mask.insert(mask.end(), static_cast<std::size_t>(t.size()), (kTensorGroups[k] & groups) != 0 ? 1 : 0);
    ++k;
  });
  return mask;
}

TrainableParams make_params(const ModelShape& shape, std::uint64_t seed, const DepthWeights& w0,
                            double initial_lambda) {
  shape.validate();
  check_weights(shape.basis_count, w0.size());
  const int r = shape.raw_channels, c = shape.feature_channels, k = shape.basis_count;
  const int taps = kFeatureKernel * kFeatureKernel;
  const int center = taps / 2;
  TrainableParams p;
  static_cast<TrainableParamsT<double>&>(p).mlp = make_damping_mlp(c, seed, initial_lambda);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::normal_distribution<double> small(0.0, 1e-3);

  auto& f0 = p.features[0];
  f0.kernel = kFeatureKernel;
  f0.weights = Eigen::MatrixXd::Zero(c, taps * r);
  f0.bias = Eigen::VectorXd::Zero(c);
  for (int o = 0; o < c; ++o) {
    if (o < r) {
      f0.weights(o, center * r + o) = 1.0;
    } else {
      for (Eigen::Index i = 0; i < f0.weights.cols(); ++i) f0.weights(o, i) = small(rng);
      f0.bias[o] = 1.0;  // keeps the extra channels on the active side of the ReLU
    }
  }
  auto& f1 = p.features[1];
  f1.kernel = kFeatureKernel;
  f1.weights = Eigen::MatrixXd::Zero(c, taps * c);
  f1.bias = Eigen::VectorXd::Zero(c);
  for (int o = 0; o < c; ++o) f1.weights(o, center * c + o) = 1.0;

  p.basis.kernel = 1;
  p.basis.weights = Eigen::MatrixXd::Zero(k, k + r);
  p.basis.weights.leftCols(k).setIdentity();
  p.basis.bias = Eigen::VectorXd::Zero(k);
  p.w0 = w0;
  return p;
}

FeaturePyramid compute_features(const TrainableParams& params, const FeatureGrid& image, int levels) {
  return features_of<double>(params, image, levels);
}

DepthBasis generate_basis(const TrainableParams& params, const DepthBasis& prior, const FeatureGrid& image) {
  return basis_of<double>(params, prior, image);
}

BaResult solve_with_params(const TrainableParams& params, const SyntheticScene& scene, const SolverConfig& config) {
  if (config.mode != SolverMode::kClassicLm) {
    auto m = run_model<double>(params, scene, config);
    return {std::move(m.run.state), std::move(m.run.trace)};
  }
  std::vector<FeaturePyramid> pyramids;
  for (const auto& img : scene.images) pyramids.push_back(compute_features(params, img, config.levels));
  const DepthBasis basis = generate_basis(params, scene.basis, scene.images.front());
  const BaProblem problem{pyramids, scene.intrinsics, &basis, params.w0};
  return classic_lm(problem, config);
}

double rotation_loss(const Quaternion& pred, const Quaternion& gt) {
  const auto canon = [](const Quaternion& q) {
    const double s = q.w < 0.0 ? -1.0 : 1.0;
    return Eigen::Vector4d(s * q.w, s * q.x, s * q.y, s * q.z);
  };
  return (canon(pred) - canon(gt)).norm();
}

double rotation_loss(const Pose& pred, const Pose& gt) { return rotation_loss_t<double>(pred.rotation, gt.rotation); }

double translation_loss(const Pose& pred, const Pose& gt) { return (pred.translation - gt.translation).norm(); }

double berhu_loss(const FeatureGrid& pred, const FeatureGrid& gt, const std::vector<std::uint8_t>& mask) {
  if (pred.channels() != 1 || pred.width() != gt.width() || pred.height() != gt.height()) {
    throw Error(ErrorCode::kDimensionMismatch, "depth maps differ in size");
  }
  return berhu_t<double>(pred.data(), gt, mask);
}

ForwardPass forward_solve(const TrainableParams& params, const SyntheticScene& scene, const SolverConfig& config,
                          bool record) {
  ForwardPass out;
  const int w = scene.spec.width;
  const int h = scene.spec.height;
  if (!record) {
    if (config.mode == SolverMode::kClassicLm) {
      out.result = solve_with_params(params, scene, config);
      out.depth = depth_at_resolution(generate_basis(params, scene.basis, scene.images.front()), out.result.state.w, w, h);
      return out;
    }
    auto m = run_model<double>(params, scene, config);
    out.depth = depth_map<double>(m.basis, m.run.state.w, w, h);
    out.result = {std::move(m.run.state), std::move(m.run.trace)};
    return out;
  }
  if (!config.differentiable()) throw Error(ErrorCode::kInvalidArgument, "classic LM cannot be recorded for training");
  auto rec = std::make_shared<TapeRecord>();
  rec->parameter_count = params.parameter_count();
  const auto vp = cast_params<Var>(params, &rec->tape);
  auto m = run_model<Var>(vp, scene, config);
  rec->depth = depth_map<Var>(m.basis, m.run.state.w, w, h);
  rec->poses = m.run.state.poses;
  rec->w = m.run.state.w;
  for (const auto& pose : rec->poses) out.result.state.poses.push_back(pose_value(pose));
  out.result.state.w = ad::values(rec->w);
  out.result.trace = std::move(m.run.trace);
  out.depth = grid_value(rec->depth);
  out.record = std::move(rec);
  return out;
}

LossGradient loss_gradient(const ForwardPass& pass, const SyntheticScene& scene, const LossWeights& weights) {
  ad::Tape tape;
  const auto& st = pass.result.state;
  std::vector<PoseT<Var>> poses(st.poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) poses[i].rotation(r, c) = tape.variable(st.poses[i].rotation(r, c));
      poses[i].translation[r] = tape.variable(st.poses[i].translation[r]);
    }
  }
  std::vector<Var> depth(pass.depth.data().size());
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = tape.variable(pass.depth.data()[i]);
  const auto terms = loss_terms<Var>(poses, depth, scene, weights);
  const ad::Adjoints adj = tape.backward(terms.total);

  LossGradient g;
  g.loss = {terms.rotation.val, terms.translation.val, terms.depth.val, terms.total.val};
  auto& up = g.upstream;
  for (const auto& p : poses) {
    Mat3 dr;
    Vec3 dt;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) dr(r, c) = adj.of(p.rotation(r, c));
      dt[r] = adj.of(p.translation[r]);
    }
    up.rotation.push_back(dr);
    up.translation.push_back(dt);
  }
  up.w = Eigen::VectorXd::Zero(st.w.size());
  up.depth.resize(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) up.depth[i] = adj.of(depth[i]);
  return g;
}

std::vector<double> backward_solve(const ForwardPass& pass, const StateGradient& upstream) {
  if (!pass.recorded()) throw Error(ErrorCode::kTapeMissing, "the forward solve was not recorded");
  const TapeRecord& rec = *pass.record;
  const bool poses_ok = upstream.rotation.empty() ||
                        (upstream.rotation.size() == rec.poses.size() && upstream.translation.size() == rec.poses.size());
  if (!poses_ok || (upstream.w.size() != 0 && upstream.w.size() != rec.w.size()) ||
      (!upstream.depth.empty() && upstream.depth.size() != rec.depth.data().size())) {
    throw Error(ErrorCode::kDimensionMismatch, "upstream gradient does not match the solve outputs");
  }
  std::vector<std::pair<std::int32_t, double>> seeds;
  for (std::size_t i = 0; i < upstream.rotation.size(); ++i) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) seeds.emplace_back(rec.poses[i].rotation(r, c).id, upstream.rotation[i](r, c));
      seeds.emplace_back(rec.poses[i].translation[r].id, upstream.translation[i][r]);
    }
  }
  for (Eigen::Index k = 0; k < upstream.w.size(); ++k) seeds.emplace_back(rec.w[k].id, upstream.w[k]);
  for (std::size_t i = 0; i < upstream.depth.size(); ++i) seeds.emplace_back(rec.depth.data()[i].id, upstream.depth[i]);
  std::erase_if(seeds, [](const auto& s) { return s.first < 0 || s.second == 0.0; });

  std::vector<double> grad(rec.parameter_count, 0.0);
  if (seeds.empty()) return grad;
  const ad::Adjoints adj = rec.tape.backward(seeds);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = adj[static_cast<std::int32_t>(i)];
  return grad;
}

const char* schedule_name(LrSchedule s) { return s == LrSchedule::kPlateau ? "plateau" : "fixed_step"; }

LrSchedule parse_schedule(const std::string& name) {
  if (name == "plateau") return LrSchedule::kPlateau;
  if (name == "fixed_step") return LrSchedule::kFixedStep;
  throw Error(ErrorCode::kInvalidArgument, "unknown learning-rate schedule '" + name + "'");
}

void TrainConfig::validate() const {
  solver.validate();
  if (!solver.differentiable()) throw Error(ErrorCode::kInvalidArgument, "training needs a fixed-iteration solver mode");
  if (!(learning_rate >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be nonnegative");
  if (steps < 0 || batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "steps >= 0 and batch size >= 1 required");
  if (halve_every < 1 || plateau_window < 1) throw Error(ErrorCode::kInvalidArgument, "schedule periods must be >= 1");
  if (!(plateau_tolerance >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "plateau tolerance must be nonnegative");
  if ((groups & kGroupAll) == 0) throw Error(ErrorCode::kInvalidArgument, "no parameter group selected");
  if (!(weights.rotation >= 0.0 && weights.translation >= 0.0 && weights.depth >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "loss weights must be nonnegative");
  }
}

std::string TrainResult::loss_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "step,rot,trans,depth,total,lr\n";
  for (const auto& r : history) {
    os << r.step << "," << r.loss.rotation << "," << r.loss.translation << "," << r.loss.depth << "," << r.loss.total
       << "," << r.lr << "\n";
  }
  return os.str();
}

TrainResult train(const TrainableParams& init, std::span<const SyntheticScene> scenes, const TrainConfig& config) {
  config.validate();
  init.validate();
  if (scenes.empty()) throw Error(ErrorCode::kInvalidArgument, "training needs at least one scene");

  TrainResult out;
  out.params = init;
  std::vector<double> theta = init.flatten();
  const auto mask = group_mask(init, config.groups);
  const std::size_t n = theta.size();
  std::vector<double> m1(n, 0.0), m2(n, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  double lr = config.learning_rate;
  std::vector<double> totals;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<double> grad(n, 0.0);
    LossReport mean;
    int used = 0;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const SyntheticScene& scene = scenes[order[cursor++]];
      ForwardPass pass;
      try {
        pass = forward_solve(out.params, scene, config.solver, true);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kSingularSystem) throw;
        ++out.skipped_solves;
        continue;
      }
      const LossGradient lg = loss_gradient(pass, scene, config.weights);
      if (!std::isfinite(lg.loss.total)) {
        throw Error(ErrorCode::kDivergedLoss, "loss became non-finite at step " + std::to_string(step));
      }
      const auto g = backward_solve(pass, lg.upstream);
      for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
      mean.rotation += lg.loss.rotation;
      mean.translation += lg.loss.translation;
      mean.depth += lg.loss.depth;
      mean.total += lg.loss.total;
      ++used;
    }
    if (used > 0) {
      const double inv = 1.0 / used;
      mean = {mean.rotation * inv, mean.translation * inv, mean.depth * inv, mean.total * inv};
      const double c1 = 1.0 - std::pow(kBeta1, step + 1);
      const double c2 = 1.0 - std::pow(kBeta2, step + 1);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] == 0) continue;
        const double g = grad[i] * inv;
        if (!std::isfinite(g)) throw Error(ErrorCode::kDivergedLoss, "gradient became non-finite at step " + std::to_string(step));
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g * g;
        theta[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + kEps);
      }
      out.params.assign(theta);
    }
    out.history.push_back({step, mean, lr});
    totals.push_back(mean.total);

    const int done = step + 1;
    if (config.schedule == LrSchedule::kFixedStep) {
      if (done % config.halve_every == 0) lr *= 0.5;
    } else {
      const int w = config.plateau_window;
      if (done >= 2 * w && done % w == 0) {
        const auto avg = [&](int from) {
          return std::accumulate(totals.begin() + from, totals.begin() + from + w, 0.0) / w;
        };
        const double previous = avg(done - 2 * w);
        const double current = avg(done - w);
        if (current > previous * (1.0 - config.plateau_tolerance)) lr *= 0.5;
      }
    }
  }
  return out;
}

std::vector<unsigned char> encode_checkpoint(const TrainableParams& params) {
  params.validate();
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  const ModelShape s = params.shape();
  put_u32(out, static_cast<std::uint32_t>(s.raw_channels));
  put_u32(out, static_cast<std::uint32_t>(s.feature_channels));
  put_u32(out, static_cast<std::uint32_t>(s.basis_count));
  put_u32(out, static_cast<std::uint32_t>(params.features[0].kernel));
  put_u32(out, kGroupCount);
  for_each_tensor(params, [&](const auto& t) {
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
  });
  return out;
}

TrainableParams decode_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader in(bytes);
  in.expect(kMagic, sizeof kMagic);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kIo, "unsupported checkpoint version " + std::to_string(version));
  }
  ModelShape s;
  s.raw_channels = static_cast<int>(in.u32());
  s.feature_channels = static_cast<int>(in.u32());
  s.basis_count = static_cast<int>(in.u32());
  const int kernel = static_cast<int>(in.u32());
  if (in.u32() != kGroupCount) throw Error(ErrorCode::kIo, "unexpected tensor count in checkpoint");
  if (s.raw_channels < 1 || s.feature_channels < 1 || s.basis_count < 1 || s.raw_channels > 4096 ||
      s.feature_channels > 4096 || s.basis_count > 4096 || kernel < 1 || kernel > 31) {
    throw Error(ErrorCode::kIo, "implausible checkpoint shape header");
  }
  TrainableParams p;
  p.features[0].kernel = p.features[1].kernel = kernel;
  p.basis.kernel = 1;
  for_each_tensor(p, [&](auto& t) {
    const auto rows = static_cast<Eigen::Index>(in.u32());
    const auto cols = static_cast<Eigen::Index>(in.u32());
    if (rows * cols > (Eigen::Index{1} << 26)) throw Error(ErrorCode::kIo, "implausible tensor size in checkpoint");
    using Tensor = std::remove_cvref_t<decltype(t)>;
    if constexpr (Tensor::ColsAtCompileTime == 1) {
      if (cols != 1) throw Error(ErrorCode::kIo, "vector tensor with more than one column");
      t.resize(rows);
    } else {
      t.resize(rows, cols);
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = in.f64();
  });
  if (!in.done()) throw Error(ErrorCode::kIo, "trailing bytes after checkpoint");
  if (!(p.shape() == s)) throw Error(ErrorCode::kIo, "checkpoint tensors disagree with the shape header");
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kIo, std::string("invalid checkpoint: ") + e.what());
  }
  return p;
}

void save_checkpoint(const std::string& path, const TrainableParams& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::kIo, "failed writing checkpoint " + path);
}

TrainableParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot read checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fmba
