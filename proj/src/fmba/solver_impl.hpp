#pragma once

// Scalar-generic core of the fixed-iteration solver, instantiated for
// double (plain solves) and ad::Var (taped solves for training).

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "fmba/ad_ops.hpp"
#include "fmba/solver.hpp"

namespace fmba::detail {

template <typename T>
using MatrixT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
struct ProblemT {
  std::vector<const PyramidT<T>*> pyramids;
  Intrinsics intrinsics;
  const DepthBasisT<T>* basis = nullptr;
  VectorT<T> w0;

  int views() const { return static_cast<int>(pyramids.size()); }
  int channels() const { return pyramids.front()->channels(); }
};

template <typename T>
struct LevelCache {
  int level = 0;
  Intrinsics k;
  PixelSet pixels;
  std::vector<T> reference;
  std::vector<T> columns;
};

template <typename T>
LevelCache<T> prepare_level(const ProblemT<T>& p, int level, int stride) {
  LevelCache<T> c;
  c.level = level;
  c.k = p.intrinsics.at_level(level);
  const auto& fine = (*p.pyramids[0])[0];
  c.pixels = make_pixel_set(p.intrinsics, fine.width(), fine.height(), level, stride, p.basis->width(),
                            p.basis->height());
  c.reference = sample_reference((*p.pyramids[0])[level], c.pixels);
  c.columns = sample_basis_columns(*p.basis, c.pixels);
  return c;
}

template <typename T>
std::vector<ViewSystemT<T>> evaluate_all(const ProblemT<T>& p, const LevelCache<T>& c, const SolverStateT<T>& s,
                                         bool jacobian, bool weights) {
  DepthInput<T> depth;
  depth.columns = c.columns;
  depth.weights = &s.w;
  depth.basis_count = p.basis->count();
  std::vector<ViewSystemT<T>> views(static_cast<std::size_t>(p.views() - 1));
  for (int i = 1; i < p.views(); ++i) {
    evaluate_view<T>(c.reference, (*p.pyramids[static_cast<std::size_t>(i)])[c.level], c.k,
                     s.poses[static_cast<std::size_t>(i)], c.pixels, depth, jacobian, weights,
                     views[static_cast<std::size_t>(i - 1)]);
  }
  return views;
}

template <typename T>
int active_count(const std::vector<ViewSystemT<T>>& views) {
  int n = 0;
  for (const auto& v : views) n += static_cast<int>(v.active.size());
  return n;
}

template <typename T>
VectorT<T> pool(const std::vector<ViewSystemT<T>>& views, int channels) {
  using std::abs;
  using ad::abs;
  VectorT<T> out = VectorT<T>::Constant(channels, T(0.0));
  const int n = active_count(views);
  if (n == 0) return out;
  for (const auto& v : views) {
    for (std::size_t a = 0; a < v.active.size(); ++a) {
      for (int ch = 0; ch < channels; ++ch) out[ch] += abs(v.residual[a * channels + ch]);
    }
  }
  for (int ch = 0; ch < channels; ++ch) out[ch] = out[ch] / double(n);
  return out;
}

template <typename T>
T mlp_forward(const DampingMLPT<T>& mlp, const VectorT<T>& x) {
  if (x.size() != mlp.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "pooled residual has " + std::to_string(x.size()) +
                                                   " channels, damping MLP expects " +
                                                   std::to_string(mlp.input_dim()));
  }
  VectorT<T> h = x;
  for (std::size_t l = 0; l < 4; ++l) {
    if constexpr (ad::is_var_v<T>) {
      h = ad::affine(mlp.weights[l], mlp.biases[l], h);
    } else {
      h = mlp.weights[l] * h + mlp.biases[l];
    }
    for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = ad::relu(h[i]);
  }
  return h[0];
}

template <typename T>
struct NormalT {
  MatrixT<T> h;
  VectorT<T> g;
  T objective{0.0};
};

template <typename T>
NormalT<T> normal_from_views(const std::vector<ViewSystemT<T>>& views, int view_count, int weight_dim) {
  const int pose_dim = 6 * (view_count - 1);
  const int n = pose_dim + weight_dim;
  NormalT<T> ne;
  ne.h = MatrixT<T>::Constant(n, n, T(0.0));
  ne.g = VectorT<T>::Constant(n, T(0.0));
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    const auto& v = views[vi];
    const int cols = v.cols;
    const int kw = cols - 6;
    const auto rows = static_cast<Eigen::Index>(v.residual.size());
    if (rows == 0) continue;
    const int off = 6 * static_cast<int>(vi);
    MatrixT<T> g;
    if constexpr (ad::is_var_v<T>) {
      std::vector<T> m(static_cast<std::size_t>(rows) * (cols + 1));
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (int a = 0; a < cols; ++a) m[static_cast<std::size_t>(r * (cols + 1) + a)] = v.rows[static_cast<std::size_t>(r * cols + a)];
        m[static_cast<std::size_t>(r * (cols + 1) + cols)] = v.residual[static_cast<std::size_t>(r)];
      }
      g = ad::gram(m, rows, cols + 1);
    } else {
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols + 1);
      m.leftCols(cols) = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          v.rows.data(), rows, cols);
      m.col(cols) = Eigen::Map<const Eigen::VectorXd>(v.residual.data(), rows);
      g.noalias() = m.transpose() * m;
    }
    for (int a = 0; a < 6; ++a) {
      for (int b = 0; b < 6; ++b) ne.h(off + a, off + b) += g(a, b);
      for (int b = 0; b < kw; ++b) {
        ne.h(off + a, pose_dim + b) += g(a, 6 + b);
        ne.h(pose_dim + b, off + a) += g(6 + b, a);
      }
      ne.g(off + a) += g(a, cols);
    }
    for (int a = 0; a < kw; ++a) {
      for (int b = 0; b < kw; ++b) ne.h(pose_dim + a, pose_dim + b) += g(6 + a, 6 + b);
      ne.g(pose_dim + a) += g(6 + a, cols);
    }
    ne.objective += g(cols, cols) * 0.5;
  }
  return ne;
}

/// sqrt(diag(H)) with every entry raised to at least kDampingFloor times the
/// largest one, so that unobservable parameters still receive damping.
template <typename T>
VectorT<T> damping_diagonal(const MatrixT<T>& h) {
  using std::sqrt;
  using ad::sqrt;
  const Eigen::Index n = h.rows();
  VectorT<T> d(n);
  Eigen::Index top = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    d[i] = ad::value(h(i, i)) > 0.0 ? sqrt(h(i, i)) : T(0.0);
    if (ad::value(d[i]) > ad::value(d[top])) top = i;
  }
  if (n == 0) return d;
  const T floor = d[top] * kDampingFloor;
  for (Eigen::Index i = 0; i < n; ++i) d[i] = ad::max_of(d[i], floor);
  return d;
}

template <typename T>
VectorT<T> damped_solve(const NormalT<T>& ne, const T& lambda, int pose_dim, bool* used_qr) {
  const Eigen::Index n = ne.g.size();
  MatrixT<T> a = ne.h;
  const VectorT<T> d = damping_diagonal(ne.h);
  for (Eigen::Index i = 0; i < n; ++i) a(i, i) = ne.h(i, i) + lambda * d[i];
  const VectorT<T> b = -ne.g;
  if constexpr (ad::is_var_v<T>) {
    if (used_qr != nullptr) *used_qr = false;
    return ad::solve_symmetric(a, b, [pose_dim](const Eigen::MatrixXd& m, const Eigen::VectorXd& r) {
      return solve_damped_system(m, r, pose_dim);
    });
  } else {
    return solve_damped_system(a, b, pose_dim, used_qr);
  }
}

template <typename T>
void apply_delta(SolverStateT<T>& s, const VectorT<T>& delta, bool weights) {
  const int views = static_cast<int>(s.poses.size());
  for (int i = 1; i < views; ++i) {
    const Vec6T<T> xi = delta.template segment<6>(6 * (i - 1));
    s.poses[static_cast<std::size_t>(i)] = compose(se3_exp(TwistT<T>::from_vector(xi)), s.poses[static_cast<std::size_t>(i)]);
  }
  if (weights) {
    const int pose_dim = 6 * (views - 1);
    for (Eigen::Index k = 0; k < s.w.size(); ++k) s.w[k] = s.w[k] + delta[pose_dim + k];
  }
}

/// Per-map mean of the basis over its texels.
template <typename T>
VectorT<T> basis_means(const DepthBasisT<T>& basis) {
  const int k = basis.count();
  VectorT<T> m = VectorT<T>::Constant(k, T(0.0));
  const std::size_t n = basis.maps.texel_count();
  for (std::size_t j = 0; j < n; ++j) {
    for (int i = 0; i < k; ++i) m[i] += basis.maps.data()[j * k + i];
  }
  for (int i = 0; i < k; ++i) m[i] = m[i] / static_cast<double>(n);
  return m;
}

template <typename T>
T mean_depth_of(const VectorT<T>& means, const VectorT<T>& w) {
  T s = means[0] * w[0];
  for (Eigen::Index i = 1; i < w.size(); ++i) s += means[i] * w[i];
  return s;
}

/// Scales w and every translation so that means^T w equals `target`.
template <typename T>
void apply_scale_gauge(SolverStateT<T>& s, const VectorT<T>& means, const T& target) {
  const T current = mean_depth_of(means, s.w);
  if (!(ad::value(current) > 0.0) || !(ad::value(target) > 0.0)) return;
  const T f = target / current;
  for (Eigen::Index i = 0; i < s.w.size(); ++i) s.w[i] = s.w[i] * f;
  for (std::size_t i = 1; i < s.poses.size(); ++i) s.poses[i].translation = s.poses[i].translation * f;
}

template <typename T>
double vector_norm(const VectorT<T>& v) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += ad::value(v[i]) * ad::value(v[i]);
  return std::sqrt(s);
}

template <typename T>
struct RunOutput {
  SolverStateT<T> state;
  SolveTrace trace;
};

template <typename T>
void check_problem(const ProblemT<T>& p, const SolverConfig& config) {
  config.validate();
  if (p.views() < 2) throw Error(ErrorCode::kInvalidArgument, "bundle adjustment needs at least two views");
  if (p.basis == nullptr) throw Error(ErrorCode::kInvalidArgument, "a depth basis is required");
  check_weights(p.basis->count(), p.w0.size());
  for (const auto* py : p.pyramids) {
    if (py->size() < config.levels) throw Error(ErrorCode::kTooManyLevels, "pyramid has fewer levels than the solver");
    if (py->channels() != p.channels()) throw Error(ErrorCode::kDimensionMismatch, "views have different channel counts");
  }
}

/// Fixed-iteration differentiable solve.
template <typename T>
RunOutput<T> run_fixed(const ProblemT<T>& p, const SolverConfig& config, const DampingMLPT<T>* mlp) {
  check_problem(p, config);
  if (config.mode == SolverMode::kClassicLm) {
    throw Error(ErrorCode::kInvalidArgument, "classic LM is not a fixed-iteration mode");
  }
  const bool predicted = config.mode == SolverMode::kPredictedLambda || config.mode == SolverMode::kPoseOnly;
  if (predicted && mlp == nullptr) throw Error(ErrorCode::kInvalidArgument, "predicted damping needs an MLP");
  const bool joint = config.mode != SolverMode::kPoseOnly;
  const int pose_dim = 6 * (p.views() - 1);
  const int weight_dim = joint ? p.basis->count() : 0;

  RunOutput<T> out;
  out.state.poses.assign(static_cast<std::size_t>(p.views()), PoseT<T>::identity());
  out.state.w = p.w0;
  const bool gauge = joint && config.scale_gauge;
  const VectorT<T> means = basis_means(*p.basis);
  const T target = mean_depth_of(means, p.w0);
  for (int level = config.levels - 1; level >= 0; --level) {
    const LevelCache<T> cache = prepare_level(p, level, config.stride);
    for (int it = 0; it < config.iterations_per_level; ++it) {
      const auto views = evaluate_all(p, cache, out.state, true, joint);
      T lambda;
      switch (config.mode) {
        case SolverMode::kPredictedLambda:
        case SolverMode::kPoseOnly:
        {
          VectorT<T> pooled = pool(views, p.channels());
          for (Eigen::Index c = 0; c < pooled.size(); ++c) pooled[c] = pooled[c] / config.residual_scale;
          lambda = ad::max_of(mlp_forward(*mlp, pooled), T(config.lambda_floor));
        }
          break;
        case SolverMode::kConstantLambda: lambda = T(config.lambda); break;
        default: lambda = T(0.0); break;
      }
      const NormalT<T> ne = normal_from_views(views, p.views(), weight_dim);
      VectorT<T> delta;
      try {
        delta = damped_solve(ne, lambda, pose_dim, nullptr);
      } catch (const Error& e) {
        throw Error(e.code(), std::string(e.what()) + " (level " + std::to_string(level) + ", iteration " +
                                  std::to_string(it) + ")");
      }
      apply_delta(out.state, delta, joint);
      if (gauge) apply_scale_gauge(out.state, means, target);
      TraceRecord r;
      r.level = level;
      r.iter = it;
      r.lambda = ad::value(lambda);
      r.objective = ad::value(ne.objective);
      r.step_norm = vector_norm(delta);
      r.active_pixels = active_count(views);
      out.trace.records.push_back(r);
    }
  }
  return out;
}

}  // namespace fmba::detail
