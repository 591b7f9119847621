#include "fmba/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <random>
#include <sstream>

#include "fmba/solver_impl.hpp"

namespace fmba {

const char* mode_name(SolverMode mode) {
  switch (mode) {
    case SolverMode::kPredictedLambda: return "predicted_lambda";
    case SolverMode::kConstantLambda: return "constant_lambda";
    case SolverMode::kGaussNewton: return "gauss_newton";
    case SolverMode::kClassicLm: return "classic_lm";
    case SolverMode::kPoseOnly: return "pose_only";
  }
  return "unknown";
}

SolverMode parse_mode(const std::string& name) {
  if (name == "predicted_lambda" || name == "predicted") return SolverMode::kPredictedLambda;
  if (name == "constant_lambda" || name == "constant") return SolverMode::kConstantLambda;
  if (name == "gauss_newton" || name == "gn") return SolverMode::kGaussNewton;
  if (name == "classic_lm" || name == "lm") return SolverMode::kClassicLm;
  if (name == "pose_only") return SolverMode::kPoseOnly;
  throw Error(ErrorCode::kInvalidArgument, "unknown solver mode '" + name + "'");
}

void SolverConfig::validate() const {
  if (levels < 1) throw Error(ErrorCode::kInvalidArgument, "solver needs at least one pyramid level");
  if (iterations_per_level < 0) throw Error(ErrorCode::kInvalidArgument, "iterations per level must be >= 0");
  if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "pixel stride must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  if (!(lambda_floor >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda floor must be >= 0");
  if (!(residual_scale > 0.0) || !std::isfinite(residual_scale)) {
    throw Error(ErrorCode::kInvalidArgument, "residual scale must be positive and finite");
  }
  if (max_iterations < 1) throw Error(ErrorCode::kInvalidArgument, "max_iterations must be >= 1");
  if (!(initial_lambda > 0.0)) throw Error(ErrorCode::kInvalidArgument, "initial lambda must be > 0");
}

DampingMLP zero_damping_mlp(int channels) {
  if (channels < 1) throw Error(ErrorCode::kInvalidArgument, "damping MLP needs at least one input channel");
  DampingMLP m;
  const int h = DampingMLP::kHidden;
  const int in[4] = {channels, h, h, h};
  const int out[4] = {h, h, h, 1};
  for (std::size_t l = 0; l < 4; ++l) {
    m.weights[l] = Eigen::MatrixXd::Zero(out[l], in[l]);
    m.biases[l] = Eigen::VectorXd::Zero(out[l]);
  }
  return m;
}

DampingMLP make_damping_mlp(int channels, std::uint64_t seed, double initial_lambda) {
  DampingMLP m = zero_damping_mlp(channels);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < 4; ++l) {
    const double fan_in = static_cast<double>(m.weights[l].cols());
    // The output layer starts small so the initial prediction sits near
    // initial_lambda regardless of the residual magnitude.
    const double sd = l < 3 ? std::sqrt(2.0 / fan_in) : 1e-3 / std::sqrt(fan_in);
    std::normal_distribution<double> dist(0.0, sd);
    for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) m.weights[l].data()[i] = dist(rng);
  }
  m.biases[3][0] = initial_lambda;
  return m;
}

double mlp_output(const DampingMLP& mlp, const Eigen::VectorXd& pooled) { return detail::mlp_forward(mlp, pooled); }

double predict_lambda(const DampingMLP& mlp, const Eigen::VectorXd& pooled, double lambda_floor) {
  return std::max(mlp_output(mlp, pooled), lambda_floor);
}

std::string SolveTrace::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "level,iter,lambda,objective,step_norm,active_pixels\n";
  for (const auto& r : records) {
    os << r.level << ',' << r.iter << ',' << r.lambda << ',' << r.objective << ',' << r.step_norm << ','
       << r.active_pixels << '\n';
  }
  return os.str();
}

Eigen::VectorXd pool_residuals(const ResidualBlock& block) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(block.channels);
  if (block.active == 0) return out;
  for (std::size_t n = 0; n < block.mask.size(); ++n) {
    if (block.mask[n] == 0) continue;
    for (int c = 0; c < block.channels; ++c) out[c] += std::abs(block.values[n * block.channels + c]);
  }
  return out / static_cast<double>(block.active);
}

NormalEquations build_normal_equations(const JacobianBlocks& jacobian, int view_count) {
  if (view_count < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two views");
  NormalEquations ne;
  ne.pose_dim = 6 * (view_count - 1);
  ne.weight_dim = jacobian.basis_count;
  const int n = ne.pose_dim + ne.weight_dim;
  ne.hessian = Eigen::MatrixXd::Zero(n, n);
  ne.gradient = Eigen::VectorXd::Zero(n);
  for (const auto& v : jacobian.views) {
    if (v.view < 1 || v.view >= view_count) throw Error(ErrorCode::kIndexOutOfRange, "Jacobian view out of range");
    if (v.weights.cols() != 0 && v.weights.cols() != ne.weight_dim) {
      throw Error(ErrorCode::kDimensionMismatch, "weight Jacobian width does not match the basis count");
    }
    const int off = 6 * (v.view - 1);
    ne.hessian.block(off, off, 6, 6) += v.pose.transpose() * v.pose;
    ne.gradient.segment(off, 6) += v.pose.transpose() * v.residual;
    if (v.weights.cols() == ne.weight_dim && ne.weight_dim > 0) {
      const Eigen::MatrixXd cross = v.pose.transpose() * v.weights;
      ne.hessian.block(off, ne.pose_dim, 6, ne.weight_dim) += cross;
      ne.hessian.block(ne.pose_dim, off, ne.weight_dim, 6) += cross.transpose();
      ne.hessian.bottomRightCorner(ne.weight_dim, ne.weight_dim) += v.weights.transpose() * v.weights;
      ne.gradient.tail(ne.weight_dim) += v.weights.transpose() * v.residual;
    }
    ne.objective += 0.5 * v.residual.squaredNorm();
  }
  return ne;
}

Eigen::MatrixXd damped_matrix(const Eigen::MatrixXd& hessian, double lambda) {
  Eigen::MatrixXd a = hessian;
  a.diagonal() += lambda * detail::damping_diagonal<double>(hessian);
  return a;
}

namespace {

// Pivots this far below the largest diagonal entry mark a numerically
// singular factorization.
constexpr double kPivotTolerance = 1e-13;

bool well_conditioned(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::MatrixXd& m) {
  if (llt.info() != Eigen::Success) return false;
  const double top = m.diagonal().cwiseAbs().maxCoeff();
  const Eigen::VectorXd piv = llt.matrixLLT().diagonal().cwiseAbs2();
  return top > 0.0 && piv.minCoeff() > kPivotTolerance * top;
}

Eigen::VectorXd qr_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  qr.setThreshold(1e-10);
  qr.compute(a);
  if (qr.rank() == 0) throw Error(ErrorCode::kSingularSystem, "damped system has rank zero");
  Eigen::VectorXd x = qr.solve(b);
  if (!x.allFinite()) throw Error(ErrorCode::kSingularSystem, "damped system could not be solved");
  return x;
}

}  // namespace

Eigen::VectorXd solve_damped_system(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int pose_dim, bool* used_qr) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.size() != n) throw Error(ErrorCode::kDimensionMismatch, "system is not square");
  if (pose_dim < 0 || pose_dim > n) throw Error(ErrorCode::kInvalidArgument, "pose block exceeds the system size");
  if (!a.allFinite() || !b.allFinite()) throw Error(ErrorCode::kSingularSystem, "system has non-finite entries");
  if (used_qr != nullptr) *used_qr = false;
  if (n == 0) return Eigen::VectorXd();

  const Eigen::Index k = n - pose_dim;
  Eigen::VectorXd x(n);
  bool ok = true;
  if (k == 0 || pose_dim == 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    ok = well_conditioned(llt, a);
    if (ok) x = llt.solve(b);
  } else {
    const auto app = a.topLeftCorner(pose_dim, pose_dim);
    const auto apw = a.topRightCorner(pose_dim, k);
    const auto aww = a.bottomRightCorner(k, k);
    const Eigen::MatrixXd aww_m = aww;
    Eigen::LLT<Eigen::MatrixXd> lw(aww_m);
    ok = well_conditioned(lw, aww_m);
    if (ok) {
      const Eigen::MatrixXd aww_inv_awp = lw.solve(apw.transpose());
      const Eigen::VectorXd aww_inv_bw = lw.solve(b.tail(k));
      const Eigen::MatrixXd s = app - apw * aww_inv_awp;
      Eigen::LLT<Eigen::MatrixXd> ls(s);
      ok = well_conditioned(ls, s);
      if (ok) {
        x.head(pose_dim) = ls.solve(b.head(pose_dim) - apw * aww_inv_bw);
        x.tail(k) = aww_inv_bw - aww_inv_awp * x.head(pose_dim);
      }
    }
  }
  if (ok && x.allFinite()) return x;
  if (used_qr != nullptr) *used_qr = true;
  return qr_solve(a, b);
}

LmStep lm_step(const JacobianBlocks& jacobian, int view_count, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  const NormalEquations ne = build_normal_equations(jacobian, view_count);
  LmStep step;
  const Eigen::VectorXd delta =
      solve_damped_system(damped_matrix(ne.hessian, lambda), -ne.gradient, ne.pose_dim, &step.used_qr);
  for (int i = 0; i < view_count - 1; ++i) step.twists.push_back(Twist::from_vector(delta.segment<6>(6 * i)));
  step.dw = delta.tail(ne.weight_dim);
  return step;
}

SolverState apply_update(const SolverState& state, const LmStep& step) {
  if (step.twists.size() + 1 != state.poses.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one twist per non-reference view is required");
  }
  if (step.dw.size() != 0 && step.dw.size() != state.w.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "weight update has the wrong size");
  }
  SolverState out = state;
  for (std::size_t i = 0; i < step.twists.size(); ++i) out.poses[i + 1] = compose(se3_exp(step.twists[i]), state.poses[i + 1]);
  if (step.dw.size() != 0) out.w += step.dw;
  return out;
}

namespace {

detail::ProblemT<double> to_problem(const BaProblem& problem) {
  detail::ProblemT<double> p;
  for (const auto& py : problem.pyramids) p.pyramids.push_back(&py);
  p.intrinsics = problem.intrinsics;
  p.basis = problem.basis;
  p.w0 = problem.w0;
  problem.intrinsics.validate();
  return p;
}

double objective_of(const std::vector<ViewSystemT<double>>& views) {
  double s = 0.0;
  for (const auto& v : views) {
    for (double e : v.residual) s += e * e;
  }
  return 0.5 * s;
}

}  // namespace

BaResult run_ba(const BaProblem& problem, const SolverConfig& config, const DampingMLP& mlp) {
  const auto p = to_problem(problem);
  auto out = detail::run_fixed<double>(p, config, &mlp);
  return {std::move(out.state), std::move(out.trace)};
}

BaResult classic_lm(const BaProblem& problem, const SolverConfig& config) {
  const auto p = to_problem(problem);
  detail::check_problem(p, config);
  const int pose_dim = 6 * (p.views() - 1);
  const int weight_dim = p.basis->count();

  BaResult out;
  out.state.poses.assign(static_cast<std::size_t>(p.views()), Pose::identity());
  out.state.w = p.w0;
  const Eigen::VectorXd means = detail::basis_means(*p.basis);
  const double target = detail::mean_depth_of<double>(means, p.w0);
  for (int level = config.levels - 1; level >= 0; --level) {
    const auto cache = detail::prepare_level(p, level, config.stride);
    double lambda = config.initial_lambda;
    for (int it = 0; it < config.max_iterations; ++it) {
      const auto views = detail::evaluate_all(p, cache, out.state, true, true);
      const auto ne = detail::normal_from_views(views, p.views(), weight_dim);
      TraceRecord r;
      r.level = level;
      r.iter = it;
      r.lambda = lambda;
      r.objective = ne.objective;
      r.active_pixels = detail::active_count(views);
      Eigen::VectorXd delta;
      try {
        delta = detail::damped_solve(ne, lambda, pose_dim, nullptr);
      } catch (const Error&) {
        r.accepted = false;
        out.trace.records.push_back(r);
        lambda *= 10.0;
        continue;
      }
      r.step_norm = delta.norm();
      SolverState candidate = out.state;
      detail::apply_delta(candidate, delta, true);
      if (config.scale_gauge) detail::apply_scale_gauge<double>(candidate, means, target);
      const double trial = objective_of(detail::evaluate_all(p, cache, candidate, false, true));
      r.accepted = std::isfinite(trial) && trial < ne.objective;
      out.trace.records.push_back(r);
      if (r.accepted) {
        const double decrease = ne.objective - trial;
        out.state = std::move(candidate);
        lambda *= 0.5;
        if (decrease <= config.convergence_threshold * std::max(ne.objective, 1e-300) ||
            r.step_norm < config.convergence_threshold) {
          break;
        }
      } else {
        lambda *= 10.0;
        if (r.step_norm < config.convergence_threshold || lambda > 1e12) break;
      }
    }
  }
  return out;
}

BaResult solve(const BaProblem& problem, const SolverConfig& config, const DampingMLP& mlp) {
  if (config.mode == SolverMode::kClassicLm) return classic_lm(problem, config);
  return run_ba(problem, config, mlp);
}

}  // namespace fmba
