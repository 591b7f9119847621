#pragma once

// The bundle-adjustment layer: fixed-iteration, coarse-to-fine
// Levenberg-Marquardt over view poses and depth weights, with the damping
// factor predicted from pooled residuals by a small MLP. Constant-damping,
// Gauss-Newton, pose-only and classic adaptive LM variants share the same
// residual and linear-algebra machinery.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fmba/depth_param.hpp"
#include "fmba/feature_grid.hpp"
#include "fmba/geometry.hpp"
#include "fmba/residuals.hpp"

namespace fmba {

enum class SolverMode { kPredictedLambda, kConstantLambda, kGaussNewton, kClassicLm, kPoseOnly };

const char* mode_name(SolverMode mode);
SolverMode parse_mode(const std::string& name);

struct SolverConfig {
  SolverMode mode = SolverMode::kPredictedLambda;
  double lambda = 0.5;  // used by kConstantLambda
  int levels = 3;
  int iterations_per_level = 5;
  double lambda_floor = 1e-6;
  // The damping MLP sees pooled residuals divided by this, the nominal
  // appearance range of the features.
  double residual_scale = 50.0;
  int stride = 2;
  // Rescales translations and w together after every joint update so that
  // the mean of w^T B stays at its initial value. The residual is invariant
  // under this rescaling, so it only removes the monocular scale freedom.
  bool scale_gauge = true;
  // kClassicLm only.
  int max_iterations = 30;
  double convergence_threshold = 1e-10;
  double initial_lambda = 1e-3;

  void validate() const;
  bool differentiable() const { return mode != SolverMode::kClassicLm; }
};

/// Four fully connected layers C -> 128 -> 128 -> 128 -> 1, ReLU after each.
template <typename T>
struct DampingMLPT {
  static constexpr int kHidden = 128;
  std::array<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>, 4> weights;
  std::array<VectorT<T>, 4> biases;

  int input_dim() const { return static_cast<int>(weights[0].cols()); }
};
using DampingMLP = DampingMLPT<double>;

/// All-zero parameters; predicts exactly 0 before the floor.
DampingMLP zero_damping_mlp(int channels);

/// He-initialised hidden layers and a near-constant output of
/// `initial_lambda`.
DampingMLP make_damping_mlp(int channels, std::uint64_t seed, double initial_lambda = 0.5);

/// Raw MLP output (already >= 0 through the final ReLU).
double mlp_output(const DampingMLP& mlp, const Eigen::VectorXd& pooled);

/// max(MLP(x), floor), where the solver passes x = pooled residuals / residual_scale.
double predict_lambda(const DampingMLP& mlp, const Eigen::VectorXd& pooled, double lambda_floor);

template <typename T>
struct SolverStateT {
  std::vector<PoseT<T>> poses;  // poses[0] is the identity reference
  VectorT<T> w;
};
using SolverState = SolverStateT<double>;

struct TraceRecord {
  int level = 0;
  int iter = 0;
  double lambda = 0.0;
  double objective = 0.0;  // 0.5 * sum of squared active residuals before the step
  double step_norm = 0.0;
  int active_pixels = 0;
  bool accepted = true;
};

struct SolveTrace {
  std::vector<TraceRecord> records;

  /// `level,iter,lambda,objective,step_norm,active_pixels`
  std::string to_csv() const;
};

/// Mean |e| per channel over active pixels; zero when nothing is active.
Eigen::VectorXd pool_residuals(const ResidualBlock& block);

struct NormalEquations {
  Eigen::MatrixXd hessian;   // J^T J
  Eigen::VectorXd gradient;  // J^T E
  double objective = 0.0;
  int pose_dim = 0;
  int weight_dim = 0;
};

/// Unknowns are ordered [twist of view 1, ..., twist of view N-1, w].
NormalEquations build_normal_equations(const JacobianBlocks& jacobian, int view_count);

/// Relative lower bound on the entries of the damping diagonal.
inline constexpr double kDampingFloor = 1e-6;

/// J^T J + lambda * D with D = sqrt(diag(J^T J)), each entry of D floored at
/// kDampingFloor times its largest entry.
Eigen::MatrixXd damped_matrix(const Eigen::MatrixXd& hessian, double lambda);

/// Solves A x = b by eliminating the trailing weight block with the Schur
/// complement; falls back to column-pivoted QR on the full system when a
/// Cholesky factorization fails or is numerically rank deficient. Throws
/// SingularSystem if QR also fails.
Eigen::VectorXd solve_damped_system(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int pose_dim,
                                    bool* used_qr = nullptr);

struct LmStep {
  std::vector<Twist> twists;  // one per non-reference view
  Eigen::VectorXd dw;
  bool used_qr = false;
};

/// One damped step: (J^T J + lambda D) delta = -J^T E.
LmStep lm_step(const JacobianBlocks& jacobian, int view_count, double lambda);

/// pose_i <- exp(xi_i) * pose_i for i >= 1, w <- w + dw.
SolverState apply_update(const SolverState& state, const LmStep& step);

struct BaProblem {
  std::span<const FeaturePyramid> pyramids;  // view 0 is the reference
  Intrinsics intrinsics;                     // finest level
  const DepthBasis* basis = nullptr;
  DepthWeights w0;
};

struct BaResult {
  SolverState state;
  SolveTrace trace;
};

/// Exactly levels x iterations_per_level damped steps, coarsest level first,
/// from identity poses and w0.
BaResult run_ba(const BaProblem& problem, const SolverConfig& config, const DampingMLP& mlp);

/// Adaptive accept/reject LM: lambda halves on accept and grows tenfold on
/// reject; stops per level on the convergence threshold or max_iterations.
BaResult classic_lm(const BaProblem& problem, const SolverConfig& config);

/// Dispatches on config.mode.
BaResult solve(const BaProblem& problem, const SolverConfig& config, const DampingMLP& mlp);

}  // namespace fmba
