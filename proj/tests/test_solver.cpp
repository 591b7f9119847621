#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "fmba/scene.hpp"
#include "fmba/solver.hpp"
#include "support.hpp"

using namespace fmba;
using fmba::test::error_of;
using fmba::test::rel_err;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Random Jacobian blocks for `views` views (so views - 1 pose blocks) and k
/// weights, `rows` rows per view.
JacobianBlocks random_blocks(std::mt19937_64& rng, int views, int k, int rows) {
  JacobianBlocks jb;
  jb.channels = 1;
  jb.basis_count = k;
  for (int v = 1; v < views; ++v) {
    ViewJacobian vj;
    vj.view = v;
    for (int r = 0; r < rows; ++r) vj.pixels.push_back(r);
    vj.pose = random_matrix(rng, rows, 6);
    vj.weights = random_matrix(rng, rows, k);
    vj.residual = random_matrix(rng, rows, 1);
    jb.views.push_back(std::move(vj));
  }
  return jb;
}

/// Stacked dense J and r of the blocks.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> dense(const JacobianBlocks& jb, int views) {
  Eigen::Index rows = 0;
  for (const auto& v : jb.views) rows += v.pose.rows();
  const int n = 6 * (views - 1) + jb.basis_count;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(rows, n);
  Eigen::VectorXd r(rows);
  Eigen::Index at = 0;
  for (const auto& v : jb.views) {
    const Eigen::Index m = v.pose.rows();
    j.block(at, 6 * (v.view - 1), m, 6) = v.pose;
    j.block(at, 6 * (views - 1), m, jb.basis_count) = v.weights;
    r.segment(at, m) = v.residual;
    at += m;
  }
  return {j, r};
}

SyntheticScene small_scene(std::uint64_t seed, int views = 2) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 24;
  spec.views = views;
  spec.seed = seed;
  return generate_scene(spec);
}

}  // namespace

TEST_CASE("solver modes parse by name") {
  for (auto m : {SolverMode::kPredictedLambda, SolverMode::kConstantLambda, SolverMode::kGaussNewton,
                 SolverMode::kClassicLm, SolverMode::kPoseOnly}) {
    CHECK(parse_mode(mode_name(m)) == m);
  }
  CHECK(error_of([] { parse_mode("newton"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("solver config validation") {
  SolverConfig c;
  CHECK_FALSE(error_of([&] { c.validate(); }).has_value());
  c.levels = 0;
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kInvalidArgument);
  c = SolverConfig{};
  c.lambda = -1.0;
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kInvalidArgument);
  c = SolverConfig{};
  c.stride = 0;
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kInvalidArgument);
  c = SolverConfig{};
  c.residual_scale = 0.0;
  CHECK(error_of([&] { c.validate(); }) == ErrorCode::kInvalidArgument);
  CHECK_FALSE(SolverConfig{.mode = SolverMode::kClassicLm}.differentiable());
}

TEST_CASE("normal equations equal the dense products") {
  std::mt19937_64 rng(41);
  const JacobianBlocks jb = random_blocks(rng, 4, 5, 30);
  const auto [j, r] = dense(jb, 4);
  const NormalEquations ne = build_normal_equations(jb, 4);
  CHECK(ne.pose_dim == 18);
  CHECK(ne.weight_dim == 5);
  CHECK(rel_err(ne.hessian, j.transpose() * j) < 1e-13);
  CHECK(rel_err(ne.gradient, j.transpose() * r) < 1e-13);
  CHECK(ne.objective == doctest::Approx(0.5 * r.squaredNorm()));
}

TEST_CASE("damped_matrix adds lambda times the floored square-root diagonal") {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 3);
  h.diagonal() << 4.0, 9.0, 0.0;
  h(0, 1) = h(1, 0) = 1.0;
  const Eigen::MatrixXd a = damped_matrix(h, 0.5);
  CHECK(a(0, 0) == doctest::Approx(4.0 + 0.5 * 2.0));
  CHECK(a(1, 1) == doctest::Approx(9.0 + 0.5 * 3.0));
  CHECK(a(2, 2) == doctest::Approx(0.5 * 3.0 * kDampingFloor));
  CHECK(a(0, 1) == 1.0);
  CHECK(damped_matrix(h, 0.0) == h);
}

TEST_CASE("Schur-complement solve agrees with a dense solve on 100 systems") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> views(2, 5), ks(1, 10);
  for (int t = 0; t < 100; ++t) {
    const int n_views = views(rng);
    const int k = ks(rng);
    const JacobianBlocks jb = random_blocks(rng, n_views, k, 40);
    const NormalEquations ne = build_normal_equations(jb, n_views);
    const Eigen::MatrixXd a = damped_matrix(ne.hessian, 0.1);
    bool used_qr = true;
    const Eigen::VectorXd x = solve_damped_system(a, ne.gradient, ne.pose_dim, &used_qr);
    const Eigen::VectorXd ref = a.fullPivLu().solve(ne.gradient);
    CHECK_FALSE(used_qr);
    CHECK(rel_err(x, ref) <= 1e-10);
  }
}

TEST_CASE("rank-deficient systems fall back to QR and zero systems are singular") {
  std::mt19937_64 rng(43);
  // Two identical weight columns make the weight block singular.
  Eigen::MatrixXd j = random_matrix(rng, 30, 8);
  j.col(7) = j.col(6);
  const Eigen::MatrixXd a = j.transpose() * j;
  const Eigen::VectorXd b = a * Eigen::VectorXd::Ones(8);
  bool used_qr = false;
  const Eigen::VectorXd x = solve_damped_system(a, b, 6, &used_qr);
  CHECK(used_qr);
  CHECK((a * x - b).norm() < 1e-8 * b.norm());

  CHECK(error_of([] { solve_damped_system(Eigen::MatrixXd::Zero(7, 7), Eigen::VectorXd::Ones(7), 6); }) ==
        ErrorCode::kSingularSystem);
  CHECK(error_of([] { solve_damped_system(Eigen::MatrixXd::Identity(7, 7), Eigen::VectorXd::Ones(6), 6); }) ==
        ErrorCode::kDimensionMismatch);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(7, 7);
  bad(0, 0) = std::nan("");
  CHECK(error_of([&] { solve_damped_system(bad, Eigen::VectorXd::Ones(7), 6); }) == ErrorCode::kSingularSystem);
}

TEST_CASE("an undamped step solves a linear least-squares problem exactly") {
  std::mt19937_64 rng(44);
  for (int t = 0; t < 20; ++t) {
    const JacobianBlocks jb = random_blocks(rng, 3, 4, 25);
    const auto [j, r] = dense(jb, 3);
    const LmStep step = lm_step(jb, 3, 0.0);
    Eigen::VectorXd delta(16);
    delta << step.twists[0].vector(), step.twists[1].vector(), step.dw;
    const Eigen::VectorXd expected = -j.colPivHouseholderQr().solve(r);
    CHECK(rel_err(delta, expected) <= 1e-8);
    // The linearised residual is then orthogonal to the columns of J.
    CHECK((j.transpose() * (r + j * delta)).norm() <= 1e-8 * (j.transpose() * r).norm());
  }
}

TEST_CASE("larger damping shortens the step") {
  std::mt19937_64 rng(45);
  const JacobianBlocks jb = random_blocks(rng, 2, 3, 30);
  double previous = std::numeric_limits<double>::infinity();
  for (double lambda : {0.0, 0.1, 1.0, 10.0, 100.0}) {
    const LmStep s = lm_step(jb, 2, lambda);
    const double norm = std::hypot(s.twists[0].vector().norm(), s.dw.norm());
    CHECK(norm < previous);
    previous = norm;
  }
  CHECK(error_of([&] { lm_step(jb, 2, -1.0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("apply_update moves non-reference poses by a left twist") {
  std::mt19937_64 rng(46);
  SolverState s;
  s.poses = {Pose::identity(), test::random_pose(rng)};
  s.w = Eigen::VectorXd::Ones(3);
  LmStep step;
  Vec6 xi = test::random_twist(rng, 0.1, 0.1);
  step.twists = {Twist::from_vector(xi)};
  step.dw = Eigen::VectorXd::Constant(3, 0.5);
  const SolverState out = apply_update(s, step);
  CHECK(out.poses[0].rotation == Mat3::Identity());
  const Pose expected = compose(se3_exp(step.twists[0]), s.poses[1]);
  CHECK((out.poses[1].rotation - expected.rotation).norm() < 1e-15);
  CHECK((out.poses[1].translation - expected.translation).norm() < 1e-15);
  CHECK(out.w == Eigen::VectorXd::Constant(3, 1.5));
  step.dw = Eigen::VectorXd::Zero(2);
  CHECK(error_of([&] { apply_update(s, step); }) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("damping MLP output and floor") {
  const Eigen::VectorXd pooled = Eigen::VectorXd::Constant(3, 0.7);
  CHECK(mlp_output(zero_damping_mlp(3), pooled) == 0.0);
  CHECK(predict_lambda(zero_damping_mlp(3), pooled, 1e-6) == 1e-6);
  const DampingMLP m = make_damping_mlp(3, 7, 0.5);
  CHECK(m.input_dim() == 3);
  CHECK(m.weights[1].rows() == DampingMLP::kHidden);
  CHECK(mlp_output(m, Eigen::VectorXd::Zero(3)) == doctest::Approx(0.5));
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd p(3);
    p << u(rng), u(rng), u(rng);
    CHECK(predict_lambda(m, p, 1e-6) >= 1e-6);
  }
  CHECK(error_of([&] { mlp_output(m, Eigen::VectorXd::Zero(4)); }).has_value());
}

TEST_CASE("pool_residuals is the mean absolute residual per channel") {
  ResidualBlock b;
  b.channels = 2;
  b.views = 1;
  b.pixels = 3;
  b.values = {1.0, -2.0, 0.0, 0.0, -3.0, 4.0};
  b.mask = {1, 0, 1};
  b.active = 2;
  const Eigen::VectorXd p = pool_residuals(b);
  CHECK(p[0] == 2.0);
  CHECK(p[1] == 3.0);
  b.mask = {0, 0, 0};
  b.active = 0;
  CHECK(pool_residuals(b).isZero(0.0));
}

TEST_CASE("run_ba performs a fixed number of steps and records them") {
  const SyntheticScene s = small_scene(51);
  const auto pyramids = image_pyramids(s, 3);
  BaProblem problem{pyramids, s.intrinsics, &s.basis, s.w0};
  SolverConfig cfg;
  cfg.mode = SolverMode::kConstantLambda;
  cfg.levels = 3;
  cfg.iterations_per_level = 4;
  const BaResult r = run_ba(problem, cfg, zero_damping_mlp(3));
  REQUIRE(r.trace.records.size() == 12);
  CHECK(r.trace.records.front().level == 2);
  CHECK(r.trace.records.back().level == 0);
  for (const auto& rec : r.trace.records) {
    CHECK(rec.lambda == 0.5);
    CHECK(rec.active_pixels > 0);
    CHECK(std::isfinite(rec.objective));
  }
  const std::string csv = r.trace.to_csv();
  CHECK(csv.rfind("level,iter,lambda,objective,step_norm,active_pixels\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  CHECK(r.state.poses[0].rotation == Mat3::Identity());
  CHECK(r.state.poses[0].translation.isZero(0.0));

  cfg.iterations_per_level = 0;
  const BaResult none = run_ba(problem, cfg, zero_damping_mlp(3));
  CHECK(none.trace.records.empty());
  CHECK(none.state.w == s.w0);
}

TEST_CASE("predicted damping reads pooled residuals divided by the residual scale") {
  const SyntheticScene s = small_scene(52);
  const auto pyramids = image_pyramids(s, 3);
  BaProblem problem{pyramids, s.intrinsics, &s.basis, s.w0};
  DampingMLP mlp = make_damping_mlp(3, 9);
  mlp.weights[3] *= 1e3;
  SolverConfig cfg;
  cfg.iterations_per_level = 1;
  const PixelSet px = make_pixel_set(s.intrinsics, s.spec.width, s.spec.height, cfg.levels - 1, cfg.stride,
                                     s.basis.width(), s.basis.height());
  const std::vector<Pose> start(2, Pose::identity());
  const Eigen::VectorXd pooled =
      pool_residuals(featuremetric_residual(pyramids, cfg.levels - 1, s.intrinsics, start, s.basis, s.w0, px));
  for (double scale : {1.0, 50.0}) {
    cfg.residual_scale = scale;
    const double first = run_ba(problem, cfg, mlp).trace.records.front().lambda;
    CHECK(first == doctest::Approx(predict_lambda(mlp, pooled / scale, cfg.lambda_floor)).epsilon(1e-12));
  }
}

TEST_CASE("run_ba reduces the rotation error on a small-motion scene") {
  const SyntheticScene s = small_scene(52);
  const auto pyramids = image_pyramids(s, 3);
  BaProblem problem{pyramids, s.intrinsics, &s.basis, s.w0};
  SolverConfig cfg;
  cfg.mode = SolverMode::kConstantLambda;
  const BaResult r = run_ba(problem, cfg, zero_damping_mlp(3));
  const double before = rotation_angle(s.poses[1].rotation);
  const double after = rotation_angle(r.state.poses[1].rotation.transpose() * s.poses[1].rotation);
  CHECK(after < 0.1 * before);
  CHECK(r.trace.records.back().objective < r.trace.records.front().objective);
}

TEST_CASE("pose-only mode keeps the depth weights") {
  const SyntheticScene s = small_scene(53);
  const auto pyramids = image_pyramids(s, 3);
  BaProblem problem{pyramids, s.intrinsics, &s.basis, s.w0};
  SolverConfig cfg;
  cfg.mode = SolverMode::kPoseOnly;
  const BaResult r = solve(problem, cfg, make_damping_mlp(3, 1));
  CHECK(r.state.w == s.w0);
}

TEST_CASE("classic LM never accepts an increase of the objective") {
  const SyntheticScene s = small_scene(54);
  const auto pyramids = image_pyramids(s, 3);
  BaProblem problem{pyramids, s.intrinsics, &s.basis, s.w0};
  SolverConfig cfg;
  cfg.mode = SolverMode::kClassicLm;
  const BaResult r = solve(problem, cfg, DampingMLP{});
  CHECK_FALSE(r.trace.records.empty());
  for (int level = 0; level < cfg.levels; ++level) {
    int count = 0;
    for (const auto& rec : r.trace.records) count += rec.level == level;
    CHECK(count <= cfg.max_iterations);
  }
}
