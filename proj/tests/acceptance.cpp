// Acceptance checks. Prints one PASS/FAIL line per criterion; with
// criterion numbers as arguments only those run. The exit status is the
// number of failed criteria.

#include <CLI11.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fmba/harness.hpp"
#include "fmba/learning.hpp"
#include "fmba/metrics.hpp"
#include "fmba/residuals.hpp"
#include "fmba/scene.hpp"
#include "fmba/solver.hpp"

using namespace fmba;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-12) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

Vec2 project_vec(const Pose& p, const Vec3& x) {
  const NormalizedPixel q = project(p, x);
  return {q.x, q.y};
}

Vec6 random_twist(std::mt19937_64& rng, double rot, double trans) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec6 x;
  for (int i = 0; i < 6; ++i) x[i] = (i < 3 ? rot : trans) * u(rng);
  return x;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- scene sets -------------------------------------------------------------

/// Two views inside the measured convergence basin.
SceneSpec basin_spec(std::uint64_t seed) {
  SceneSpec s;
  s.rotation_deg = 3.0;
  s.translation = 0.15;
  s.seed = seed;
  return s;
}

/// Two views with large pose perturbations, used by the damping ablations.
SceneSpec large_spec(std::uint64_t seed) {
  SceneSpec s = basin_spec(seed);
  s.rotation_deg = 10.0;
  s.translation = 0.4;
  return s;
}

SolverConfig constant_solver(double lambda) {
  SolverConfig c;
  c.mode = SolverMode::kConstantLambda;
  c.lambda = lambda;
  return c;
}

TrainableParams untrained(const SceneSpec& s) {
  return make_params({s.channels, 8, s.basis_count}, 7, prior_weights(s.basis_count));
}

std::vector<SyntheticScene> scenes_for(SceneSpec (*spec)(std::uint64_t), std::uint64_t first, int count) {
  std::vector<SyntheticScene> out;
  for (auto seed : seed_range(first, count)) out.push_back(generate_scene(spec(seed)));
  return out;
}

AblationParams ablation_on(SceneSpec (*spec)(std::uint64_t), std::uint64_t first, int count) {
  AblationParams a;
  a.scene = spec(first);
  a.seeds = seed_range(first, count);
  return a;
}

std::string row_summary(const AblationRow& r) {
  return fmt("%s rot %.4g deg, trans %.4g cm, abs_rel %.4g (%d ok, %d failed)", r.condition.c_str(),
             r.median.pose.rotation_deg, r.median.pose.translation_cm, r.median.depth ? r.median.depth->abs_rel : -1.0,
             r.scenes, r.failures);
}

// ---- 1: Jacobian correctness ----------------------------------------------------

/// Finite-difference Jacobian entries whose forward and backward one-sided
/// differences disagree straddle a bilinear cell boundary; those entries are
/// not differentiable and are left out.
struct KinkAwareDiff {
  Eigen::VectorXd central;
  std::vector<bool> kink;
};

KinkAwareDiff kink_aware(const std::vector<double>& plus, const std::vector<double>& zero,
                         const std::vector<double>& minus, double h) {
  KinkAwareDiff d;
  d.central.resize(static_cast<Eigen::Index>(zero.size()));
  d.kink.resize(zero.size());
  for (std::size_t i = 0; i < zero.size(); ++i) {
    const double fwd = (plus[i] - zero[i]) / h;
    const double bwd = (zero[i] - minus[i]) / h;
    d.central[static_cast<Eigen::Index>(i)] = 0.5 * (fwd + bwd);
    d.kink[i] = std::abs(fwd - bwd) > 1e-2 * std::max({std::abs(fwd), std::abs(bwd), 1e-6});
  }
  return d;
}

Outcome criterion_1() {
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst_fm = 0.0, worst_proj = 0.0, worst_grid = 0.0, worst_depth = 0.0;
  long excluded = 0, entries = 0;

  // featuremetric_jacobian: 50 scenes x 20 random states.
  int fm_samples = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    SceneSpec spec = basin_spec(seed);
    spec.width = 32;
    spec.height = 24;
    spec.views = 2 + static_cast<int>(seed % 2);
    const SyntheticScene s = generate_scene(spec);
    const auto pyr = image_pyramids(s, 2);
    for (int t = 0; t < 20; ++t) {
      const int level = t % 2;
      const PixelSet px =
          make_pixel_set(s.intrinsics, spec.width, spec.height, level, 2, s.basis.width(), s.basis.height());
      std::vector<Pose> poses = s.poses;
      for (std::size_t i = 1; i < poses.size(); ++i) {
        poses[i] = compose(se3_exp(Twist::from_vector(random_twist(rng, 0.02, 0.03))), poses[i]);
      }
      DepthWeights w = s.w_gt;
      for (int k = 0; k < w.size(); ++k) w[k] += 0.02 * (u01(rng) - 0.5) * std::abs(s.w_gt[0]);
      const auto eval = [&](const std::vector<Pose>& p, const DepthWeights& ww) {
        return featuremetric_residual(pyr, level, s.intrinsics, p, s.basis, ww, px);
      };
      const ResidualBlock base = eval(poses, w);
      const JacobianBlocks jb = featuremetric_jacobian(pyr, level, s.intrinsics, poses, s.basis, w, px);
      const int views = s.views();
      const int cols = 6 * (views - 1) + s.basis.count();
      const auto rows = static_cast<Eigen::Index>(base.values.size());
      Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(rows, cols), numeric = analytic;
      for (const auto& vj : jb.views) {
        const int g = vj.view - 1;
        for (std::size_t a = 0; a < vj.pixels.size(); ++a) {
          for (int c = 0; c < jb.channels; ++c) {
            const Eigen::Index r = (static_cast<Eigen::Index>(g) * base.pixels + vj.pixels[a]) * base.channels + c;
            const Eigen::Index src = static_cast<Eigen::Index>(a) * jb.channels + c;
            analytic.block(r, 6 * g, 1, 6) = vj.pose.row(src);
            analytic.block(r, 6 * (views - 1), 1, s.basis.count()) = vj.weights.row(src);
          }
        }
      }
      constexpr double h = 1e-7;
      for (int col = 0; col < cols; ++col) {
        auto pp = poses, pm = poses;
        DepthWeights wp = w, wm = w;
        if (col < 6 * (views - 1)) {
          Vec6 e = Vec6::Zero();
          e[col % 6] = h;
          const int v = col / 6 + 1;
          pp[v] = compose(se3_exp(Twist::from_vector(e)), poses[v]);
          pm[v] = compose(se3_exp(Twist::from_vector(-e)), poses[v]);
        } else {
          wp[col - 6 * (views - 1)] += h;
          wm[col - 6 * (views - 1)] -= h;
        }
        const ResidualBlock rp = eval(pp, wp), rm = eval(pm, wm);
        const KinkAwareDiff d = kink_aware(rp.values, base.values, rm.values, h);
        for (Eigen::Index r = 0; r < rows; ++r) {
          const bool masked_change =
              rp.mask[static_cast<std::size_t>(r / base.channels)] != base.mask[static_cast<std::size_t>(r / base.channels)] ||
              rm.mask[static_cast<std::size_t>(r / base.channels)] != base.mask[static_cast<std::size_t>(r / base.channels)];
          ++entries;
          if (d.kink[static_cast<std::size_t>(r)] || masked_change) {
            ++excluded;
            analytic(r, col) = 0.0;
            continue;
          }
          numeric(r, col) = d.central[r];
        }
      }
      worst_fm = std::max(worst_fm, rel_err(analytic, numeric));
      ++fm_samples;
    }
  }

  // project_jacobians.
  {
    std::uniform_real_distribution<double> d(1.0, 6.0);
    constexpr double h = 1e-6;
    for (int n = 0; n < 1000;) {
      const Pose pose = se3_exp(Twist::from_vector(random_twist(rng, 0.3, 0.3)));
      const Vec3 x = backproject(NormalizedPixel{u01(rng) - 0.5, u01(rng) - 0.5}, d(rng));
      if (pose.apply(x).z() < 0.5) continue;
      const ProjectJacobians j = project_jacobians(pose, x);
      Eigen::Matrix<double, 2, 6> ft;
      Eigen::Matrix<double, 2, 3> fp;
      for (int k = 0; k < 6; ++k) {
        Vec6 e = Vec6::Zero();
        e[k] = h;
        ft.col(k) = (project_vec(compose(se3_exp(Twist::from_vector(e)), pose), x) -
                     project_vec(compose(se3_exp(Twist::from_vector(-e)), pose), x)) / (2 * h);
      }
      for (int k = 0; k < 3; ++k) {
        Vec3 e = Vec3::Zero();
        e[k] = h;
        fp.col(k) = (project_vec(pose, x + e) - project_vec(pose, x - e)) / (2 * h);
      }
      worst_proj = std::max({worst_proj, rel_err(j.d_twist, ft), rel_err(j.d_point, fp)});
      ++n;
    }
  }

  // sample_bilinear_grad, away from texel lines.
  {
    FeatureGrid g(16, 12, 3);
    for (auto& x : g.data()) x = u01(rng) * 2.0 - 1.0;
    constexpr double h = 1e-6;
    for (int n = 0; n < 1000;) {
      const double u = 15.0 * u01(rng), v = 11.0 * u01(rng);
      if (std::abs(u - std::round(u)) < 2 * h || std::abs(v - std::round(v)) < 2 * h) continue;
      const GridSample s = sample_bilinear_grad(g, u, v);
      Eigen::MatrixXd fd(3, 2);
      fd.col(0) = (sample_bilinear(g, u + h, v) - sample_bilinear(g, u - h, v)) / (2 * h);
      fd.col(1) = (sample_bilinear(g, u, v + h) - sample_bilinear(g, u, v - h)) / (2 * h);
      worst_grid = std::max(worst_grid, rel_err(s.gradient, fd));
      ++n;
    }
  }

  // depth_at_pixel, away from the ReLU kink.
  {
    DepthBasis b{FeatureGrid(10, 8, 6)};
    for (auto& x : b.maps.data()) x = u01(rng) * 3.0 - 1.0;
    std::normal_distribution<double> nd(0.0, 1.0);
    constexpr double h = 1e-6;
    for (int n = 0; n < 1000;) {
      DepthWeights w(6);
      for (int i = 0; i < 6; ++i) w[i] = nd(rng);
      const long j = static_cast<long>(u01(rng) * 80) % 80;
      const PixelDepth pd = depth_at_pixel(b, w, j);
      const double z = Eigen::Map<const Eigen::VectorXd>(b.maps.data().data() + j * 6, 6).dot(w);
      if (std::abs(z) < 1e-3) continue;
      Eigen::VectorXd fd(6);
      for (int i = 0; i < 6; ++i) {
        DepthWeights wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        fd[i] = (depth_at_pixel(b, wp, j).depth - depth_at_pixel(b, wm, j).depth) / (2 * h);
      }
      worst_depth = std::max(worst_depth, rel_err(pd.gradient, fd));
      ++n;
    }
  }

  const double worst = std::max({worst_fm, worst_proj, worst_grid, worst_depth});
  return {worst <= 1e-4 && fm_samples >= 1000,
          fmt("max rel err featuremetric %.2e (%d states, %ld of %ld entries on kinks), project %.2e, "
              "bilinear %.2e, depth %.2e; 1000 samples each",
              worst_fm, fm_samples, excluded, entries, worst_proj, worst_grid, worst_depth)};
}

// ---- 2: end-to-end differentiability --------------------------------------------

Outcome criterion_2() {
  SceneSpec spec;
  spec.width = 4;
  spec.height = 4;
  spec.channels = 2;
  spec.basis_count = 2;
  spec.rotation_deg = 2.0;
  spec.translation = 0.05;
  spec.seed = 3;
  const SyntheticScene s = generate_scene(spec);
  const TrainableParams p = make_params({2, 2, 2}, 1, s.w0);
  std::string detail;
  bool pass = true;
  for (int iterations : {1, 2}) {
    SolverConfig cfg;
    cfg.levels = 1;
    cfg.iterations_per_level = iterations;
    cfg.stride = 1;
    const ForwardPass pass_fw = forward_solve(p, s, cfg, true);
    const auto g = backward_solve(pass_fw, loss_gradient(pass_fw, s, {}).upstream);
    const auto theta = p.flatten();
    double gmax = 0.0;
    for (double x : g) gmax = std::max(gmax, std::abs(x));
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta[i]));
      TrainableParams q = p;
      auto t = theta;
      t[i] += h;
      q.assign(t);
      const double lp = loss_gradient(forward_solve(q, s, cfg, false), s, {}).loss.total;
      t[i] -= 2 * h;
      q.assign(t);
      const double lm = loss_gradient(forward_solve(q, s, cfg, false), s, {}).loss.total;
      const double fd = (lp - lm) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6 * gmax}));
    }
    pass = pass && worst <= 1e-3;
    detail += fmt("%s%d-iteration unroll: max rel err %.2e over all %zu parameters", detail.empty() ? "" : "; ",
                  iterations, worst, theta.size());
  }
  return {pass, detail};
}

// ---- 3: solver correctness ------------------------------------------------------

Outcome criterion_3() {
  std::mt19937_64 rng(1003);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> views_d(2, 5), k_d(1, 10);
  std::uniform_real_distribution<double> lambda_d(0.0, 2.0);
  const auto random_blocks = [&](int views, int k, int rows) {
    JacobianBlocks jb;
    jb.channels = 1;
    jb.basis_count = k;
    for (int v = 1; v < views; ++v) {
      ViewJacobian vj;
      vj.view = v;
      for (int r = 0; r < rows; ++r) vj.pixels.push_back(r);
      vj.pose = Eigen::MatrixXd::NullaryExpr(rows, 6, [&] { return n(rng); });
      vj.weights = Eigen::MatrixXd::NullaryExpr(rows, k, [&] { return n(rng); });
      vj.residual = Eigen::VectorXd::NullaryExpr(rows, [&] { return n(rng); });
      jb.views.push_back(std::move(vj));
    }
    return jb;
  };
  const auto dense = [](const JacobianBlocks& jb, int views) {
    Eigen::Index rows = 0;
    for (const auto& v : jb.views) rows += v.pose.rows();
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(rows, 6 * (views - 1) + jb.basis_count);
    Eigen::VectorXd r(rows);
    Eigen::Index at = 0;
    for (const auto& v : jb.views) {
      j.block(at, 6 * (v.view - 1), v.pose.rows(), 6) = v.pose;
      j.block(at, 6 * (views - 1), v.pose.rows(), jb.basis_count) = v.weights;
      r.segment(at, v.pose.rows()) = v.residual;
      at += v.pose.rows();
    }
    return std::pair{j, r};
  };
  const auto stacked = [](const LmStep& s) {
    Eigen::VectorXd d(static_cast<Eigen::Index>(6 * s.twists.size()) + s.dw.size());
    for (std::size_t i = 0; i < s.twists.size(); ++i) d.segment<6>(static_cast<Eigen::Index>(6 * i)) = s.twists[i].vector();
    d.tail(s.dw.size()) = s.dw;
    return d;
  };

  double worst_schur = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int views = views_d(rng);
    const JacobianBlocks jb = random_blocks(views, k_d(rng), 40);
    const double lambda = lambda_d(rng);
    const auto [j, r] = dense(jb, views);
    const Eigen::MatrixXd h = j.transpose() * j;
    Eigen::VectorXd d = h.diagonal().cwiseSqrt();
    d = d.cwiseMax(kDampingFloor * d.maxCoeff());
    const Eigen::MatrixXd a = h + lambda * Eigen::MatrixXd(d.asDiagonal());
    const Eigen::VectorXd oracle = -a.fullPivLu().solve(j.transpose() * r);
    worst_schur = std::max(worst_schur, rel_err(stacked(lm_step(jb, views, lambda)), oracle));
  }

  double worst_gn = 0.0;
  for (int t = 0; t < 20; ++t) {
    const JacobianBlocks jb = random_blocks(3, 4, 25);
    const auto [j, r] = dense(jb, 3);
    const Eigen::VectorXd optimum = -j.colPivHouseholderQr().solve(r);
    worst_gn = std::max(worst_gn, rel_err(stacked(lm_step(jb, 3, 0.0)), optimum));
  }
  return {worst_schur <= 1e-10 && worst_gn <= 1e-8,
          fmt("Schur step vs dense oracle max rel err %.2e over 100 systems; GN step vs linear optimum %.2e over 20",
              worst_schur, worst_gn)};
}

// ---- 4: convergence ----------------------------------------------------------------

Outcome criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  int ok = 0, total = 0;
  std::vector<double> rot, trel, absrel;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const SyntheticScene s = generate_scene(basin_spec(seed));
    const auto pyr = image_pyramids(s, 3);
    const BaResult r = run_ba(BaProblem{pyr, s.intrinsics, &s.basis, s.w0}, constant_solver(0.5), zero_damping_mlp(3));
    const PoseMetrics pm = pose_metrics(r.state.poses, s.poses);
    const double baseline = s.poses[1].translation.norm();
    const double t = (r.state.poses[1].translation - s.poses[1].translation).norm() / baseline;
    const double a = depth_metrics(depth_at_resolution(s.basis, r.state.w, s.spec.width, s.spec.height), s.depth).abs_rel;
    rot.push_back(pm.rotation_deg);
    trel.push_back(t);
    absrel.push_back(a);
    ok += pm.rotation_deg < 0.1 && t < 0.01 && a < 1e-2;
    ++total;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rate = static_cast<double>(ok) / total;
  return {rate >= 0.9 && secs <= 300.0,
          fmt("%d/%d scenes (%.1f%%) within rot < 0.1 deg, trans < 1%% of baseline, abs_rel < 1e-2; "
              "medians %.4f deg, %.4f, %.5f; runtime limit 300 s",
              ok, total, 100.0 * rate, median(rot), median(trel), median(absrel))};
}

// ---- 5: Gauss-Newton vs LM -----------------------------------------------------------

Outcome criterion_5() {
  const AblationParams a = ablation_on(large_spec, 1, 60);
  const AblationTable t = run_ablation(Suite::kGnVsLm, a, untrained(a.scene));
  const AblationRow& gn = t.row("gauss_newton");
  const AblationRow& lm = t.row("predicted_lambda");
  const bool pass = gn.median.pose.rotation_deg > lm.median.pose.rotation_deg &&
                    gn.median.pose.translation_cm > lm.median.pose.translation_cm;
  return {pass, row_summary(gn) + " vs " + row_summary(lm) + "; " + row_summary(t.row("classic_lm"))};
}

// ---- 6: constant lambda sweep and the trained damping MLP -----------------------------

Outcome criterion_6() {
  const std::vector<SyntheticScene> train_scenes = scenes_for(large_spec, 1000, 100);
  TrainConfig tc;
  tc.groups = kGroupMlp;
  tc.learning_rate = 1e-3;
  tc.steps = 300;
  tc.batch_size = 4;
  tc.schedule = LrSchedule::kFixedStep;
  tc.halve_every = 100;
  const TrainResult trained = train(untrained(large_spec(1)), train_scenes, tc);

  const AblationParams a = ablation_on(large_spec, 1, 60);
  const AblationTable t = run_ablation(Suite::kConstantLambdaSweep, a, trained.params);
  std::vector<double> curve;
  std::string detail = "median rot (deg) by lambda:";
  for (double l : a.lambdas) {
    std::ostringstream name;
    name << "constant_lambda_" << l;
    const AblationRow& r = t.row(name.str());
    curve.push_back(r.median.pose.rotation_deg);
    detail += fmt(" %g -> %.4g;", l, r.median.pose.rotation_deg);
  }
  const auto best = static_cast<std::size_t>(std::min_element(curve.begin(), curve.end()) - curve.begin());
  const bool u_shape = best > 0 && best + 1 < curve.size();
  std::ostringstream best_name;
  best_name << "constant_lambda_" << a.lambdas[best];
  const AblationRow& best_row = t.row(best_name.str());
  const AblationRow& mlp = t.row("predicted_lambda");
  const bool mlp_ok = mlp.median.pose.rotation_deg <= best_row.median.pose.rotation_deg &&
                      mlp.median.pose.translation_cm <= best_row.median.pose.translation_cm;
  detail += fmt(" interior minimum: %s; trained MLP (%d steps, %d singular skips) ", u_shape ? "yes" : "no", tc.steps,
                trained.skipped_solves) +
            row_summary(mlp) + " vs best " + row_summary(best_row);
  return {u_shape && mlp_ok, detail};
}

// ---- 7: pose-only vs joint ------------------------------------------------------------

Outcome criterion_7() {
  const AblationParams a = ablation_on(large_spec, 1, 60);
  const AblationTable t = run_ablation(Suite::kPoseOnlyVsJoint, a, untrained(a.scene));
  const AblationRow& joint = t.row("joint");
  const AblationRow& pose = t.row("pose_only");
  const bool pass = joint.median.depth && pose.median.depth &&
                    joint.median.depth->abs_rel <= pose.median.depth->abs_rel &&
                    joint.median.pose.rotation_deg <= pose.median.pose.rotation_deg &&
                    joint.median.pose.translation_deg <= pose.median.pose.translation_deg &&
                    joint.median.pose.translation_cm <= pose.median.pose.translation_cm;
  return {pass, row_summary(joint) + " vs " + row_summary(pose)};
}

// ---- 8: multi-view -------------------------------------------------------------------------

Outcome criterion_8() {
  AblationParams a = ablation_on(basin_spec, 1, 50);
  a.scene.views = 5;
  const AblationTable t = run_ablation(Suite::kMultiview235, a, untrained(a.scene));
  const std::vector<std::pair<const char*, std::function<double(const MetricsReport&)>>> fields = {
      {"rotation_deg", [](const MetricsReport& m) { return m.pose.rotation_deg; }},
      {"translation_deg", [](const MetricsReport& m) { return m.pose.translation_deg; }},
      {"translation_cm", [](const MetricsReport& m) { return m.pose.translation_cm; }},
      {"abs_rel", [](const MetricsReport& m) { return m.depth->abs_rel; }},
      {"sqr_rel", [](const MetricsReport& m) { return m.depth->sqr_rel; }},
      {"rmse_linear", [](const MetricsReport& m) { return m.depth->rmse_linear; }},
      {"rmse_log", [](const MetricsReport& m) { return m.depth->rmse_log; }},
      {"rmse_log_scale_inv", [](const MetricsReport& m) { return m.depth->rmse_log_scale_inv; }},
  };
  bool pass = true;
  std::string detail;
  for (const auto& [name, get] : fields) {
    std::vector<double> v;
    for (int n : a.view_counts) {
      const AblationRow& r = t.row("views_" + std::to_string(n));
      if (!r.median.depth) return {false, "no successful solves for " + r.condition};
      v.push_back(get(r.median));
    }
    const bool mono = std::is_sorted(v.rbegin(), v.rend());
    pass = pass && mono;
    detail += fmt("%s%s %.3g/%.3g/%.3g%s", detail.empty() ? "" : "; ", name, v[0], v[1], v[2], mono ? "" : " (increases)");
  }
  return {pass, "medians for 2/3/5 views over 50 seeds: " + detail};
}

// ---- 9: basin of the trained features ----------------------------------------------------

Outcome criterion_9() {
  const std::vector<SyntheticScene> train_scenes = scenes_for(basin_spec, 1000, 100);
  TrainConfig tc;
  tc.groups = kGroupFeatures;
  tc.learning_rate = 1e-3;
  tc.steps = 150;
  tc.batch_size = 4;
  tc.schedule = LrSchedule::kFixedStep;
  tc.halve_every = 100;
  const TrainableParams init = untrained(basin_spec(1));
  const TrainResult trained = train(init, train_scenes, tc);

  BasinProbeConfig probe;
  probe.probes = 10;
  probe.radius = 5;
  probe.step = 1.0;
  probe.level = 0;
  int raw_total = 0, trained_total = 0, trained_single = 0, raw_single = 0, probes = 0;
  for (std::uint64_t seed = 501; seed <= 520; ++seed) {
    const SyntheticScene s = generate_scene(basin_spec(seed));
    probe.seed = seed;
    std::vector<FeaturePyramid> learned;
    for (const auto& img : s.images) learned.push_back(compute_features(trained.params, img, 1));
    const auto raw = basin_minima(s, image_pyramids(s, 1), probe);
    const auto feat = basin_minima(s, learned, probe);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw_total += raw[i];
      trained_total += feat[i];
      raw_single += raw[i] == 1;
      trained_single += feat[i] == 1;
      ++probes;
    }
  }
  const double fraction = static_cast<double>(trained_single) / probes;
  return {trained_total <= raw_total && fraction >= 0.8,
          fmt("local minima over %d probes (radius 5): trained %d vs raw %d; single-minimum probes trained %.0f%% "
              "(raw %.0f%%), required 80%%",
              probes, trained_total, raw_total, 100.0 * fraction, 100.0 * raw_single / probes)};
}

// ---- 10: metric self-consistency ---------------------------------------------------------

Outcome criterion_10() {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> depth(0.3, 8.0), scale(1e-3, 1e3);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst_scale = 0.0, worst_ate = 0.0, worst_zero = 0.0;
  for (int t = 0; t < 200; ++t) {
    FeatureGrid pred(12, 9, 1), gt(12, 9, 1);
    for (auto& x : pred.data()) x = depth(rng);
    for (auto& x : gt.data()) x = depth(rng);
    const double base = depth_metrics(pred, gt).rmse_log_scale_inv;
    FeatureGrid scaled = pred;
    const double k = scale(rng);
    for (auto& x : scaled.data()) x *= k;
    worst_scale = std::max(worst_scale, std::abs(depth_metrics(scaled, gt).rmse_log_scale_inv - base));

    const DepthMetrics same = depth_metrics(gt, gt);
    worst_zero = std::max({worst_zero, same.abs_rel, same.sqr_rel, same.rmse_linear, same.rmse_log,
                           same.rmse_log_scale_inv});

    std::vector<Vec3> traj;
    std::vector<Pose> poses = {Pose::identity()};
    for (int i = 0; i < 5; ++i) {
      traj.emplace_back(n(rng), n(rng), n(rng));
      poses.push_back(se3_exp(Twist::from_vector(random_twist(rng, 1.0, 2.0))));
    }
    const Pose rigid = se3_exp(Twist::from_vector(random_twist(rng, 3.0, 10.0)));
    std::vector<Vec3> moved;
    for (const auto& x : traj) moved.push_back(rigid.apply(x));
    worst_ate = std::max(worst_ate, ate(moved, traj));
    const PoseMetrics pm = pose_metrics(poses, poses);
    worst_zero = std::max({worst_zero, pm.rotation_deg, pm.translation_deg, pm.translation_cm, ate(traj, traj)});
  }
  return {worst_scale <= 1e-12 && worst_ate <= 1e-9 && worst_zero <= 1e-12,
          fmt("scale-invariant log RMSE changes by at most %.1e under scaling; ATE of rigidly moved copies %.1e; "
              "largest metric at pred = gt %.1e (200 trials)",
              worst_scale, worst_ate, worst_zero)};
}

// ---- 11: contracts -----------------------------------------------------------------------------

Outcome criterion_11() {
  int solves = 0;
  std::string violation;
  const std::vector<SolverMode> modes = {SolverMode::kPredictedLambda, SolverMode::kConstantLambda,
                                         SolverMode::kGaussNewton, SolverMode::kPoseOnly};
  for (std::uint64_t seed = 1; seed <= 12 && violation.empty(); ++seed) {
    SceneSpec spec = seed % 3 == 0 ? large_spec(seed) : basin_spec(seed);
    spec.views = 2 + static_cast<int>(seed % 4);
    spec.noise = seed % 2 ? 0.0 : 5.0;
    const SyntheticScene s = generate_scene(spec);
    TrainableParams p = make_params({spec.channels, 4, spec.basis_count}, seed, s.w0);
    if (seed % 4 == 0) p.mlp = zero_damping_mlp(p.mlp.input_dim());
    for (SolverMode mode : modes) {
      SolverConfig cfg;
      cfg.mode = mode;
      const ForwardPass pass = forward_solve(p, s, cfg, seed % 5 == 0);
      const auto& rec = pass.result.trace.records;
      ++solves;
      if (rec.size() != 15) violation = fmt("%zu iterations in mode %s", rec.size(), mode_name(mode));
      for (const auto& r : rec) {
        if (!(r.lambda >= 0.0)) violation = fmt("negative lambda %g", r.lambda);
      }
      for (double d : pass.depth.data()) {
        if (!(d >= 0.0)) violation = fmt("negative depth %g", d);
      }
      const Pose& ref = pass.result.state.poses[0];
      if (ref.rotation != Mat3::Identity() || !ref.translation.isZero(0.0)) violation = "reference pose moved";
      if (!violation.empty()) break;
    }
  }
  return {violation.empty(),
          violation.empty() ? fmt("%d differentiable solves (2 to 5 views, noisy and noise-free, 4 modes): "
                                  "15 iterations, lambda >= 0, depth >= 0, reference pose identity in all",
                                  solves)
                            : "violation: " + violation};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("criteria", only, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"Jacobian correctness", criterion_1}},
      {2, {"end-to-end differentiability", criterion_2}},
      {3, {"solver correctness", criterion_3}},
      {4, {"convergence in the basin", criterion_4}},
      {5, {"Gauss-Newton vs LM", criterion_5}},
      {6, {"constant lambda sweep and trained damping", criterion_6}},
      {7, {"pose-only vs joint", criterion_7}},
      {8, {"multi-view trend", criterion_8}},
      {9, {"basin of trained features", criterion_9}},
      {10, {"metric self-consistency", criterion_10}},
      {11, {"contract checks", criterion_11}},
  };
  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("raised: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "criterion " << id << " (" << entry.first << "): " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail
              << " [" << fmt("%.1f", secs) << " s]" << std::endl;
  }
  return failed;
}
