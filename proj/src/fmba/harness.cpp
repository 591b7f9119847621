#include "fmba/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace fmba {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string describe(const SceneSpec& s) {
  std::ostringstream os;
  os.precision(17);
  os << "scene:" << s.width << "x" << s.height << ",views=" << s.views << ",family=" << family_name(s.family)
     << ",mean_depth=" << s.mean_depth << ",depth_variation=" << s.depth_variation << ",tilt=" << s.plane_tilt_deg
     << ",rot=" << s.rotation_deg << ",trans=" << s.translation << ",intensity=" << s.intensity
     << ",noise=" << s.noise << ",channels=" << s.channels << ",basis=" << s.basis_count
     << ",focal=" << s.focal_scale;
  return os.str();
}

std::string describe(const SolverConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "solver:" << mode_name(c.mode) << ",lambda=" << c.lambda << ",levels=" << c.levels
     << ",iters=" << c.iterations_per_level << ",floor=" << c.lambda_floor
     << ",residual_scale=" << c.residual_scale << ",stride=" << c.stride
     << ",gauge=" << c.scale_gauge << ",max_iters=" << c.max_iterations << ",tol=" << c.convergence_threshold
     << ",lambda0=" << c.initial_lambda;
  return os.str();
}

std::string params_digest(const TrainableParams& p) {
  const auto flat = p.flatten();
  std::string bytes(flat.size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), flat.data(), bytes.size());
  return fnv1a_hex(bytes);
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Field accessors shared by the aggregation and the CSV writer.
struct Field {
  const char* name;
  std::function<double(const MetricsReport&)> get;
  std::function<void(MetricsReport&, double)> set;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"rotation_deg", [](const MetricsReport& r) { return r.pose.rotation_deg; },
       [](MetricsReport& r, double v) { r.pose.rotation_deg = v; }},
      {"translation_deg", [](const MetricsReport& r) { return r.pose.translation_deg; },
       [](MetricsReport& r, double v) { r.pose.translation_deg = v; }},
      {"translation_cm", [](const MetricsReport& r) { return r.pose.translation_cm; },
       [](MetricsReport& r, double v) { r.pose.translation_cm = v; }},
      {"abs_rel", [](const MetricsReport& r) { return r.depth ? r.depth->abs_rel : kNaN; },
       [](MetricsReport& r, double v) { r.depth->abs_rel = v; }},
      {"sqr_rel", [](const MetricsReport& r) { return r.depth ? r.depth->sqr_rel : kNaN; },
       [](MetricsReport& r, double v) { r.depth->sqr_rel = v; }},
      {"rmse_linear", [](const MetricsReport& r) { return r.depth ? r.depth->rmse_linear : kNaN; },
       [](MetricsReport& r, double v) { r.depth->rmse_linear = v; }},
      {"rmse_log", [](const MetricsReport& r) { return r.depth ? r.depth->rmse_log : kNaN; },
       [](MetricsReport& r, double v) { r.depth->rmse_log = v; }},
      {"rmse_log_scale_inv", [](const MetricsReport& r) { return r.depth ? r.depth->rmse_log_scale_inv : kNaN; },
       [](MetricsReport& r, double v) { r.depth->rmse_log_scale_inv = v; }},
      {"invalid_fraction", [](const MetricsReport& r) { return r.depth ? r.depth->invalid_fraction : kNaN; },
       [](MetricsReport& r, double v) { r.depth->invalid_fraction = v; }},
  };
  return f;
}

MetricsReport aggregate(const std::vector<MetricsReport>& reports, bool median) {
  MetricsReport out;
  out.depth = DepthMetrics{};
  for (const auto& f : fields()) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(f.get(r));
    f.set(out, median ? median_of(v) : mean_of(v));
  }
  for (const auto& r : reports) out.pose.degenerate_direction = out.pose.degenerate_direction || r.pose.degenerate_direction;
  return out;
}

using SolveFn = std::function<MetricsReport(const SyntheticScene&)>;

AblationRow run_condition(const std::string& condition, const std::vector<SyntheticScene>& scenes,
                          const std::vector<std::uint64_t>& seeds, int generation_failures, const SolveFn& solve,
                          const std::string& hash_text) {
  AblationRow row;
  row.condition = condition;
  row.seeds = seeds;
  row.failures = generation_failures;
  row.config_hash = fnv1a_hex(hash_text + "|condition:" + condition);
  std::vector<MetricsReport> reports;
  for (const auto& scene : scenes) {
    try {
      reports.push_back(solve(scene));
    } catch (const Error&) {
      ++row.failures;
    }
  }
  row.scenes = static_cast<int>(reports.size());
  row.median = aggregate(reports, true);
  row.mean = aggregate(reports, false);
  return row;
}

SyntheticScene view_pair(const SyntheticScene& scene, int view) {
  SyntheticScene s = scene;
  s.spec.views = 2;
  s.images = {scene.images[0], scene.images[static_cast<std::size_t>(view)]};
  s.poses = {scene.poses[0], scene.poses[static_cast<std::size_t>(view)]};
  return s;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

const char* suite_name(Suite s) {
  switch (s) {
    case Suite::kGnVsLm: return "gn_vs_lm";
    case Suite::kConstantLambdaSweep: return "constant_lambda_sweep";
    case Suite::kPoseOnlyVsJoint: return "pose_only_vs_joint";
    case Suite::kRawVsTrainedFeatures: return "raw_vs_trained_features";
    case Suite::kMultiview235: return "multiview_2_3_5";
  }
  return "unknown";
}

Suite parse_suite(const std::string& name) {
  for (Suite s : {Suite::kGnVsLm, Suite::kConstantLambdaSweep, Suite::kPoseOnlyVsJoint, Suite::kRawVsTrainedFeatures,
                  Suite::kMultiview235}) {
    if (name == suite_name(s)) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown ablation suite '" + name + "'");
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, int count) {
  if (count < 0) throw Error(ErrorCode::kInvalidArgument, "seed count must be nonnegative");
  std::vector<std::uint64_t> out;
  for (int i = 0; i < count; ++i) out.push_back(first + static_cast<std::uint64_t>(i));
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

const AblationRow& AblationTable::row(const std::string& condition) const {
  for (const auto& r : rows) {
    if (r.condition == condition) return r;
  }
  throw Error(ErrorCode::kInvalidArgument, "no ablation row named '" + condition + "'");
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "suite,condition,aggregate";
  for (const auto& f : fields()) os << "," << f.name;
  os << ",scenes,failures,config_hash,seeds\n";
  for (const auto& r : rows) {
    for (const bool median : {true, false}) {
      const MetricsReport& m = median ? r.median : r.mean;
      os << suite_name(suite) << "," << r.condition << "," << (median ? "median" : "mean");
      for (const auto& f : fields()) os << "," << format_double(f.get(m));
      os << "," << r.scenes << "," << r.failures << "," << r.config_hash << ",";
      for (std::size_t i = 0; i < r.seeds.size(); ++i) os << (i ? ";" : "") << r.seeds[i];
      os << "\n";
    }
  }
  return os.str();
}

MetricsReport evaluate_solve(const SolverState& state, const FeatureGrid& depth, const SyntheticScene& scene) {
  MetricsReport m;
  m.pose = pose_metrics(state.poses, scene.poses);
  m.depth = depth_metrics(depth, scene.depth);
  return m;
}

AblationTable run_ablation(Suite suite, const AblationParams& ablation, const TrainableParams& params) {
  params.validate();
  ablation.solver.validate();
  if (ablation.seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "an ablation needs at least one seed");

  SceneSpec base = ablation.scene;
  if (suite == Suite::kMultiview235) {
    if (ablation.view_counts.empty()) throw Error(ErrorCode::kInvalidArgument, "no view counts given");
    base.views = *std::max_element(ablation.view_counts.begin(), ablation.view_counts.end());
  }
  std::vector<SyntheticScene> scenes;
  int generation_failures = 0;
  for (const auto seed : ablation.seeds) {
    SceneSpec s = base;
    s.seed = seed;
    try {
      scenes.push_back(generate_scene(s));
    } catch (const Error&) {
      ++generation_failures;
    }
  }

  const std::string hash_base = std::string("suite:") + suite_name(suite) + "|" + describe(base) + "|" +
                                describe(ablation.solver) + "|params:" + params_digest(params);
  const auto with_mode = [&](SolverMode mode, double lambda = 0.5) {
    SolverConfig c = ablation.solver;
    c.mode = mode;
    c.lambda = lambda;
    return c;
  };
  const auto solver_fn = [](const TrainableParams& p, const SolverConfig& c) -> SolveFn {
    return [p, c](const SyntheticScene& scene) {
      const ForwardPass pass = forward_solve(p, scene, c, false);
      return evaluate_solve(pass.result.state, pass.depth, scene);
    };
  };
  const auto add = [&](AblationTable& t, const std::string& name, const SolveFn& fn, const std::string& extra = "") {
    t.rows.push_back(run_condition(name, scenes, ablation.seeds, generation_failures, fn, hash_base + extra));
  };

  AblationTable table;
  table.suite = suite;
  switch (suite) {
    case Suite::kGnVsLm:
      add(table, "gauss_newton", solver_fn(params, with_mode(SolverMode::kGaussNewton)));
      add(table, "predicted_lambda", solver_fn(params, with_mode(SolverMode::kPredictedLambda)));
      add(table, "classic_lm", solver_fn(params, with_mode(SolverMode::kClassicLm)));
      break;
    case Suite::kConstantLambdaSweep:
      for (double l : ablation.lambdas) {
        std::ostringstream name;
        name << "constant_lambda_" << l;
        add(table, name.str(), solver_fn(params, with_mode(SolverMode::kConstantLambda, l)));
      }
      add(table, "predicted_lambda", solver_fn(params, with_mode(SolverMode::kPredictedLambda)));
      break;
    case Suite::kPoseOnlyVsJoint:
      add(table, "pose_only", solver_fn(params, with_mode(SolverMode::kPoseOnly)));
      add(table, "joint", solver_fn(params, with_mode(SolverMode::kPredictedLambda)));
      break;
    case Suite::kRawVsTrainedFeatures: {
      TrainableParams raw = params;
      raw.features = make_params(params.shape(), 0, params.w0).features;
      add(table, "raw_features", solver_fn(raw, with_mode(SolverMode::kPredictedLambda)), "|raw:" + params_digest(raw));
      add(table, "trained_features", solver_fn(params, with_mode(SolverMode::kPredictedLambda)));
      break;
    }
    case Suite::kMultiview235:
      for (int n : ablation.view_counts) {
        const SolveFn inner = solver_fn(params, with_mode(SolverMode::kPredictedLambda));
        add(table, "views_" + std::to_string(n),
            [inner, n](const SyntheticScene& scene) { return inner(subset_views(scene, n)); });
      }
      break;
  }
  return table;
}

CorrespondenceSet make_correspondences(const SyntheticScene& scene, int count, double sigma_px, std::uint64_t seed) {
  if (count < 0 || !(sigma_px >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "invalid correspondence request");
  const int w = scene.depth.width();
  const int h = scene.depth.height();
  const Intrinsics& k = scene.intrinsics;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pu(0, w - 1), pv(0, h - 1);
  std::normal_distribution<double> noise(0.0, sigma_px);
  CorrespondenceSet out;
  for (int attempt = 0; attempt < 100 * std::max(count, 1) && out.point_count() < count; ++attempt) {
    const int u = pu(rng), v = pv(rng);
    const double d = scene.depth.at(u, v, 0);
    if (!(d > kDepthEpsilon)) continue;
    const NormalizedPixel q = k.normalize(u, v);
    const Vec3 x(q.x * d, q.y * d, d);
    std::vector<NormalizedPixel> seen;
    for (const auto& pose : scene.poses) {
      NormalizedPixel p;
      if (!try_project<double>(pose, x, p)) break;
      const Vec2 px = k.to_pixel(p);
      if (!(px.x() >= 0.0 && px.x() <= w - 1 && px.y() >= 0.0 && px.y() <= h - 1)) break;
      seen.push_back(p);
    }
    if (seen.size() != scene.poses.size()) continue;
    const int id = out.point_count();
    out.points.push_back(x);
    for (std::size_t i = 0; i < seen.size(); ++i) {
      Correspondence c;
      c.view = static_cast<int>(i);
      c.point = id;
      c.observed = {seen[i].x + noise(rng) / k.fx, seen[i].y + noise(rng) / k.fy};
      out.observations.push_back(c);
    }
  }
  return out;
}

GeometricBaResult geometric_ba_baseline(const SyntheticScene& scene, const CorrespondenceSet& data, double mean_depth,
                                        int max_iterations) {
  const int views = scene.views();
  const int m = data.point_count();
  if (views < 2) throw Error(ErrorCode::kInvalidArgument, "bundle adjustment needs at least two views");
  if (!(mean_depth > 0.0)) throw Error(ErrorCode::kInvalidArgument, "mean depth must be positive");
  std::vector<int> per_view(static_cast<std::size_t>(views), 0);
  std::vector<const Correspondence*> reference(static_cast<std::size_t>(m), nullptr);
  for (const auto& c : data.observations) {
    if (c.view < 0 || c.view >= views || c.point < 0 || c.point >= m) {
      throw Error(ErrorCode::kIndexOutOfRange, "correspondence references a missing view or point");
    }
    ++per_view[static_cast<std::size_t>(c.view)];
    if (c.view == 0) reference[static_cast<std::size_t>(c.point)] = &c;
  }
  for (int i = 1; i < views; ++i) {
    if (per_view[static_cast<std::size_t>(i)] < 5) {
      throw Error(ErrorCode::kSingularSystem, "view " + std::to_string(i) + " has fewer than 5 correspondences");
    }
  }

  GeometricBaResult r;
  r.poses.assign(static_cast<std::size_t>(views), Pose::identity());
  r.points.resize(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    const auto* c = reference[static_cast<std::size_t>(j)];
    if (c == nullptr) throw Error(ErrorCode::kInvalidArgument, "every point needs a reference-view observation");
    r.points[static_cast<std::size_t>(j)] = Vec3(c->observed.x, c->observed.y, 1.0) * mean_depth;
  }

  const int pose_dim = 6 * (views - 1);
  const int n = pose_dim + 3 * m;
  const auto cost_of = [&](const std::vector<Pose>& poses, const std::vector<Vec3>& points) {
    const ResidualBlock b = geometric_residual(poses, points, data.observations);
    double s = 0.0;
    for (double e : b.values) s += e * e;
    return 0.5 * s;
  };
  const auto gauge = [&](std::vector<Pose>& poses, std::vector<Vec3>& points) {
    double z = 0.0;
    for (const auto& p : points) z += p.z();
    z /= m;
    if (!(z > 0.0)) return;
    const double f = mean_depth / z;
    for (auto& p : points) p *= f;
    for (std::size_t i = 1; i < poses.size(); ++i) poses[i].translation *= f;
  };

  double lambda = 1e-3;
  double cost = cost_of(r.poses, r.points);
  for (int it = 0; it < max_iterations; ++it) {
    r.iterations = it + 1;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(data.observations.size()), n);
    Eigen::VectorXd res = Eigen::VectorXd::Zero(jac.rows());
    for (std::size_t o = 0; o < data.observations.size(); ++o) {
      const auto& c = data.observations[o];
      const Pose& pose = r.poses[static_cast<std::size_t>(c.view)];
      const Vec3& x = r.points[static_cast<std::size_t>(c.point)];
      NormalizedPixel q;
      if (!try_project<double>(pose, x, q)) continue;
      const ProjectJacobians pj = project_jacobians<double>(pose, x);
      const auto row = static_cast<Eigen::Index>(2 * o);
      res[row] = q.x - c.observed.x;
      res[row + 1] = q.y - c.observed.y;
      if (c.view > 0) jac.block<2, 6>(row, 6 * (c.view - 1)) = pj.d_twist;
      jac.block<2, 3>(row, pose_dim + 3 * c.point) = pj.d_point;
    }
    const Eigen::MatrixXd hess = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * res;
    Eigen::VectorXd delta;
    try {
      delta = solve_damped_system(damped_matrix(hess, lambda), -grad, pose_dim);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularSystem) throw;
      lambda *= 10.0;
      if (lambda > 1e12) throw;
      continue;
    }
    std::vector<Pose> poses = r.poses;
    std::vector<Vec3> points = r.points;
    for (int i = 1; i < views; ++i) {
      const Vec6 xi = delta.segment<6>(6 * (i - 1));
      poses[static_cast<std::size_t>(i)] = compose(se3_exp(Twist::from_vector(xi)), poses[static_cast<std::size_t>(i)]);
    }
    for (int j = 0; j < m; ++j) points[static_cast<std::size_t>(j)] += delta.segment<3>(pose_dim + 3 * j);
    gauge(poses, points);
    const double trial = cost_of(poses, points);
    if (trial < cost) {
      const double decrease = cost - trial;
      r.poses = std::move(poses);
      r.points = std::move(points);
      lambda = std::max(lambda * 0.5, 1e-12);
      const bool done = decrease <= 1e-14 * cost || delta.norm() < 1e-12;
      cost = trial;
      if (done || cost < 1e-30) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  r.report.pose = pose_metrics(r.poses, scene.poses);
  return r;
}

std::vector<int> basin_minima(const SyntheticScene& scene, const std::vector<FeaturePyramid>& features,
                              const BasinProbeConfig& config) {
  if (features.size() < 2) throw Error(ErrorCode::kInvalidArgument, "basin probes need two feature pyramids");
  if (config.radius < 1 || config.probes < 0 || !(config.step > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid basin probe configuration");
  }
  if (config.level < 0 || config.level >= features[0].size() || config.level >= features[1].size()) {
    throw Error(ErrorCode::kTooManyLevels, "basin probe level exceeds the pyramid");
  }
  const FeatureGrid& f0 = features[0][config.level];
  const FeatureGrid& f1 = features[1][config.level];
  const Intrinsics k = scene.intrinsics.at_level(config.level);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> central(0.2, 0.8);
  std::vector<int> counts;
  const int side = 2 * config.radius + 1;
  for (int attempt = 0; attempt < 100 * std::max(config.probes, 1) && static_cast<int>(counts.size()) < config.probes;
       ++attempt) {
    const int u = static_cast<int>(central(rng) * f0.width());
    const int v = static_cast<int>(central(rng) * f0.height());
    const NormalizedPixel q = k.normalize(u, v);
    const Vec2 fine = scene.intrinsics.to_pixel(q);
    double d = 0.0;
    sample_bilinear(scene.depth, fine.x(), fine.y(), &d);
    NormalizedPixel p;
    if (!try_project<double>(scene.poses[1], Vec3(q.x * d, q.y * d, d), p)) continue;
    const Vec2 match = k.to_pixel(p);
    const double reach = config.radius * config.step;
    if (match.x() - reach < 0.0 || match.x() + reach > f1.width() - 1 || match.y() - reach < 0.0 ||
        match.y() + reach > f1.height() - 1) {
      continue;
    }
    const Eigen::VectorXd ref = sample_bilinear(f0, u, v);
    FeatureGrid dist(side, side, 1);
    for (int dy = -config.radius; dy <= config.radius; ++dy) {
      for (int dx = -config.radius; dx <= config.radius; ++dx) {
        dist.at(dx + config.radius, dy + config.radius, 0) =
            (sample_bilinear(f1, match.x() + dx * config.step, match.y() + dy * config.step) - ref).norm();
      }
    }
    counts.push_back(count_local_minima(dist));
  }
  return counts;
}

SequenceResult pairwise_sequence(const SyntheticScene& scene, const TrainableParams& params,
                                 const SolverConfig& config) {
  SequenceResult out;
  out.poses.assign(static_cast<std::size_t>(scene.views()), Pose::identity());
  for (int i = 1; i < scene.views(); ++i) {
    const BaResult r = solve_with_params(params, view_pair(scene, i), config);
    out.poses[static_cast<std::size_t>(i)] = r.state.poses[1];
  }
  out.ate = ate(camera_centers(out.poses), camera_centers(scene.poses));
  return out;
}

}  // namespace fmba
