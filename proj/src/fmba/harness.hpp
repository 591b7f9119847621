#pragma once

// Evaluation drivers: ablation suites over seeded scene sets, the sparse
// geometric bundle-adjustment baseline, basin probes on feature-distance
// maps, and pairwise-anchored trajectory error on short sequences.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fmba/learning.hpp"
#include "fmba/metrics.hpp"
#include "fmba/residuals.hpp"
#include "fmba/scene.hpp"
#include "fmba/solver.hpp"

namespace fmba {

enum class Suite { kGnVsLm, kConstantLambdaSweep, kPoseOnlyVsJoint, kRawVsTrainedFeatures, kMultiview235 };

const char* suite_name(Suite s);
Suite parse_suite(const std::string& name);

/// `count` consecutive seeds starting at `first`.
std::vector<std::uint64_t> seed_range(std::uint64_t first, int count);

struct AblationParams {
  SceneSpec scene;                   // seed is replaced by each entry of `seeds`
  std::vector<std::uint64_t> seeds;
  SolverConfig solver;               // levels, iterations, stride, floor; mode is set per condition
  std::vector<double> lambdas = {0.01, 0.1, 0.5, 1.0, 10.0};  // constant_lambda_sweep
  std::vector<int> view_counts = {2, 3, 5};                  // multiview_2_3_5
};

/// Metrics over the scene set that solved without error.
struct AblationRow {
  std::string condition;
  MetricsReport median;
  MetricsReport mean;
  int scenes = 0;    // successful solves
  int failures = 0;  // solves or scene generations that raised an error
  std::vector<std::uint64_t> seeds;
  std::string config_hash;
};

struct AblationTable {
  Suite suite = Suite::kGnVsLm;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& condition) const;
  /// One line per (condition, aggregate) with aggregate in {median, mean}.
  std::string to_csv() const;
};

/// Runs every condition of `suite` through the learned generators in
/// `params`. Conditions:
///   gn_vs_lm: gauss_newton, predicted_lambda, classic_lm
///   constant_lambda_sweep: constant_lambda_<v> for each v, predicted_lambda
///   pose_only_vs_joint: pose_only, joint
///   raw_vs_trained_features: raw_features (feature layers reset to their
///     identity initialisation), trained_features
///   multiview_2_3_5: views_<n> on the first n views of n_max-view scenes
AblationTable run_ablation(Suite suite, const AblationParams& ablation, const TrainableParams& params);

/// Pose and depth metrics of one solve against a scene's ground truth.
MetricsReport evaluate_solve(const SolverState& state, const FeatureGrid& depth, const SyntheticScene& scene);

/// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Sparse correspondences: `count` reference pixels with ground-truth depth,
/// observed in every view with Gaussian noise of `sigma_px` pixels.
struct CorrespondenceSet {
  std::vector<Correspondence> observations;  // includes the reference view
  std::vector<Vec3> points;                  // ground-truth points in the reference frame
  int point_count() const { return static_cast<int>(points.size()); }
};
CorrespondenceSet make_correspondences(const SyntheticScene& scene, int count, double sigma_px, std::uint64_t seed);

struct GeometricBaResult {
  std::vector<Pose> poses;
  std::vector<Vec3> points;
  MetricsReport report;  // pose metrics only
  int iterations = 0;
};

/// Classic LM over poses and sparse points minimising normalized reprojection
/// error, from identity poses and points at `mean_depth` along the reference
/// rays. The scale gauge keeps the mean point depth at `mean_depth`. Throws
/// SingularSystem when some view has fewer than 5 observations.
GeometricBaResult geometric_ba_baseline(const SyntheticScene& scene, const CorrespondenceSet& data, double mean_depth,
                                        int max_iterations = 100);

/// Distance-map local minima around ground-truth correspondences. For each
/// probe, a reference pixel p is drawn from the central region, and
/// ||F_1(p' + s (dx, dy)) - F_0(p)|| is sampled on a (2 radius + 1)^2 grid of
/// offsets around its ground-truth match p' in view 1.
struct BasinProbeConfig {
  int probes = 10;
  int radius = 5;
  double step = 1.0;  // texels between grid samples
  int level = 0;
  std::uint64_t seed = 1;
};
std::vector<int> basin_minima(const SyntheticScene& scene, const std::vector<FeaturePyramid>& features,
                              const BasinProbeConfig& config);

/// Pose of every frame from pairwise solves (frame 0, frame i), chained at
/// frame 0, and the ATE of the camera centers against ground truth.
struct SequenceResult {
  std::vector<Pose> poses;
  double ate = 0.0;
};
SequenceResult pairwise_sequence(const SyntheticScene& scene, const TrainableParams& params,
                                 const SolverConfig& config);

}  // namespace fmba
