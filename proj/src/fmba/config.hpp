#pragma once

// Run configuration as a JSON document with one object per section:
//
//   scene    width, height, views, family, mean_depth, depth_variation,
//            plane_tilt_deg, rotation_deg, translation, intensity, noise,
//            channels, basis_count, focal_scale, seed
//   solver   mode, lambda, levels, iterations_per_level, lambda_floor,
//            residual_scale, stride, scale_gauge, max_iterations, convergence_threshold, initial_lambda
//   model    feature_channels, initial_lambda
//   train    learning_rate, steps, batch_size, schedule, halve_every,
//            plateau_window, plateau_tolerance, groups, seed, scene_seed,
//            scene_count, loss_weights {rotation, translation, depth}
//   ablation seed_first, seed_count, lambdas, view_counts
//   probe    probes, radius, step, level
//
// Every section and key is optional; missing entries keep their defaults.
// Unknown keys and ill-typed values raise InvalidArgument.

#include <cstdint>
#include <string>
#include <vector>

#include "fmba/harness.hpp"
#include "fmba/learning.hpp"
#include "fmba/scene.hpp"
#include "fmba/solver.hpp"

namespace fmba {

struct TrainSet {
  std::uint64_t scene_seed = 1000;  // training scenes use seeds scene_seed, scene_seed + 1, ...
  int scene_count = 100;
};

struct AblationSet {
  std::uint64_t seed_first = 1;
  int seed_count = 50;
  std::vector<double> lambdas = {0.01, 0.1, 0.5, 1.0, 10.0};
  std::vector<int> view_counts = {2, 3, 5};
};

struct RunConfig {
  SceneSpec scene;
  SolverConfig solver;
  int feature_channels = 8;
  double initial_lambda = 0.5;  // damping MLP output before training
  TrainConfig train;            // train.solver mirrors `solver`
  TrainSet train_set;
  AblationSet ablation;
  BasinProbeConfig probe;

  /// Shape of the learned model for this scene configuration.
  ModelShape model_shape() const;
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Every key with its effective value; parse_config(to_json(c)) reproduces c.
std::string config_to_json(const RunConfig& config);

}  // namespace fmba
