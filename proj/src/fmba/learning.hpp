#pragma once

// End-to-end training of the bundle-adjustment layer: trainable feature and
// basis generators, the pose and depth losses, reverse-mode gradients through
// the unrolled fixed-iteration solve, and an Adam training loop.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fmba/scene.hpp"
#include "fmba/solver.hpp"

namespace fmba {

struct ModelShape {
  int raw_channels = 3;
  int feature_channels = 8;
  int basis_count = 8;

  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

template <typename T>
struct ConvLayerT {
  int kernel = 3;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> weights;  // out x (kernel^2 * in)
  VectorT<T> bias;
};

/// Damping MLP, a two-layer 3x3 convolutional feature generator (ReLU
/// between the layers) applied to every pyramid level of the raw image, a
/// 1x1 basis generator over [prior basis; half-resolution image], and the
/// initial depth weights w0.
template <typename T>
struct TrainableParamsT {
  DampingMLPT<T> mlp;
  std::array<ConvLayerT<T>, 2> features;
  ConvLayerT<T> basis;
  VectorT<T> w0;
};

struct TrainableParams : TrainableParamsT<double> {
  ModelShape shape() const;
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  /// Shapes consistent with shape() and every entry finite.
  void validate() const;
};

/// Parameter groups, used to choose what training updates.
enum ParamGroup : unsigned {
  kGroupMlp = 1u,
  kGroupFeatures = 2u,
  kGroupBasis = 4u,
  kGroupW0 = 8u,
  kGroupAll = 15u,
};

unsigned parse_groups(const std::string& list);  // comma separated: mlp,features,basis,w0,all
std::string groups_name(unsigned groups);

/// 0/1 mask over the flattened parameter vector.
std::vector<std::uint8_t> group_mask(const TrainableParams& params, unsigned groups);

/// Feature layers start as the identity on the raw channels; extra feature
/// channels start near zero. The basis generator starts as a pass-through of
/// the prior basis, so an untrained model solves exactly like raw features
/// with the prior basis.
TrainableParams make_params(const ModelShape& shape, std::uint64_t seed, const DepthWeights& w0,
                            double initial_lambda = 0.5);

/// Feature pyramid of one raw image.
FeaturePyramid compute_features(const TrainableParams& params, const FeatureGrid& image, int levels);

/// Basis maps generated from the prior basis and the reference image.
DepthBasis generate_basis(const TrainableParams& params, const DepthBasis& prior, const FeatureGrid& image);

/// Solve of a scene through the learned generators (any solver mode).
BaResult solve_with_params(const TrainableParams& params, const SyntheticScene& scene, const SolverConfig& config);

struct LossWeights {
  double rotation = 1.0;
  double translation = 1.0;
  double depth = 1.0;
};

struct LossReport {
  double rotation = 0.0;
  double translation = 0.0;
  double depth = 0.0;
  double total = 0.0;
};

/// ||q - q*|| after flipping both quaternions to a nonnegative scalar part.
double rotation_loss(const Quaternion& pred, const Quaternion& gt);
double rotation_loss(const Pose& pred, const Pose& gt);
double translation_loss(const Pose& pred, const Pose& gt);

/// Reverse Huber with c = 0.2 x the largest absolute error on the mask, mean
/// over the mask. An empty `mask` selects every pixel with gt > 0.
double berhu_loss(const FeatureGrid& pred, const FeatureGrid& gt, const std::vector<std::uint8_t>& mask = {});

/// Gradient of a loss with respect to the outputs of a solve.
struct StateGradient {
  std::vector<Mat3> rotation;     // per view
  std::vector<Vec3> translation;  // per view
  Eigen::VectorXd w;
  std::vector<double> depth;      // per pixel of the image-resolution depth map
};

struct TapeRecord;

/// Output of a forward solve through the learned generators. When recorded,
/// it keeps the tape needed by backward_solve.
struct ForwardPass {
  BaResult result;
  FeatureGrid depth;  // ReLU(w^T B) at image resolution
  std::shared_ptr<const TapeRecord> record;

  bool recorded() const { return record != nullptr; }
};

ForwardPass forward_solve(const TrainableParams& params, const SyntheticScene& scene, const SolverConfig& config,
                          bool record);

/// Loss of a forward pass against the scene's ground truth, averaged over
/// the non-reference views, and its gradient with respect to the outputs.
struct LossGradient {
  LossReport loss;
  StateGradient upstream;
};
LossGradient loss_gradient(const ForwardPass& pass, const SyntheticScene& scene, const LossWeights& weights);

/// Reverse sweep over the unrolled solve: flattened parameter gradient in the
/// order of TrainableParams::flatten(). Throws TapeMissing when the forward
/// pass was not recorded.
std::vector<double> backward_solve(const ForwardPass& pass, const StateGradient& upstream);

enum class LrSchedule { kPlateau, kFixedStep };
const char* schedule_name(LrSchedule s);
LrSchedule parse_schedule(const std::string& name);

struct TrainConfig {
  SolverConfig solver;
  LossWeights weights;
  double learning_rate = 1e-3;
  int steps = 200;
  int batch_size = 4;
  LrSchedule schedule = LrSchedule::kPlateau;
  int halve_every = 100;            // kFixedStep
  int plateau_window = 100;         // kPlateau: compare consecutive windows of this many steps
  double plateau_tolerance = 0.01;  // kPlateau: halve when the window mean improves by less than this fraction
  unsigned groups = kGroupAll;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossRecord {
  int step = 0;
  LossReport loss;
  double lr = 0.0;
};

struct TrainResult {
  TrainableParams params;
  std::vector<LossRecord> history;
  int skipped_solves = 0;  // scenes whose solve raised SingularSystem

  /// `step,rot,trans,depth,total,lr`
  std::string loss_csv() const;
};

/// Adam over the selected groups; each step averages the gradient of a
/// batch drawn from a seeded shuffle of `scenes`. Throws DivergedLoss when the
/// loss or the parameters become non-finite.
TrainResult train(const TrainableParams& init, std::span<const SyntheticScene> scenes, const TrainConfig& config);

std::vector<unsigned char> encode_checkpoint(const TrainableParams& params);
TrainableParams decode_checkpoint(const std::vector<unsigned char>& bytes);
void save_checkpoint(const std::string& path, const TrainableParams& params);
TrainableParams load_checkpoint(const std::string& path);

}  // namespace fmba
