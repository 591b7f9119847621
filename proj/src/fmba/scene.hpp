#pragma once

// Seeded synthetic multi-view scenes with exact ground truth.
//
// The reference depth lives in the span of a per-scene prior basis, so the
// ground-truth weights reproduce it exactly. Appearance is a smooth random
// Fourier field painted on the surface; the other views are rendered by
// inverse warping and then corrected so that bilinear sampling at the
// ground-truth warp reproduces the reference texels.

#include <cstdint>
#include <string>
#include <vector>

#include "fmba/depth_param.hpp"
#include "fmba/feature_grid.hpp"
#include "fmba/geometry.hpp"

namespace fmba {

enum class DepthFamily { kFrontoPlanar, kSlantedPlane, kSmoothRandom };

const char* family_name(DepthFamily f);
DepthFamily parse_family(const std::string& name);

struct SceneSpec {
  int width = 64;
  int height = 48;
  int views = 2;
  DepthFamily family = DepthFamily::kSmoothRandom;
  double mean_depth = 2.0;         // meters
  double depth_variation = 0.15;   // relative amplitude of the smooth family
  double plane_tilt_deg = 20.0;    // slanted-plane normal tilt bound
  double rotation_deg = 3.0;       // pose magnitudes; each view draws from [0.5, 1] x these
  double translation = 0.15;       // meters
  double intensity = 50.0;         // appearance gain: mean level in [0.4, 0.6] x this, contrast 0.15 x this
  double noise = 0.0;              // additive Gaussian sigma on every image, same units
  int channels = 3;                // raw image channels
  int basis_count = 8;
  double focal_scale = 0.9;        // fx = fy = focal_scale * width
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticScene {
  SceneSpec spec;
  Intrinsics intrinsics;
  std::vector<Pose> poses;          // world = reference camera; poses[0] is identity
  std::vector<FeatureGrid> images;  // finest level, one per view
  FeatureGrid depth;                // reference depth at image resolution
  DepthBasis basis;                 // half resolution prior basis
  DepthWeights w_gt;
  DepthWeights w0;

  int views() const { return static_cast<int>(images.size()); }
};

SyntheticScene generate_scene(const SceneSpec& spec);

/// Initial depth weights for a prior basis of `k` maps: the first map alone.
DepthWeights prior_weights(int k);

/// Fraction of reference pixels whose ground-truth point projects inside
/// view `i` with positive depth.
double covisibility(const SyntheticScene& scene, int view);

/// Keeps the reference and the first `n - 1` other views.
SyntheticScene subset_views(const SyntheticScene& scene, int n);

/// Pyramids of the raw images.
std::vector<FeaturePyramid> image_pyramids(const SyntheticScene& scene, int levels);

/// Writes `images/view_i.fgrid`, `depth.fgrid`, `basis.fgrid`, `poses.txt`,
/// `weights.txt` and `scene.json` under `dir`.
void save_scene(const SyntheticScene& scene, const std::string& dir);
SyntheticScene load_scene(const std::string& dir);

}  // namespace fmba
