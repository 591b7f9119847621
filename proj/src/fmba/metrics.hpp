#pragma once

// Pose, depth and trajectory error metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fmba/feature_grid.hpp"
#include "fmba/geometry.hpp"

namespace fmba {

struct PoseMetrics {
  double rotation_deg = 0.0;
  double translation_deg = 0.0;
  double translation_cm = 0.0;
  bool degenerate_direction = false;  // some translation norm was below 1e-9
};

struct DepthMetrics {
  double abs_rel = 0.0;
  double sqr_rel = 0.0;
  double rmse_linear = 0.0;
  double rmse_log = 0.0;
  double rmse_log_scale_inv = 0.0;
  double invalid_fraction = 0.0;  // masked pixels with pred <= 0, left out of the log metrics
};

struct MetricsReport {
  PoseMetrics pose;
  std::optional<DepthMetrics> depth;  // absent for pose-only evaluations
  std::optional<double> ate;

  std::string to_json() const;
};

/// Averages over views 1..N-1; view 0 is the reference.
PoseMetrics pose_metrics(const std::vector<Pose>& pred, const std::vector<Pose>& gt);

/// `mask` may be empty (every pixel with gt > 0 counts) or hold one byte per
/// pixel. Throws EmptyMask when no pixel is selected.
DepthMetrics depth_metrics(const FeatureGrid& pred, const FeatureGrid& gt, const std::vector<std::uint8_t>& mask = {});

/// RMSE of positions after the least-squares rigid alignment of pred onto gt.
double ate(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

/// Camera centers of world-to-camera poses.
std::vector<Vec3> camera_centers(const std::vector<Pose>& poses);

}  // namespace fmba
