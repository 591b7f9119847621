#include "fmba/metrics.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>

#include <json.hpp>

namespace fmba {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j = {
      {"rotation_deg", pose.rotation_deg},
      {"translation_deg", pose.translation_deg},
      {"translation_cm", pose.translation_cm},
      {"translation_direction_degenerate", pose.degenerate_direction},
  };
  const char* depth_keys[] = {"abs_rel", "sqr_rel", "rmse_linear", "rmse_log", "rmse_log_scale_inv", "invalid_fraction"};
  if (depth) {
    const double values[] = {depth->abs_rel,  depth->sqr_rel,           depth->rmse_linear,
                             depth->rmse_log, depth->rmse_log_scale_inv, depth->invalid_fraction};
    for (std::size_t i = 0; i < 6; ++i) j[depth_keys[i]] = values[i];
  } else {
    for (const char* k : depth_keys) j[k] = nullptr;
  }
  j["ate"] = ate ? nlohmann::json(*ate) : nlohmann::json(nullptr);
  return j.dump(2);
}

PoseMetrics pose_metrics(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::kLengthMismatch, "pose lists differ in length");
  PoseMetrics m;
  if (pred.size() < 2) return m;
  for (std::size_t i = 1; i < pred.size(); ++i) {
    m.rotation_deg += rotation_angle(pred[i].rotation * gt[i].rotation.transpose()) * kDeg;
    const Vec3& tp = pred[i].translation;
    const Vec3& tg = gt[i].translation;
    if (tp.norm() < 1e-9 || tg.norm() < 1e-9) {
      m.degenerate_direction = true;
    } else {
      m.translation_deg += std::atan2(tp.cross(tg).norm(), tp.dot(tg)) * kDeg;
    }
    m.translation_cm += (tp - tg).norm() * 100.0;
  }
  const double n = static_cast<double>(pred.size() - 1);
  m.rotation_deg /= n;
  m.translation_deg /= n;
  m.translation_cm /= n;
  return m;
}

DepthMetrics depth_metrics(const FeatureGrid& pred, const FeatureGrid& gt, const std::vector<std::uint8_t>& mask) {
  if (pred.width() != gt.width() || pred.height() != gt.height() || pred.channels() != 1 || gt.channels() != 1) {
    throw Error(ErrorCode::kDimensionMismatch, "depth maps must be single-channel and the same size");
  }
  const std::size_t n = gt.texel_count();
  if (!mask.empty() && mask.size() != n) throw Error(ErrorCode::kDimensionMismatch, "mask size differs from depth");
  double abs_rel = 0.0, sqr_rel = 0.0, sq = 0.0;
  std::vector<double> log_ratio;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gt.data()[i];
    if (mask.empty()) {
      if (!(g > 0.0)) continue;
    } else {
      if (mask[i] == 0) continue;
      if (!(g > 0.0)) throw Error(ErrorCode::kInvalidArgument, "ground-truth depth must be positive on the mask");
    }
    const double p = pred.data()[i];
    const double e = p - g;
    abs_rel += std::abs(e) / g;
    sqr_rel += e * e / g;
    sq += e * e;
    ++count;
    if (p > 0.0) log_ratio.push_back(std::log(p) - std::log(g));
  }
  if (count == 0) throw Error(ErrorCode::kEmptyMask, "no valid depth pixels");
  DepthMetrics m;
  const double c = static_cast<double>(count);
  m.abs_rel = abs_rel / c;
  m.sqr_rel = sqr_rel / c;
  m.rmse_linear = std::sqrt(sq / c);
  m.invalid_fraction = static_cast<double>(count - log_ratio.size()) / c;
  if (!log_ratio.empty()) {
    const double nl = static_cast<double>(log_ratio.size());
    double s = 0.0, s2 = 0.0;
    for (double d : log_ratio) {
      s += d;
      s2 += d * d;
    }
    m.rmse_log = std::sqrt(s2 / nl);
    const double mean = s / nl;
    double v = 0.0;
    for (double d : log_ratio) v += (d - mean) * (d - mean);
    m.rmse_log_scale_inv = std::sqrt(v / nl);
  }
  return m;
}

double ate(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::kLengthMismatch, "trajectories differ in length");
  if (pred.size() < 2) throw Error(ErrorCode::kInvalidArgument, "trajectories need at least two positions");
  const auto n = static_cast<Eigen::Index>(pred.size());
  Eigen::Matrix3Xd p(3, n), g(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.col(i) = pred[static_cast<std::size_t>(i)];
    g.col(i) = gt[static_cast<std::size_t>(i)];
  }
  const Vec3 mp = p.rowwise().mean();
  const Vec3 mg = g.rowwise().mean();
  p.colwise() -= mp;
  g.colwise() -= mg;
  const Eigen::Matrix3d cov = g * p.transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  const Eigen::Matrix3d r = svd.matrixU() * s * svd.matrixV().transpose();
  const Eigen::Matrix3Xd diff = r * p - g;
  return std::sqrt(diff.colwise().squaredNorm().sum() / static_cast<double>(n));
}

std::vector<Vec3> camera_centers(const std::vector<Pose>& poses) {
  std::vector<Vec3> out;
  out.reserve(poses.size());
  for (const auto& p : poses) out.push_back(-(p.rotation.transpose() * p.translation));
  return out;
}

}  // namespace fmba
