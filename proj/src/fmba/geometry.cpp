#include "fmba/geometry.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fmba {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kTooManyLevels: return "TooManyLevels";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kTapeMissing: return "TapeMissing";
    case ErrorCode::kDivergedLoss: return "DivergedLoss";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kInfeasibleSpec: return "InfeasibleSpec";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw Error(ErrorCode::kInvalidArgument, "principal point must be finite");
}

Intrinsics Intrinsics::at_level(int level) const {
  const double s = std::ldexp(1.0, -level);
  return {fx * s, fy * s, (cx + 0.5) * s - 0.5, (cy + 0.5) * s - 0.5};
}

Quaternion to_quaternion(const Mat3& r) {
  const auto q = quaternion_from_rotation<double>(r);
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  return {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
}

Mat3 rotation_from_quaternion(const Quaternion& in) {
  const double n = std::sqrt(in.w * in.w + in.x * in.x + in.y * in.y + in.z * in.z);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorCode::kInvalidArgument, "quaternion must be nonzero and finite");
  const double w = in.w / n, x = in.x / n, y = in.y / n, z = in.z / n;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

double rotation_angle(const Mat3& r) {
  // atan2 form stays accurate near 0 and pi where acos of the trace does not.
  const Vec3 axis_sin(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * axis_sin.norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c);
}

double orthonormality_error(const Mat3& r) {
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(r.determinant() - 1.0));
}

std::string format_pose(const Pose& p) {
  const Quaternion q = to_quaternion(p.rotation);
  std::ostringstream os;
  os << std::setprecision(17) << q.w << ' ' << q.x << ' ' << q.y << ' ' << q.z << ' ' << p.translation.x() << ' '
     << p.translation.y() << ' ' << p.translation.z();
  return os.str();
}

Pose parse_pose(std::string_view line) {
  std::istringstream is{std::string(line)};
  Quaternion q;
  Pose p;
  if (!(is >> q.w >> q.x >> q.y >> q.z >> p.translation.x() >> p.translation.y() >> p.translation.z())) {
    throw Error(ErrorCode::kIo, "malformed pose line: expected 'qw qx qy qz tx ty tz'");
  }
  std::string extra;
  if (is >> extra) throw Error(ErrorCode::kIo, "trailing tokens on pose line");
  p.rotation = rotation_from_quaternion(q);
  return p;
}

std::vector<Pose> read_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open pose file " + path);
  std::vector<Pose> poses;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    poses.push_back(parse_pose(line));
  }
  return poses;
}

void write_poses(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write pose file " + path);
  for (const auto& p : poses) out << format_pose(p) << '\n';
}

}  // namespace fmba
