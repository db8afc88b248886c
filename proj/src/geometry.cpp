#include "mountcheck/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid argument";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::DoubleTransform: return "double transform";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::Diverged: return "diverged";
    case ErrorKind::NoValidAngles: return "no valid angles";
    case ErrorKind::InconsistentLabels: return "inconsistent labels";
    case ErrorKind::EmptyScene: return "empty scene";
    case ErrorKind::EmptyFrame: return "empty frame";
    case ErrorKind::InfeasibleMix: return "infeasible mix";
    case ErrorKind::Io: return "io";
    case ErrorKind::BadMagic: return "bad magic";
    case ErrorKind::VersionMismatch: return "version mismatch";
    case ErrorKind::TruncatedPayload: return "truncated payload";
    case ErrorKind::SchemaViolation: return "schema violation";
    case ErrorKind::LayoutMismatch: return "feature layout mismatch";
    case ErrorKind::UnknownTensor: return "unknown tensor";
    case ErrorKind::MissingFrame: return "missing frame";
  }
  return "unknown";
}

std::string_view to_string(Frame frame) {
  return frame == Frame::Sensor ? "sensor" : "vehicle";
}

std::string_view to_string(SeverityBucket bucket) {
  switch (bucket) {
    case SeverityBucket::Aligned: return "Aligned";
    case SeverityBucket::Hard: return "Hard";
    case SeverityBucket::Medium: return "Medium";
    case SeverityBucket::Easy: return "Easy";
  }
  return "?";
}

namespace {

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

}  // namespace

Rotation3::Rotation3(const Mat3& m) : m_(m) {
  if (!is_rotation(m)) {
    throw Error(ErrorKind::InvalidArgument, "matrix is not a proper rotation");
  }
}

bool Rotation3::is_rotation(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

Rotation3 Rotation3::about_axis(const Vec3& axis, double angle_rad) {
  return Rotation3(Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix());
}

Rotation3 Rotation3::from_quaternion_wxyz(const std::array<double, 4>& q, double tol) {
  const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (!std::isfinite(norm) || std::abs(norm - 1.0) > tol) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("quaternion is not unit (norm {})", norm));
  }
  Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  quat.normalize();
  return Rotation3(quat.toRotationMatrix());
}

Rotation3 Rotation3::inverse() const { return Rotation3(m_.transpose(), Unchecked{}); }

std::array<double, 4> Rotation3::quaternion_wxyz() const {
  Eigen::Quaterniond q(m_);
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  return {q.w(), q.x(), q.y(), q.z()};
}

Rotation3 Rotation3::operator*(const Rotation3& other) const {
  return Rotation3(m_ * other.m_, Unchecked{});
}

RigidTransform RigidTransform::inverse() const {
  const Rotation3 r_inv = rotation.inverse();
  return {r_inv, -(r_inv * translation)};
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

Rotation3 rotation_from_euler(double roll_deg, double pitch_deg, double yaw_deg,
                              AxisOrder order) {
  if (!std::isfinite(roll_deg) || !std::isfinite(pitch_deg) || !std::isfinite(yaw_deg)) {
    throw Error(ErrorKind::InvalidArgument, "euler angles must be finite");
  }
  const Mat3 rx = rot_x(deg2rad(roll_deg));
  const Mat3 ry = rot_y(deg2rad(pitch_deg));
  const Mat3 rz = rot_z(deg2rad(yaw_deg));
  const Mat3 m = order == AxisOrder::YawPitchRoll ? Mat3(rz * ry * rx) : Mat3(rx * ry * rz);
  return Rotation3(m);
}

RotationError RotationError::from_angles(double roll_deg, double pitch_deg, double yaw_deg) {
  RotationError err;
  err.angles_deg = {roll_deg, pitch_deg, yaw_deg};
  for (int i = 0; i < 3; ++i) err.active[i] = err.angles_deg[i] != 0.0;
  err.validate();
  return err;
}

double RotationError::max_abs_deg() const {
  return std::max({std::abs(angles_deg[0]), std::abs(angles_deg[1]), std::abs(angles_deg[2])});
}

RotationError RotationError::negated() const {
  RotationError out = *this;
  for (auto& a : out.angles_deg) a = -a;
  return out;
}

Rotation3 RotationError::rotation() const {
  return rotation_from_euler(angles_deg[0], angles_deg[1], angles_deg[2]);
}

bool RotationError::is_valid() const {
  for (int i = 0; i < 3; ++i) {
    const double a = angles_deg[i];
    if (!std::isfinite(a)) return false;
    if (active[i]) {
      if (std::abs(a) < kMinAbsDeg || std::abs(a) > kMaxAbsDeg) return false;
    } else if (a != 0.0) {
      return false;
    }
  }
  return true;
}

void RotationError::validate() const {
  if (!is_valid()) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("invalid rotation error (roll {}, pitch {}, yaw {})",
                            angles_deg[0], angles_deg[1], angles_deg[2]));
  }
}

SeverityBucket classify_severity_deg(double max_abs_deg) {
  if (max_abs_deg <= 0.0) return SeverityBucket::Aligned;
  if (max_abs_deg <= 1.0) return SeverityBucket::Hard;
  if (max_abs_deg <= 2.0) return SeverityBucket::Medium;
  return SeverityBucket::Easy;
}

SeverityBucket classify_severity(const RotationError& err) {
  return classify_severity_deg(err.max_abs_deg());
}

PointCloud inject_rotation(const PointCloud& cloud, const Rotation3& rotation) {
  if (cloud.empty()) throw Error(ErrorKind::EmptyInput, "empty input");
  if (cloud.frame != Frame::Sensor) {
    throw Error(ErrorKind::InvalidArgument, "fault injection expects a sensor-frame cloud");
  }
  PointCloud out;
  out.frame = cloud.frame;
  out.timestamp = cloud.timestamp;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(rotation * p);
  return out;
}

PointCloud inject_rotation(const PointCloud& cloud, const RotationError& err) {
  return inject_rotation(cloud, err.rotation());
}

RotationError sample_error(std::uint64_t rng_seed, const AxisFlags& active_axes) {
  std::mt19937_64 rng(rng_seed);
  const auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  RotationError err;
  for (int i = 0; i < 3; ++i) {
    if (!active_axes[i]) continue;
    const bool negative = (rng() >> 63) != 0;
    const double magnitude = RotationError::kMinAbsDeg +
                             (RotationError::kMaxAbsDeg - RotationError::kMinAbsDeg) * unit();
    err.angles_deg[i] = negative ? -magnitude : magnitude;
    err.active[i] = true;
  }
  return err;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mountcheck
