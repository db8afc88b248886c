#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mountcheck {

// Vehicle convention: x forward, y left, z up (right-handed).
using Vec3 = Eigen::Vector3d;
using Point3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Frame : std::uint8_t { Sensor = 0, Vehicle = 1 };

std::string_view to_string(Frame frame);

struct PointCloud {
  std::vector<Point3> points;
  Frame frame = Frame::Sensor;
  double timestamp = 0.0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Proper rotation. Construction validates RᵀR = I and det R = 1 to 1e-9.
class Rotation3 {
 public:
  static constexpr double kTolerance = 1e-9;

  Rotation3() : m_(Mat3::Identity()) {}
  explicit Rotation3(const Mat3& m);

  static Rotation3 identity() { return {}; }
  /// Rotation of `angle_rad` about `axis` (need not be unit length).
  static Rotation3 about_axis(const Vec3& axis, double angle_rad);
  /// From a unit quaternion (w, x, y, z). Throws if not unit within `tol`.
  static Rotation3 from_quaternion_wxyz(const std::array<double, 4>& q,
                                        double tol = 1e-6);

  const Mat3& matrix() const { return m_; }
  Rotation3 inverse() const;
  std::array<double, 4> quaternion_wxyz() const;

  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation3 operator*(const Rotation3& other) const;

  static bool is_rotation(const Mat3& m, double tol = kTolerance);

 private:
  struct Unchecked {};
  Rotation3(const Mat3& m, Unchecked) : m_(m) {}

  Mat3 m_;
};

/// Rigid transform x' = R x + t.
struct RigidTransform {
  Rotation3 rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  RigidTransform inverse() const;
  /// (this ∘ other)(x) = this(other(x)).
  RigidTransform operator*(const RigidTransform& other) const;
};

enum class AxisOrder {
  YawPitchRoll,  // R = Rz(yaw) Ry(pitch) Rx(roll)
  RollPitchYaw,  // R = Rx(roll) Ry(pitch) Rz(yaw)
};

Rotation3 rotation_from_euler(double roll_deg, double pitch_deg, double yaw_deg,
                              AxisOrder order = AxisOrder::YawPitchRoll);

enum class Axis : std::uint8_t { Roll = 0, Pitch = 1, Yaw = 2 };

using AxisFlags = std::array<bool, 3>;  // roll, pitch, yaw

/// Injected mount error in degrees. Active axes carry 0.5 <= |angle| <= 5,
/// inactive axes are exactly zero.
struct RotationError {
  static constexpr double kMinAbsDeg = 0.5;
  static constexpr double kMaxAbsDeg = 5.0;

  std::array<double, 3> angles_deg{0.0, 0.0, 0.0};  // roll, pitch, yaw
  AxisFlags active{false, false, false};

  static RotationError aligned() { return {}; }
  /// Builds an error with every nonzero angle marked active; validates.
  static RotationError from_angles(double roll_deg, double pitch_deg, double yaw_deg);

  double roll() const { return angles_deg[0]; }
  double pitch() const { return angles_deg[1]; }
  double yaw() const { return angles_deg[2]; }

  bool any_active() const { return active[0] || active[1] || active[2]; }
  double max_abs_deg() const;
  /// Negates every angle. Exact inverse only for single-axis errors; use
  /// `rotation().inverse()` for the general case.
  RotationError negated() const;
  Rotation3 rotation() const;

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  bool is_valid() const;

  bool operator==(const RotationError&) const = default;
};

enum class SeverityBucket : std::uint8_t { Aligned = 0, Hard = 1, Medium = 2, Easy = 3 };

std::string_view to_string(SeverityBucket bucket);

/// Aligned = 0; Hard (0.5, 1]; Medium (1, 2]; Easy (2, 5]. Boundary values go
/// to the harder bucket.
SeverityBucket classify_severity(const RotationError& err);
SeverityBucket classify_severity_deg(double max_abs_deg);

/// Rotates every point of a sensor-frame cloud by the error rotation.
PointCloud inject_rotation(const PointCloud& cloud, const RotationError& err);
PointCloud inject_rotation(const PointCloud& cloud, const Rotation3& rotation);

/// Each active axis uniform on [-5, -0.5] ∪ [0.5, 5] degrees with equal mass
/// on both halves; inactive axes exactly zero.
RotationError sample_error(std::uint64_t rng_seed, const AxisFlags& active_axes);

/// Stateless seed derivation (splitmix64 finalizer over seed and stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace mountcheck
