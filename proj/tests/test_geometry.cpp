#include <cmath>

#include <doctest.h>

#include "mountcheck/error.hpp"
#include "mountcheck/geometry.hpp"
#include "support.hpp"

using namespace mountcheck;
using testsupport::random_cloud;

namespace {

constexpr double kDeg = M_PI / 180.0;

void check_rotation(const Mat3& m) {
  CHECK((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(std::abs(m.determinant() - 1.0) < 1e-9);
}

}  // namespace

TEST_CASE("rotation_from_euler basics") {
  CHECK(rotation_from_euler(0, 0, 0).matrix().isApprox(Mat3::Identity(), 0));

  const Vec3 v = rotation_from_euler(0, 0, 90) * Vec3(1, 0, 0);
  CHECK((v - Vec3(0, 1, 0)).norm() < 1e-12);

  const Rotation3 r = rotation_from_euler(12, -34, 56);
  CHECK((r.matrix() * r.matrix().transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("composition order is yaw * pitch * roll") {
  const double roll = 10, pitch = 20, yaw = 30;
  const Mat3 rx = Eigen::AngleAxisd(roll * kDeg, Vec3::UnitX()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(pitch * kDeg, Vec3::UnitY()).toRotationMatrix();
  const Mat3 rz = Eigen::AngleAxisd(yaw * kDeg, Vec3::UnitZ()).toRotationMatrix();
  CHECK((rotation_from_euler(roll, pitch, yaw).matrix() - rz * ry * rx).norm() < 1e-12);
  CHECK((rotation_from_euler(roll, pitch, yaw, AxisOrder::RollPitchYaw).matrix() - rx * ry * rz).norm() < 1e-12);
}

TEST_CASE("property: euler rotations are orthonormal") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const double a = testsupport::uniform(rng, -180, 180);
    const double b = testsupport::uniform(rng, -180, 180);
    const double c = testsupport::uniform(rng, -180, 180);
    check_rotation(rotation_from_euler(a, b, c).matrix());
    check_rotation(rotation_from_euler(a, b, c, AxisOrder::RollPitchYaw).matrix());
  }
}

TEST_CASE("Rotation3 rejects non-rotations") {
  Mat3 m = Mat3::Identity();
  m(0, 0) = -1;  // reflection
  CHECK_THROWS_AS(Rotation3{m}, Error);
  CHECK_THROWS_AS(Rotation3{Mat3::Identity() * 1.01}, Error);
}

TEST_CASE("quaternion round trip") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Rotation3 r = rotation_from_euler(testsupport::uniform(rng, -180, 180),
                                            testsupport::uniform(rng, -89, 89),
                                            testsupport::uniform(rng, -180, 180));
    const Rotation3 back = Rotation3::from_quaternion_wxyz(r.quaternion_wxyz());
    CHECK((back.matrix() - r.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(Rotation3::from_quaternion_wxyz({1.0, 0.1, 0.0, 0.0}), Error);
}

TEST_CASE("rigid transform composition and inverse") {
  std::mt19937_64 rng(5);
  const RigidTransform a{rotation_from_euler(1, 2, 3), {1, 2, 3}};
  const RigidTransform b{rotation_from_euler(-4, 5, -6), {-1, 0.5, 2}};
  for (int i = 0; i < 20; ++i) {
    const Vec3 x = testsupport::random_vec(rng, 10);
    CHECK(((a * b).apply(x) - a.apply(b.apply(x))).norm() < 1e-12);
    CHECK((a.inverse().apply(a.apply(x)) - x).norm() < 1e-12);
  }
}

TEST_CASE("inject_rotation") {
  std::mt19937_64 rng(7);
  const PointCloud cloud = random_cloud(rng, 50, 20);

  SUBCASE("zero error is the identity") {
    const PointCloud out = inject_rotation(cloud, RotationError::aligned());
    REQUIRE(out.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(out.points[i] == cloud.points[i]);
  }

  SUBCASE("yaw +5 deg on (10, 0, 0)") {
    PointCloud one;
    one.points = {{10, 0, 0}};
    const Point3 p = inject_rotation(one, RotationError::from_angles(0, 0, 5)).points[0];
    CHECK(p.x() == doctest::Approx(9.9619).epsilon(1e-4));
    CHECK(p.y() == doctest::Approx(0.8716).epsilon(1e-4));
    CHECK(std::abs(p.z()) < 1e-12);
    // independent evaluation of the single-axis matrix
    CHECK(std::abs(p.x() - 10 * std::cos(5 * kDeg)) < 1e-12);
    CHECK(std::abs(p.y() - 10 * std::sin(5 * kDeg)) < 1e-12);
  }

  SUBCASE("frame and timestamp are kept") {
    PointCloud c = cloud;
    c.timestamp = 2.5;
    const PointCloud out = inject_rotation(c, RotationError::from_angles(1, 0, 0));
    CHECK(out.frame == Frame::Sensor);
    CHECK(out.timestamp == 2.5);
  }

  SUBCASE("empty and vehicle-frame clouds are rejected") {
    CHECK_THROWS_AS(inject_rotation(PointCloud{}, RotationError::from_angles(1, 0, 0)), Error);
    PointCloud v = cloud;
    v.frame = Frame::Vehicle;
    CHECK_THROWS_AS(inject_rotation(v, RotationError::from_angles(1, 0, 0)), Error);
  }
}

TEST_CASE("property: injection round trip and rigidity") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const PointCloud cloud = random_cloud(rng, 20, 30);
    const RotationError err = testsupport::random_error(rng);
    const PointCloud moved = inject_rotation(cloud, err);
    const PointCloud back = inject_rotation(moved, err.rotation().inverse());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      CHECK((back.points[i] - cloud.points[i]).cwiseAbs().maxCoeff() < 1e-9);
      for (std::size_t j = i + 1; j < cloud.size(); ++j) {
        const double d0 = (cloud.points[i] - cloud.points[j]).norm();
        const double d1 = (moved.points[i] - moved.points[j]).norm();
        CHECK(std::abs(d0 - d1) < 1e-9);
      }
    }
    // single-axis errors invert by negation
    const RotationError single = RotationError::from_angles(0, err.pitch() == 0 ? 1.5 : err.pitch(), 0);
    const PointCloud neg = inject_rotation(inject_rotation(cloud, single), single.negated());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      CHECK((neg.points[i] - cloud.points[i]).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("RotationError invariants") {
  CHECK(RotationError::aligned().is_valid());
  CHECK_THROWS_AS(RotationError::from_angles(0.3, 0, 0), Error);
  CHECK_THROWS_AS(RotationError::from_angles(0, 5.5, 0), Error);
  RotationError bad;
  bad.angles_deg = {1.0, 0, 0};  // inactive axis with a nonzero angle
  CHECK_FALSE(bad.is_valid());
  const RotationError e = RotationError::from_angles(-2, 0, 0.5);
  CHECK(e.active == AxisFlags{true, false, true});
  CHECK(e.max_abs_deg() == 2.0);
}

TEST_CASE("sample_error") {
  CHECK(sample_error(1, {false, false, false}) == RotationError::aligned());

  SUBCASE("active axes land in the admissible range") {
    for (std::uint64_t s = 0; s < 2000; ++s) {
      const RotationError e = sample_error(s, {true, s % 2 == 0, s % 3 == 0});
      for (int a = 0; a < 3; ++a) {
        if (e.active[a]) {
          CHECK(std::abs(e.angles_deg[a]) >= 0.5);
          CHECK(std::abs(e.angles_deg[a]) <= 5.0);
        } else {
          CHECK(e.angles_deg[a] == 0.0);
        }
      }
    }
  }

  SUBCASE("determinism") {
    const RotationError a = sample_error(99, {true, true, true});
    const RotationError b = sample_error(99, {true, true, true});
    CHECK(a == b);
  }

  SUBCASE("monte carlo moments over 1e5 draws") {
    // |a| ~ U[0.5, 5] so E|a| = 2.75; signs are fair.
    double sum_abs = 0.0;
    std::size_t positive = 0;
    constexpr std::size_t n = 100000;
    for (std::uint64_t s = 0; s < n; ++s) {
      const double a = sample_error(s, {false, false, true}).yaw();
      sum_abs += std::abs(a);
      positive += a > 0 ? 1 : 0;
    }
    CHECK(std::abs(sum_abs / n - 2.75) < 0.05);
    CHECK(std::abs(static_cast<double>(positive) / n - 0.5) < 0.01);
  }
}

TEST_CASE("classify_severity") {
  CHECK(classify_severity(RotationError::aligned()) == SeverityBucket::Aligned);
  CHECK(classify_severity(RotationError::from_angles(0, 0.75, 0)) == SeverityBucket::Hard);
  CHECK(classify_severity(RotationError::from_angles(3.0, 0, 0)) == SeverityBucket::Easy);
  // boundaries go to the harder bucket
  CHECK(classify_severity_deg(0.5) == SeverityBucket::Hard);
  CHECK(classify_severity_deg(1.0) == SeverityBucket::Hard);
  CHECK(classify_severity_deg(1.0 + 1e-9) == SeverityBucket::Medium);
  CHECK(classify_severity_deg(2.0) == SeverityBucket::Medium);
  CHECK(classify_severity_deg(2.0 + 1e-9) == SeverityBucket::Easy);
  CHECK(classify_severity_deg(5.0) == SeverityBucket::Easy);
  CHECK(to_string(SeverityBucket::Medium) == "Medium");
}

TEST_CASE("property: classify_severity is monotone") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double a = testsupport::uniform(rng, 0.5, 5.0);
    const double b = testsupport::uniform(rng, 0.5, 5.0);
    const double lo = std::min(a, b), hi = std::max(a, b);
    CHECK(static_cast<int>(classify_severity_deg(lo)) <= static_cast<int>(classify_severity_deg(hi)));
  }
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 7) == derive_seed(5, 7));
}
