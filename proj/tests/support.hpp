#pragma once

// Hand-rolled generators shared by the property tests.

#include <random>
#include <vector>

#include "mountcheck/geometry.hpp"
#include "mountcheck/sceneflow.hpp"

namespace testsupport {

using namespace mountcheck;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec(std::mt19937_64& rng, double extent) {
  return {uniform(rng, -extent, extent), uniform(rng, -extent, extent), uniform(rng, -extent, extent)};
}

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent,
                               Frame frame = Frame::Sensor) {
  PointCloud c;
  c.frame = frame;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back(random_vec(rng, extent));
  return c;
}

inline double random_angle(std::mt19937_64& rng) {
  const double a = uniform(rng, 0.5, 5.0);
  return (rng() & 1) ? a : -a;
}

/// A valid misaligned error with a random nonempty axis set.
inline RotationError random_error(std::mt19937_64& rng) {
  AxisFlags axes{false, false, false};
  while (!axes[0] && !axes[1] && !axes[2]) {
    for (auto& a : axes) a = (rng() & 1) != 0;
  }
  return RotationError::from_angles(axes[0] ? random_angle(rng) : 0.0, axes[1] ? random_angle(rng) : 0.0,
                                    axes[2] ? random_angle(rng) : 0.0);
}

inline FlowField random_flow(std::mt19937_64& rng, std::size_t n, double extent = 20.0, double step = 1.0) {
  FlowField f;
  for (std::size_t i = 0; i < n; ++i) {
    f.anchors.push_back(random_vec(rng, extent));
    f.vectors.push_back(random_vec(rng, step));
  }
  return f;
}

template <typename T>
std::vector<T> permuted(const std::vector<T>& v, const std::vector<std::size_t>& perm) {
  std::vector<T> out;
  out.reserve(v.size());
  for (auto i : perm) out.push_back(v[i]);
  return out;
}

inline std::vector<std::size_t> random_permutation(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

/// Structured scene of `n` points within about `extent` of the origin: a
/// ground patch, two walls, a few boxes and poles. Vehicle frame.
inline PointCloud varied_scene(std::mt19937_64& rng, std::size_t n, double extent = 10.0) {
  PointCloud c;
  c.frame = Frame::Vehicle;
  std::vector<std::pair<Vec3, Vec3>> boxes;  // center, half extents
  for (int k = 0; k < 4; ++k) {
    boxes.push_back({Vec3(uniform(rng, -extent, extent), uniform(rng, -extent, extent), 1.0),
                     Vec3(uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 1.5))});
  }
  std::vector<Vec3> poles;
  for (int k = 0; k < 5; ++k) poles.emplace_back(uniform(rng, -extent, extent), uniform(rng, -extent, extent), 0.0);
  while (c.size() < n) {
    const auto kind = rng() % 4;
    if (kind == 0) {  // ground
      c.points.emplace_back(uniform(rng, -extent, extent), uniform(rng, -extent, extent), 0.0);
    } else if (kind == 1) {  // walls along x at |y| = extent
      const double side = (rng() & 1) ? extent : -extent;
      c.points.emplace_back(uniform(rng, -extent, extent), side, uniform(rng, 0.0, 3.0));
    } else if (kind == 2) {  // box surfaces
      const auto& [center, half] = boxes[rng() % boxes.size()];
      Vec3 p(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
      const auto face = static_cast<int>(rng() % 3);
      p[face] = (rng() & 1) ? 1.0 : -1.0;
      c.points.push_back(center + p.cwiseProduct(half));
    } else {  // poles
      const Vec3& base = poles[rng() % poles.size()];
      const double a = uniform(rng, 0, 2 * M_PI);
      c.points.emplace_back(base.x() + 0.2 * std::cos(a), base.y() + 0.2 * std::sin(a), uniform(rng, 0, 4));
    }
  }
  return c;
}

inline PointCloud transformed(const PointCloud& c, const RigidTransform& t) {
  PointCloud out = c;
  for (auto& p : out.points) p = t.apply(p);
  return out;
}

}  // namespace testsupport
