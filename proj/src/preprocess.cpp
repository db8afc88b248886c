#include "mountcheck/preprocess.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <random>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck {

bool BoundingBox::contains(const Point3& p, double margin) const {
  const Vec3 d = p - center;
  const double c = std::cos(yaw_rad), s = std::sin(yaw_rad);
  // inverse yaw into the box frame
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= half_extents.x() + margin &&
         std::abs(ly) <= half_extents.y() + margin &&
         std::abs(d.z()) <= half_extents.z() + margin;
}

void BoundingBox::validate() const {
  if (!(half_extents.array() > 0.0).all() || !center.allFinite() || !std::isfinite(yaw_rad)) {
    throw Error(ErrorKind::InvalidArgument, "bounding box needs positive half-extents");
  }
}

void FrameSequence::validate() const {
  if (clouds.size() != poses.size()) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("{} clouds but {} poses", clouds.size(), poses.size()));
  }
  if (!(sample_rate_hz > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "sample rate must be positive");
  }
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (clouds[i].timestamp < 0.0) {
      throw Error(ErrorKind::InvalidArgument, "negative timestamp");
    }
    if (i > 0 && !(clouds[i].timestamp > clouds[i - 1].timestamp)) {
      throw Error(ErrorKind::InvalidArgument,
                  fmt::format("timestamps not strictly increasing at frame {}", i));
    }
    if (clouds[i].frame != clouds.front().frame) {
      throw Error(ErrorKind::InvalidArgument, "frames in a sequence must share a frame tag");
    }
  }
}

namespace {

struct PlaneFit {
  Plane plane;
  std::size_t inliers = 0;
};

std::size_t count_inliers(const std::vector<Point3>& pts, const Plane& plane, double thr) {
  std::size_t n = 0;
  for (const auto& p : pts) {
    if (std::abs(plane.signed_distance(p)) <= thr) ++n;
  }
  return n;
}

bool within_tilt(const Vec3& normal, double max_tilt_deg) {
  const double cos_limit = std::cos(max_tilt_deg * std::numbers::pi / 180.0);
  return normal.z() >= cos_limit;
}

Plane oriented(Vec3 normal, const Point3& through) {
  if (normal.z() < 0.0) normal = -normal;
  return {normal, -normal.dot(through)};
}

std::optional<Plane> least_squares_plane(const std::vector<Point3>& pts, const Plane& seed,
                                         double thr) {
  Vec3 centroid = Vec3::Zero();
  std::size_t n = 0;
  for (const auto& p : pts) {
    if (std::abs(seed.signed_distance(p)) <= thr) {
      centroid += p;
      ++n;
    }
  }
  if (n < 3) return std::nullopt;
  centroid /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) {
    if (std::abs(seed.signed_distance(p)) <= thr) {
      const Vec3 d = p - centroid;
      cov += d * d.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  if (solver.info() != Eigen::Success) return std::nullopt;
  const Vec3 normal = solver.eigenvectors().col(0).normalized();
  return oriented(normal, centroid);
}

}  // namespace

GroundRemovalResult remove_ground(const PointCloud& cloud, const GroundRemovalConfig& cfg,
                                  std::uint64_t rng_seed) {
  const auto& pts = cloud.points;
  if (pts.size() < 3) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("ground removal needs at least 3 points, got {}", pts.size()));
  }
  if (cfg.max_iters < 1 || !(cfg.inlier_threshold > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid ground removal config");
  }

  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
  PlaneFit best;
  bool have_candidate = false;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    const double len = n.norm();
    if (len < 1e-12) continue;
    const Plane plane = oriented(n / len, pts[a]);
    if (!within_tilt(plane.normal, cfg.max_normal_tilt_deg)) continue;
    const std::size_t inliers = count_inliers(pts, plane, cfg.inlier_threshold);
    if (!have_candidate || inliers > best.inliers) {
      best = {plane, inliers};
      have_candidate = true;
    }
  }

  GroundRemovalResult result;
  result.cloud = cloud;
  const double min_support = cfg.min_inlier_fraction * static_cast<double>(pts.size());
  if (!have_candidate || static_cast<double>(best.inliers) < min_support) {
    if (have_candidate) result.plane = best.plane;
    return result;
  }

  if (auto refined = least_squares_plane(pts, best.plane, cfg.inlier_threshold);
      refined && within_tilt(refined->normal, cfg.max_normal_tilt_deg)) {
    const std::size_t inliers = count_inliers(pts, *refined, cfg.inlier_threshold);
    if (inliers >= best.inliers) best = {*refined, inliers};
  }

  result.plane = best.plane;
  result.ground_found = true;
  result.cloud.points.clear();
  result.cloud.points.reserve(pts.size() - best.inliers);
  for (const auto& p : pts) {
    if (std::abs(best.plane.signed_distance(p)) > cfg.inlier_threshold) {
      result.cloud.points.push_back(p);
    }
  }
  result.removed = pts.size() - result.cloud.size();
  return result;
}

PointCloud to_vehicle_frame(const PointCloud& cloud, const Rotation3& extrinsic) {
  if (cloud.frame == Frame::Vehicle) {
    throw Error(ErrorKind::DoubleTransform, "double transform: cloud already in vehicle frame");
  }
  PointCloud out;
  out.frame = Frame::Vehicle;
  out.timestamp = cloud.timestamp;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(extrinsic * p);
  return out;
}

std::vector<std::size_t> distill_indices(std::size_t n_frames, std::size_t n_t) {
  if (n_t < 2 || n_t > n_frames) {
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("cannot select {} frames out of {}", n_t, n_frames));
  }
  std::vector<std::size_t> idx(n_t);
  const std::size_t span = n_frames - 1, steps = n_t - 1;
  for (std::size_t k = 0; k < n_t; ++k) {
    // round-half-up of k * span / steps in integers
    idx[k] = (2 * k * span + steps) / (2 * steps);
  }
  return idx;
}

double selection_rate(double f_sampled, std::size_t n_frames, std::size_t n_t) {
  if (n_frames == 0 || n_t == 0) throw Error(ErrorKind::InvalidArgument, "zero frame count");
  return f_sampled / (static_cast<double>(n_frames) / static_cast<double>(n_t));
}

FrameSequence distill_frames(const FrameSequence& seq, std::size_t n_t) {
  seq.validate();
  FrameSequence out;
  for (std::size_t i : distill_indices(seq.size(), n_t)) {
    out.clouds.push_back(seq.clouds[i]);
    out.poses.push_back(seq.poses[i]);
  }
  out.sample_rate_hz = selection_rate(seq.sample_rate_hz, seq.size(), n_t);
  return out;
}

PointCloud remove_dynamic(const PointCloud& cloud, const std::vector<BoundingBox>& boxes,
                          double margin) {
  if (boxes.empty()) return cloud;
  PointCloud out;
  out.frame = cloud.frame;
  out.timestamp = cloud.timestamp;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    bool inside = false;
    for (const auto& box : boxes) {
      if (box.contains(p, margin)) {
        inside = true;
        break;
      }
    }
    if (!inside) out.points.push_back(p);
  }
  return out;
}

PreprocessedSequence preprocess_sequence(
    const FrameSequence& sensor_seq, const Rotation3& extrinsic,
    const std::vector<std::vector<BoundingBox>>& boxes_per_frame,
    const PreprocessConfig& cfg, std::uint64_t rng_seed) {
  sensor_seq.validate();
  if (!boxes_per_frame.empty() && boxes_per_frame.size() != sensor_seq.size()) {
    throw Error(ErrorKind::InvalidArgument, "box list does not match frame count");
  }
  PreprocessedSequence out;
  out.source_indices = distill_indices(sensor_seq.size(), cfg.n_t);
  out.frames.sample_rate_hz = selection_rate(sensor_seq.sample_rate_hz, sensor_seq.size(), cfg.n_t);
  for (std::size_t i : out.source_indices) {
    const auto ground = remove_ground(sensor_seq.clouds[i], cfg.ground, derive_seed(rng_seed, i));
    PointCloud vehicle = to_vehicle_frame(ground.cloud, extrinsic);
    if (!boxes_per_frame.empty()) {
      vehicle = remove_dynamic(vehicle, boxes_per_frame[i], cfg.dynamic_margin);
    }
    out.frames.clouds.push_back(std::move(vehicle));
    out.frames.poses.push_back(sensor_seq.poses[i]);
    out.ground_found.push_back(ground.ground_found);
  }
  return out;
}

}  // namespace mountcheck
