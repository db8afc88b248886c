#pragma once

#include <cstdint>
#include <vector>

#include "mountcheck/geometry.hpp"

namespace mountcheck {

/// Plane {p : n·p + d = 0} with unit normal.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  double signed_distance(const Point3& p) const { return normal.dot(p) + offset; }
};

/// Oriented box (yaw about +z only).
struct BoundingBox {
  Point3 center = Point3::Zero();
  Vec3 half_extents = Vec3::Ones();
  double yaw_rad = 0.0;

  bool contains(const Point3& p, double margin = 0.0) const;
  void validate() const;
};

/// Ordered clouds with the ego pose (vehicle -> world) of each frame.
struct FrameSequence {
  std::vector<PointCloud> clouds;
  std::vector<RigidTransform> poses;
  double sample_rate_hz = 10.0;

  std::size_t size() const { return clouds.size(); }
  /// Throws InvalidArgument on mismatched lengths, non-increasing timestamps,
  /// or mixed frame tags.
  void validate() const;
};

struct GroundRemovalConfig {
  int max_iters = 200;
  double inlier_threshold = 0.15;
  double min_inlier_fraction = 0.15;
  double max_normal_tilt_deg = 30.0;
};

struct GroundRemovalResult {
  PointCloud cloud;
  Plane plane;
  bool ground_found = false;
  std::size_t removed = 0;
};

/// RANSAC ground segmentation. Candidate planes come from random 3-point
/// samples whose normal lies within `max_normal_tilt_deg` of +z; the winner
/// is refined by least squares over its inliers.
GroundRemovalResult remove_ground(const PointCloud& cloud, const GroundRemovalConfig& cfg,
                                  std::uint64_t rng_seed);

PointCloud to_vehicle_frame(const PointCloud& cloud, const Rotation3& extrinsic);

/// Endpoint-inclusive, evenly spread indices: round(k (N-1) / (n_t-1)).
std::vector<std::size_t> distill_indices(std::size_t n_frames, std::size_t n_t);

/// f_select = f_sampled / (n_frames / n_t).
double selection_rate(double f_sampled, std::size_t n_frames, std::size_t n_t);

FrameSequence distill_frames(const FrameSequence& seq, std::size_t n_t);

/// Drops points inside any box grown by `margin` per half-extent. Survivor
/// order is preserved.
PointCloud remove_dynamic(const PointCloud& cloud, const std::vector<BoundingBox>& boxes,
                          double margin);

struct PreprocessConfig {
  GroundRemovalConfig ground;
  std::size_t n_t = 5;
  double dynamic_margin = 0.25;
};

struct PreprocessedSequence {
  FrameSequence frames;                 // vehicle frame, distilled
  std::vector<std::size_t> source_indices;
  std::vector<bool> ground_found;
};

/// Full per-sample preprocessing on a sensor-frame sequence, in the fixed
/// order ground removal -> vehicle frame -> distillation -> dynamic removal.
/// Ground removal only runs on frames that survive distillation; its seed
/// depends on the original frame index, so the result equals running it on
/// every frame first. `boxes_per_frame` (vehicle frame) may be empty.
PreprocessedSequence preprocess_sequence(
    const FrameSequence& sensor_seq, const Rotation3& extrinsic,
    const std::vector<std::vector<BoundingBox>>& boxes_per_frame,
    const PreprocessConfig& cfg, std::uint64_t rng_seed);

}  // namespace mountcheck
