#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mountcheck/geometry.hpp"
#include "mountcheck/preprocess.hpp"

namespace mountcheck {

enum class TrajectoryKind : std::uint8_t { Straight = 0, Arc = 1, LaneChange = 2 };

std::string_view to_string(TrajectoryKind kind);
TrajectoryKind trajectory_kind_from_string(std::string_view name);

/// Ego path starting at the world origin heading +x. The vehicle heading
/// follows the path tangent.
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Straight;
  double speed = 10.0;       // m/s
  double duration = 0.45;    // s
  double frame_rate = 20.0;  // Hz
  double curvature = 0.0;       // 1/m, signed, arc only
  double lateral_offset = 0.0;  // m, signed, lane change only

  void validate() const;
  /// floor(duration * frame_rate) + 1.
  std::size_t frame_count() const;
  RigidTransform pose_at(double t) const;
};

struct SizeRange {
  double min = 0.0;
  double max = 0.0;
};

/// Static world made of boxes, poles and walls on a square ground patch,
/// plus the sensor model used to render it. Surfaces are sampled at a fixed
/// areal density, so point shares follow surface areas.
struct SceneSpec {
  int boxes = 30;
  int poles = 30;
  int walls = 10;
  SizeRange box_footprint{2.0, 6.0};
  SizeRange box_height{1.5, 4.0};
  SizeRange pole_radius{0.1, 0.3};
  SizeRange pole_height{3.0, 8.0};
  SizeRange wall_length{10.0, 30.0};
  SizeRange wall_height{2.0, 5.0};
  double ground_extent = 40.0;     // half-width of the ground square; 0 disables
  double placement_radius = 45.0;  // objects are centered within this square
  double corridor_half_width = 5.0;  // kept free of objects along the x axis
  double point_density = 4.0;      // points per m^2 of surface
  double sensor_height = 1.8;      // sensor above ground; the ground is at z = -height
  double sensor_range = 60.0;
  int points_per_frame = 4096;
  double noise_sigma = 0.02;
  int dynamic_objects = 0;  // moving boxes, off by default
  std::uint64_t seed = 0;

  void validate() const;
};

struct World {
  std::vector<Point3> points;  // ground points first
  std::size_t ground_points = 0;
  std::vector<BoundingBox> box_shapes;  // static boxes, world frame
  double ground_area = 0.0;
  double object_area = 0.0;
};

World generate_scene(const SceneSpec& spec);

/// A box moving with constant velocity in the world frame.
struct MovingBox {
  Point3 center;  // at t = 0
  Vec3 velocity = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();
  double yaw_rad = 0.0;
  std::vector<Point3> surface;  // box-local surface samples
};

std::vector<MovingBox> generate_dynamic_objects(const SceneSpec& spec);

struct RenderedSequence {
  FrameSequence sequence;  // sensor-frame clouds, vehicle poses in the world
  std::vector<std::vector<BoundingBox>> boxes;  // per frame, vehicle frame; empty without dynamics
};

/// Renders every frame: world points within range of the vehicle are
/// expressed in the true sensor frame, subsampled to the point budget, seen
/// through the rotated mount, and perturbed by noise. Throws EmptyFrame when a
/// frame has no point in range.
RenderedSequence render_sequence(const World& world, const TrajectorySpec& traj,
                                 const RotationError& err, const SceneSpec& spec,
                                 std::uint64_t rng_seed,
                                 const std::vector<MovingBox>& dynamic = {});

/// Reporting order: roll, pitch, yaw, roll+pitch, roll+yaw, pitch+yaw, all.
inline constexpr std::array<AxisFlags, 7> kAxisCombinations{{
    {true, false, false},
    {false, true, false},
    {false, false, true},
    {true, true, false},
    {true, false, true},
    {false, true, true},
    {true, true, true},
}};

std::string combination_name(const AxisFlags& axes);

struct TrajectoryMix {
  double straight = 1.0;
  double arc = 2.0;
  double lane_change = 1.0;
  SizeRange speed{8.0, 12.0};
  SizeRange curvature{0.005, 0.03};     // magnitude; sign is random
  SizeRange lateral_offset{0.2, 0.6};  // magnitude; sign is random
  double duration = 0.45;
  double frame_rate = 20.0;

  void validate() const;
};

struct DatasetConfig {
  std::size_t n_samples = 2000;
  double aligned_fraction = 0.5;
  /// Relative weights of the seven axis combinations.
  std::array<double, 7> combination_weights{1, 1, 1, 1, 1, 1, 1};
  /// Optional Easy:Medium:Hard weights for misaligned samples. Unset means
  /// angles are drawn uniformly per axis and buckets fall where they land.
  std::optional<std::array<double, 3>> severity_mix;
  SceneSpec scene;
  TrajectoryMix trajectories;
  std::uint64_t seed = 0;

  /// Throws InfeasibleMix naming the offending field.
  void validate() const;
};

/// Everything needed to materialize one sample, decided up front so that
/// generation can run in any order or in parallel.
struct SamplePlan {
  std::size_t index = 0;
  std::string id;
  RotationError error;
  TrajectorySpec trajectory;
  std::uint64_t scene_seed = 0;
  std::uint64_t render_seed = 0;
};

struct LabeledSample {
  std::string id;
  FrameSequence sequence;
  RotationError error;
  std::vector<std::vector<BoundingBox>> boxes;
  TrajectorySpec trajectory;
  std::uint64_t scene_seed = 0;
  std::uint64_t render_seed = 0;
};

/// Largest-remainder allocation of `total` over `weights`.
std::vector<std::size_t> allocate_counts(std::size_t total, std::span<const double> weights);

std::vector<SamplePlan> plan_dataset(const DatasetConfig& cfg);
LabeledSample materialize(const SamplePlan& plan, const DatasetConfig& cfg);
std::vector<LabeledSample> build_dataset(const DatasetConfig& cfg);

}  // namespace mountcheck
