#include "mountcheck/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck {

namespace {

constexpr double kPi = std::numbers::pi;

// Self-contained samplers so that datasets do not depend on the standard
// library's distribution implementations.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

double uniform(std::mt19937_64& rng, const SizeRange& r) { return uniform(rng, r.min, r.max); }

double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit(rng);  // (0, 1]
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

std::size_t below(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

void check_range(const SizeRange& r, std::string_view name) {
  if (!(r.min > 0.0) || !(r.max >= r.min) || !std::isfinite(r.max)) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("{} range must satisfy 0 < min <= max", name));
  }
}

Rotation3 yaw_rotation(double yaw_rad) { return Rotation3::about_axis(Vec3::UnitZ(), yaw_rad); }

double heading_of(const RigidTransform& pose) {
  const Mat3& m = pose.rotation.matrix();
  return std::atan2(m(1, 0), m(0, 0));
}

std::size_t sample_count(double density, double area) {
  return static_cast<std::size_t>(std::llround(density * area));
}

// Uniform samples on the five visible faces (four sides and the top) of a box
// resting on the ground, in box-local coordinates centered at the box center.
void sample_box_surface(std::mt19937_64& rng, const Vec3& half, std::size_t n,
                        std::vector<Point3>& out) {
  const double side_x = 2 * half.x() * 2 * half.z();
  const double side_y = 2 * half.y() * 2 * half.z();
  const double top = 2 * half.x() * 2 * half.y();
  const double total = 2 * side_x + 2 * side_y + top;
  for (std::size_t i = 0; i < n; ++i) {
    double pick = unit(rng) * total;
    const double a = uniform(rng, -1.0, 1.0), b = uniform(rng, -1.0, 1.0);
    if (pick < 2 * side_x) {
      const double y = pick < side_x ? half.y() : -half.y();
      out.emplace_back(a * half.x(), y, b * half.z());
    } else if ((pick -= 2 * side_x) < 2 * side_y) {
      const double x = pick < side_y ? half.x() : -half.x();
      out.emplace_back(x, a * half.y(), b * half.z());
    } else {
      out.emplace_back(a * half.x(), b * half.y(), half.z());
    }
  }
}

double box_surface_area(const Vec3& half) {
  return 2 * (2 * half.x() * 2 * half.z()) + 2 * (2 * half.y() * 2 * half.z()) +
         2 * half.x() * 2 * half.y();
}

// Object center outside the driving corridor, or nullopt after repeated misses.
std::optional<Vec3> place(std::mt19937_64& rng, const SceneSpec& spec, double radius) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double x = uniform(rng, -spec.placement_radius, spec.placement_radius);
    const double y = uniform(rng, -spec.placement_radius, spec.placement_radius);
    if (std::abs(y) >= spec.corridor_half_width + radius) return Vec3(x, y, 0.0);
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Straight: return "straight";
    case TrajectoryKind::Arc: return "arc";
    case TrajectoryKind::LaneChange: return "lane-change";
  }
  return "?";
}

TrajectoryKind trajectory_kind_from_string(std::string_view name) {
  if (name == "straight") return TrajectoryKind::Straight;
  if (name == "arc") return TrajectoryKind::Arc;
  if (name == "lane-change") return TrajectoryKind::LaneChange;
  throw Error(ErrorKind::InvalidArgument, fmt::format("unknown trajectory kind {}", name));
}

void TrajectorySpec::validate() const {
  if (!(speed > 0.0) || !(frame_rate > 0.0) || !(duration > 0.0) || !std::isfinite(curvature) ||
      !std::isfinite(lateral_offset)) {
    throw Error(ErrorKind::InvalidArgument,
                "trajectory needs positive speed, duration and frame rate");
  }
}

std::size_t TrajectorySpec::frame_count() const {
  validate();
  return static_cast<std::size_t>(std::floor(duration * frame_rate + 1e-9)) + 1;
}

RigidTransform TrajectorySpec::pose_at(double t) const {
  switch (kind) {
    case TrajectoryKind::Straight:
      return {Rotation3::identity(), Vec3(speed * t, 0.0, 0.0)};
    case TrajectoryKind::Arc: {
      if (std::abs(curvature) < 1e-12) return {Rotation3::identity(), Vec3(speed * t, 0.0, 0.0)};
      const double theta = speed * curvature * t;
      return {yaw_rotation(theta),
              Vec3(std::sin(theta) / curvature, (1.0 - std::cos(theta)) / curvature, 0.0)};
    }
    case TrajectoryKind::LaneChange: {
      const double phase = kPi * t / duration;
      const double y = 0.5 * lateral_offset * (1.0 - std::cos(phase));
      const double dy = 0.5 * lateral_offset * kPi / duration * std::sin(phase);
      return {yaw_rotation(std::atan2(dy, speed)), Vec3(speed * t, y, 0.0)};
    }
  }
  return {};
}

void SceneSpec::validate() const {
  if (boxes < 0 || poles < 0 || walls < 0 || dynamic_objects < 0) {
    throw Error(ErrorKind::InvalidArgument, "primitive counts must be >= 0");
  }
  if (!(noise_sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise sigma must be >= 0");
  if (!(ground_extent >= 0.0) || !(placement_radius > 0.0) || !(corridor_half_width >= 0.0) ||
      !(point_density > 0.0) || !(sensor_height >= 0.0) || !(sensor_range > 0.0) ||
      points_per_frame < 1) {
    throw Error(ErrorKind::InvalidArgument, "invalid scene spec");
  }
  check_range(box_footprint, "box_footprint");
  check_range(box_height, "box_height");
  check_range(pole_radius, "pole_radius");
  check_range(pole_height, "pole_height");
  check_range(wall_length, "wall_length");
  check_range(wall_height, "wall_height");
}

World generate_scene(const SceneSpec& spec) {
  spec.validate();
  if (spec.boxes + spec.poles + spec.walls == 0 && spec.ground_extent == 0.0) {
    throw Error(ErrorKind::EmptyScene, "empty scene: no primitives and no ground");
  }
  std::mt19937_64 rng(spec.seed);
  World w;
  const double z0 = -spec.sensor_height;

  if (spec.ground_extent > 0.0) {
    const double g = spec.ground_extent;
    w.ground_area = 4.0 * g * g;
    const std::size_t n = sample_count(spec.point_density, w.ground_area);
    for (std::size_t i = 0; i < n; ++i) {
      w.points.emplace_back(uniform(rng, -g, g), uniform(rng, -g, g), z0);
    }
    w.ground_points = n;
  }

  for (int k = 0; k < spec.boxes; ++k) {
    const Vec3 half(0.5 * uniform(rng, spec.box_footprint), 0.5 * uniform(rng, spec.box_footprint),
                    0.5 * uniform(rng, spec.box_height));
    const double yaw = uniform(rng, 0.0, kPi);
    const auto c = place(rng, spec, std::hypot(half.x(), half.y()));
    if (!c) continue;
    const Point3 center(c->x(), c->y(), z0 + half.z());
    const double area = box_surface_area(half);
    std::vector<Point3> local;
    sample_box_surface(rng, half, sample_count(spec.point_density, area), local);
    const Rotation3 r = yaw_rotation(yaw);
    for (const auto& p : local) w.points.push_back(r * p + center);
    w.box_shapes.push_back({center, half, yaw});
    w.object_area += area;
  }

  for (int k = 0; k < spec.poles; ++k) {
    const double radius = uniform(rng, spec.pole_radius);
    const double height = uniform(rng, spec.pole_height);
    const auto c = place(rng, spec, radius);
    if (!c) continue;
    const double area = 2.0 * kPi * radius * height;
    const std::size_t n = sample_count(spec.point_density, area);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = uniform(rng, 0.0, 2.0 * kPi);
      w.points.emplace_back(c->x() + radius * std::cos(a), c->y() + radius * std::sin(a),
                            z0 + uniform(rng, 0.0, height));
    }
    w.object_area += area;
  }

  for (int k = 0; k < spec.walls; ++k) {
    const double length = uniform(rng, spec.wall_length);
    const double height = uniform(rng, spec.wall_height);
    const double yaw = uniform(rng, 0.0, kPi);
    const auto c = place(rng, spec, 0.5 * length);
    if (!c) continue;
    const double area = length * height;
    const std::size_t n = sample_count(spec.point_density, area);
    const Vec3 dir(std::cos(yaw), std::sin(yaw), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 along = dir * uniform(rng, -0.5 * length, 0.5 * length);
      w.points.emplace_back(c->x() + along.x(), c->y() + along.y(), z0 + uniform(rng, 0.0, height));
    }
    w.object_area += area;
  }

  if (w.points.empty()) throw Error(ErrorKind::EmptyScene, "empty scene: nothing was placed");
  return w;
}

std::vector<MovingBox> generate_dynamic_objects(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, 0xd1a));
  std::vector<MovingBox> out;
  for (int k = 0; k < spec.dynamic_objects; ++k) {
    MovingBox b;
    b.half_extents = Vec3(2.25, 0.9, 0.75);
    const double lane = (k % 2 == 0 ? 1.0 : -1.0) * 3.5;
    b.center = Point3(uniform(rng, 5.0, 40.0), lane, -spec.sensor_height + b.half_extents.z());
    b.velocity = Vec3(uniform(rng, -15.0, 15.0), 0.0, 0.0);
    sample_box_surface(rng, b.half_extents,
                       sample_count(spec.point_density, box_surface_area(b.half_extents)), b.surface);
    out.push_back(std::move(b));
  }
  return out;
}

RenderedSequence render_sequence(const World& world, const TrajectorySpec& traj,
                                 const RotationError& err, const SceneSpec& spec,
                                 std::uint64_t rng_seed, const std::vector<MovingBox>& dynamic) {
  traj.validate();
  err.validate();
  spec.validate();
  if (world.points.empty()) throw Error(ErrorKind::EmptyScene, "empty scene: world has no points");

  const Rotation3 mount = err.rotation();
  const std::size_t frames = traj.frame_count();
  const double range2 = spec.sensor_range * spec.sensor_range;
  RenderedSequence out;
  out.sequence.sample_rate_hz = traj.frame_rate;

  for (std::size_t i = 0; i < frames; ++i) {
    const double t = static_cast<double>(i) / traj.frame_rate;
    const RigidTransform pose = traj.pose_at(t);
    const RigidTransform inv = pose.inverse();
    std::vector<Point3> visible;
    for (const auto& p : world.points) {
      const Point3 q = inv.apply(p);
      if (q.squaredNorm() <= range2) visible.push_back(q);
    }
    std::vector<BoundingBox> boxes;
    for (const auto& b : dynamic) {
      const Point3 c = b.center + b.velocity * t;
      const Rotation3 r = yaw_rotation(b.yaw_rad);
      for (const auto& s : b.surface) {
        const Point3 q = inv.apply(r * s + c);
        if (q.squaredNorm() <= range2) visible.push_back(q);
      }
      boxes.push_back({inv.apply(c), b.half_extents, b.yaw_rad - heading_of(pose)});
    }
    if (visible.empty()) {
      throw Error(ErrorKind::EmptyFrame, fmt::format("empty frame {}: no points within range", i));
    }

    std::mt19937_64 rng(derive_seed(rng_seed, i));
    const auto budget = static_cast<std::size_t>(spec.points_per_frame);
    if (visible.size() > budget) {
      std::vector<std::size_t> idx(visible.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t k = 0; k < budget; ++k) std::swap(idx[k], idx[k + below(rng, idx.size() - k)]);
      idx.resize(budget);
      std::sort(idx.begin(), idx.end());
      std::vector<Point3> kept;
      kept.reserve(budget);
      for (std::size_t k : idx) kept.push_back(visible[k]);
      visible = std::move(kept);
    }

    PointCloud cloud;
    cloud.frame = Frame::Sensor;
    cloud.timestamp = t;
    cloud.points.reserve(visible.size());
    for (const auto& q : visible) {
      Point3 p = mount * q;
      if (spec.noise_sigma > 0.0) {
        for (int a = 0; a < 3; ++a) p[a] += spec.noise_sigma * gaussian(rng);
      }
      cloud.points.push_back(p);
    }
    out.sequence.clouds.push_back(std::move(cloud));
    out.sequence.poses.push_back(pose);
    if (!dynamic.empty()) out.boxes.push_back(std::move(boxes));
  }
  return out;
}

std::string combination_name(const AxisFlags& axes) {
  static constexpr std::array<std::string_view, 3> names{"roll", "pitch", "yaw"};
  std::string out;
  for (std::size_t a = 0; a < 3; ++a) {
    if (!axes[a]) continue;
    if (!out.empty()) out += '+';
    out += names[a];
  }
  return out.empty() ? "none" : out;
}

void TrajectoryMix::validate() const {
  if (!(straight >= 0.0) || !(arc >= 0.0) || !(lane_change >= 0.0) ||
      !(straight + arc + lane_change > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "trajectory weights must be >= 0 with a positive sum");
  }
  check_range(speed, "trajectories.speed");
  check_range(curvature, "trajectories.curvature");
  check_range(lateral_offset, "trajectories.lateral_offset");
  if (!(duration > 0.0) || !(frame_rate > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "trajectory duration and frame rate must be positive");
  }
}

void DatasetConfig::validate() const {
  if (n_samples == 0) throw Error(ErrorKind::InfeasibleMix, "infeasible mix: n_samples must be >= 1");
  if (!(aligned_fraction >= 0.0 && aligned_fraction <= 1.0)) {
    throw Error(ErrorKind::InfeasibleMix, "infeasible mix: aligned_fraction must lie in [0, 1]");
  }
  double sum = 0.0;
  for (double w : combination_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorKind::InfeasibleMix, "infeasible mix: combination_weights must be >= 0");
    }
    sum += w;
  }
  if (!(sum > 0.0) && aligned_fraction < 1.0) {
    throw Error(ErrorKind::InfeasibleMix,
                "infeasible mix: combination_weights are all zero but misaligned samples are requested");
  }
  if (severity_mix) {
    double s = 0.0;
    for (double w : *severity_mix) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw Error(ErrorKind::InfeasibleMix, "infeasible mix: severity_mix weights must be >= 0");
      }
      s += w;
    }
    if (!(s > 0.0)) throw Error(ErrorKind::InfeasibleMix, "infeasible mix: severity_mix sums to zero");
  }
  scene.validate();
  trajectories.validate();
}

std::vector<std::size_t> allocate_counts(std::size_t total, std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> counts(weights.size(), 0);
  if (total == 0) return counts;
  if (!(sum > 0.0)) throw Error(ErrorKind::InfeasibleMix, "infeasible mix: weights sum to zero");
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  // ties go to the earlier entry
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

namespace {

enum Stream : std::uint64_t { kScene = 1, kRender = 2, kError = 3, kTrajectory = 4, kOrder = 5 };

TrajectorySpec draw_trajectory(const TrajectoryMix& mix, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrajectorySpec t;
  t.duration = mix.duration;
  t.frame_rate = mix.frame_rate;
  t.speed = uniform(rng, mix.speed);
  const double pick = unit(rng) * (mix.straight + mix.arc + mix.lane_change);
  const double sign = (rng() >> 63) != 0 ? -1.0 : 1.0;
  if (pick < mix.straight) {
    t.kind = TrajectoryKind::Straight;
  } else if (pick < mix.straight + mix.arc) {
    t.kind = TrajectoryKind::Arc;
    t.curvature = sign * uniform(rng, mix.curvature);
  } else {
    t.kind = TrajectoryKind::LaneChange;
    t.lateral_offset = sign * uniform(rng, mix.lateral_offset);
  }
  return t;
}

RotationError draw_error(const AxisFlags& axes, std::optional<SeverityBucket> target,
                         std::uint64_t seed) {
  if (!target) return sample_error(seed, axes);
  for (std::uint64_t attempt = 0; attempt < 1'000'000; ++attempt) {
    RotationError e = sample_error(derive_seed(seed, attempt), axes);
    if (classify_severity(e) == *target) return e;
  }
  throw Error(ErrorKind::InfeasibleMix, "infeasible mix: could not realize the requested severity");
}

}  // namespace

std::vector<SamplePlan> plan_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_samples;
  // round half up
  const auto n_aligned = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.aligned_fraction + 0.5));
  const std::size_t n_mis = n - std::min(n, n_aligned);

  std::vector<std::optional<AxisFlags>> combos(std::min(n, n_aligned));
  const auto combo_counts = allocate_counts(n_mis, cfg.combination_weights);
  for (std::size_t c = 0; c < combo_counts.size(); ++c) {
    for (std::size_t k = 0; k < combo_counts[c]; ++k) combos.emplace_back(kAxisCombinations[c]);
  }

  std::vector<std::optional<SeverityBucket>> severities(n_mis);
  if (cfg.severity_mix) {
    const auto sev = allocate_counts(n_mis, *cfg.severity_mix);
    static constexpr std::array<SeverityBucket, 3> order{SeverityBucket::Easy, SeverityBucket::Medium,
                                                         SeverityBucket::Hard};
    severities.clear();
    for (std::size_t b = 0; b < 3; ++b) severities.insert(severities.end(), sev[b], order[b]);
    // spread severities across combinations
    std::mt19937_64 rng(derive_seed(cfg.seed, kOrder + 100));
    for (std::size_t i = severities.size(); i > 1; --i) std::swap(severities[i - 1], severities[below(rng, i)]);
  }

  std::vector<SamplePlan> plans(n);
  std::size_t mis = 0;
  for (std::size_t i = 0; i < n; ++i) {
    SamplePlan& p = plans[i];
    p.scene_seed = derive_seed(derive_seed(cfg.seed, kScene), i);
    p.render_seed = derive_seed(derive_seed(cfg.seed, kRender), i);
    p.trajectory = draw_trajectory(cfg.trajectories, derive_seed(derive_seed(cfg.seed, kTrajectory), i));
    if (combos[i]) {
      p.error = draw_error(*combos[i], severities[mis++], derive_seed(derive_seed(cfg.seed, kError), i));
    }
  }

  std::mt19937_64 rng(derive_seed(cfg.seed, kOrder));
  for (std::size_t i = plans.size(); i > 1; --i) std::swap(plans[i - 1], plans[below(rng, i)]);
  for (std::size_t i = 0; i < n; ++i) {
    plans[i].index = i;
    plans[i].id = fmt::format("s{:05d}", i);
  }
  return plans;
}

LabeledSample materialize(const SamplePlan& plan, const DatasetConfig& cfg) {
  SceneSpec spec = cfg.scene;
  spec.seed = plan.scene_seed;
  const World world = generate_scene(spec);
  const auto dynamic = generate_dynamic_objects(spec);
  auto rendered = render_sequence(world, plan.trajectory, plan.error, spec, plan.render_seed, dynamic);
  LabeledSample s;
  s.id = plan.id;
  s.sequence = std::move(rendered.sequence);
  s.boxes = std::move(rendered.boxes);
  s.error = plan.error;
  s.trajectory = plan.trajectory;
  s.scene_seed = plan.scene_seed;
  s.render_seed = plan.render_seed;
  return s;
}

std::vector<LabeledSample> build_dataset(const DatasetConfig& cfg) {
  std::vector<LabeledSample> out;
  for (const auto& plan : plan_dataset(cfg)) out.push_back(materialize(plan, cfg));
  return out;
}

}  // namespace mountcheck
