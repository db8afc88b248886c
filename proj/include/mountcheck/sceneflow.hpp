#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mountcheck/diffcore.hpp"
#include "mountcheck/geometry.hpp"
#include "mountcheck/kdtree.hpp"

namespace mountcheck {

/// Per-point displacement (meters per frame interval) rooted at the source
/// point it was estimated for, both in the vehicle frame.
struct FlowField {
  std::vector<Point3> anchors;
  std::vector<Vec3> vectors;

  std::size_t size() const { return vectors.size(); }
  bool empty() const { return vectors.empty(); }
  void validate() const;
};

struct FlowSolverConfig {
  int hidden_width = 64;
  int hidden_layers = 2;
  int iterations = 500;
  double step_size = 8e-3;
  /// Weight of the coherence regularizer (mean squared deviation of flow
  /// vectors from the mean flow).
  double lambda = 0.0;
  /// Relative loss improvement below which an iteration counts as stalled.
  double tolerance = 1e-4;
  /// Stop after this many consecutive stalled iterations.
  int patience = 50;
  /// Data-term truncation in m^2.
  double nn_cap = 2.0;
  /// Network inputs are coordinates divided by this length (m).
  double coordinate_scale = 10.0;

  void validate() const;
};

/// Squared distance to the exact nearest neighbour.
double nn_distance(const Point3& query, const KdTree3& target_index);

struct FlowObjective {
  double data = 0.0;         // sum of truncated squared NN distances
  double regularizer = 0.0;  // C
  double total = 0.0;        // data + lambda C
};

double flow_regularizer(const FlowField& flow);
FlowObjective flow_objective(const FlowField& flow, const KdTree3& target_index,
                             const FlowSolverConfig& cfg);

/// Objective as a tape op over an N x 3 flow tensor, for training the flow
/// network. Value equals flow_objective(...).total.
nn::Var flow_objective(nn::Tape& tape, nn::Var flows, const std::vector<Point3>& anchors,
                       const KdTree3& target_index, const FlowSolverConfig& cfg);

/// Coordinate network u = g(x): 3 -> H -> ... -> H -> 3 with ReLU.
class FlowNetwork {
 public:
  FlowNetwork(const FlowSolverConfig& cfg, std::uint64_t seed);

  nn::Var forward(nn::Tape& tape, nn::Var coords);
  nn::Tensor2 evaluate(const std::vector<Point3>& points);
  /// Scaled N x 3 input tensor for `points`.
  nn::Tensor2 encode_inputs(const std::vector<Point3>& points) const;
  std::vector<nn::Parameter*> parameters();

 private:
  std::vector<nn::Linear> layers_;
  double coordinate_scale_;
};

struct FlowEstimate {
  FlowField field;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int iterations = 0;
};

/// Fits a fresh FlowNetwork to (source, target) by Adam descent on the
/// objective and returns the flow at the best iterate seen, so
/// final_loss <= initial_loss always holds.
FlowEstimate estimate_flow(const PointCloud& source, const PointCloud& target,
                           const FlowSolverConfig& cfg, std::uint64_t rng_seed);

/// Exact flow of static points observed through a mount rotated by
/// `mount_error` while the vehicle moves by `ego_motion` (pose of the next
/// frame expressed in the current one): u = E T^-1 E^-1 x - x.
FlowField rotate_flow_oracle(const PointCloud& cloud, const RigidTransform& ego_motion,
                             const Rotation3& mount_error);

/// Sums per-point displacements of consecutive fields over the same points;
/// anchored at the first field.
FlowField chain_flows(std::span<const FlowField> fields);

/// Union of all vectors, each keeping its own anchor.
FlowField pool_flows(std::span<const FlowField> fields);

/// Deterministic uniform subset of at most `max_vectors` vectors, in
/// original order.
FlowField subsample_flows(const FlowField& flow, std::size_t max_vectors, std::uint64_t seed);

/// Mean end-point error between matching fields.
double mean_epe(const FlowField& estimate, const FlowField& truth);
double mean_magnitude(const FlowField& flow);

}  // namespace mountcheck
