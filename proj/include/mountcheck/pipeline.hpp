#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mountcheck/geometry.hpp"
#include "mountcheck/preprocess.hpp"
#include "mountcheck/sceneflow.hpp"

namespace mountcheck {

/// Sequence-to-flow settings shared by the flow command and the in-memory
/// experiment.
struct PipelineConfig {
  PreprocessConfig preprocess;
  FlowSolverConfig solver;
  /// Pooled flows are subsampled to at most this many vectors per sample.
  std::size_t max_flow_vectors = 512;
  /// Source points per frame pair handed to the flow solver.
  std::size_t flow_points = 1024;
  Rotation3 nominal_extrinsic;

  void validate() const;
};

struct SampleFlows {
  FlowField flows;
  /// Mean end-point error against the analytic flow; set for estimated flows.
  std::optional<double> mean_epe;
  /// Mean y component of the pooled flow (m per frame interval).
  double lateral_mean = 0.0;
};

/// Preprocesses a sensor-frame sequence and pools the flow of every
/// consecutive distilled frame pair. With `oracle` the flow is the analytic
/// one for `truth`; otherwise it is estimated and compared against it.
SampleFlows compute_sample_flows(const FrameSequence& sensor_seq,
                                 const std::vector<std::vector<BoundingBox>>& boxes,
                                 const RotationError& truth, bool oracle,
                                 const PipelineConfig& cfg, std::uint64_t seed);

}  // namespace mountcheck
