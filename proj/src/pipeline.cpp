#include "mountcheck/pipeline.hpp"

#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck {

void PipelineConfig::validate() const {
  solver.validate();
  if (max_flow_vectors < 2 || flow_points < 2 || preprocess.n_t < 2) {
    throw Error(ErrorKind::InvalidArgument, "invalid pipeline config");
  }
}

SampleFlows compute_sample_flows(const FrameSequence& sensor_seq,
                                 const std::vector<std::vector<BoundingBox>>& boxes,
                                 const RotationError& truth, bool oracle,
                                 const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  truth.validate();
  const auto pre = preprocess_sequence(sensor_seq, cfg.nominal_extrinsic, boxes, cfg.preprocess,
                                       derive_seed(seed, 1));
  const Rotation3 mount = truth.rotation();
  const auto& frames = pre.frames;

  std::vector<FlowField> pairs;
  double epe_sum = 0.0;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
    const RigidTransform ego = frames.poses[k].inverse() * frames.poses[k + 1];
    if (frames.clouds[k].empty() || frames.clouds[k + 1].empty()) {
      throw Error(ErrorKind::EmptyFrame, fmt::format("empty frame {} after preprocessing", k));
    }
    if (oracle) {
      pairs.push_back(rotate_flow_oracle(frames.clouds[k], ego, mount));
      continue;
    }
    PointCloud source = frames.clouds[k];
    if (source.size() > cfg.flow_points) {
      FlowField picked;
      picked.anchors = source.points;
      picked.vectors.assign(source.size(), Vec3::Zero());
      source.points = subsample_flows(picked, cfg.flow_points, derive_seed(seed, 100 + k)).anchors;
    }
    auto est = estimate_flow(source, frames.clouds[k + 1], cfg.solver, derive_seed(seed, 200 + k));
    epe_sum += mean_epe(est.field, rotate_flow_oracle(source, ego, mount));
    pairs.push_back(std::move(est.field));
  }

  SampleFlows out;
  out.flows = subsample_flows(pool_flows(pairs), cfg.max_flow_vectors, derive_seed(seed, 2));
  if (!oracle && !pairs.empty()) out.mean_epe = epe_sum / static_cast<double>(pairs.size());
  if (!out.flows.empty()) {
    double y = 0.0;
    for (const auto& u : out.flows.vectors) y += u.y();
    out.lateral_mean = y / static_cast<double>(out.flows.size());
  }
  return out;
}

}  // namespace mountcheck
