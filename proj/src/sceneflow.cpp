#include "mountcheck/sceneflow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck {

void FlowField::validate() const {
  if (anchors.size() != vectors.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                fmt::format("flow has {} anchors but {} vectors", anchors.size(), vectors.size()));
  }
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (!vectors[i].allFinite() || !anchors[i].allFinite()) {
      throw Error(ErrorKind::InvalidArgument, fmt::format("non-finite flow entry {}", i));
    }
  }
}

void FlowSolverConfig::validate() const {
  if (iterations < 1 || !(step_size > 0.0) || !(lambda >= 0.0) || hidden_width < 1 ||
      hidden_layers < 1 || !(nn_cap > 0.0) || !(coordinate_scale > 0.0) || patience < 1) {
    throw Error(ErrorKind::InvalidArgument, "invalid flow solver config");
  }
}

double nn_distance(const Point3& query, const KdTree3& target_index) {
  return target_index.nearest(query).sq_dist;
}

double flow_regularizer(const FlowField& flow) {
  if (flow.empty()) return 0.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& u : flow.vectors) mean += u;
  mean /= static_cast<double>(flow.size());
  double c = 0.0;
  for (const auto& u : flow.vectors) c += (u - mean).squaredNorm();
  return c / static_cast<double>(flow.size());
}

FlowObjective flow_objective(const FlowField& flow, const KdTree3& target_index,
                             const FlowSolverConfig& cfg) {
  FlowObjective out;
  for (std::size_t i = 0; i < flow.size(); ++i) {
    out.data += std::min(nn_distance(flow.anchors[i] + flow.vectors[i], target_index), cfg.nn_cap);
  }
  out.regularizer = flow_regularizer(flow);
  out.total = out.data + cfg.lambda * out.regularizer;
  return out;
}

nn::Var flow_objective(nn::Tape& tape, nn::Var flows, const std::vector<Point3>& anchors,
                       const KdTree3& target_index, const FlowSolverConfig& cfg) {
  const nn::Tensor2& u = tape.value(flows);
  const auto n = static_cast<Eigen::Index>(anchors.size());
  if (u.rows() != n || u.cols() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "flow tensor does not match anchors");
  }
  nn::Tensor2 d_data = nn::Tensor2::Zero(n, 3);
  double data = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point3 moved = anchors[static_cast<std::size_t>(i)] + u.row(i).transpose();
    const auto nb = target_index.nearest(moved);
    if (nb.sq_dist < cfg.nn_cap) {
      data += nb.sq_dist;
      d_data.row(i) = 2.0 * (moved - target_index.points()[nb.index]).transpose();
    } else {
      data += cfg.nn_cap;
    }
  }
  const Eigen::RowVector3d mean = u.colwise().mean();
  const nn::Tensor2 centered = u.rowwise() - mean;
  const double reg = n > 0 ? centered.squaredNorm() / static_cast<double>(n) : 0.0;

  nn::Tensor2 value(1, 1);
  value(0, 0) = data + cfg.lambda * reg;
  nn::Tensor2 grad = d_data;
  if (cfg.lambda > 0.0 && n > 0) grad += (2.0 * cfg.lambda / static_cast<double>(n)) * centered;
  return tape.record(std::move(value), {flows},
                     [flows, grad = std::move(grad)](nn::Tape& t, const nn::Tensor2& g) {
                       t.accumulate(flows, grad * g(0, 0));
                     });
}

FlowNetwork::FlowNetwork(const FlowSolverConfig& cfg, std::uint64_t seed)
    : coordinate_scale_(cfg.coordinate_scale) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  int in = 3;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    layers_.emplace_back(fmt::format("flow.fc{}", l), in, cfg.hidden_width, rng);
    in = cfg.hidden_width;
  }
  // near-zero initial flow
  layers_.emplace_back("flow.out", in, 3, rng, 0.01);
  layers_.back().bias.value.setZero();
}

nn::Tensor2 FlowNetwork::encode_inputs(const std::vector<Point3>& points) const {
  nn::Tensor2 x(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = points[i].transpose() / coordinate_scale_;
  }
  return x;
}

nn::Var FlowNetwork::forward(nn::Tape& tape, nn::Var coords) {
  nn::Var h = coords;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) h = nn::relu(tape, layers_[l](tape, h));
  return layers_.back()(tape, h);
}

nn::Tensor2 FlowNetwork::evaluate(const std::vector<Point3>& points) {
  nn::Tape tape;
  return tape.value(forward(tape, tape.input(encode_inputs(points))));
}

std::vector<nn::Parameter*> FlowNetwork::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

namespace {

FlowField to_field(const std::vector<Point3>& anchors, const nn::Tensor2& u) {
  FlowField f;
  f.anchors = anchors;
  f.vectors.reserve(anchors.size());
  for (Eigen::Index i = 0; i < u.rows(); ++i) f.vectors.emplace_back(u.row(i).transpose());
  return f;
}

}  // namespace

FlowEstimate estimate_flow(const PointCloud& source, const PointCloud& target,
                           const FlowSolverConfig& cfg, std::uint64_t rng_seed) {
  cfg.validate();
  if (source.empty() || target.empty()) {
    throw Error(ErrorKind::EmptyInput, "flow estimation needs nonempty clouds");
  }
  if (source.frame != target.frame) {
    throw Error(ErrorKind::InvalidArgument, "source and target frame tags differ");
  }

  const KdTree3 index(target.points);
  FlowNetwork net(cfg, rng_seed);
  const auto params = net.parameters();
  nn::AdamW opt(params, {.lr = cfg.step_size, .weight_decay = 0.0});
  const nn::Tensor2 inputs = net.encode_inputs(source.points);

  FlowEstimate est;
  nn::Tensor2 best_flow;
  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    nn::Tape tape;
    const nn::Var u = net.forward(tape, tape.input(inputs));
    const nn::Var loss = flow_objective(tape, u, source.points, index, cfg);
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value)) {
      throw Error(ErrorKind::Diverged, fmt::format("diverged at iteration {}", it));
    }
    if (it == 0) est.initial_loss = value;
    est.iterations = it + 1;
    if (value < best) {
      stalled = (best - value) <= cfg.tolerance * std::abs(best) ? stalled + 1 : 0;
      best = value;
      best_flow = tape.value(u);
    } else {
      ++stalled;
    }
    if (stalled >= cfg.patience) break;
    opt.zero_grad();
    tape.backward(loss);
    try {
      opt.step();
    } catch (const Error& e) {
      throw Error(ErrorKind::Diverged, fmt::format("diverged at iteration {}: {}", it, e.what()));
    }
  }
  est.final_loss = best;
  est.field = to_field(source.points, best_flow);
  return est;
}

FlowField rotate_flow_oracle(const PointCloud& cloud, const RigidTransform& ego_motion,
                             const Rotation3& mount_error) {
  if (cloud.frame != Frame::Vehicle) {
    throw Error(ErrorKind::InvalidArgument, "flow oracle expects a vehicle-frame cloud");
  }
  const RigidTransform e{mount_error, Vec3::Zero()};
  const RigidTransform step = e * ego_motion.inverse() * e.inverse();
  FlowField f;
  f.anchors = cloud.points;
  f.vectors.reserve(cloud.size());
  for (const auto& x : cloud.points) f.vectors.push_back(step.apply(x) - x);
  return f;
}

FlowField chain_flows(std::span<const FlowField> fields) {
  if (fields.empty()) throw Error(ErrorKind::EmptyInput, "no flow fields to chain");
  FlowField out = fields.front();
  for (std::size_t k = 1; k < fields.size(); ++k) {
    if (fields[k].size() != out.size()) {
      throw Error(ErrorKind::ShapeMismatch,
                  fmt::format("flow {} has {} vectors, expected {}", k, fields[k].size(), out.size()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out.vectors[i] += fields[k].vectors[i];
  }
  return out;
}

FlowField pool_flows(std::span<const FlowField> fields) {
  FlowField out;
  for (const auto& f : fields) {
    out.anchors.insert(out.anchors.end(), f.anchors.begin(), f.anchors.end());
    out.vectors.insert(out.vectors.end(), f.vectors.begin(), f.vectors.end());
  }
  return out;
}

FlowField subsample_flows(const FlowField& flow, std::size_t max_vectors, std::uint64_t seed) {
  if (flow.size() <= max_vectors) return flow;
  std::vector<std::size_t> idx(flow.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < max_vectors; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_vectors);
  std::sort(idx.begin(), idx.end());
  FlowField out;
  out.anchors.reserve(max_vectors);
  out.vectors.reserve(max_vectors);
  for (std::size_t i : idx) {
    out.anchors.push_back(flow.anchors[i]);
    out.vectors.push_back(flow.vectors[i]);
  }
  return out;
}

double mean_epe(const FlowField& estimate, const FlowField& truth) {
  if (estimate.size() != truth.size() || estimate.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "EPE needs matching nonempty fields");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    sum += (estimate.vectors[i] - truth.vectors[i]).norm();
  }
  return sum / static_cast<double>(estimate.size());
}

double mean_magnitude(const FlowField& flow) {
  if (flow.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& u : flow.vectors) sum += u.norm();
  return sum / static_cast<double>(flow.size());
}

}  // namespace mountcheck
