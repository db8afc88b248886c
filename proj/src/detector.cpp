#include "mountcheck/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck {

Label Label::from_error(const RotationError& err) {
  Label l;
  l.axes = err.active;
  l.misaligned = err.any_active();
  return l;
}

void Label::validate() const {
  if (misaligned != (axes[0] || axes[1] || axes[2])) {
    throw Error(ErrorKind::InconsistentLabels,
                "inconsistent labels: global flag must equal the OR of the axis flags");
  }
}

Verdict make_verdict(const Logits& logits, double tau) {
  Verdict v;
  v.global_score = nn::sigmoid(logits.global);
  v.misaligned = v.global_score > tau;
  for (std::size_t a = 0; a < 3; ++a) {
    v.axis_scores[a] = nn::sigmoid(logits.axes[a]);
    v.axes[a] = v.axis_scores[a] > tau;
  }
  return v;
}

DetectorInput make_input(const FlowField& flows, int n_bins) {
  return {flow_matrix(flows), build_geometric_vector(flows, n_bins)};
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 2 || !(lr > 0.0) || !(weight_decay >= 0.0) ||
      !(threshold > 0.0 && threshold < 1.0) || !(axis_loss_weight >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid training config");
  }
}

DetectorModel::DetectorModel(int n_bins, std::uint64_t seed)
    : n_bins_(n_bins), layout_(FeatureLayout::make(n_bins)) {
  std::mt19937_64 rng(seed);
  const int d = static_cast<int>(layout_.dimension());
  encoder_ = FlowEncoder(rng);
  g1_ = nn::Linear("geom.fc1", d, kGeomHidden1, rng);
  g2_ = nn::Linear("geom.fc2", kGeomHidden1, kGeomHidden2, rng);
  g3_ = nn::Linear("geom.fc3", kGeomHidden2, kGeomOut, rng);
  gbn1_ = nn::BatchNorm("geom.bn1", kGeomHidden1);
  gbn2_ = nn::BatchNorm("geom.bn2", kGeomHidden2);
  gbn3_ = nn::BatchNorm("geom.bn3", kGeomOut);
  global_fc1_ = nn::Linear("head.global.fc1", kHeadInput, kHeadHidden, rng);
  global_fc2_ = nn::Linear("head.global.fc2", kHeadHidden, 1, rng);
  axis_fc1_ = nn::Linear("head.axis.fc1", kHeadInput, kHeadHidden, rng);
  axis_fc2_ = nn::Linear("head.axis.fc2", kHeadHidden, 3, rng);
  input_shift_ = nn::RowVec::Zero(d);
  input_scale_ = nn::RowVec::Ones(d);
  for (const auto* p : parameters()) {
    optim_.m.push_back(nn::Tensor2::Zero(p->value.rows(), p->value.cols()));
    optim_.v.push_back(nn::Tensor2::Zero(p->value.rows(), p->value.cols()));
  }
  round_to_storage();
}

DetectorModel::Outputs DetectorModel::forward(nn::Tape& tape,
                                              std::span<const DetectorInput* const> inputs,
                                              nn::Mode mode) {
  if (inputs.empty()) throw Error(ErrorKind::EmptyInput, "detector forward needs at least one sample");
  const auto d = static_cast<Eigen::Index>(layout_.dimension());
  std::vector<std::size_t> offsets{0};
  for (const auto* in : inputs) {
    if (in->vectors.cols() != 3 || in->vectors.rows() < 1) {
      throw Error(ErrorKind::ShapeMismatch, "flow tensor must be N x 3 with N >= 1");
    }
    if (static_cast<Eigen::Index>(in->geometric.dimension()) != d || in->geometric.n_bins != n_bins_) {
      throw Error(ErrorKind::LayoutMismatch,
                  fmt::format("feature layout mismatch: model expects {} bins", n_bins_));
    }
    offsets.push_back(offsets.back() + static_cast<std::size_t>(in->vectors.rows()));
  }
  nn::Tensor2 vectors(static_cast<Eigen::Index>(offsets.back()), 3);
  nn::Tensor2 geom(static_cast<Eigen::Index>(inputs.size()), d);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    vectors.middleRows(static_cast<Eigen::Index>(offsets[k]), inputs[k]->vectors.rows()) =
        inputs[k]->vectors;
    const auto& g = inputs[k]->geometric.values;
    for (Eigen::Index j = 0; j < d; ++j) {
      geom(static_cast<Eigen::Index>(k), j) =
          (g[static_cast<std::size_t>(j)] - input_shift_(j)) / input_scale_(j);
    }
  }

  const nn::Var e = encoder_(tape, vectors, offsets, mode);
  nn::Var g = tape.input(std::move(geom));
  g = nn::relu(tape, gbn1_(tape, g1_(tape, g), mode));
  g = nn::relu(tape, gbn2_(tape, g2_(tape, g), mode));
  g = nn::relu(tape, gbn3_(tape, g3_(tape, g), mode));
  const nn::Var h = nn::concat_cols(tape, e, g);
  return {global_fc2_(tape, nn::relu(tape, global_fc1_(tape, h))),
          axis_fc2_(tape, nn::relu(tape, axis_fc1_(tape, h)))};
}

Logits DetectorModel::logits(const DetectorInput& input) {
  nn::Tape tape;
  const DetectorInput* one[] = {&input};
  const auto out = forward(tape, one, nn::Mode::Eval);
  Logits l;
  l.global = tape.value(out.global)(0, 0);
  for (int a = 0; a < 3; ++a) l.axes[static_cast<std::size_t>(a)] = tape.value(out.axes)(0, a);
  return l;
}

std::vector<nn::Parameter*> DetectorModel::parameters() {
  auto out = encoder_.parameters();
  for (nn::Parameter* p : {&g1_.weight, &g1_.bias, &gbn1_.gamma, &gbn1_.beta,
                           &g2_.weight, &g2_.bias, &gbn2_.gamma, &gbn2_.beta,
                           &g3_.weight, &g3_.bias, &gbn3_.gamma, &gbn3_.beta,
                           &global_fc1_.weight, &global_fc1_.bias,
                           &global_fc2_.weight, &global_fc2_.bias,
                           &axis_fc1_.weight, &axis_fc1_.bias,
                           &axis_fc2_.weight, &axis_fc2_.bias}) {
    out.push_back(p);
  }
  return out;
}

std::vector<const nn::Parameter*> DetectorModel::const_parameters() const {
  auto params = const_cast<DetectorModel*>(this)->parameters();
  return {params.begin(), params.end()};
}

std::vector<nn::BatchNorm*> DetectorModel::batchnorms() {
  return {&encoder_.bn1, &encoder_.bn2, &gbn1_, &gbn2_, &gbn3_};
}

std::vector<const nn::BatchNorm*> DetectorModel::batchnorms() const {
  return {&encoder_.bn1, &encoder_.bn2, &gbn1_, &gbn2_, &gbn3_};
}

void DetectorModel::fit_standardizer(std::span<const DetectorInput* const> inputs) {
  if (inputs.empty()) throw Error(ErrorKind::EmptyInput, "no samples to fit the standardizer");
  const auto d = static_cast<Eigen::Index>(layout_.dimension());
  nn::RowVec sum = nn::RowVec::Zero(d), sq = nn::RowVec::Zero(d);
  for (const auto* in : inputs) {
    for (Eigen::Index j = 0; j < d; ++j) sum(j) += in->geometric.values[static_cast<std::size_t>(j)];
  }
  const double n = static_cast<double>(inputs.size());
  input_shift_ = sum / n;
  for (const auto* in : inputs) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double c = in->geometric.values[static_cast<std::size_t>(j)] - input_shift_(j);
      sq(j) += c * c;
    }
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    const double s = std::sqrt(sq(j) / n);
    input_scale_(j) = s > 1e-8 ? s : 1.0;
  }
  nn::round_to_float(input_shift_);
  nn::round_to_float(input_scale_);
}

namespace {

std::string bn_name(const nn::BatchNorm& bn) {
  const auto& n = bn.gamma.name;
  return n.substr(0, n.size() - std::string_view(".gamma").size());
}

nn::Tensor2 as_tensor(const nn::RowVec& r) { return r; }

}  // namespace

std::map<std::string, nn::Tensor2> DetectorModel::export_tensors() const {
  std::map<std::string, nn::Tensor2> out;
  const auto params = const_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out[params[i]->name] = params[i]->value;
    out[params[i]->name + ".adam_m"] = optim_.m[i];
    out[params[i]->name + ".adam_v"] = optim_.v[i];
  }
  for (const auto* bn : batchnorms()) {
    out[bn_name(*bn) + ".running_mean"] = as_tensor(bn->running_mean);
    out[bn_name(*bn) + ".running_var"] = as_tensor(bn->running_var);
  }
  out["geom.input_shift"] = as_tensor(input_shift_);
  out["geom.input_scale"] = as_tensor(input_scale_);
  out["optim.step"] = nn::Tensor2::Constant(1, 1, static_cast<double>(optim_.step));
  return out;
}

void DetectorModel::import_tensors(const std::map<std::string, nn::Tensor2>& tensors) {
  const auto expected = export_tensors();
  for (const auto& [name, t] : tensors) {
    const auto it = expected.find(name);
    if (it == expected.end()) {
      throw Error(ErrorKind::UnknownTensor, fmt::format("unknown tensor name {}", name));
    }
    if (it->second.rows() != t.rows() || it->second.cols() != t.cols()) {
      throw Error(ErrorKind::ShapeMismatch,
                  fmt::format("tensor {} is {}x{}, expected {}x{}", name, t.rows(), t.cols(),
                              it->second.rows(), it->second.cols()));
    }
  }
  for (const auto& [name, t] : expected) {
    if (!tensors.contains(name)) {
      throw Error(ErrorKind::SchemaViolation, fmt::format("missing tensor {}", name));
    }
  }
  auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->value = tensors.at(params[i]->name);
    params[i]->zero_grad();
    optim_.m[i] = tensors.at(params[i]->name + ".adam_m");
    optim_.v[i] = tensors.at(params[i]->name + ".adam_v");
  }
  for (auto* bn : batchnorms()) {
    bn->running_mean = tensors.at(bn_name(*bn) + ".running_mean");
    bn->running_var = tensors.at(bn_name(*bn) + ".running_var");
  }
  input_shift_ = tensors.at("geom.input_shift");
  input_scale_ = tensors.at("geom.input_scale");
  optim_.step = std::llround(tensors.at("optim.step")(0, 0));
}

void DetectorModel::round_to_storage() {
  auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::round_to_float(params[i]->value);
    nn::round_to_float(optim_.m[i]);
    nn::round_to_float(optim_.v[i]);
  }
  for (auto* bn : batchnorms()) {
    nn::round_to_float(bn->running_mean);
    nn::round_to_float(bn->running_var);
  }
  nn::round_to_float(input_shift_);
  nn::round_to_float(input_scale_);
}

nn::Var detector_loss(nn::Tape& tape, const DetectorModel::Outputs& out,
                      std::span<const Label> labels, double axis_weight) {
  const auto b = static_cast<Eigen::Index>(labels.size());
  if (tape.value(out.global).rows() != b || tape.value(out.axes).rows() != b) {
    throw Error(ErrorKind::ShapeMismatch, "one label per sample required");
  }
  nn::Tensor2 tg(b, 1), ta(b, 3);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Label& l = labels[static_cast<std::size_t>(i)];
    l.validate();
    tg(i, 0) = l.misaligned ? 1.0 : 0.0;
    for (int a = 0; a < 3; ++a) ta(i, a) = l.axes[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
  }
  return nn::weighted_sum(tape, nn::bce_with_logits(tape, out.global, tg), 1.0,
                          nn::bce_with_logits(tape, out.axes, ta), axis_weight);
}

double detector_loss(const Logits& logits, const Label& label, double axis_weight) {
  label.validate();
  double axes = 0.0;
  for (std::size_t a = 0; a < 3; ++a) axes += nn::bce_with_logits(logits.axes[a], label.axes[a] ? 1.0 : 0.0);
  return nn::bce_with_logits(logits.global, label.misaligned ? 1.0 : 0.0) + axis_weight * axes / 3.0;
}

namespace {

// Batch boundaries of size `batch`, folding a trailing single sample into the
// previous batch (batch norm needs two rows).
std::vector<std::size_t> batch_bounds(std::size_t n, std::size_t batch) {
  std::vector<std::size_t> bounds{0};
  while (bounds.back() < n) bounds.push_back(std::min(n, bounds.back() + batch));
  if (bounds.size() > 2 && bounds[bounds.size() - 1] - bounds[bounds.size() - 2] == 1) {
    bounds.erase(bounds.end() - 2);
  }
  return bounds;
}

struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalSummary evaluate_split(DetectorModel& model, std::span<const TrainingSample> set,
                           const TrainConfig& cfg) {
  EvalSummary s;
  if (set.empty()) return s;
  std::size_t correct = 0;
  for (const auto& sample : set) {
    const Logits l = model.logits(*sample.input);
    s.loss += detector_loss(l, sample.label, cfg.axis_loss_weight);
    if (make_verdict(l, cfg.threshold).misaligned == sample.label.misaligned) ++correct;
  }
  s.loss /= static_cast<double>(set.size());
  s.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(set.size());
  return s;
}

}  // namespace

TrainResult train_detector(std::span<const TrainingSample> train_set,
                           std::span<const TrainingSample> val_set, const TrainConfig& cfg,
                           int n_bins) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorKind::EmptyInput, "empty training set");
  bool any_aligned = false, any_misaligned = false;
  for (const auto& s : train_set) {
    if (s.input == nullptr) throw Error(ErrorKind::InvalidArgument, "training sample without input");
    s.label.validate();
    (s.label.misaligned ? any_misaligned : any_aligned) = true;
  }
  if (!any_aligned || !any_misaligned) {
    throw Error(ErrorKind::InvalidArgument, "training set needs both aligned and misaligned samples");
  }
  if (train_set.size() < 2) throw Error(ErrorKind::InvalidArgument, "training needs at least 2 samples");

  TrainResult result{DetectorModel(n_bins, cfg.seed), {}};
  DetectorModel& model = result.model;
  {
    std::vector<const DetectorInput*> all;
    for (const auto& s : train_set) all.push_back(s.input);
    model.fit_standardizer(all);
  }

  nn::AdamW opt(model.parameters(), {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  opt.state() = model.optim_state();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5eed));
  const auto bounds = batch_bounds(train_set.size(), static_cast<std::size_t>(cfg.batch_size));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
      std::vector<const DetectorInput*> inputs;
      std::vector<Label> labels;
      for (std::size_t k = bounds[b]; k < bounds[b + 1]; ++k) {
        inputs.push_back(train_set[order[k]].input);
        labels.push_back(train_set[order[k]].label);
      }
      nn::Tape tape;
      const auto out = model.forward(tape, inputs, nn::Mode::Train);
      const nn::Var loss = detector_loss(tape, out, labels, cfg.axis_loss_weight);
      const double value = tape.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw Error(ErrorKind::Diverged,
                    fmt::format("diverged at epoch {} batch {}: non-finite loss", epoch, b));
      }
      loss_sum += value * static_cast<double>(inputs.size());
      opt.zero_grad();
      tape.backward(loss);
      try {
        opt.step();
      } catch (const Error& e) {
        throw Error(ErrorKind::Diverged,
                    fmt::format("diverged at epoch {} batch {}: {}", epoch, b, e.what()));
      }
    }
    const auto val = evaluate_split(model, val_set, cfg);
    result.log.push_back({epoch, loss_sum / static_cast<double>(train_set.size()), val.loss,
                          val.accuracy});
  }
  model.optim_state() = opt.state();
  model.round_to_storage();
  return result;
}

Verdict predict(DetectorModel& model, const DetectorInput& input, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorKind::InvalidArgument, "threshold must lie in (0, 1)");
  return make_verdict(model.logits(input), tau);
}

SplitIndices stratified_split(std::span<const SeverityBucket> buckets, std::uint64_t seed) {
  SplitIndices out;
  for (int b = 0; b < 4; ++b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < buckets.size(); ++i) {
      if (static_cast<int>(buckets[i]) == b) idx.push_back(i);
    }
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    const std::size_t n_train = idx.size() * 70 / 100;
    const std::size_t n_val = idx.size() * 15 / 100;
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace mountcheck
