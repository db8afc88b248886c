#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mountcheck/diffcore.hpp"
#include "mountcheck/features.hpp"
#include "mountcheck/geometry.hpp"

namespace mountcheck {

/// Training target. The global flag must equal the OR of the axis flags.
struct Label {
  bool misaligned = false;
  AxisFlags axes{false, false, false};

  static Label from_error(const RotationError& err);
  /// Throws InconsistentLabels.
  void validate() const;
  bool operator==(const Label&) const = default;
};

struct Logits {
  double global = 0.0;
  std::array<double, 3> axes{};
};

struct Verdict {
  double global_score = 0.0;
  std::array<double, 3> axis_scores{};
  bool misaligned = false;
  AxisFlags axes{false, false, false};
};

/// Verdict from raw logits: scores are sigmoids, decisions are score > tau.
Verdict make_verdict(const Logits& logits, double tau);

/// Both feature branches' inputs for one sample, computed once and reused
/// across epochs.
struct DetectorInput {
  nn::Tensor2 vectors;  // N x 3 flow vectors
  GeometricFeatureVector geometric;
};

DetectorInput make_input(const FlowField& flows, int n_bins = kDefaultBins);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 8e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  double axis_loss_weight = 1.0;

  void validate() const;
};

/// Dual-branch network. Global branch: FlowEncoder (256). Geometric branch:
/// standardized descriptor -> 256 -> 128 -> 128 (linear, batch norm, ReLU).
/// Heads on the 384-wide concatenation: 384 -> 128 -> ReLU -> 1 (global) and
/// -> 3 (roll, pitch, yaw).
class DetectorModel {
 public:
  static constexpr int kGeomHidden1 = 256;
  static constexpr int kGeomHidden2 = 128;
  static constexpr int kGeomOut = 128;
  static constexpr int kHeadInput = FlowEncoder::kEmbedding + kGeomOut;
  static constexpr int kHeadHidden = 128;

  explicit DetectorModel(int n_bins = kDefaultBins, std::uint64_t seed = 0);

  struct Outputs {
    nn::Var global;  // B x 1
    nn::Var axes;    // B x 3
  };

  /// Batched forward over `inputs`; eval mode leaves the model untouched.
  Outputs forward(nn::Tape& tape, std::span<const DetectorInput* const> inputs, nn::Mode mode);
  Logits logits(const DetectorInput& input);

  int n_bins() const { return n_bins_; }
  const FeatureLayout& layout() const { return layout_; }

  std::vector<nn::Parameter*> parameters();

  /// Per-column shift and scale applied to the descriptor before the
  /// geometric MLP; fitted on the training split.
  nn::RowVec& input_shift() { return input_shift_; }
  nn::RowVec& input_scale() { return input_scale_; }
  void fit_standardizer(std::span<const DetectorInput* const> inputs);

  nn::OptimState& optim_state() { return optim_; }
  const nn::OptimState& optim_state() const { return optim_; }

  /// Every persistent tensor (parameters, running statistics, standardizer,
  /// optimizer moments and step) by name.
  std::map<std::string, nn::Tensor2> export_tensors() const;
  /// Inverse of export_tensors. Throws UnknownTensor for a name the model
  /// does not have, ShapeMismatch for a wrong shape, and SchemaViolation when a
  /// required tensor is missing.
  void import_tensors(const std::map<std::string, nn::Tensor2>& tensors);

  /// Rounds all persistent state through float32, the on-disk precision.
  void round_to_storage();

 private:
  std::vector<nn::BatchNorm*> batchnorms();
  std::vector<const nn::BatchNorm*> batchnorms() const;
  std::vector<const nn::Parameter*> const_parameters() const;

  int n_bins_;
  FeatureLayout layout_;
  FlowEncoder encoder_;
  nn::Linear g1_, g2_, g3_;
  nn::BatchNorm gbn1_, gbn2_, gbn3_;
  nn::Linear global_fc1_, global_fc2_;
  nn::Linear axis_fc1_, axis_fc2_;
  nn::RowVec input_shift_, input_scale_;
  nn::OptimState optim_;
};

/// L = BCE(global) + w * mean BCE(axes) as a tape op; labels are validated.
nn::Var detector_loss(nn::Tape& tape, const DetectorModel::Outputs& out,
                      std::span<const Label> labels, double axis_weight);
double detector_loss(const Logits& logits, const Label& label, double axis_weight);

struct TrainingSample {
  const DetectorInput* input = nullptr;
  Label label;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // global decisions, percent; 0 without a validation set
};

struct TrainResult {
  DetectorModel model;
  std::vector<EpochLog> log;
};

/// Mini-batch AdamW training, single-threaded and deterministic per seed.
/// Needs aligned and misaligned samples in `train_set`; `val_set` may be
/// empty. Throws Diverged naming the epoch and batch on a non-finite loss.
TrainResult train_detector(std::span<const TrainingSample> train_set,
                           std::span<const TrainingSample> val_set, const TrainConfig& cfg,
                           int n_bins = kDefaultBins);

Verdict predict(DetectorModel& model, const DetectorInput& input, double tau = 0.5);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// 70/15/15 split by sample, stratified by severity bucket. Each part keeps
/// ascending index order.
SplitIndices stratified_split(std::span<const SeverityBucket> buckets, std::uint64_t seed);

}  // namespace mountcheck
