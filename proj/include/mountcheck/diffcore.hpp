#pragma once

// Minimal reverse-mode differentiation for small per-point networks.
//
// A Tape records every forward operation together with a closure that
// propagates the output gradient to its inputs. Tapes are single-use: build
// one per forward pass, call backward() once, then discard it. Parameters
// live outside the tape and receive accumulated gradients on backward().

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mountcheck::nn {

using Tensor2 = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

struct Parameter {
  std::string name;
  Tensor2 value;
  Tensor2 grad;

  Parameter() = default;
  Parameter(std::string n, Tensor2 v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor2::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor2& out_grad)>;

  Var input(Tensor2 value, bool requires_grad = false);
  Var parameter(Parameter& p);
  /// Records an op result. `fn` may be empty for non-differentiable results.
  Var record(Tensor2 value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor2& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient reached by the last backward(); zeros if none flowed here.
  Tensor2 grad(Var v) const;
  /// For use inside backward closures.
  void accumulate(Var v, const Tensor2& g);

  /// Seeds d(root)/d(root) = 1 and walks the tape in reverse. Root must be 1x1.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn fn;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
};

enum class Mode { Train, Eval };

// ---- ops -------------------------------------------------------------------

/// y = x W + b, with b a 1 x out row broadcast over rows.
Var linear(Tape& tape, Var x, Var w, Var b);
Var relu(Tape& tape, Var x);
Var sigmoid(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
Var concat_cols(Tape& tape, Var a, Var b);
/// Rows [offsets[k], offsets[k+1]) form sample k; output has one row per
/// sample holding the per-column max (or mean).
Var segment_max(Tape& tape, Var x, std::span<const std::size_t> offsets);
Var segment_mean(Tape& tape, Var x, std::span<const std::size_t> offsets);
/// Mean over elements of max(z,0) - z t + log(1 + exp(-|z|)); returns 1x1.
Var bce_with_logits(Tape& tape, Var logits, const Tensor2& targets);
/// w_a a + w_b b for 1x1 scalars.
Var weighted_sum(Tape& tape, Var a, double w_a, Var b, double w_b);

double sigmoid(double z);
double bce_with_logits(double z, double t);

// ---- modules ---------------------------------------------------------------

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, double init_scale = 1.0);

  Var operator()(Tape& tape, Var x);
  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }
};

/// Per-column batch normalization over rows. Train mode uses batch statistics
/// (biased variance for normalization, unbiased for the running estimate) and
/// needs at least two rows; eval mode uses the running statistics.
struct BatchNorm {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  Parameter gamma;  // 1 x C
  Parameter beta;   // 1 x C
  RowVec running_mean;
  RowVec running_var;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels);

  Var operator()(Tape& tape, Var x, Mode mode);
};

// ---- optimizer -------------------------------------------------------------

struct AdamWConfig {
  double lr = 8e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct OptimState {
  std::vector<Tensor2> m;
  std::vector<Tensor2> v;
  std::int64_t step = 0;
};

/// Decoupled weight decay:
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// with bias-corrected moments. Throws Diverged on a non-finite gradient and
/// leaves every parameter untouched in that case.
void adamw_step(std::span<Parameter* const> params, OptimState& state, const AdamWConfig& cfg);

class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

  void step() { adamw_step(params_, state_, cfg_); }
  void zero_grad();

  const AdamWConfig& config() const { return cfg_; }
  const OptimState& state() const { return state_; }
  OptimState& state() { return state_; }
  std::span<Parameter* const> params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  OptimState state_;
};

/// Rounds a tensor through float32 (the on-disk precision).
void round_to_float(Tensor2& t);
void round_to_float(RowVec& t);

}  // namespace mountcheck::nn
