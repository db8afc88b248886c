#include "mountcheck/diffcore.hpp"

#include <cmath>

#include <fmt/format.h>

#include "mountcheck/error.hpp"

namespace mountcheck::nn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, what);
}

std::string shape(const Tensor2& t) { return fmt::format("{}x{}", t.rows(), t.cols()); }

void check_offsets(std::span<const std::size_t> offsets, Eigen::Index rows) {
  if (offsets.size() < 2 || offsets.front() != 0 ||
      offsets.back() != static_cast<std::size_t>(rows)) {
    throw Error(ErrorKind::ShapeMismatch, "segment offsets do not cover the input rows");
  }
  for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
    if (offsets[k + 1] <= offsets[k]) {
      throw Error(ErrorKind::EmptyInput, fmt::format("empty point set in segment {}", k));
    }
  }
}

}  // namespace

// ---- tape ------------------------------------------------------------------

Var Tape::input(Tensor2 value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Tape::record(Tensor2 value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (Var v : inputs) n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
  if (n.requires_grad) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Tensor2 Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.has_grad) return Tensor2::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor2& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  Node& r = nodes_.at(root.id);
  require(r.value.rows() == 1 && r.value.cols() == 1, "backward root must be a scalar");
  for (auto& n : nodes_) n.has_grad = false;
  r.grad = Tensor2::Ones(1, 1);
  r.has_grad = r.requires_grad;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.fn) n.fn(*this, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---- ops -------------------------------------------------------------------

Var linear(Tape& tape, Var x, Var w, Var b) {
  const Tensor2& xv = tape.value(x);
  const Tensor2& wv = tape.value(w);
  const Tensor2& bv = tape.value(b);
  require(xv.cols() == wv.rows() && bv.rows() == 1 && bv.cols() == wv.cols(),
          fmt::format("linear: x {} W {} b {}", shape(xv), shape(wv), shape(bv)));
  Tensor2 y = xv * wv;
  y.rowwise() += bv.row(0);
  return tape.record(std::move(y), {x, w, b}, [x, w, b](Tape& t, const Tensor2& g) {
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(w).transpose());
    if (t.requires_grad(w)) t.accumulate(w, t.value(x).transpose() * g);
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

Var relu(Tape& tape, Var x) {
  Tensor2 y = tape.value(x).cwiseMax(0.0);
  return tape.record(std::move(y), {x}, [x](Tape& t, const Tensor2& g) {
    // subgradient 0 at the kink
    t.accumulate(x, (t.value(x).array() > 0.0).select(g, 0.0));
  });
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_with_logits(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

Var sigmoid(Tape& tape, Var x) {
  Tensor2 y = tape.value(x).unaryExpr([](double z) { return sigmoid(z); });
  Tensor2 s = y;
  return tape.record(std::move(y), {x}, [x, s = std::move(s)](Tape& t, const Tensor2& g) {
    t.accumulate(x, (g.array() * s.array() * (1.0 - s.array())).matrix());
  });
}

Var add(Tape& tape, Var a, Var b) {
  require(tape.value(a).rows() == tape.value(b).rows() &&
              tape.value(a).cols() == tape.value(b).cols(),
          "add: shapes differ");
  Tensor2 y = tape.value(a) + tape.value(b);
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor2& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var concat_cols(Tape& tape, Var a, Var b) {
  const Tensor2& av = tape.value(a);
  const Tensor2& bv = tape.value(b);
  require(av.rows() == bv.rows(), "concat_cols: row counts differ");
  Tensor2 y(av.rows(), av.cols() + bv.cols());
  y << av, bv;
  const Eigen::Index ca = av.cols(), cb = bv.cols();
  return tape.record(std::move(y), {a, b}, [a, b, ca, cb](Tape& t, const Tensor2& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.leftCols(ca));
    if (t.requires_grad(b)) t.accumulate(b, g.rightCols(cb));
  });
}

Var segment_max(Tape& tape, Var x, std::span<const std::size_t> offsets) {
  const Tensor2& xv = tape.value(x);
  check_offsets(offsets, xv.rows());
  const Eigen::Index segments = static_cast<Eigen::Index>(offsets.size() - 1);
  Tensor2 y(segments, xv.cols());
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax(segments, xv.cols());
  for (Eigen::Index s = 0; s < segments; ++s) {
    const auto lo = static_cast<Eigen::Index>(offsets[s]);
    const auto n = static_cast<Eigen::Index>(offsets[s + 1]) - lo;
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      Eigen::Index r = 0;
      y(s, c) = xv.col(c).segment(lo, n).maxCoeff(&r);
      argmax(s, c) = lo + r;
    }
  }
  const Eigen::Index rows = xv.rows();
  return tape.record(std::move(y), {x}, [x, argmax, rows](Tape& t, const Tensor2& g) {
    Tensor2 dx = Tensor2::Zero(rows, g.cols());
    for (Eigen::Index s = 0; s < g.rows(); ++s)
      for (Eigen::Index c = 0; c < g.cols(); ++c) dx(argmax(s, c), c) += g(s, c);
    t.accumulate(x, dx);
  });
}

Var segment_mean(Tape& tape, Var x, std::span<const std::size_t> offsets) {
  const Tensor2& xv = tape.value(x);
  check_offsets(offsets, xv.rows());
  const Eigen::Index segments = static_cast<Eigen::Index>(offsets.size() - 1);
  Tensor2 y(segments, xv.cols());
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  for (Eigen::Index s = 0; s < segments; ++s) {
    const auto lo = static_cast<Eigen::Index>(offs[s]);
    const auto n = static_cast<Eigen::Index>(offs[s + 1]) - lo;
    y.row(s) = xv.middleRows(lo, n).colwise().sum() / static_cast<double>(n);
  }
  const Eigen::Index rows = xv.rows();
  return tape.record(std::move(y), {x}, [x, offs, rows](Tape& t, const Tensor2& g) {
    Tensor2 dx(rows, g.cols());
    for (Eigen::Index s = 0; s < g.rows(); ++s) {
      const auto lo = static_cast<Eigen::Index>(offs[s]);
      const auto n = static_cast<Eigen::Index>(offs[s + 1]) - lo;
      dx.middleRows(lo, n) = g.row(s).replicate(n, 1) / static_cast<double>(n);
    }
    t.accumulate(x, dx);
  });
}

Var bce_with_logits(Tape& tape, Var logits, const Tensor2& targets) {
  const Tensor2& z = tape.value(logits);
  require(z.rows() == targets.rows() && z.cols() == targets.cols(),
          fmt::format("bce: logits {} targets {}", shape(z), shape(targets)));
  if (z.size() == 0) throw Error(ErrorKind::EmptyInput, "bce on empty input");
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) total += bce_with_logits(z(i), targets(i));
  const double n = static_cast<double>(z.size());
  Tensor2 y(1, 1);
  y(0, 0) = total / n;
  return tape.record(std::move(y), {logits}, [logits, targets, n](Tape& t, const Tensor2& g) {
    const Tensor2& zz = t.value(logits);
    Tensor2 dz = zz.unaryExpr([](double v) { return sigmoid(v); }) - targets;
    t.accumulate(logits, dz * (g(0, 0) / n));
  });
}

Var weighted_sum(Tape& tape, Var a, double w_a, Var b, double w_b) {
  require(tape.value(a).size() == 1 && tape.value(b).size() == 1, "weighted_sum takes scalars");
  Tensor2 y(1, 1);
  y(0, 0) = w_a * tape.value(a)(0, 0) + w_b * tape.value(b)(0, 0);
  return tape.record(std::move(y), {a, b}, [a, b, w_a, w_b](Tape& t, const Tensor2& g) {
    t.accumulate(a, g * w_a);
    t.accumulate(b, g * w_b);
  });
}

// ---- modules ---------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out, std::mt19937_64& rng,
               double init_scale) {
  const double bound = init_scale / std::sqrt(static_cast<double>(in));
  const auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  Tensor2 w(in, out), b(1, out);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = bound * (2.0 * unit() - 1.0);
  for (Eigen::Index j = 0; j < b.cols(); ++j) b(0, j) = bound * (2.0 * unit() - 1.0);
  weight = Parameter(name + ".weight", std::move(w));
  bias = Parameter(name + ".bias", std::move(b));
}

Var Linear::operator()(Tape& tape, Var x) {
  return linear(tape, x, tape.parameter(weight), tape.parameter(bias));
}

BatchNorm::BatchNorm(const std::string& name, int channels)
    : gamma(name + ".gamma", Tensor2::Ones(1, channels)),
      beta(name + ".beta", Tensor2::Zero(1, channels)),
      running_mean(RowVec::Zero(channels)),
      running_var(RowVec::Ones(channels)) {}

Var BatchNorm::operator()(Tape& tape, Var x, Mode mode) {
  const Var g = tape.parameter(gamma);
  const Var b = tape.parameter(beta);
  const Tensor2& xv = tape.value(x);
  const Eigen::Index n = xv.rows();
  require(xv.cols() == gamma.value.cols(),
          fmt::format("batchnorm: input {} but {} channels", shape(xv), gamma.value.cols()));

  RowVec mean, inv_std;
  if (mode == Mode::Train) {
    if (n < 2) {
      throw Error(ErrorKind::InvalidArgument, "batch norm in train mode needs batch size >= 2");
    }
    mean = xv.colwise().mean();
    const RowVec var = (xv.rowwise() - mean).array().square().colwise().mean();
    inv_std = (var.array() + kEps).rsqrt();
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    running_mean = (1.0 - kMomentum) * running_mean + kMomentum * mean;
    running_var = (1.0 - kMomentum) * running_var + kMomentum * (var * unbias);
  } else {
    mean = running_mean;
    inv_std = (running_var.array() + kEps).rsqrt();
  }

  Tensor2 xhat = (xv.rowwise() - mean).array().rowwise() * inv_std.array();
  Tensor2 y = xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);

  const bool train = mode == Mode::Train;
  return tape.record(
      std::move(y), {x, g, b},
      [x, g, b, xhat = std::move(xhat), inv_std, train, n](Tape& t, const Tensor2& dy) {
        if (t.requires_grad(g)) t.accumulate(g, (dy.array() * xhat.array()).colwise().sum());
        if (t.requires_grad(b)) t.accumulate(b, dy.colwise().sum());
        if (!t.requires_grad(x)) return;
        const RowVec scale = t.value(g).row(0).array() * inv_std.array();
        if (!train) {
          t.accumulate(x, (dy.array().rowwise() * scale.array()).matrix());
          return;
        }
        const double nn = static_cast<double>(n);
        const RowVec sum_dy = dy.colwise().sum();
        const RowVec sum_dy_xhat = (dy.array() * xhat.array()).colwise().sum();
        Tensor2 dx = (dy * nn).rowwise() - sum_dy;
        dx -= (xhat.array().rowwise() * sum_dy_xhat.array()).matrix();
        dx = dx.array().rowwise() * (scale.array() / nn);
        t.accumulate(x, dx);
      });
}

// ---- optimizer -------------------------------------------------------------

void adamw_step(std::span<Parameter* const> params, OptimState& state, const AdamWConfig& cfg) {
  for (const Parameter* p : params) {
    if (!p->grad.allFinite()) {
      throw Error(ErrorKind::Diverged,
                  fmt::format("diverged: non-finite gradient in {}", p->name));
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const Parameter* p : params) {
      state.m.push_back(Tensor2::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Tensor2::Zero(p->value.rows(), p->value.cols()));
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor2& m = state.m[i];
    Tensor2& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * p.grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    const auto m_hat = m.array() / bc1;
    const auto v_hat = v.array() / bc2;
    p.value.array() -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.value.array());
  }
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void round_to_float(Tensor2& t) {
  t = t.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

void round_to_float(RowVec& t) {
  t = t.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

}  // namespace mountcheck::nn
