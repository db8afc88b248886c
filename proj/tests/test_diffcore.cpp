#include <cmath>

#include <doctest.h>

#include "grad_suite.hpp"
#include "mountcheck/diffcore.hpp"
#include "mountcheck/error.hpp"

using namespace mountcheck;
using nn::Tensor2;

namespace {

Tensor2 mat(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor2 t(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) t(i, j++) = v;
    ++i;
  }
  return t;
}

}  // namespace

TEST_CASE("linear forward") {
  nn::Tape tape;
  const Tensor2 x = mat({{1, 2}, {3, -4}});
  const auto y = nn::linear(tape, tape.input(x), tape.input(Tensor2::Identity(2, 2)), tape.input(Tensor2::Zero(1, 2)));
  CHECK(tape.value(y) == x);

  const auto z = nn::linear(tape, tape.input(mat({{1, 2}})), tape.input(mat({{1}, {1}})), tape.input(mat({{3}})));
  CHECK(tape.value(z)(0, 0) == 6.0);

  CHECK_THROWS_AS(nn::linear(tape, tape.input(mat({{1, 2, 3}})), tape.input(mat({{1}, {1}})), tape.input(mat({{3}}))),
                  Error);
}

TEST_CASE("batchnorm train and eval") {
  std::mt19937_64 rng(1);
  const Tensor2 x = testsupport::detail::random_tensor(rng, 16, 3, 5.0);
  nn::BatchNorm bn("bn", 3);

  nn::Tape tape;
  const Tensor2 y = tape.value(bn(tape, tape.input(x), nn::Mode::Train));
  for (Eigen::Index c = 0; c < 3; ++c) {
    const double mean = y.col(c).mean();
    const double var = (y.col(c).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
  // running stats moved towards the batch statistics with momentum 0.1
  const nn::RowVec batch_mean = x.colwise().mean();
  CHECK((bn.running_mean - 0.1 * batch_mean).norm() < 1e-12);

  nn::BatchNorm ev("ev", 2);
  ev.running_mean = mat({{1.0, -2.0}});
  ev.running_var = mat({{4.0, 0.25}});
  ev.gamma.value = mat({{2.0, 3.0}});
  ev.beta.value = mat({{0.5, -1.0}});
  const Tensor2 xe = mat({{3.0, 0.0}});
  nn::Tape t2;
  const Tensor2 ye = t2.value(ev(t2, t2.input(xe), nn::Mode::Eval));
  CHECK(ye(0, 0) == (3.0 - 1.0) / std::sqrt(4.0 + 1e-5) * 2.0 + 0.5);
  CHECK(ye(0, 1) == (0.0 + 2.0) / std::sqrt(0.25 + 1e-5) * 3.0 - 1.0);

  nn::Tape t3;
  CHECK_THROWS_AS(bn(t3, t3.input(mat({{1, 2, 3}})), nn::Mode::Train), Error);
}

TEST_CASE("activations and pooling") {
  nn::Tape tape;
  const Tensor2 r = tape.value(nn::relu(tape, tape.input(mat({{-1, 2, 0}}))));
  CHECK(r == mat({{0, 2, 0}}));

  // subgradient at the kink is zero
  const auto x0 = tape.input(mat({{0.0}}), true);
  const auto y0 = nn::relu(tape, x0);
  tape.backward(y0);
  CHECK(tape.grad(x0)(0, 0) == 0.0);

  nn::Tape t2;
  const std::vector<std::size_t> offsets{0, 2};
  const auto rows = t2.input(mat({{1, 5}, {3, 2}}));
  CHECK(t2.value(nn::segment_max(t2, rows, offsets)) == mat({{3, 5}}));
  CHECK(t2.value(nn::segment_mean(t2, rows, offsets)) == mat({{2, 3.5}}));

  const std::vector<std::size_t> empty_segment{0, 0};
  CHECK_THROWS_AS(nn::segment_max(t2, rows, empty_segment), Error);

  CHECK(nn::sigmoid(0.0) == 0.5);
}

TEST_CASE("bce_with_logits") {
  CHECK(nn::bce_with_logits(0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double big = nn::bce_with_logits(10000.0, 1.0);
  CHECK(std::isfinite(big));
  CHECK(big < 1e-4);
  for (double z : {-1e6, -1e3, 1e3, 1e6}) {
    CHECK(std::isfinite(nn::bce_with_logits(z, 0.0)));
    CHECK(std::isfinite(nn::bce_with_logits(z, 1.0)));
  }
  for (double z : {-3.0, 0.0, 3.0}) {
    nn::Tape tape;
    const auto v = tape.input(mat({{z}}), true);
    tape.backward(nn::bce_with_logits(tape, v, mat({{1.0}})));
    const double expected = 1.0 / (1.0 + std::exp(-z)) - 1.0;
    CHECK(std::abs(tape.grad(v)(0, 0) - expected) < 1e-6);
    const double h = 1e-5;
    const double fd = (nn::bce_with_logits(z + h, 1.0) - nn::bce_with_logits(z - h, 1.0)) / (2 * h);
    CHECK(std::abs(fd - expected) < 1e-6);
  }
}

TEST_CASE("adamw_step") {
  nn::AdamWConfig cfg;

  SUBCASE("zero gradient without decay is a fixed point") {
    nn::Parameter p("p", mat({{1.5, -2.0}}));
    nn::OptimState st;
    cfg.weight_decay = 0.0;
    std::vector<nn::Parameter*> ps{&p};
    for (int i = 0; i < 3; ++i) nn::adamw_step(ps, st, cfg);
    CHECK(p.value == mat({{1.5, -2.0}}));
    CHECK(st.step == 3);
  }

  SUBCASE("single scalar step") {
    nn::Parameter p("p", mat({{1.0}}));
    p.grad = mat({{1.0}});
    nn::OptimState st;
    std::vector<nn::Parameter*> ps{&p};
    nn::adamw_step(ps, st, cfg);
    const double expected = 1.0 - 8e-3 * (1.0 / (1.0 + 1e-8) + 1e-4 * 1.0);
    CHECK(std::abs(p.value(0, 0) - expected) < 1e-15);
    CHECK(p.value(0, 0) == doctest::Approx(0.9920).epsilon(1e-4));
  }

  SUBCASE("two steps match a hand unroll") {
    const double g = 0.3, lr = cfg.lr, wd = cfg.weight_decay, b1 = cfg.beta1, b2 = cfg.beta2, eps = cfg.eps;
    double p = -0.7, m = 0, v = 0;
    for (int t = 1; t <= 2; ++t) {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      p = p - lr * (mh / (std::sqrt(vh) + eps) + wd * p);
    }
    nn::Parameter param("p", mat({{-0.7}}));
    nn::OptimState st;
    std::vector<nn::Parameter*> ps{&param};
    for (int t = 0; t < 2; ++t) {
      param.grad = mat({{g}});
      nn::adamw_step(ps, st, cfg);
    }
    CHECK(std::abs(param.value(0, 0) - p) < 1e-10);
  }

  SUBCASE("non-finite gradient diverges and leaves parameters alone") {
    nn::Parameter a("a", mat({{1.0}})), b("b", mat({{2.0}}));
    a.grad = mat({{0.5}});
    b.grad = mat({{std::nan("")}});
    nn::OptimState st;
    std::vector<nn::Parameter*> ps{&a, &b};
    try {
      nn::adamw_step(ps, st, cfg);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Diverged);
    }
    CHECK(a.value(0, 0) == 1.0);
    CHECK(b.value(0, 0) == 2.0);
  }
}

TEST_CASE("tape gradients accumulate across shared inputs") {
  nn::Tape tape;
  const auto x = tape.input(mat({{2.0}}), true);
  const auto y = nn::weighted_sum(tape, x, 3.0, x, 4.0);
  tape.backward(y);
  CHECK(tape.grad(x)(0, 0) == 7.0);
  CHECK_THROWS_AS(tape.backward(tape.input(mat({{1, 2}}))), Error);
}

TEST_CASE("finite-difference suite on a few seeds") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& c : testsupport::run_grad_suite(seed)) {
      INFO(c.name << " seed " << seed << " rel " << c.rel_error);
      CHECK(c.ok());
    }
  }
}

TEST_CASE("float32 storage rounding") {
  Tensor2 t = mat({{0.1, 1.0 / 3.0}});
  nn::round_to_float(t);
  CHECK(t(0, 0) == static_cast<double>(0.1f));
  CHECK(t(0, 1) == static_cast<double>(1.0f / 3.0f));
}
