#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "refocus/rng.hpp"
#include "refocus/tape.hpp"
#include "refocus/tensor.hpp"

using namespace refocus;

namespace {

Tensor random_tensor(std::vector<size_t> shape, Rng* rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& x : t.v) x = rng->uniform(-scale, scale);
  return t;
}

// Central finite differences of a scalar function of one tensor argument,
// compared against the tape gradient for that argument.
void check_grad(const Tensor& at,
                const std::function<double(const Tensor&)>& f,
                const std::vector<double>& analytic, double tol = 1e-6) {
  const double eps = 1e-6;
  REQUIRE(analytic.size() == at.size());
  for (size_t i = 0; i < at.size(); ++i) {
    Tensor hi = at, lo = at;
    hi.v[i] += eps;
    lo.v[i] -= eps;
    const double fd = (f(hi) - f(lo)) / (2 * eps);
    const double scale = std::max({1.0, std::fabs(fd), std::fabs(analytic[i])});
    CHECK(std::fabs(fd - analytic[i]) / scale < tol);
  }
}

}  // namespace

TEST_CASE("stable softmax helpers match hand values and survive big logits") {
  std::vector<double> out;
  stable_log_softmax({0.0, 0.0}, &out);
  CHECK(out[0] == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(-0.6931471805599453).epsilon(1e-12));

  stable_softmax({1000.0, 1000.0, -1000.0}, &out);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));
  CHECK(out[2] == doctest::Approx(0.0));
  double sum = out[0] + out[1] + out[2];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("reverse KL value and closed-form gradient on the two-token case") {
  // student logits (0,0) -> p = (1/2, 1/2); teacher (ln 1, ln 3) -> q = (1/4, 3/4)
  Tape tape;
  NodeId s = tape.param(Tensor::vector({0.0, 0.0}));
  Tensor teacher = Tensor::vector({0.0, std::log(3.0)});
  NodeId kl = tape.reverse_kl(s, teacher);

  const double expected =
      0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  CHECK(tape.value(kl).v[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(tape.value(kl).v[0] == doctest::Approx(0.14384103622589045).epsilon(1e-12));

  tape.backward(kl);
  // d/dz_v = p_v (ln(p_v/q_v) - KL)
  const std::vector<double>& g = tape.grad(s);
  const double g0 = 0.5 * (std::log(0.5 / 0.25) - expected);
  const double g1 = 0.5 * (std::log(0.5 / 0.75) - expected);
  CHECK(std::fabs(g[0] - g0) < 1e-10);
  CHECK(std::fabs(g[1] - g1) < 1e-10);
  CHECK(g[0] == doctest::Approx(0.27465307216702745).epsilon(1e-10));
  CHECK(g[1] == doctest::Approx(-0.27465307216702745).epsilon(1e-10));
}

TEST_CASE("reverse KL gradient matches the closed form on random instances") {
  Rng rng(11);
  for (int it = 0; it < 100; ++it) {
    const size_t n = 2 + rng.uniform_int(15);
    Tensor sl = random_tensor({n}, &rng, 3.0);
    Tensor tl = random_tensor({n}, &rng, 3.0);

    Tape tape;
    NodeId s = tape.param(sl);
    NodeId kl = tape.reverse_kl(s, tl);
    tape.backward(kl);

    std::vector<double> p, lp, lq;
    stable_softmax(sl.v, &p);
    stable_log_softmax(sl.v, &lp);
    stable_log_softmax(tl.v, &lq);
    double klv = 0.0;
    for (size_t i = 0; i < n; ++i) klv += p[i] * (lp[i] - lq[i]);
    CHECK(tape.value(kl).v[0] == doctest::Approx(klv).epsilon(1e-10));
    const std::vector<double>& g = tape.grad(s);
    for (size_t i = 0; i < n; ++i) {
      const double closed = p[i] * (lp[i] - lq[i] - klv);
      CHECK(std::fabs(g[i] - closed) < 1e-10);
    }
  }
}

TEST_CASE("reverse KL stays finite when the teacher starves a token") {
  Tape tape;
  NodeId s = tape.param(Tensor::vector({0.0, 0.0}));
  NodeId kl = tape.reverse_kl(s, Tensor::vector({0.0, -1e9}));
  CHECK(std::isfinite(tape.value(kl).v[0]));
  tape.backward(kl);
  CHECK(std::isfinite(tape.grad(s)[0]));
  CHECK(std::isfinite(tape.grad(s)[1]));
}

TEST_CASE("linear layer gradients match finite differences") {
  Rng rng(3);
  for (int it = 0; it < 20; ++it) {
    const size_t o = 1 + rng.uniform_int(6), i = 1 + rng.uniform_int(6);
    Tensor w = random_tensor({o, i}, &rng);
    Tensor b = random_tensor({o}, &rng);
    Tensor x = random_tensor({i}, &rng);

    auto loss_of = [&](const Tensor& wt, const Tensor& bt, const Tensor& xt) {
      Tape t;
      NodeId y = t.linear(t.param(wt), t.param(bt), t.param(xt));
      NodeId l = t.sum(t.mul(y, y));
      return t.value(l).v[0];
    };

    Tape t;
    NodeId wn = t.param(w), bn = t.param(b), xn = t.param(x);
    NodeId y = t.linear(wn, bn, xn);
    t.backward(t.sum(t.mul(y, y)));

    check_grad(w, [&](const Tensor& v) { return loss_of(v, b, x); }, t.grad(wn));
    check_grad(b, [&](const Tensor& v) { return loss_of(w, v, x); }, t.grad(bn));
    check_grad(x, [&](const Tensor& v) { return loss_of(w, b, v); }, t.grad(xn));
  }
}

TEST_CASE("elementwise and reduction primitives match finite differences") {
  Rng rng(17);
  for (int it = 0; it < 20; ++it) {
    const size_t n = 2 + rng.uniform_int(8);
    Tensor a = random_tensor({n}, &rng);
    Tensor b = random_tensor({n}, &rng);

    auto loss_of = [&](const Tensor& av, const Tensor& bv) {
      Tape t;
      NodeId an = t.param(av), bn = t.param(bv);
      NodeId z = t.tanh_op(t.add(t.mul(an, bn), t.sub(an, bn)));
      NodeId cat = t.concat(z, t.scale(an, 0.5));
      NodeId ls = t.log_softmax(cat);
      NodeId picked = t.pick(ls, 1);
      NodeId sm = t.softmax(cat);
      return t.value(t.add(picked, t.sum(t.mul(sm, sm)))).v[0];
    };

    Tape t;
    NodeId an = t.param(a), bn = t.param(b);
    NodeId z = t.tanh_op(t.add(t.mul(an, bn), t.sub(an, bn)));
    NodeId cat = t.concat(z, t.scale(an, 0.5));
    NodeId ls = t.log_softmax(cat);
    NodeId picked = t.pick(ls, 1);
    NodeId sm = t.softmax(cat);
    t.backward(t.add(picked, t.sum(t.mul(sm, sm))));

    check_grad(a, [&](const Tensor& v) { return loss_of(v, b); }, t.grad(an));
    check_grad(b, [&](const Tensor& v) { return loss_of(a, v); }, t.grad(bn));
  }
}

TEST_CASE("gather and embed_lookup route gradients to the source entries") {
  Rng rng(23);
  Tensor table = random_tensor({5, 3}, &rng);

  auto loss_of = [&](const Tensor& tv) {
    Tape t;
    NodeId row = t.embed_lookup(t.param(tv), 2);
    NodeId g = t.gather(row, {2, 0});
    return t.value(t.sum(t.mul(g, g))).v[0];
  };

  Tape t;
  NodeId tab = t.param(table);
  NodeId row = t.embed_lookup(tab, 2);
  NodeId g = t.gather(row, {2, 0});
  t.backward(t.sum(t.mul(g, g)));

  check_grad(table, loss_of, t.grad(tab));
  // untouched rows receive exactly zero
  const std::vector<double>& grad = t.grad(tab);
  for (size_t r = 0; r < 5; ++r)
    for (size_t c = 0; c < 3; ++c)
      if (r != 2) CHECK(grad[r * 3 + c] == 0.0);
  CHECK(grad[2 * 3 + 1] == 0.0);  // gathered indices were 2 and 0 only
}

TEST_CASE("constants own no gradient buffer") {
  Tape t;
  NodeId c = t.constant(Tensor::vector({1.0, 2.0}));
  NodeId p = t.param(Tensor::vector({1.0, 2.0}));
  CHECK_FALSE(t.has_grad_buffer(c));
  CHECK(t.has_grad_buffer(p));

  NodeId loss = t.sum(t.mul(c, p));
  t.backward(loss);
  CHECK(t.grad(p)[0] == 1.0);
  CHECK(t.grad(p)[1] == 2.0);
  CHECK_FALSE(t.has_grad_buffer(c));
  CHECK_THROWS(t.grad(c));
}

TEST_CASE("backward accumulates across shared subexpressions") {
  Tape t;
  NodeId x = t.param(Tensor::vector({3.0}));
  NodeId y = t.add(x, x);  // dy/dx = 2
  t.backward(t.sum(y));
  CHECK(t.grad(x)[0] == doctest::Approx(2.0));
}

TEST_CASE("softmax output sums to one and its jacobian is orthogonal to ones") {
  Rng rng(31);
  Tensor logits = random_tensor({6}, &rng, 4.0);
  Tape t;
  NodeId x = t.param(logits);
  NodeId sm = t.softmax(x);
  double sum = 0.0;
  for (double v : t.value(sm).v) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  // sum(softmax) is constant, so its gradient vanishes identically
  t.backward(t.sum(sm));
  for (double g : t.grad(x)) CHECK(std::fabs(g) < 1e-12);
}
