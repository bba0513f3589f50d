#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ono/autodiff.hpp"
#include "ono/errors.hpp"
#include "ono/rng.hpp"

using namespace ono;
using ad::Tape;
using ad::Tensor;
using linalg::DenseMatrix;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  DenseMatrix m(r, c);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("matmul against identity and all-ones gradient") {
  Tape tape;
  Rng rng(0);
  DenseMatrix xv = random_matrix(3, 3, rng);
  Tensor x = tape.param(xv);
  Tensor i3 = tape.constant(DenseMatrix::identity(3));
  Tensor y = ad::matmul(i3, x);
  CHECK(linalg::max_abs_diff(y.value(), xv) == 0.0);
  tape.backward(ad::sum(y));
  CHECK(linalg::max_abs_diff(x.grad(), DenseMatrix(3, 3, 1.0)) == 0.0);
}

TEST_CASE("square at x=3 under sum loss has gradient 6") {
  Tape tape;
  Tensor x = tape.param(DenseMatrix(1, 1, {3.0}));
  tape.backward(ad::sum(ad::square(x)));
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("linear loss: grad of sum(w*x) w.r.t. w equals x") {
  Tape tape;
  Rng rng(5);
  DenseMatrix xv = random_matrix(4, 1, rng);
  Tensor w = tape.param(random_matrix(1, 4, rng));
  Tensor x = tape.constant(xv);
  tape.backward(ad::sum(ad::matmul(w, x)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()(0, i) == doctest::Approx(xv(i, 0)));
}

TEST_CASE("grad of squared norm is 2w") {
  Tape tape;
  Rng rng(6);
  DenseMatrix wv = random_matrix(3, 2, rng);
  Tensor w = tape.param(wv);
  tape.backward(ad::sum(ad::square(w)));
  for (std::size_t i = 0; i < wv.size(); ++i)
    CHECK(w.grad().data()[i] == doctest::Approx(2.0 * wv.data()[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar loss and tape reuse") {
  Tape tape;
  Tensor x = tape.param(DenseMatrix(2, 2, 1.0));
  Tensor y = ad::square(x);
  CHECK_THROWS_AS(tape.backward(y), NotScalarLoss);
  Tensor s = ad::sum(y);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), TapeReused);
}

TEST_CASE("layer_norm output is standardized per row") {
  Tape tape;
  Rng rng(9);
  const std::size_t m = 5, n = 16;
  Tensor x = tape.param(random_matrix(m, n, rng, 2.0));
  Tensor gamma = tape.constant(DenseMatrix(1, n, 1.0));
  Tensor beta = tape.constant(DenseMatrix(1, n, 0.0));
  Tensor y = ad::layer_norm(x, gamma, beta);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += y.value()(r, c);
    mu /= n;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = y.value()(r, c) - mu;
      var += d * d;
    }
    var /= n;
    CHECK(std::fabs(mu) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("layer_norm on a constant row outputs beta with finite gradient") {
  Tape tape;
  Tensor x = tape.param(DenseMatrix(1, 4, 3.7));
  Tensor gamma = tape.param(DenseMatrix(1, 4, 2.0));
  Tensor beta = tape.param(DenseMatrix(1, 4, 0.25));
  Tensor y = ad::layer_norm(x, gamma, beta);
  for (std::size_t c = 0; c < 4; ++c) CHECK(y.value()(0, c) == doctest::Approx(0.25));
  tape.backward(ad::sum(y));
  CHECK(x.grad().all_finite());
  CHECK(linalg::max_abs_diff(x.grad(), DenseMatrix(1, 4, 0.0)) == 0.0);
}

TEST_CASE("grad_check of a constant function reports zero") {
  auto f = [](Tape& t, const std::vector<Tensor>& leaves) {
    (void)leaves;
    return t.constant(DenseMatrix(1, 1, {42.0}));
  };
  CHECK(ad::grad_check(f, {DenseMatrix(2, 2, 1.0)}, 1e-5) == 0.0);
}

TEST_CASE("grad_check of a quadratic is exact to central-difference accuracy") {
  Rng rng(21);
  auto f = [](Tape& t, const std::vector<Tensor>& leaves) {
    Tensor q = ad::square(leaves[0]);
    (void)t;
    return ad::sum(q);
  };
  CHECK(ad::grad_check(f, {random_matrix(3, 3, rng)}, 1e-5) < 1e-9);
}

TEST_CASE("every primitive passes grad_check at random points") {
  Rng rng(33);
  const double tol = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    DenseMatrix a = random_matrix(4, 3, rng);
    DenseMatrix b = random_matrix(3, 5, rng);
    DenseMatrix c = random_matrix(4, 3, rng);
    DenseMatrix row = random_matrix(1, 3, rng);
    DenseMatrix col = random_matrix(4, 1, rng);
    // keep reciprocal/sqrt arguments away from zero
    for (double& v : col.data()) v = 1.5 + std::fabs(v);
    DenseMatrix pos = random_matrix(4, 3, rng);
    for (double& v : pos.data()) v = 0.5 + std::fabs(v);

    auto check1 = [&](const char* name, auto make, const DenseMatrix& point) {
      auto f = [&](Tape& t, const std::vector<Tensor>& leaves) {
        (void)t;
        return ad::sum(make(leaves[0]));
      };
      const double err = ad::grad_check(f, {point}, 1e-5);
      INFO(name);
      CHECK(err < tol);
    };

    check1("relu", [](Tensor x) { return ad::relu(x); }, a);
    check1("gelu", [](Tensor x) { return ad::gelu(x); }, a);
    check1("elu1", [](Tensor x) { return ad::elu1(x); }, a);
    check1("exp", [](Tensor x) { return ad::exp_t(x); }, a);
    check1("square", [](Tensor x) { return ad::square(x); }, a);
    check1("sqrt", [](Tensor x) { return ad::sqrt_t(x); }, pos);
    check1("reciprocal", [](Tensor x) { return ad::reciprocal(x); }, pos);
    check1("mean", [](Tensor x) { return ad::mean(ad::square(x)); }, a);
    check1("transpose", [](Tensor x) { return ad::square(ad::transpose(x)); }, a);
    check1("scale", [](Tensor x) { return ad::scale(x, -2.5); }, a);
    check1("col_sum", [](Tensor x) { return ad::square(ad::col_sum(x)); }, a);
    check1("slice", [](Tensor x) { return ad::square(ad::slice_cols(x, 1, 3)); }, a);

    auto f2 = [&](Tape& t, const std::vector<Tensor>& leaves) {
      (void)t;
      return ad::sum(ad::square(ad::matmul(leaves[0], leaves[1])));
    };
    INFO("matmul");
    CHECK(ad::grad_check(f2, {a, b}, 1e-5) < 1e-4);

    // composed expressions: quartic terms make near-zero gradient coordinates
    // possible, where the relative metric is FD-noise bound; 1e-4 as at the
    // layer level
    auto f3 = [&](Tape& t, const std::vector<Tensor>& leaves) {
      (void)t;
      return ad::sum(ad::square(ad::mul(ad::add(leaves[0], leaves[1]), leaves[1])));
    };
    INFO("add+mul same-shape");
    CHECK(ad::grad_check(f3, {a, c}, 1e-5) < 1e-4);

    auto f4 = [&](Tape& t, const std::vector<Tensor>& leaves) {
      (void)t;
      return ad::sum(ad::square(ad::mul(ad::add(leaves[0], leaves[1]), leaves[1])));
    };
    INFO("row broadcast add+mul");
    CHECK(ad::grad_check(f4, {random_matrix(4, 3, rng), row}, 1e-5) < 1e-4);

    auto f5 = [&](Tape& t, const std::vector<Tensor>& leaves) {
      (void)t;
      return ad::sum(ad::square(ad::row_scale(leaves[0], leaves[1])));
    };
    INFO("row_scale");
    CHECK(ad::grad_check(f5, {a, col}, 1e-5) < 1e-4);

    auto f6 = [&](Tape& t, const std::vector<Tensor>& leaves) {
      (void)t;
      return ad::sum(ad::square(ad::concat_cols(leaves[0], leaves[1])));
    };
    INFO("concat_cols");
    CHECK(ad::grad_check(f6, {a, c}, 1e-5) < tol);

    auto f7 = [&](Tape& t, const std::vector<Tensor>& leaves) {
      Tensor gamma = leaves[1];
      Tensor beta = leaves[2];
      (void)t;
      return ad::sum(ad::square(ad::layer_norm(leaves[0], gamma, beta)));
    };
    INFO("layer_norm");
    CHECK(ad::grad_check(f7, {random_matrix(4, 6, rng), random_matrix(1, 6, rng),
                              random_matrix(1, 6, rng)},
                         1e-5) < 1e-4);

    auto f8 = [&](Tape& t, const std::vector<Tensor>& leaves) {
      (void)t;
      return ad::sum(ad::sub(ad::square(leaves[0]), leaves[1]));
    };
    INFO("sub");
    CHECK(ad::grad_check(f8, {a, c}, 1e-5) < tol);
  }
}

TEST_CASE("whiten gradient matches finite differences") {
  // note sum((psi w)^2) would be constant (psi^T psi == m I identically), so
  // the losses here must break that invariance: an elementwise mask and a
  // row-mixing contraction.
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    DenseMatrix g = random_matrix(12, 3, rng);
    for (std::size_t i = 0; i < 3; ++i) g(i, i) += 2.0;
    DenseMatrix mask = random_matrix(12, 3, rng);
    auto f_mask = [&](Tape& t, const std::vector<Tensor>& leaves) {
      Tensor psi = ad::whiten(leaves[0]);
      return ad::sum(ad::square(ad::mul(psi, t.constant(mask))));
    };
    CHECK(ad::grad_check(f_mask, {g}, 1e-5) < 1e-4);

    DenseMatrix mix = random_matrix(5, 12, rng);
    auto f_mix = [&](Tape& t, const std::vector<Tensor>& leaves) {
      Tensor psi = ad::whiten(leaves[0]);
      return ad::sum(ad::square(ad::matmul(t.constant(mix), psi)));
    };
    CHECK(ad::grad_check(f_mix, {g}, 1e-5) < 1e-4);
  }
}

TEST_CASE("whiten gradient is zero along invariant directions") {
  // sum((psi w)^2) is constant in g because psi^T psi == m I exactly
  Rng rng(79);
  DenseMatrix g = random_matrix(10, 3, rng);
  for (std::size_t i = 0; i < 3; ++i) g(i, i) += 2.0;
  Tape tape;
  Tensor tg = tape.param(g);
  Tensor psi = ad::whiten(tg);
  Tensor w = tape.constant(random_matrix(3, 2, rng));
  tape.backward(ad::sum(ad::square(ad::matmul(psi, w))));
  CHECK(tg.grad().max_abs() < 1e-10);
}

TEST_CASE("whiten output has identity empirical covariance") {
  Rng rng(78);
  DenseMatrix g = random_matrix(40, 5, rng);
  Tape tape;
  Tensor psi = ad::whiten(tape.param(g));
  const std::size_t m = 40, k = 5;
  DenseMatrix cov(k, k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = 0; q < k; ++q) {
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += psi.value()(r, p) * psi.value()(r, q);
      cov(p, q) = s / double(m);
    }
  CHECK(linalg::max_abs_diff(cov, DenseMatrix::identity(k)) < 1e-10);
}

TEST_CASE("gradient of a sum equals sum of per-output gradients (linearity)") {
  Rng rng(90);
  DenseMatrix xv = random_matrix(3, 2, rng);
  DenseMatrix wv = random_matrix(2, 2, rng);

  // joint pass on f = sum(x w)
  Tape joint;
  Tensor xj = joint.param(xv);
  Tensor yj = ad::matmul(xj, joint.constant(wv));
  joint.backward(ad::sum(yj));
  DenseMatrix joint_grad = xj.grad();

  // separate pass per output entry, accumulated by hand
  DenseMatrix acc(3, 2);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      Tape t;
      Tensor x = t.param(xv);
      Tensor y = ad::matmul(x, t.constant(wv));
      DenseMatrix mask(3, 2);
      mask(r, c) = 1.0;
      t.backward(ad::sum(ad::mul(y, t.constant(mask))));
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += x.grad().data()[i];
    }
  CHECK(linalg::max_abs_diff(joint_grad, acc) < 1e-12);
}

TEST_CASE("two-layer composition matches finite differences") {
  Rng rng(91);
  auto f = [](Tape& t, const std::vector<Tensor>& leaves) {
    Tensor h = ad::gelu(ad::matmul(leaves[0], leaves[1]));
    Tensor out = ad::matmul(h, leaves[2]);
    (void)t;
    return ad::mean(ad::square(out));
  };
  const double err = ad::grad_check(
      f, {random_matrix(5, 4, rng), random_matrix(4, 6, rng), random_matrix(6, 2, rng)}, 1e-5);
  CHECK(err < 1e-6);
}
