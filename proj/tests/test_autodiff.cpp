#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <vector>

#include "midl/autodiff.hpp"
#include "midl/rng.hpp"
#include "oracles.hpp"

using namespace midl;

namespace {

Tensor random_tensor(Index r, Index c, Rng& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor::uniform(r, c, lo, hi, rng);
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t(2, 3);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.size() == 6);  // product of dims equals stored count
  t(1, 2) = 5.0;
  CHECK(t.array()[5] == 5.0);  // row-major layout
  CHECK_THROWS(Tensor(0, 3));
  CHECK_THROWS_AS((void)Tensor(2, 2).item(), std::logic_error);
}

TEST_CASE("matmul identity and scalar") {
  Tensor eye(2, 2);
  eye(0, 0) = eye(1, 1) = 1.0;
  Tensor v(2, 1);
  v(0, 0) = 3.0;
  v(1, 0) = 4.0;
  Tensor out = matmul(constant(eye), constant(v)).value();
  CHECK(out(0, 0) == 3.0);
  CHECK(out(1, 0) == 4.0);

  CHECK(matmul(constant(Tensor::full(1, 1, 2.0)), constant(Tensor::full(1, 1, 5.0))).value().item() ==
        10.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(11);
  Tensor a = random_tensor(3, 4, rng);
  Tensor b = random_tensor(4, 2, rng);
  Tensor got = matmul(constant(a), constant(b)).value();
  Tensor want = oracle::matmul_naive(a, b);
  for (Index i = 0; i < got.size(); ++i)
    CHECK(got.array()[i] == doctest::Approx(want.array()[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(constant(Tensor(2, 3)), constant(Tensor(2, 3)));
    FAIL("expected a dimension error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("elementwise forward rules") {
  Tensor x(1, 2);
  x(0, 0) = -1.0;
  x(0, 1) = 2.0;
  Tensor r = relu(constant(x)).value();
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 2.0);

  // log(exp(x)) is the identity far from the clamp
  CHECK(logc(expn(constant(Tensor::full(1, 1, 0.5)))).value().item() ==
        doctest::Approx(0.5).epsilon(1e-15));

  // log never throws: values <= 0 are clamped to log(1e-12)
  Tensor z(1, 2);
  z(0, 0) = 0.0;
  z(0, 1) = -3.0;
  Tensor lz = logc(constant(z)).value();
  CHECK(lz(0, 0) == doctest::Approx(std::log(1e-12)));
  CHECK(lz(0, 1) == doctest::Approx(std::log(1e-12)));
  CHECK(lz.all_finite());
}

TEST_CASE("d/dx of x*x at x=3 is 6") {
  Value x = parameter(Tensor::full(1, 1, 3.0));
  Value y = mul(x, x);
  backward(y);
  CHECK(x.grad().item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("softmax basics") {
  Tensor z0(1, 3);  // all-equal logits: uniform by symmetry
  Tensor p0 = softmax_rows(constant(z0)).value();
  for (Index i = 0; i < 3; ++i) CHECK(p0(0, i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor z1(1, 2);  // saturation: max subtraction keeps this finite
  z1(0, 0) = 1000.0;
  Tensor p1 = softmax_rows(constant(z1)).value();
  CHECK(p1(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p1(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p1.all_finite());
}

TEST_CASE("softmax matches the high-precision oracle") {
  Tensor z(1, 3);
  z(0, 0) = 1.0;
  z(0, 1) = 2.0;
  z(0, 2) = 3.0;
  Tensor p = softmax_rows(constant(z)).value();
  // frozen from the oracle
  const double expected[3] = {0.09003057317038046, 0.24472847105479764, 0.6652409557748219};
  const std::vector<double> orc = oracle::softmax({1.0, 2.0, 3.0});
  for (Index i = 0; i < 3; ++i) {
    CHECK(p(0, i) == doctest::Approx(expected[i]).epsilon(1e-14));
    CHECK(p(0, i) == doctest::Approx(orc[static_cast<std::size_t>(i)]).epsilon(1e-14));
  }
}

TEST_CASE("softmax rows are simplex points") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k = 2 + static_cast<Index>(rng.next_below(9));
    Tensor z = random_tensor(3, k, rng, -30.0, 30.0);
    Tensor p = softmax_rows(constant(z)).value();
    for (Index r = 0; r < p.rows(); ++r) {
      double sum = 0.0, mn = 1.0;
      for (Index c = 0; c < k; ++c) {
        sum += p(r, c);
        mn = std::min(mn, p(r, c));
      }
      CHECK(mn >= 0.0);
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("backward of sum gives all-ones; disconnected parameters stay zero") {
  Rng rng(7);
  Value theta = parameter(random_tensor(3, 2, rng));
  Value unused = parameter(random_tensor(2, 2, rng));
  backward(sum_all(theta));
  for (Index i = 0; i < theta.grad().size(); ++i) CHECK(theta.grad().array()[i] == 1.0);
  for (Index i = 0; i < unused.grad().size(); ++i) CHECK(unused.grad().array()[i] == 0.0);
}

TEST_CASE("backward of 0*theta gives all-zeros") {
  Rng rng(8);
  Value theta = parameter(random_tensor(2, 2, rng));
  backward(sum_all(mul_scalar(theta, 0.0)));
  for (Index i = 0; i < theta.grad().size(); ++i) CHECK(theta.grad().array()[i] == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
  Value v = parameter(Tensor(2, 2));
  CHECK_THROWS_AS(backward(v), std::logic_error);
}

TEST_CASE("backward visits shared subgraphs exactly once") {
  // diamond: z = x*x reused twice; revisiting z would double its pushes
  Value x = parameter(Tensor::full(1, 1, 3.0));
  Value z = mul(x, x);
  Value w = add(z, z);
  backward(w);
  CHECK(x.grad().item() == doctest::Approx(12.0).epsilon(1e-15));  // 2 * 2x

  // deeper fan-out through different op types
  Value y = parameter(Tensor::full(1, 1, 0.5));
  Value e = expn(y);
  Value loss = sum_all(add(mul(e, e), mul_scalar(e, 2.0)));
  backward(loss);
  const double ev = std::exp(0.5);
  CHECK(y.grad().item() == doctest::Approx(2.0 * ev * ev + 2.0 * ev).epsilon(1e-14));
}

TEST_CASE("backward twice accumulates exactly 2x") {
  Rng rng(9);
  Value theta = parameter(random_tensor(2, 3, rng, 0.1, 2.0));
  Value loss = sum_all(mul(theta, logc(theta)));
  backward(loss);
  const Tensor once = theta.grad();
  backward(loss);
  for (Index i = 0; i < once.size(); ++i)
    CHECK(theta.grad().array()[i] == 2.0 * once.array()[i]);
}

TEST_CASE("loss gradient with respect to itself is 1") {
  Value theta = parameter(Tensor::full(1, 1, 2.0));
  Value loss = sum_all(mul(theta, theta));
  backward(loss);
  CHECK(loss.grad().item() == 1.0);
}

// Composes every differentiable op and checks reverse-mode gradients against
// central finite differences on random inputs.
TEST_CASE("gradients match finite differences across the op set") {
  Rng rng(12345);
  for (int trial = 0; trial < 10; ++trial) {
    Value w = parameter(random_tensor(3, 4, rng, -1.0, 1.0));
    Value b = parameter(random_tensor(1, 4, rng, -1.0, 1.0));
    Value u = parameter(random_tensor(4, 3, rng, -1.0, 1.0));
    Tensor x = random_tensor(2, 3, rng, -1.5, 1.5);

    auto build = [&]() -> Value {
      Value h = add(matmul(constant(x), mul(w, w)), bcast_rows(b, 2));
      h = relu(h);
      Value s = sigmoid(matmul(h, u));
      Value p = softmax_rows(add(s, expn(mul_scalar(s, 0.3))));
      Value centered = sub(p, bcast_cols(row_mean(p), p.cols()));
      Value spread = rsqrt(add_scalar(row_mean(mul(centered, centered)), 1e-3));
      Value pieces = concat_cols(mul(p, logc(p)), bcast_cols(spread, p.cols()));
      Value stats = mul_scalar(col_mean(pieces), 0.5);
      return add(add(mean_all(row_sum(pieces)), sum_all(negate(stats))),
                 mul_scalar(sum_all(add_scalar(p, 0.1)), 0.25));
    };

    Value loss = build();
    for (Value* p : {&w, &b, &u}) p->grad().array().setZero();
    backward(loss);

    for (Value* param : {&w, &b, &u}) {
      Tensor& t = param->node()->value;
      for (Index i = 0; i < t.size(); ++i) {
        const double analytic = param->grad().array()[i];
        if (std::abs(analytic) <= 1e-8) continue;
        const auto f = [&] { return build().value().item(); };
        double fd = oracle::central_diff(f, t.array()[i], 1e-5);
        if (oracle::rel_err(analytic, fd) > 5e-5)
          fd = oracle::central_diff_robust(f, t.array()[i], 1e-5);
        CHECK(oracle::rel_err(analytic, fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = random_tensor(2, 5, rng, -50.0, 50.0);
    Tensor b = random_tensor(2, 5, rng, -50.0, 50.0);
    Value va = constant(a), vb = constant(b);
    for (const Value& v :
         {add(va, vb), sub(va, vb), mul(va, vb), negate(va), relu(va), logc(va), sigmoid(va),
          softmax_rows(va), mul_scalar(va, 3.0), add_scalar(va, -2.0)})
      CHECK(v.value().all_finite());
  }
}
