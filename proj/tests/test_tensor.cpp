#include "doctest.h"

#include "varcaps/ops.hpp"
#include "varcaps/rng.hpp"
#include "varcaps/tensor.hpp"

#include <stdexcept>

using namespace varcaps;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 0.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({-1}), std::invalid_argument);
  Tensor s = Tensor::scalar(4.0);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.value() == 4.0);
}

TEST_CASE("non-finite values are rejected") {
  CHECK_THROWS_AS(Tensor({1}, std::vector<double>{
                              std::numeric_limits<double>::quiet_NaN()}),
                  std::domain_error);
  // exp overflow violates the all-finite invariant at the op boundary
  CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), std::domain_error);
}

TEST_CASE("matmul") {
  Tensor identity({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor col({2, 1}, std::vector<double>{5, 7});
  Tensor r = matmul(identity, col);
  CHECK(r.at({0, 0}) == 5.0);
  CHECK(r.at({1, 0}) == 7.0);

  Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b({2, 2}, std::vector<double>{5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.at({0, 0}) == 19.0);
  CHECK(c.at({0, 1}) == 22.0);
  CHECK(c.at({1, 0}) == 43.0);
  CHECK(c.at({1, 1}) == 50.0);

  Tensor z = matmul(Tensor::zeros({2, 3}), Tensor::full({3, 2}, 9.0));
  CHECK(z.array().abs().maxCoeff() == 0.0);

  CHECK_THROWS_WITH_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                       doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("elementwise") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == 0.5);
  CHECK(exp(Tensor::scalar(0.0)).value() == 1.0);
  Tensor r = add(Tensor({2}, std::vector<double>{1, 2}),
                 Tensor({2}, std::vector<double>{3, 4}));
  CHECK(r.at({0}) == 4.0);
  CHECK(r.at({1}) == 6.0);

  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::domain_error);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), std::domain_error);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})),
                  std::invalid_argument);
  CHECK(relu(Tensor::scalar(-2.0)).value() == 0.0);
  CHECK(scale(Tensor::scalar(3.0), -2.0).value() == -6.0);
}

TEST_CASE("softmax") {
  Tensor u = softmax(Tensor::zeros({3}), 0);
  for (int i = 0; i < 3; ++i) CHECK(u.at({i}) == doctest::Approx(1.0 / 3).epsilon(1e-14));

  Tensor x({2}, std::vector<double>{std::log(2.0), 0.0});
  Tensor y = softmax(x, 0);
  CHECK(y.at({0}) == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(y.at({1}) == doctest::Approx(1.0 / 3).epsilon(1e-14));

  CHECK_THROWS_AS(softmax(Tensor::zeros({3}), 1), std::invalid_argument);
  CHECK_THROWS_AS(softmax(Tensor::zeros({3}), -1), std::invalid_argument);
}

TEST_CASE("softmax properties on random slices") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = rng.uniform_int(1, 4), cols = rng.uniform_int(1, 5);
    std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
    for (double& v : vals) v = rng.uniform(-8.0, 8.0);
    Tensor x({rows, cols}, vals);
    const int axis = rng.uniform_int(0, 1);
    Tensor y = softmax(x, axis);

    CHECK((y.array() > 0.0).all());
    const int n = axis == 0 ? rows : cols;
    const int other = axis == 0 ? cols : rows;
    for (int o = 0; o < other; ++o) {
      double total = 0.0;
      for (int k = 0; k < n; ++k)
        total += axis == 0 ? y.at({k, o}) : y.at({o, k});
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }

    // shift invariance
    Tensor shifted = softmax(add(x, 17.25), axis);
    CHECK((shifted.array() - y.array()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("l2_norm") {
  Tensor v({2}, std::vector<double>{3, 4});
  CHECK(l2_norm(v, 0).value() == 5.0);
  CHECK(l2_norm(Tensor::zeros({4}), 0).value() == 0.0);
  Tensor e({3}, std::vector<double>{0, 1, 0});
  CHECK(l2_norm(e, 0).value() == 1.0);

  Tensor m({2, 2}, std::vector<double>{3, 4, 0, 0});
  Tensor n = l2_norm(m, 1);
  CHECK(n.shape() == Shape{2});
  CHECK(n.at({0}) == 5.0);
  CHECK(n.at({1}) == 0.0);
}

TEST_CASE("backward basics") {
  SUBCASE("x*x at 3 accumulates fan-out") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(3.0));
    Tensor loss = mul(x, x);
    tape.backward(loss);
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("x+y gives both gradients 1") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(2.0));
    Tensor y = tape.leaf(Tensor::scalar(5.0));
    tape.backward(add(x, y));
    CHECK(x.grad()[0] == 1.0);
    CHECK(y.grad()[0] == 1.0);
  }
  SUBCASE("sum of softmax is constant, gradients vanish") {
    Tape tape;
    Tensor w = tape.leaf(Tensor({3}, std::vector<double>{0.3, -1.2, 2.0}));
    tape.backward(sum(softmax(w, 0)));
    CHECK(w.grad().abs().maxCoeff() < 1e-15);
  }
  SUBCASE("non-scalar loss is an error") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::zeros({2}));
    CHECK_THROWS_AS(tape.backward(add(x, 1.0)), std::invalid_argument);
  }
  SUBCASE("detached tensors are constants") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(3.0));
    Tensor d = x.detach();
    CHECK_FALSE(d.requires_grad());
    Tensor loss = mul(d, x);  // d treated as the constant 3
    tape.backward(loss);
    CHECK(x.grad()[0] == 3.0);
  }
  SUBCASE("a tape runs backward once") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(1.0));
    Tensor loss = mul(x, x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  }
  SUBCASE("mixing two live tapes is an error") {
    Tape t1, t2;
    Tensor a = t1.leaf(Tensor::scalar(1.0));
    Tensor b = t2.leaf(Tensor::scalar(2.0));
    CHECK_THROWS_AS(add(a, b), std::logic_error);
  }
}

TEST_CASE("structural ops") {
  Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor r = reshape(x, {3, 2});
  CHECK(r.at({2, 1}) == 6.0);
  CHECK_THROWS_AS(reshape(x, {4, 2}), std::invalid_argument);

  Tensor top = narrow(x, 0, 1);
  CHECK(top.shape() == Shape{1, 3});
  CHECK(top.at({0, 2}) == 3.0);
  CHECK_THROWS_AS(narrow(x, 1, 2), std::invalid_argument);

  Tensor both = concat0(top, narrow(x, 1, 1));
  CHECK((both.array() - x.array()).abs().maxCoeff() == 0.0);
}

TEST_CASE("operations are deterministic bitwise") {
  Rng rng(3);
  std::vector<double> vals(24);
  for (double& v : vals) v = rng.uniform(-2.0, 2.0);
  Tensor x({4, 6}, vals);
  Tensor y1 = softmax(mul(x, x), 1);
  Tensor y2 = softmax(mul(x, x), 1);
  for (int i = 0; i < y1.numel(); ++i) CHECK(y1.array()[i] == y2.array()[i]);
}

TEST_SUITE_END();
