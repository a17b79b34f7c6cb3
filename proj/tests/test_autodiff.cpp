#include <doctest.h>

#include <cmath>
#include <random>

#include "mmmie/gradcheck.hpp"
#include "mmmie/ops.hpp"

using namespace mmmie;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Random composite graph drawing on every op; returns a scalar.
Var random_graph(Tape& tape, std::span<const Var> in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 17);
  Var cur = in[0];  // [3 x 4]
  for (int step = 0; step < 6; ++step) {
    const std::size_t r = cur.value().rows();
    const std::size_t c = cur.value().cols();
    switch (pick(rng)) {
      case 0: cur = add(cur, tape.constant(Tensor::full({c}, 0.3))); break;
      case 1: cur = sub(cur, scale(cur, 0.25)); break;
      case 2: cur = mul(cur, tanh(cur)); break;
      case 3: cur = neg(cur); break;
      case 4: cur = exp(tanh(cur)); break;
      case 5: cur = log(add_scalar(square(cur), 0.5)); break;
      case 6: cur = sigmoid(scale(cur, 2.0)); break;
      case 7: cur = relu(add_scalar(cur, 0.05)); break;
      case 8: cur = c == 4 ? matmul(cur, in[1]) : scale(matmul(cur, matmul(transpose(cur), cur)), 0.1); break;
      case 9: cur = softmax_rows(cur, false); break;
      case 10: {
        cur = mul(cur, logsumexp(cur, 0));  // [c] broadcasts over rows
        break;
      }
      case 11: cur = add(cur, reduce(ReduceKind::mean, cur, 0)); break;
      case 12: cur = mul(cur, reduce(ReduceKind::max, cur, 0)); break;
      case 13: {
        const Var parts[] = {cur, slice_cols(cur, 0, 1)};
        cur = concat_cols(parts);
        break;
      }
      case 14: {
        const std::size_t idx[] = {r - 1, 0, r > 1 ? std::size_t{1} : std::size_t{0}};
        cur = gather_rows(cur, idx);
        break;
      }
      case 15: cur = clamp(cur, -5.0, 5.0); break;
      case 16: {
        const Var parts[] = {cur, row(cur, 0)};
        cur = concat_rows(parts);
        break;
      }
      default: cur = tanh(cur); break;
    }
  }
  return add(sum(cur), scale(reduce(ReduceKind::sum, mul(cur, cur)), 0.1));
}

}  // namespace

TEST_CASE("elementwise examples") {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1, 2}));
  Var b = tape.constant(Tensor::vector({3, 4}));
  CHECK(add(a, b).value() == Tensor::vector({4, 6}));
  CHECK(exp(tape.constant(Tensor::vector({0}))).value() == Tensor::vector({1}));
  CHECK(log(exp(tape.constant(Tensor::vector({0.7})))).value()[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(elementwise(OpKind::sub, a, b).value() == Tensor::vector({-2, -2}));
  CHECK(elementwise(OpKind::relu, tape.constant(Tensor::vector({-1, 2}))).value() == Tensor::vector({0, 2}));
}

TEST_CASE("elementwise errors") {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1, 2, 3}));
  Var b = tape.constant(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::vector({-2.0}))), DomainError);
  CHECK_THROWS_AS(elementwise(OpKind::add, a), std::invalid_argument);
}

TEST_CASE("trailing-dimension broadcasting") {
  Tape tape;
  Var m = tape.variable(Tensor::matrix({{1, 2}, {3, 4}}));
  Var v = tape.variable(Tensor::vector({10, 20}));
  Var s = add(m, v);
  CHECK(s.value() == Tensor::matrix({{11, 22}, {13, 24}}));
  tape.backward(sum(s));
  CHECK(tape.grad(v) == Tensor::vector({2, 2}));
  CHECK(tape.grad(m) == Tensor::matrix({{1, 1}, {1, 1}}));
  Var col = tape.constant(Tensor({2, 1}, {1, 1}));
  CHECK_THROWS_AS(add(m, col), ShapeError);
}

TEST_CASE("non-finite forward values are an error") {
  Tape tape;
  CHECK_THROWS_AS(exp(tape.constant(Tensor::vector({1000.0}))), NumericalError);
}

TEST_CASE("matmul examples") {
  Tape tape;
  Var eye = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(matmul(eye, m).value() == m.value());
  CHECK(matmul(tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{3}, {4}}))).value() ==
        Tensor::matrix({{11}}));
  CHECK_THROWS_AS(matmul(m, tape.constant(Tensor::matrix({{1, 2, 3}}))), ShapeError);

  std::mt19937_64 rng(3);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor c = matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.at(i, k) * b.at(k, j);
      CHECK(std::abs(c.at(i, j) - acc) <= 1e-12);
    }
  }
}

TEST_CASE("matmul adjoints") {
  Tape tape;
  Var a = tape.variable(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = tape.variable(Tensor::matrix({{5, 6}, {7, 8}}));
  tape.backward(sum(matmul(a, b)));
  // dL/dA = 1 * B^T, dL/dB = A^T * 1
  CHECK(tape.grad(a) == Tensor::matrix({{11, 15}, {11, 15}}));
  CHECK(tape.grad(b) == Tensor::matrix({{4, 4}, {6, 6}}));
}

TEST_CASE("reduce examples") {
  Tape tape;
  CHECK(mean(tape.constant(Tensor::vector({2, 4, 6}))).value().item() == 4.0);
  CHECK(sum(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), 0).value() == Tensor::vector({4, 6}));
  Var x = tape.variable(Tensor::vector({-1, 5, 3}));
  Var m = max(x);
  CHECK(m.value().item() == 5.0);
  tape.backward(m);
  CHECK(tape.grad(x) == Tensor::vector({0, 1, 0}));

  Var ties = tape.variable(Tensor::vector({2, 7, 7}));
  tape.backward(max(ties));
  CHECK(tape.grad(ties) == Tensor::vector({0, 1, 0}));

  CHECK_THROWS_AS(sum(tape.constant(Tensor::matrix({{1, 2}})), 2), ShapeError);
  CHECK_THROWS_AS(sum(tape.constant(Tensor({0}))), ShapeError);
}

TEST_CASE("mean adjoint distributes 1/n") {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1, 2, 3, 4}));
  tape.backward(mean(x));
  CHECK(tape.grad(x) == Tensor::vector({0.25, 0.25, 0.25, 0.25}));
}

TEST_CASE("logsumexp examples") {
  Tape tape;
  CHECK(logsumexp(tape.constant(Tensor::vector({0, 0}))).value().item() == doctest::Approx(std::log(2.0)));
  const double big = logsumexp(tape.constant(Tensor::vector({1000, 1000}))).value().item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(1000 + std::log(2.0)).epsilon(1e-15));
  CHECK(logsumexp(tape.constant(Tensor::vector({-1e6, -1e6 + 1}))).value().item() ==
        doctest::Approx(-1e6 + 1 + std::log1p(std::exp(-1.0))));

  const long double naive = std::log(std::exp(0.1L) + std::exp(0.5L) + std::exp(-0.3L));
  const double got = logsumexp(tape.constant(Tensor::vector({0.1, 0.5, -0.3}))).value().item();
  CHECK(std::abs(got - static_cast<double>(naive)) <= 1e-12);
}

TEST_CASE("logsumexp lies between max and max + log n") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    Tensor t = random_tensor({n}, rng, -50, 50);
    Tape tape;
    const double lse = logsumexp(tape.constant(t)).value().item();
    const double m = *std::max_element(t.data().begin(), t.data().end());
    CHECK(lse >= m);
    CHECK(lse <= m + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("backward examples and errors") {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  tape.backward(mul(x, x));
  CHECK(tape.grad(x).item() == 6.0);

  Var v = tape.variable(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(v), ShapeError);
  Var c = tape.constant(Tensor::vector({1, 2}));
  tape.backward(sum(mul(v, c)));
  CHECK_THROWS_AS(tape.grad(c), std::invalid_argument);
}

TEST_CASE("fan-out accumulates gradients") {
  Tape tape;
  Var x = tape.variable(Tensor::vector({2.0}));
  Var y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x
  tape.backward(sum(y));
  CHECK(tape.grad(x)[0] == 7.0);
}

TEST_CASE("tape nodes are topologically ordered and gradients match value shapes") {
  Tape tape;
  std::mt19937_64 rng(5);
  const Tensor inputs[] = {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng)};
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.variable(t));
  Var loss = random_graph(tape, leaves, 17);
  tape.backward(loss);
  for (std::size_t id = 0; id < tape.size(); ++id) {
    for (std::size_t p : tape.parents(id)) CHECK(p < id);
  }
  for (const Var& v : leaves) {
    if (tape.has_grad(v)) CHECK(tape.grad(v).shape() == v.shape());
  }
}

TEST_CASE("composite graph matches central differences") {
  std::mt19937_64 rng(7);
  const Tensor inputs[] = {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)};
  auto build = [](Tape&, std::span<const Var> in) {
    Var h = tanh(add(matmul(in[0], in[1]), in[2]));
    Var s = softmax_rows(h, false);
    return add(mean(logsumexp(mul(s, h), 1)), sum(sigmoid(h)));
  };
  CHECK(finite_difference_error(build, inputs) < 1e-5);
}

TEST_CASE("randomized graphs pass the finite-difference check for 100 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 1000);
    const Tensor inputs[] = {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng)};
    auto build = [seed](Tape& tape, std::span<const Var> in) { return random_graph(tape, in, seed); };
    const double err = finite_difference_error(build, inputs);
    worst = std::max(worst, err);
    CHECK_MESSAGE(err < 1e-4, "seed " << seed);
  }
  MESSAGE("worst relative error over 100 random graphs: " << worst);
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(21);
  const Tensor xin = random_tensor({2, 3}, rng);
  auto grads_of = [&](double a, double b) {
    Tape tape;
    Var x = tape.variable(xin);
    Var l1 = sum(tanh(x));
    Var l2 = mean(exp(x));
    tape.backward(add(scale(l1, a), scale(l2, b)));
    return tape.grad(x);
  };
  const Tensor g1 = grads_of(1, 0);
  const Tensor g2 = grads_of(0, 1);
  const Tensor g = grads_of(2.5, -0.75);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(2.5 * g1[i] - 0.75 * g2[i]).epsilon(1e-13));
}

TEST_CASE("identical op sequences are bit-identical") {
  auto run = [] {
    std::mt19937_64 rng(99);
    const Tensor inputs[] = {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng)};
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.variable(t));
    Var loss = random_graph(tape, leaves, 42);
    tape.backward(loss);
    return std::make_pair(loss.value(), tape.grad(leaves[0]));
  };
  CHECK(run() == run());
}

TEST_CASE("causal softmax rows are probability vectors with zero future mass") {
  Tape tape;
  std::mt19937_64 rng(4);
  Var s = softmax_rows(tape.constant(random_tensor({4, 4}, rng, -3, 3)), true);
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(s.value().at(i, j) >= 0.0);
      if (j > i) CHECK(s.value().at(i, j) == 0.0);
      total += s.value().at(i, j);
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}
