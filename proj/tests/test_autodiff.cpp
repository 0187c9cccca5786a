#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kdrf/gradcheck.hpp"
#include "kdrf/rng.hpp"
#include "kdrf/tape.hpp"

using namespace kdrf::ad;
using kdrf::Rng;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("d/dx x^2 at x = 3 is 6") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(3.0));
  Tensor loss = square(x);
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("gradient of sum is all ones") {
  Tape tape;
  Tensor c = tape.leaf(Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  tape.backward(sum(c));
  auto g = tape.grad(c);
  REQUIRE(g.size() == 6);
  for (double v : g) CHECK(v == 1.0);
}

TEST_CASE("using a node twice sums the path gradients") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(2.0));
  // f = x*x + x  =>  f' = 2x + 1 = 5
  Tensor loss = add(mul(x, x), x);
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("backward rejects untracked and non-scalar tensors") {
  Tape tape;
  Tensor plain = Tensor::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(plain), std::invalid_argument);
  Tensor leafv = tape.leaf(Tensor(Shape{2}, {1, 2}));
  CHECK_THROWS_AS(tape.backward(leafv), std::invalid_argument);
}

TEST_CASE("detach blocks gradient flow") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(3.0));
  Tensor y = mul(detach(square(x)), x);  // treated as 9 * x
  tape.backward(y);
  CHECK(tape.grad(x)[0] == doctest::Approx(9.0));
}

TEST_CASE("grad_check: linear function error is at rounding level") {
  auto f = [](Tape*, const std::vector<Tensor>& p) {
    return sum(scale(p[0], 4.0));
  };
  Rng rng(7);
  auto r = grad_check(f, {random_tensor({5}, rng)}, 1e-5);
  CHECK(r.max_rel_err <= 1e-9);
}

TEST_CASE("grad_check: constant function has zero gradient both ways") {
  auto f = [](Tape*, const std::vector<Tensor>& p) {
    return add_const(scale(sum(p[0]), 0.0), 2.5);
  };
  Rng rng(8);
  auto r = grad_check(f, {random_tensor({4}, rng)}, 1e-5);
  CHECK(r.max_rel_err == 0.0);
}

TEST_CASE("two-layer MLP gradients match central differences") {
  Rng rng(42);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor target = random_tensor({3, 2}, rng);
  Tensor w1 = random_tensor({6, 8}, rng, -0.5, 0.5);
  Tensor b1 = random_tensor({8}, rng, -0.1, 0.1);
  Tensor w2 = random_tensor({8, 2}, rng, -0.5, 0.5);
  Tensor b2 = random_tensor({2}, rng, -0.1, 0.1);

  auto f = [&](Tape*, const std::vector<Tensor>& p) {
    Tensor h = relu(add(matmul(x, p[0]), p[1]));
    Tensor out = add(matmul(h, p[2]), p[3]);
    return mean(square(sub(out, target)));
  };
  auto r = grad_check(f, {w1, b1, w2, b2}, 1e-5);
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("every op matches central differences on small random shapes") {
  Rng rng(123);
  const double step = 1e-6;
  const double tol = 1e-4;

  auto check1 = [&](const char* name, auto&& op, Shape shape, double lo = -1.0, double hi = 1.0) {
    CAPTURE(name);
    auto f = [&](Tape*, const std::vector<Tensor>& p) { return sum(op(p[0])); };
    auto r = grad_check(f, {random_tensor(shape, rng, lo, hi)}, step);
    CHECK(r.max_rel_err <= tol);
  };

  for (int rep = 0; rep < 3; ++rep) {
    Shape shape{2, static_cast<std::int64_t>(1 + rng.next_below(8))};
    check1("square", [](const Tensor& t) { return square(t); }, shape);
    check1("exp", [](const Tensor& t) { return exp(t); }, shape);
    check1("sin", [](const Tensor& t) { return sin(t); }, shape);
    check1("cos", [](const Tensor& t) { return cos(t); }, shape);
    check1("sigmoid", [](const Tensor& t) { return sigmoid(t); }, shape);
    check1("softplus", [](const Tensor& t) { return softplus(t); }, shape);
    // keep relu inputs away from the kink
    check1("relu+", [](const Tensor& t) { return relu(t); }, shape, 0.1, 1.0);
    check1("relu-", [](const Tensor& t) { return relu(t); }, shape, -1.0, -0.1);
    check1("scale", [](const Tensor& t) { return scale(t, -2.5); }, shape);
    check1("add_const", [](const Tensor& t) { return add_const(t, 1.5); }, shape);
    check1("mean", [](const Tensor& t) { return mean(t); }, shape);
    check1("sum_axis0", [](const Tensor& t) { return sum_axis(t, 0); }, shape);
    check1("sum_axis1", [](const Tensor& t) { return sum_axis(t, 1); }, shape);
    check1("cumsum", [](const Tensor& t) { return cumsum_exclusive(t, 1); }, shape);
    check1("reshape", [&](const Tensor& t) { return reshape(t, Shape{t.size()}); }, shape);
    check1("slice", [&](const Tensor& t) { return slice(t, 1, 0, t.shape()[1]); }, shape);
  }

  // binary ops, same shape and broadcast
  auto check2 = [&](const char* name, auto&& op, Shape sa, Shape sb) {
    CAPTURE(name);
    auto f = [&](Tape*, const std::vector<Tensor>& p) { return sum(op(p[0], p[1])); };
    auto r = grad_check(f, {random_tensor(sa, rng), random_tensor(sb, rng)}, step);
    CHECK(r.max_rel_err <= tol);
  };
  check2("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }, {2, 4}, {2, 4});
  check2("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }, {2, 4}, {2, 4});
  check2("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, {2, 4}, {2, 4});
  check2("add bcast row", [](const Tensor& a, const Tensor& b) { return add(a, b); }, {2, 4}, {4});
  check2("mul bcast col", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, {2, 4}, {2, 1});
  check2("mul bcast scalar", [](const Tensor& a, const Tensor& b) { return mul(a, b); }, {3, 4}, {1});
  check2("matmul", [](const Tensor& a, const Tensor& b) { return matmul(a, b); }, {3, 4}, {4, 2});
  {
    auto fa = [&](Tape*, const std::vector<Tensor>& p) {
      return sum(square(affine(p[0], p[1], p[2])));
    };
    auto ra = grad_check(fa, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng),
                              random_tensor({2}, rng)}, step);
    CHECK(ra.max_rel_err <= tol);
  }
  auto fc = [&](Tape*, const std::vector<Tensor>& p) {
    return sum(square(concat({p[0], p[1]}, -1)));
  };
  auto rc = grad_check(fc, {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}, step);
  CHECK(rc.max_rel_err <= tol);
}

TEST_CASE("grad_check reports the parameter index on a non-finite value") {
  // Finite at the base point, overflows once perturbed by the step.
  auto f = [](Tape*, const std::vector<Tensor>& p) {
    return sum(exp(scale(square(add_const(p[0], -1.0)), 1e10)));
  };
  Tensor base(Shape{1}, {1.0});
  CHECK_THROWS_WITH_AS(grad_check(f, {base}, 1e-3), doctest::Contains("parameter 0"),
                       std::runtime_error);
}

TEST_CASE("backward runs once per tape") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(1.0));
  Tensor loss = square(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}
