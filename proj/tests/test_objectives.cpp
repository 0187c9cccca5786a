#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kdrf/objectives.hpp"
#include "kdrf/rng.hpp"

using namespace kdrf;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

TEST_CASE("image loss of identical batches is zero") {
  Tensor a(Shape{4, 3}, std::vector<double>(12, 0.37));
  CHECK(image_loss(a, a).value() == 0.0);
}

TEST_CASE("image loss averages over rays and channels") {
  // constant offset of 0.1 per channel -> 0.01
  std::vector<double> p(12, 0.5), g(12, 0.4);
  Tensor pred(Shape{4, 3}, p), gt(Shape{4, 3}, g);
  CHECK(image_loss(pred, gt).value() == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("image loss rejects mismatched batches") {
  Tensor a(Shape{4, 3}, std::vector<double>(12, 0.1));
  Tensor b(Shape{3, 3}, std::vector<double>(9, 0.1));
  CHECK_THROWS_AS(image_loss(a, b), std::invalid_argument);
}

TEST_CASE("one image-loss gradient step reduces the loss") {
  Rng rng(3);
  std::vector<double> pv(12), gv(12);
  for (auto& v : pv) v = rng.uniform(0, 1);
  for (auto& v : gv) v = rng.uniform(0, 1);
  Tape tape;
  Tensor pred = tape.leaf(Tensor(Shape{4, 3}, pv));
  Tensor gt(Shape{4, 3}, gv);
  Tensor loss = image_loss(pred, gt);
  tape.backward(loss);
  auto grad = tape.grad_or_zeros(pred);
  std::vector<double> stepped(pv);
  for (std::size_t i = 0; i < stepped.size(); ++i) stepped[i] -= 0.1 * grad[i];
  const double after = image_loss(Tensor(Shape{4, 3}, stepped), gt).value();
  CHECK(after < loss.value());
}

TEST_CASE("kf loss vanishes when observation equals the estimate") {
  Tensor y(Shape{5, 3}, std::vector<double>(15, 0.21));
  CHECK(kf_loss(y, y).value() == 0.0);
}

TEST_CASE("kf loss of a unit residual is one") {
  Tensor y(Shape{1, 3}, {1.0, 0.0, 0.0});
  Tensor fused(Shape{1, 3}, {0.0, 0.0, 0.0});
  CHECK(kf_loss(y, fused).value() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("kf loss matches a loop-computed mean over random records") {
  Rng rng(4);
  const std::int64_t n = 100;
  std::vector<double> yv(static_cast<std::size_t>(n) * 3), fv(static_cast<std::size_t>(n) * 3);
  for (auto& v : yv) v = rng.uniform(-1, 1);
  for (auto& v : fv) v = rng.uniform(-1, 1);
  double expect = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double sq = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = yv[static_cast<std::size_t>(i * 3 + c)] - fv[static_cast<std::size_t>(i * 3 + c)];
      sq += d * d;
    }
    expect += sq;
  }
  expect /= static_cast<double>(n);
  CHECK(kf_loss(Tensor(Shape{n, 3}, yv), Tensor(Shape{n, 3}, fv)).value() ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("kf loss sends no gradient into the fused estimate") {
  Tape tape;
  Tensor y = tape.leaf(Tensor(Shape{2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
  Tensor fused = tape.leaf(Tensor(Shape{2, 3}, {0.6, 0.5, 0.4, 0.3, 0.2, 0.1}));
  tape.backward(kf_loss(y, fused));
  CHECK_FALSE(tape.grad(y).empty());
  CHECK(tape.grad(fused).empty());  // detached-target contract
}

TEST_CASE("canonical loss: squared-norm value and the L1 variant") {
  Tensor fused(Shape{2, 3}, {0.2, 0, 0, 0.2, 0, 0});
  CHECK(canonical_observation_loss(fused).value() == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(canonical_observation_loss(fused, true).value() == doctest::Approx(0.2).epsilon(1e-12));
  Tensor zero(Shape{4, 3}, std::vector<double>(12, 0.0));
  CHECK(canonical_observation_loss(zero).value() == 0.0);
}

TEST_CASE("histogram cover agrees with a brute-force overlap computation") {
  Rng rng(5);
  const std::int64_t R = 3, n = 6, m = 4;
  std::vector<double> wp(static_cast<std::size_t>(R * n));
  for (auto& v : wp) v = rng.uniform(0, 0.3);
  std::vector<double> pb, fb;
  for (std::int64_t r = 0; r < R; ++r) {
    double at = 2.0;
    pb.push_back(at);
    for (std::int64_t k = 0; k < n; ++k) pb.push_back(at += rng.uniform(0.1, 0.6));
    const double far = at;
    fb.push_back(2.0);
    double ft = 2.0;
    for (std::int64_t j = 1; j < m; ++j) fb.push_back(ft += (far - 2.0) * rng.uniform(0.05, 0.3));
    fb.push_back(far);
    // fix any overshoot: clamp into (2, far) increasing
    for (std::size_t j = static_cast<std::size_t>(r * (m + 1)) + 1; j < static_cast<std::size_t>((r + 1) * (m + 1)); ++j) {
      fb[j] = std::min(fb[j], far);
      fb[j] = std::max(fb[j], fb[j - 1]);
    }
  }
  Tensor cover = histogram_cover(Tensor(Shape{R, n}, wp), pb, fb, m);

  for (std::int64_t r = 0; r < R; ++r) {
    for (std::int64_t j = 0; j < m; ++j) {
      double expect = 0;
      for (std::int64_t k = 0; k < n; ++k) {
        const double lo = std::max(pb[static_cast<std::size_t>(r * (n + 1) + k)], fb[static_cast<std::size_t>(r * (m + 1) + j)]);
        const double hi = std::min(pb[static_cast<std::size_t>(r * (n + 1) + k + 1)], fb[static_cast<std::size_t>(r * (m + 1) + j + 1)]);
        const double width = pb[static_cast<std::size_t>(r * (n + 1) + k + 1)] - pb[static_cast<std::size_t>(r * (n + 1) + k)];
        if (hi > lo && width > 0) expect += (hi - lo) / width * wp[static_cast<std::size_t>(r * n + k)];
      }
      CHECK(cover.flat(r * m + j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("proposal loss is zero when proposal mass dominates") {
  // one ray, aligned bins, proposal weight well above the final weight
  std::vector<double> pb{0, 1, 2, 3, 4};
  std::vector<double> fb{0, 1, 2, 3, 4};
  Tensor wp(Shape{1, 4}, {0.5, 0.5, 0.5, 0.5});
  Tensor wf(Shape{1, 4}, {0.1, 0.2, 0.3, 0.4});
  CHECK(proposal_loss(wp, pb, wf, fb).value() == 0.0);
}

TEST_CASE("an uncovered final bin is penalized by its squared deficit") {
  std::vector<double> pb{0, 1, 2};
  std::vector<double> fb{0, 1, 2};
  Tensor wp(Shape{1, 2}, {0.0, 0.0});
  Tensor wf(Shape{1, 2}, {0.5, 0.0});
  CHECK(proposal_loss(wp, pb, wf, fb).value() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("proposal loss sends gradient only into the proposal weights") {
  Tape tape;
  Tensor wp = tape.leaf(Tensor(Shape{1, 2}, {0.1, 0.2}));
  Tensor wf = tape.leaf(Tensor(Shape{1, 2}, {0.5, 0.4}));
  std::vector<double> pb{0, 1, 2}, fb{0, 1, 2};
  tape.backward(proposal_loss(wp, pb, wf, fb));
  CHECK_FALSE(tape.grad(wp).empty());
  CHECK(tape.grad(wf).empty());
}

TEST_CASE("loss gradients match central finite differences") {
  Rng rng(6);
  const std::int64_t n = 4;
  std::vector<double> yv(static_cast<std::size_t>(n) * 3);
  for (auto& v : yv) v = rng.uniform(-0.5, 0.5);

  auto value = [&](const std::vector<double>& v) {
    Tensor y(Shape{n, 3}, v);
    Tensor gt(Shape{n, 3}, std::vector<double>(static_cast<std::size_t>(n) * 3, 0.1));
    return image_loss(ad::sigmoid(y), gt).value() + canonical_observation_loss(y).value();
  };
  Tape tape;
  Tensor y = tape.leaf(Tensor(Shape{n, 3}, yv));
  {
    Tensor gt(Shape{n, 3}, std::vector<double>(static_cast<std::size_t>(n) * 3, 0.1));
    tape.backward(ad::add(image_loss(ad::sigmoid(y), gt), canonical_observation_loss(y)));
  }
  auto analytic = tape.grad_or_zeros(y);
  const double h = 1e-6;
  for (std::size_t j = 0; j < yv.size(); ++j) {
    const double saved = yv[j];
    yv[j] = saved + h;
    const double fp = value(yv);
    yv[j] = saved - h;
    const double fm = value(yv);
    yv[j] = saved;
    const double numeric = (fp - fm) / (2 * h);
    CHECK(std::abs(analytic[j] - numeric) / std::max(1.0, std::abs(numeric)) <= 1e-4);
  }
}

TEST_CASE("losses are non-negative and finite on random inputs") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.next_below(6));
    std::vector<double> a(static_cast<std::size_t>(n) * 3), b(static_cast<std::size_t>(n) * 3);
    for (auto& v : a) v = rng.uniform(0, 1);
    for (auto& v : b) v = rng.uniform(0, 1);
    Tensor ta(Shape{n, 3}, a), tb(Shape{n, 3}, b);
    CHECK(image_loss(ta, tb).value() >= 0.0);
    CHECK(kf_loss(ta, tb).value() >= 0.0);
    CHECK(canonical_observation_loss(ta).value() >= 0.0);
    CHECK(std::isfinite(image_loss(ta, tb).value()));
  }
}
