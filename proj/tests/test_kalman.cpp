#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kdrf/kalman.hpp"
#include "kdrf/rng.hpp"

using namespace kdrf::kalman;
using kdrf::Rng;

TEST_CASE("predict with identity dynamics leaves the state unchanged") {
  LinearGaussianSystem sys{1.0, 0.0, 1.0, 0.0, 1.0};
  FilterState s{3.7, 0.42};
  auto out = predict(s, sys, 123.0);
  CHECK(out.x == 3.7);
  CHECK(out.p == 0.42);
}

TEST_CASE("predict with linear drift") {
  const double dt = 0.25, v = 4.0;
  LinearGaussianSystem sys{1.0, dt, 1.0, 0.0, 1.0};
  FilterState s{1.0, 0.1};
  auto out = predict(s, sys, v);
  CHECK(out.x == doctest::Approx(1.0 + dt * v));
}

TEST_CASE("predicted covariance: A=2, P=1, Q=0.5 gives 4.5") {
  LinearGaussianSystem sys{2.0, 0.0, 1.0, 0.5, 1.0};
  auto out = predict(FilterState{0.0, 1.0}, sys, 0.0);
  CHECK(out.p == doctest::Approx(4.5).epsilon(1e-15));
}

TEST_CASE("perfect measurement: R = 0, C = 1 gives K = 1 and x = y") {
  LinearGaussianSystem sys{1.0, 0.0, 1.0, 0.0, 0.0};
  auto res = update(FilterState{5.0, 2.0}, sys, -3.0);
  CHECK(res.gain == doctest::Approx(1.0));
  CHECK(res.state.x == doctest::Approx(-3.0));
}

TEST_CASE("perfect prediction: P^- = 0 gives K = 0") {
  LinearGaussianSystem sys{1.0, 0.0, 1.0, 0.0, 0.5};
  auto res = update(FilterState{5.0, 0.0}, sys, 100.0);
  CHECK(res.gain == 0.0);
  CHECK(res.state.x == 5.0);
}

TEST_CASE("balanced case: P^- = R = C = 1 gives K = 0.5, midpoint estimate") {
  LinearGaussianSystem sys{1.0, 0.0, 1.0, 0.0, 1.0};
  auto res = update(FilterState{2.0, 1.0}, sys, 6.0);
  CHECK(res.gain == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(res.state.x == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("zero innovation variance is rejected") {
  LinearGaussianSystem sys{1.0, 0.0, 1.0, 0.0, 0.0};
  CHECK_THROWS_AS(update(FilterState{0.0, 0.0}, sys, 1.0), std::invalid_argument);
}

TEST_CASE("empty sequence leaves the initial state") {
  LinearGaussianSystem sys{1.0, 0.0, 1.0, 0.1, 0.1};
  auto states = filter_sequence(sys, FilterState{1.0, 1.0}, {}, {});
  CHECK(states.empty());
}

TEST_CASE("mismatched sequence lengths are rejected") {
  LinearGaussianSystem sys{1.0, 0.0, 1.0, 0.1, 0.1};
  CHECK_THROWS_AS(filter_sequence(sys, FilterState{}, {1.0}, {}), std::invalid_argument);
}

TEST_CASE("perfect-measurement chain tracks the observations") {
  LinearGaussianSystem sys{0.9, 0.2, 1.0, 0.3, 0.0};
  std::vector<double> u{1, -2, 3, 0.5};
  std::vector<double> y{0.4, -1.1, 2.2, 0.9};
  auto states = filter_sequence(sys, FilterState{0.0, 1.0}, u, y);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(states[i].x == doctest::Approx(y[i]).epsilon(1e-14));
}

TEST_CASE("gain stays in [0,1] and covariance never grows through update") {
  Rng rng(77);
  for (int rep = 0; rep < 200; ++rep) {
    LinearGaussianSystem sys;
    sys.a = rng.uniform(-2, 2);
    sys.b = rng.uniform(-1, 1);
    sys.c = 1.0;
    sys.q = rng.uniform(0, 2);
    sys.r = rng.uniform(0, 2) + 1e-9;
    FilterState s{rng.uniform(-5, 5), rng.uniform(0, 3)};
    auto pred = predict(s, sys, rng.uniform(-1, 1));
    auto res = update(pred, sys, rng.uniform(-5, 5));
    CHECK(res.gain >= 0.0);
    CHECK(res.gain <= 1.0);
    CHECK(res.state.p <= pred.p + 1e-15);
    CHECK(res.state.p >= 0.0);
  }
}

// Exact Gaussian conditioning, computed by the precision form of recursive
// Bayes. Independent of the filter's covariance recursion.
namespace {
struct Gaussian {
  double mean, var;
};
Gaussian bayes_step(const Gaussian& prior, const LinearGaussianSystem& sys, double u, double y) {
  const double mp = sys.a * prior.mean + sys.b * u;
  const double vp = sys.a * sys.a * prior.var + sys.q;
  const double precision = 1.0 / vp + sys.c * sys.c / sys.r;
  const double var = 1.0 / precision;
  const double mean = var * (mp / vp + sys.c * y / sys.r);
  return {mean, var};
}
}  // namespace

TEST_CASE("filter matches exact Gaussian conditioning on random stable systems") {
  Rng rng(2024);
  for (int sys_rep = 0; sys_rep < 20; ++sys_rep) {
    LinearGaussianSystem sys;
    sys.a = rng.uniform(-0.99, 0.99);
    sys.b = rng.uniform(-1, 1);
    sys.c = rng.uniform(0.2, 2.0);
    sys.q = rng.uniform(0.01, 1.0);
    sys.r = rng.uniform(0.01, 1.0);
    FilterState s{rng.uniform(-1, 1), rng.uniform(0.1, 2.0)};
    Gaussian g{s.x, s.p};
    double truth = s.x;
    for (int t = 0; t < 50; ++t) {
      const double u = rng.uniform(-1, 1);
      truth = sys.a * truth + sys.b * u + std::sqrt(sys.q) * rng.normal();
      const double y = sys.c * truth + std::sqrt(sys.r) * rng.normal();
      const auto pred = predict(s, sys, u);
      s = update(pred, sys, y).state;
      g = bayes_step(g, sys, u, y);
      CHECK(std::abs(s.x - g.mean) <= 1e-12);
      CHECK(std::abs(s.p - g.var) <= 1e-12);
    }
  }
}
