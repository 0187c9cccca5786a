#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kdrf/deformation.hpp"
#include "kdrf/model.hpp"

using namespace kdrf;
using ad::Shape;
using ad::Tape;

namespace {

SceneModel micro(std::uint64_t seed = 11) { return make_scene_model(micro_model_config(seed)); }

Timeline uniform_timeline(int n) {
  Timeline tl;
  for (int i = 0; i < n; ++i) tl.times.push_back(static_cast<double>(i) / (n - 1));
  return tl;
}

}  // namespace

TEST_CASE("observation is zero everywhere at initialization") {
  auto m = micro();
  Rng rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto [y, eps] = observe_point(m.store, m.deform, x, rng.uniform(0, 1));
    CHECK(y.x == 0.0);
    CHECK(y.y == 0.0);
    CHECK(y.z == 0.0);
  }
}

TEST_CASE("identical inputs give identical observations") {
  auto m = micro(3);
  // nudge the head away from zero so the check is non-trivial
  for (auto& v : *m.store.slot(m.deform.obs.head.w).data) v = 0.01;
  auto a = observe_point(m.store, m.deform, {0.3, -0.2, 0.5}, 0.4);
  auto b = observe_point(m.store, m.deform, {0.3, -0.2, 0.5}, 0.4);
  CHECK(a.first.x == b.first.x);
  CHECK(a.second.z == b.second.z);
}

TEST_CASE("prediction base cases: frames 0 and 1") {
  auto m = micro(4);
  for (auto& v : *m.store.slot(m.deform.obs.head.w).data) v = 0.02;
  Timeline tl = uniform_timeline(4);
  const Vec3 x{0.2, 0.1, -0.3};
  CHECK(predict_deformation(m.store, m.deform, x, 0, tl).x == 0.0);
  // frame 1: constant extrapolation equals the observation at t0
  const Vec3 pred1 = predict_deformation(m.store, m.deform, x, 1, tl);
  auto [y0, e0] = observe_point(m.store, m.deform, x, tl.at(0));
  CHECK(pred1.x == doctest::Approx(y0.x).epsilon(1e-15));
  CHECK(pred1.y == doctest::Approx(y0.y).epsilon(1e-15));
}

TEST_CASE("static observations predict themselves") {
  auto m = micro(5);
  // output depends on x only: zero the weights attached to the temporal
  // encoding (the trailing 11 input columns)
  {
    auto& w = *m.store.slot(m.deform.obs.l1.w).data;
    const auto in = static_cast<std::size_t>(m.deform.obs.l1.in);
    const auto out = static_cast<std::size_t>(m.deform.obs.l1.out);
    for (std::size_t r = in - 11; r < in; ++r) {
      for (std::size_t c = 0; c < out; ++c) w[r * out + c] = 0.0;
    }
  }
  for (auto& v : *m.store.slot(m.deform.obs.head.w).data) v = 0.05;
  Timeline tl = uniform_timeline(5);
  const Vec3 x{-0.4, 0.25, 0.6};
  auto e = estimate_point(m.store, m.deform, x, 3, tl);
  CHECK(e.pred.x == doctest::Approx(e.y.x).epsilon(1e-12));
  CHECK(e.pred.y == doctest::Approx(e.y.y).epsilon(1e-12));
  CHECK(e.pred.z == doctest::Approx(e.y.z).epsilon(1e-12));
}

namespace {

// Makes the y head an exact affine function of t: u + w * t per component.
// Every hidden unit is kept in its linear region over t in [0,1], and all
// positional-encoding channels except the raw t column get zero weight.
void make_affine_in_t(SceneModel& m, const Vec3& base, const Vec3& slope) {
  auto zero = [&](int slot) {
    std::fill(m.store.slot(slot).data->begin(), m.store.slot(slot).data->end(), 0.0);
  };
  zero(m.deform.obs.l1.w);
  zero(m.deform.obs.l1.b);
  zero(m.deform.obs.l2.w);
  zero(m.deform.obs.l2.b);
  zero(m.deform.obs.head.w);
  zero(m.deform.obs.head.b);

  const auto w1_out = static_cast<std::size_t>(m.deform.obs.l1.out);
  // raw t is the first temporal input column (index 33 with L=5)
  auto& w1 = *m.store.slot(m.deform.obs.l1.w).data;
  auto& b1 = *m.store.slot(m.deform.obs.l1.b).data;
  w1[33 * w1_out + 0] = 1.0;  // h1_0 = relu(t + 2) stays linear for t in [0,1]
  b1[0] = 2.0;

  auto& w2 = *m.store.slot(m.deform.obs.l2.w).data;
  auto& b2 = *m.store.slot(m.deform.obs.l2.b).data;
  const auto w2_out = static_cast<std::size_t>(m.deform.obs.l2.out);
  w2[0 * w2_out + 0] = 1.0;  // h2_0 = relu(h1_0) = t + 2
  b2[1] = 1.0;               // h2_1 = 1 (constant unit)

  auto& wh = *m.store.slot(m.deform.obs.head.w).data;
  const double slopes[3] = {slope.x, slope.y, slope.z};
  const double bases[3] = {base.x, base.y, base.z};
  for (int c = 0; c < 3; ++c) {
    wh[0 * 6 + static_cast<std::size_t>(c)] = slopes[c];                      // slope * (t + 2)
    wh[1 * 6 + static_cast<std::size_t>(c)] = bases[c] - 2.0 * slopes[c];     // cancel the +2 shift
  }
}

}  // namespace

TEST_CASE("prediction is exact for an observation affine in t on uniform frames") {
  auto m = micro(6);
  make_affine_in_t(m, {2.0, -0.5, 0.1}, {3.0, 1.25, -0.75});
  Timeline tl;
  tl.times = {0.0, 0.1, 0.2};
  const Vec3 x{0.3, -0.1, 0.8};

  auto [y2, e2] = observe_point(m.store, m.deform, x, 0.2);
  CHECK(y2.x == doctest::Approx(2.0 + 3.0 * 0.2).epsilon(1e-12));
  const Vec3 pred = predict_deformation(m.store, m.deform, x, 2, tl);
  // second-difference identity: 2*y(0.1) - y(0.0) = y(0.2) for affine y
  CHECK(std::abs(pred.x - y2.x) <= 1e-10);
  CHECK(std::abs(pred.y - y2.y) <= 1e-10);
  CHECK(std::abs(pred.z - y2.z) <= 1e-10);
}

TEST_CASE("fusion arithmetic: forced gains reproduce the branches") {
  // K = 0.5, y = (1,0,0), pred = 0 -> fused = (0.5, 0, 0)
  const Vec3 y{1, 0, 0}, pred{0, 0, 0};
  const double k = 0.5;
  const Vec3 fused = pred + (y - pred) * k;
  CHECK(fused.x == 0.5);
  CHECK(fused.y == 0.0);
}

TEST_CASE("batched fusion identity holds exactly") {
  auto m = micro(7);
  for (auto& v : *m.store.slot(m.deform.obs.head.w).data) v = 0.03;
  Timeline tl = uniform_timeline(6);
  Rng rng(9);
  const std::int64_t rows = 24;
  std::vector<double> pts(static_cast<std::size_t>(rows) * 3);
  for (auto& v : pts) v = rng.uniform(-1, 1);
  std::vector<FrameGroup> groups{{0, 8, 0}, {8, 14, 1}, {14, 24, 4}};
  Binding b(m.store, nullptr);
  auto batch = estimate_batch(b, m.deform, Tensor(Shape{rows, 3}, pts), groups, tl);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double y = batch.y.flat(r * 3 + c);
      const double pred = batch.pred.flat(r * 3 + c);
      const double k = batch.gain.flat(r * 3 + c);
      const double fused = batch.fused.flat(r * 3 + c);
      CHECK(fused == pred + k * (y - pred));  // bit-exact record identity
      CHECK(k > 0.0);
      CHECK(k <= 1.0);
    }
  }
  // frame-0 rows: gain forced to one, fused equals the observation bit-exactly
  for (std::int64_t r = 0; r < 8; ++r) {
    for (int c = 0; c < 3; ++c) {
      CHECK(batch.gain.flat(r * 3 + c) == 1.0);
      CHECK(batch.fused.flat(r * 3 + c) == batch.y.flat(r * 3 + c));
      CHECK(batch.pred.flat(r * 3 + c) == 0.0);
    }
  }
  // later rows: learned gain strictly inside (0,1)
  for (std::int64_t r = 8; r < rows; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double k = batch.gain.flat(r * 3 + c);
      CHECK(k > 0.0);
      CHECK(k < 1.0);
    }
  }
}

TEST_CASE("identity warp at initialization") {
  auto m = micro(8);
  Timeline tl = uniform_timeline(4);
  Rng rng(2);
  for (int rep = 0; rep < 8; ++rep) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const int frame = static_cast<int>(rng.next_below(4));
    auto e = estimate_point(m.store, m.deform, x, frame, tl);
    CHECK(e.fused.x == 0.0);
    CHECK(e.fused.y == 0.0);
    CHECK(e.fused.z == 0.0);
  }
}

TEST_CASE("disabled prediction branch collapses to the observation") {
  auto cfg = micro_model_config(12);
  cfg.enable_prediction = false;
  auto m = make_scene_model(cfg);
  for (auto& v : *m.store.slot(m.deform.obs.head.w).data) v = 0.05;
  Timeline tl = uniform_timeline(4);
  auto e = estimate_point(m.store, m.deform, {0.1, 0.2, 0.3}, 3, tl);
  CHECK(e.fused.x == e.y.x);
  CHECK(e.gain.x == 1.0);
  CHECK(e.pred.x == 0.0);
}

TEST_CASE("observation gradients match finite differences") {
  auto m = micro(13);
  for (auto& v : *m.store.slot(m.deform.obs.head.w).data) v = 0.05;
  Rng rng(3);
  std::vector<double> pts{0.2, -0.4, 0.1, -0.6, 0.3, 0.9};
  std::vector<double> times{0.25, 0.75};

  auto loss_value = [&]() {
    Binding b(m.store, nullptr);
    auto [y, eps] = observe(b, m.deform, Tensor(Shape{2, 3}, pts), times);
    return ad::sum(ad::square(y)).value();
  };

  Tape tape;
  Binding b(m.store, &tape);
  auto [y, eps] = observe(b, m.deform, Tensor(Shape{2, 3}, pts), times);
  tape.backward(ad::sum(ad::square(y)));

  const double h = 1e-5;
  for (int slot : {m.deform.obs.l1.w, m.deform.obs.l2.w, m.deform.obs.head.w, m.deform.obs.l1.b}) {
    auto analytic = tape.grad_or_zeros(b[slot]);
    auto& data = *m.store.slot(slot).data;
    for (std::size_t j = 0; j < data.size(); j += 7) {
      const double saved = data[j];
      data[j] = saved + h;
      const double fp = loss_value();
      data[j] = saved - h;
      const double fm = loss_value();
      data[j] = saved;
      const double numeric = (fp - fm) / (2 * h);
      CHECK(std::abs(analytic[j] - numeric) / std::max(1.0, std::abs(numeric)) <= 1e-4);
    }
  }
}

TEST_CASE("timeline nearest-index lookup") {
  Timeline tl;
  tl.times = {0.0, 0.25, 0.5, 1.0};
  CHECK(tl.index_near(0.0) == 0);
  CHECK(tl.index_near(0.24) == 1);
  CHECK(tl.index_near(0.37) == 1);  // tie resolves to the earlier frame
  CHECK(tl.index_near(0.38) == 2);
  CHECK(tl.index_near(2.0) == 3);
}
