#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kdrf/canonical.hpp"
#include "kdrf/model.hpp"

using namespace kdrf;
using ad::Shape;
using ad::Tape;

namespace {
SceneModel micro(std::uint64_t seed = 21) { return make_scene_model(micro_model_config(seed)); }
}

TEST_CASE("colors stay in [0,1] and density stays non-negative") {
  auto m = micro();
  Rng rng(2);
  for (int rep = 0; rep < 30; ++rep) {
    const Vec3 x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    v = v.normalized();
    auto [sigma, color] = query_point(m.store, m.canon, x, rng.uniform(0, 1), v);
    CHECK(sigma >= 0.0);
    for (double c : color) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }
}

TEST_CASE("query_density agrees exactly with query's sigma") {
  auto m = micro(22);
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double t = rng.uniform(0, 1);
    auto [sigma, color] = query_point(m.store, m.canon, x, t, Vec3{0, 0, 1});
    CHECK(query_density_point(m.store, m.canon, x, t) == sigma);
  }
}

TEST_CASE("zero plane features and zero first layer make a constant field") {
  auto m = micro(23);
  for (auto& ids : m.canon.grid.plane_slots) {
    for (int id : ids) std::fill(m.store.slot(id).data->begin(), m.store.slot(id).data->end(), 0.0);
  }
  std::fill(m.store.slot(m.canon.sigma_l1.w).data->begin(),
            m.store.slot(m.canon.sigma_l1.w).data->end(), 0.0);
  const double s1 = query_density_point(m.store, m.canon, {0.3, 0.1, -0.8}, 0.2);
  const double s2 = query_density_point(m.store, m.canon, {-0.7, 0.9, 0.4}, 0.9);
  CHECK(s1 == s2);
}

TEST_CASE("batch evaluation equals pointwise evaluation") {
  auto m = micro(24);
  Rng rng(4);
  const std::int64_t rows = 7;
  std::vector<double> pts(static_cast<std::size_t>(rows) * 3);
  std::vector<double> times(static_cast<std::size_t>(rows));
  for (auto& v : pts) v = rng.uniform(-1.2, 1.2);
  for (auto& v : times) v = rng.uniform(0, 1);
  Binding b(m.store, nullptr);
  Tensor x(Shape{rows, 3}, pts);
  Tensor batch_sigma = query_density(b, m.canon, x, x, times);
  for (std::int64_t r = 0; r < rows; ++r) {
    const Vec3 p{pts[static_cast<std::size_t>(r * 3)], pts[static_cast<std::size_t>(r * 3 + 1)],
                 pts[static_cast<std::size_t>(r * 3 + 2)]};
    CHECK(batch_sigma.flat(r) == doctest::Approx(query_density_point(m.store, m.canon, p, times[static_cast<std::size_t>(r)])).epsilon(1e-14));
  }
}

TEST_CASE("zeroing temporal first-layer weights makes the field time-invariant") {
  auto m = micro(25);
  // temporal encoding occupies the last 11 columns of the sigma input
  auto& w = *m.store.slot(m.canon.sigma_l1.w).data;
  const auto in = static_cast<std::size_t>(m.canon.sigma_l1.in);
  const auto out = static_cast<std::size_t>(m.canon.sigma_l1.out);
  for (std::size_t r = in - 11; r < in; ++r) {
    for (std::size_t c = 0; c < out; ++c) w[r * out + c] = 0.0;
  }
  const Vec3 x{0.4, -0.3, 0.2};
  const double s0 = query_density_point(m.store, m.canon, x, 0.0);
  const double s1 = query_density_point(m.store, m.canon, x, 0.73);
  CHECK(s0 == s1);
}

TEST_CASE("density gradients w.r.t. plane features match finite differences") {
  auto m = micro(26);
  std::vector<double> pts{0.31, -0.42, 0.17, 0.05, 0.66, -0.2};
  std::vector<double> times{0.2, 0.8};

  auto loss_value = [&]() {
    Binding b(m.store, nullptr);
    Tensor x(Shape{2, 3}, pts);
    return ad::sum(query_density(b, m.canon, x, x, times)).value();
  };

  Tape tape;
  Binding b(m.store, &tape);
  Tensor x(Shape{2, 3}, pts);
  tape.backward(ad::sum(query_density(b, m.canon, x, x, times)));

  const double h = 1e-5;
  int checked = 0;
  for (auto& ids : m.canon.grid.plane_slots) {
    for (int id : ids) {
      std::vector<double> dense(m.store.slot(id).data->size(), 0.0);
      auto it = tape.runs_sinks().find(id);
      if (it == tape.runs_sinks().end()) continue;
      for (std::size_t r = 0; r < it->second.starts.size(); ++r) {
        for (std::int64_t f = 0; f < it->second.run_len; ++f) {
          dense[static_cast<std::size_t>(it->second.starts[r] + f)] +=
              it->second.values[r * static_cast<std::size_t>(it->second.run_len) + static_cast<std::size_t>(f)];
        }
      }
      auto& data = *m.store.slot(id).data;
      for (std::size_t j = 0; j < data.size(); j += 5) {
        const double saved = data[j];
        data[j] = saved + h;
        const double fp = loss_value();
        data[j] = saved - h;
        const double fm = loss_value();
        data[j] = saved;
        const double numeric = (fp - fm) / (2 * h);
        CHECK(std::abs(dense[j] - numeric) / std::max(1.0, std::abs(numeric)) <= 1e-4);
        ++checked;
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("prewarp concat flag changes only the raw-coordinate input") {
  auto cfg = micro_model_config(27);
  cfg.concat_prewarp = true;
  auto m = make_scene_model(cfg);
  Binding b(m.store, nullptr);
  std::vector<double> warped{0.3, 0.4, -0.5};
  std::vector<double> raw{0.1, 0.0, -0.2};
  Tensor wt(Shape{1, 3}, warped), rt(Shape{1, 3}, raw);
  // identical warped input, different raw input -> different density
  const double with_raw = query_density(b, m.canon, wt, rt, {0.5}).flat(0);
  const double with_warped = query_density(b, m.canon, wt, wt, {0.5}).flat(0);
  CHECK(with_raw != with_warped);
}
