#include "kdrf/gradsuite.hpp"

#include <cmath>

#include "kdrf/objectives.hpp"
#include "kdrf/renderer.hpp"
#include "kdrf/threadpool.hpp"

namespace kdrf {

namespace {

using ad::Shape;

struct PipelineFixture {
  ModelConfig model_cfg;
  Timeline timeline;
  std::vector<Ray> rays;
  std::vector<double> gt;  // one RGB row per ray
  SamplingConfig sampling{6, 6, false};
  Color3 background{1, 1, 1};
};

PipelineFixture make_fixture(std::uint64_t seed, int n_rays) {
  PipelineFixture fx;
  fx.model_cfg = micro_model_config(seed);
  fx.timeline.times = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};

  Rng rng(seed ^ 0x5eed);
  for (int i = 0; i < n_rays; ++i) {
    const int frame = i % fx.timeline.size();
    const double az = rng.uniform(0.0, 6.28), el = rng.uniform(0.4, 1.0);
    const Vec3 eye{2.2 * std::cos(el) * std::cos(az), 2.2 * std::cos(el) * std::sin(az),
                   2.2 * std::sin(el)};
    const Mat4 pose = look_at(eye, {0, 0, 0}, {0, 0, 1});
    const int px = static_cast<int>(rng.next_below(8)), py = static_cast<int>(rng.next_below(8));
    auto r = generate_rays(pose, 0.8, 8, 8, {{{px, py}}}, fx.timeline.at(frame), 1.0, 3.6);
    r[0].frame = frame;
    fx.rays.push_back(r[0]);
    for (int c = 0; c < 3; ++c) fx.gt.push_back(rng.uniform(0.0, 1.0));
  }
  std::stable_sort(fx.rays.begin(), fx.rays.end(),
                   [](const Ray& a, const Ray& b) { return a.frame < b.frame; });
  return fx;
}

// Detach-free objective: image + canonical + tv. Proposal parameters do not
// influence it (fine samples are stratified here).
Tensor main_objective(const Binding& b, const SceneModel& model, const PipelineFixture& fx) {
  auto res = render_rays(b, model, fx.timeline, fx.rays, fx.sampling, fx.background, nullptr);
  Tensor gt(Shape{static_cast<std::int64_t>(fx.rays.size()), 3}, fx.gt);
  Tensor loss = image_loss(res.colors, gt);
  if (res.t0_rows > 0) {
    loss = ad::add(loss, canonical_observation_loss(ad::slice(res.deform.fused, 0, 0, res.t0_rows)));
  }
  return ad::add(loss, ad::scale(tv_loss(b, model.canon.grid), LossReport::kLambdaTv));
}

// Proposal-only objective against frozen final weights.
Tensor proposal_objective(const Binding& b, const SceneModel& model, const PipelineFixture& fx,
                          const Tensor& frozen_fine_w, const std::vector<double>& prop_bounds,
                          const std::vector<double>& fine_bounds) {
  const auto n_rays = static_cast<std::int64_t>(fx.rays.size());
  const int n_prop = fx.sampling.n_proposal;
  std::vector<double> pts(static_cast<std::size_t>(n_rays * n_prop) * 3);
  std::vector<double> delta(static_cast<std::size_t>(n_rays * n_prop));
  std::vector<double> times(static_cast<std::size_t>(n_rays * n_prop));
  for (std::int64_t r = 0; r < n_rays; ++r) {
    const Ray& ray = fx.rays[static_cast<std::size_t>(r)];
    const double* bounds = prop_bounds.data() + r * (n_prop + 1);
    for (int k = 0; k < n_prop; ++k) {
      const double mid = 0.5 * (bounds[k] + bounds[k + 1]);
      const Vec3 p = ray.origin + ray.dir * mid;
      const std::int64_t row = r * n_prop + k;
      pts[static_cast<std::size_t>(row * 3 + 0)] = p.x;
      pts[static_cast<std::size_t>(row * 3 + 1)] = p.y;
      pts[static_cast<std::size_t>(row * 3 + 2)] = p.z;
      delta[static_cast<std::size_t>(row)] = bounds[k + 1] - bounds[k];
      times[static_cast<std::size_t>(row)] = ray.time;
    }
  }
  Tensor sigma = proposal_density(b, model.proposal, Tensor(Shape{n_rays * n_prop, 3}, pts), times);
  auto w = weights_from_sigma(ad::reshape(sigma, Shape{n_rays, n_prop}),
                              Tensor(Shape{n_rays, n_prop}, delta));
  return proposal_loss(w.w, prop_bounds, frozen_fine_w, fine_bounds);
}

struct SlotGrads {
  std::vector<std::vector<double>> g;  // per slot (dense, may be empty)
};

template <typename MakeLoss>
SlotGrads analytic_grads(const SceneModel& model, MakeLoss&& make_loss) {
  Tape tape;
  Binding b(model.store, &tape);
  Tensor loss = make_loss(b);
  tape.backward(loss);
  SlotGrads out;
  out.g.resize(model.store.count());
  for (std::size_t sl = 0; sl < model.store.count(); ++sl) {
    const auto& slot = model.store.slot(static_cast<int>(sl));
    if (slot.kind == ParamStore::Kind::kDense) {
      auto g = tape.grad(b[static_cast<int>(sl)]);
      if (!g.empty()) out.g[sl].assign(g.begin(), g.end());
    } else {
      std::vector<double> dense(static_cast<std::size_t>(slot.size()), 0.0);
      bool touched = false;
      auto runs_it = tape.runs_sinks().find(static_cast<int>(sl));
      if (runs_it != tape.runs_sinks().end()) {
        touched = true;
        const auto& runs = runs_it->second;
        for (std::size_t r = 0; r < runs.starts.size(); ++r) {
          const double* src = runs.values.data() + r * static_cast<std::size_t>(runs.run_len);
          double* dst = dense.data() + runs.starts[r];
          for (std::int64_t f = 0; f < runs.run_len; ++f) dst[f] += src[f];
        }
      }
      auto dense_it = tape.dense_sinks().find(static_cast<int>(sl));
      if (dense_it != tape.dense_sinks().end()) {
        touched = true;
        for (std::size_t i = 0; i < dense.size(); ++i) dense[i] += dense_it->second[i];
      }
      if (touched) out.g[sl] = std::move(dense);
    }
  }
  return out;
}

}  // namespace

PipelineCheckReport full_pipeline_gradcheck(std::uint64_t seed, int n_rays, double fd_step,
                                            ThreadPool* pool) {
  PipelineFixture fx = make_fixture(seed, n_rays);
  SceneModel model = make_scene_model(fx.model_cfg);

  // Frozen sampling geometry and final weights for the proposal objective.
  std::vector<double> prop_bounds, fine_bounds;
  Tensor frozen_fine_w;
  {
    Binding b(model.store, nullptr);
    auto res = render_rays(b, model, fx.timeline, fx.rays, fx.sampling, fx.background, nullptr);
    prop_bounds = res.prop_bounds;
    fine_bounds = res.fine_bounds;
    frozen_fine_w = ad::detach(res.fine_weights);
  }

  auto main_loss = [&](const Binding& b) { return main_objective(b, model, fx); };
  auto prop_loss_fn = [&](const Binding& b) {
    return proposal_objective(b, model, fx, frozen_fine_w, prop_bounds, fine_bounds);
  };
  const SlotGrads g_main = analytic_grads(model, main_loss);
  const SlotGrads g_prop = analytic_grads(model, prop_loss_fn);

  const std::vector<double> theta = model.store.flatten();
  PipelineCheckReport report;
  std::vector<PipelineCheckReport> per_slot(model.store.count());

  auto check_slot = [&](int sl) {
    const auto& slot = model.store.slot(sl);
    const bool is_prop = slot.name.rfind("prop.", 0) == 0;
    const auto& analytic = is_prop ? g_prop.g[static_cast<std::size_t>(sl)] : g_main.g[static_cast<std::size_t>(sl)];

    // Worker-local model clone so parameter probes never race.
    SceneModel clone = make_scene_model(fx.model_cfg);
    clone.store.unflatten(theta);
    auto eval = [&]() {
      Binding b(clone.store, nullptr);
      return is_prop ? proposal_objective(b, clone, fx, frozen_fine_w, prop_bounds, fine_bounds).value()
                     : main_objective(b, clone, fx).value();
    };

    auto& data = *clone.store.slot(sl).data;
    auto& rep = per_slot[static_cast<std::size_t>(sl)];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + fd_step;
      const double fp = eval();
      data[j] = saved - fd_step;
      const double fm = eval();
      data[j] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("non-finite pipeline value at parameter " + slot.name + "[" +
                                 std::to_string(j) + "]");
      }
      const double numeric = (fp - fm) / (2.0 * fd_step);
      const double a = analytic.empty() ? 0.0 : analytic[j];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      rep.params_checked++;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_param = slot.name + "[" + std::to_string(j) + "]";
      }
    }
  };

  const int n_slots = static_cast<int>(model.store.count());
  if (pool != nullptr) pool->run(n_slots, check_slot);
  else for (int sl = 0; sl < n_slots; ++sl) check_slot(sl);

  for (const auto& rep : per_slot) {
    report.params_checked += rep.params_checked;
    if (rep.max_rel_err > report.max_rel_err) {
      report.max_rel_err = rep.max_rel_err;
      report.worst_param = rep.worst_param;
    }
  }
  return report;
}

}  // namespace kdrf
