#include "kdrf/deformation.hpp"

#include <algorithm>
#include <stdexcept>

namespace kdrf {

namespace {

using ad::Shape;

// Gain pre-activations are clamped so the sigmoid stays strictly inside
// (0,1) in double precision (sigmoid(34) < 1 - 2^-52).
constexpr double kGainClamp = 34.0;

Tensor normalize_spatial(const Tensor& x, double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  return ad::scale(ad::add_const(x, -mid), 1.0 / half);
}

Tensor const_column(const std::vector<double>& v) {
  return Tensor(Shape{static_cast<std::int64_t>(v.size()), 1}, v);
}

std::pair<Tensor, Tensor> run_observation(const Binding& b, const DeformationField& f,
                                          const Tensor& input) {
  Tensor h1 = ad::relu(linear(b, f.obs.l1, input));
  Tensor h2 = ad::relu(linear(b, f.obs.l2, h1));
  Tensor out = linear(b, f.obs.head, h2);
  return {ad::slice(out, -1, 0, 3), ad::slice(out, -1, 3, 3)};
}

}  // namespace

int Timeline::index_near(double t) const {
  if (times.empty()) throw std::invalid_argument("empty timeline");
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  if (it == times.end()) return static_cast<int>(times.size()) - 1;
  const auto prev = it - 1;
  const double d_up = *it - t, d_down = t - *prev;
  return d_down <= d_up ? static_cast<int>(prev - times.begin()) : static_cast<int>(it - times.begin());
}

DeformationField make_deformation_field(ParamStore& store, const DeformationConfig& cfg, Rng& rng) {
  DeformationField f;
  f.cfg = cfg;
  const std::int64_t in_dim = 3 * (2 * cfg.pe_freqs + 1) + (2 * cfg.pe_freqs + 1);
  f.obs.l1 = make_linear(store, "obs.l1", in_dim, cfg.width, rng);
  f.obs.l2 = make_linear(store, "obs.l2", cfg.width, cfg.width, rng);
  // Head rows: y must start at exactly zero; the eps head gets a small
  // random start so the gain layer sees signal from step one.
  f.obs.head = make_linear_zero(store, "obs.head", cfg.width, 6);
  {
    auto& w = *store.slot(f.obs.head.w).data;
    for (std::int64_t r = 0; r < cfg.width; ++r) {
      for (std::int64_t c = 3; c < 6; ++c) {
        w[static_cast<std::size_t>(r * 6 + c)] = rng.uniform(-0.01, 0.01);
      }
    }
  }
  f.gain.f = make_linear(store, "gain.f", 8, 3, rng);
  {
    // start the gain near 0.5 with mild sensitivity
    auto& w = *store.slot(f.gain.f.w).data;
    for (auto& v : w) v *= 0.1;
  }
  return f;
}

std::pair<Tensor, Tensor> observe(const Binding& b, const DeformationField& f, const Tensor& x,
                                  const std::vector<double>& times) {
  if (x.rank() != 2 || x.shape()[1] != 3) throw std::invalid_argument("observe expects [B,3] points");
  if (static_cast<std::int64_t>(times.size()) != x.shape()[0]) {
    throw std::invalid_argument("observe: one timestamp per row required");
  }
  Tensor pe_x = positional_encode(normalize_spatial(x, f.cfg.lo, f.cfg.hi), f.cfg.pe_freqs);
  Tensor pe_t = positional_encode(const_column(times), f.cfg.pe_freqs);
  return run_observation(b, f, ad::concat({pe_x, pe_t}, -1));
}

DeformBatch estimate_batch(const Binding& b, const DeformationField& f, const Tensor& x,
                           const std::vector<FrameGroup>& groups, const Timeline& tl) {
  if (x.rank() != 2 || x.shape()[1] != 3) throw std::invalid_argument("estimate expects [B,3] points");
  const std::int64_t rows = x.shape()[0];
  std::int64_t covered = 0;
  int last_frame = -1;
  for (const auto& g : groups) {
    if (g.begin != covered || g.end <= g.begin || g.frame <= last_frame || g.frame >= tl.size()) {
      throw std::invalid_argument("frame groups must ascend and cover the batch");
    }
    covered = g.end;
    last_frame = g.frame;
  }
  if (covered != rows) throw std::invalid_argument("frame groups must cover the batch");

  Tensor pe_x = positional_encode(normalize_spatial(x, f.cfg.lo, f.cfg.hi), f.cfg.pe_freqs);

  // Row ranges needing one / two predecessor frames (suffixes: groups ascend).
  std::int64_t start1 = rows, start2 = rows;
  for (const auto& g : groups) {
    if (g.frame >= 1) start1 = std::min(start1, g.begin);
    if (g.frame >= 2) start2 = std::min(start2, g.begin);
  }
  const std::int64_t b1 = rows - start1, b2 = rows - start2;

  std::vector<double> t_cur(static_cast<std::size_t>(rows));
  std::vector<double> t_prev_full(static_cast<std::size_t>(rows));  // frame-0 rows reuse t_i
  std::vector<double> t_prev(static_cast<std::size_t>(b1));
  std::vector<double> t_prev2(static_cast<std::size_t>(b2));
  for (const auto& g : groups) {
    for (std::int64_t r = g.begin; r < g.end; ++r) {
      const double ti = tl.at(g.frame);
      t_cur[static_cast<std::size_t>(r)] = ti;
      t_prev_full[static_cast<std::size_t>(r)] = g.frame >= 1 ? tl.at(g.frame - 1) : ti;
      if (g.frame >= 1) t_prev[static_cast<std::size_t>(r - start1)] = tl.at(g.frame - 1);
      if (g.frame >= 2) t_prev2[static_cast<std::size_t>(r - start2)] = tl.at(g.frame - 2);
    }
  }

  // One stacked observation pass: current rows, then the one-back suffix,
  // then the two-back suffix.
  std::vector<Tensor> stacked_parts;
  stacked_parts.push_back(ad::concat({pe_x, positional_encode(const_column(t_cur), f.cfg.pe_freqs)}, -1));
  if (b1 > 0) {
    stacked_parts.push_back(ad::concat(
        {ad::slice(pe_x, 0, start1, b1), positional_encode(const_column(t_prev), f.cfg.pe_freqs)}, -1));
  }
  if (b2 > 0) {
    stacked_parts.push_back(ad::concat(
        {ad::slice(pe_x, 0, start2, b2), positional_encode(const_column(t_prev2), f.cfg.pe_freqs)}, -1));
  }
  Tensor stacked = stacked_parts.size() == 1 ? stacked_parts[0] : ad::concat(stacked_parts, 0);
  auto [y_all, eps_all] = run_observation(b, f, stacked);

  DeformBatch out;
  out.y = ad::slice(y_all, 0, 0, rows);
  out.eps = ad::slice(eps_all, 0, 0, rows);
  Tensor y_prev, eps_prev_pass, y_prev2;
  if (b1 > 0) {
    y_prev = ad::slice(y_all, 0, rows, b1);
    eps_prev_pass = ad::slice(eps_all, 0, rows, b1);
  }
  if (b2 > 0) y_prev2 = ad::slice(y_all, 0, rows + b1, b2);

  if (!f.cfg.enable_prediction) {
    out.pred = Tensor::zeros(Shape{rows, 3});
    out.gain = Tensor::full(Shape{rows, 3}, 1.0);
    out.eps_prev = out.eps;
    out.fused = out.y;
    out.warped = ad::add(x, out.fused);
    return out;
  }

  // Prediction branch: 0 for frame 0, constant extrapolation for frame 1,
  // 2*y(t_{i-1}) - y(t_{i-2}) beyond.
  std::vector<Tensor> pred_parts;
  if (start1 > 0) pred_parts.push_back(Tensor::zeros(Shape{start1, 3}));
  if (start2 > start1) pred_parts.push_back(ad::slice(y_prev, 0, 0, start2 - start1));
  if (b2 > 0) {
    Tensor y_prev_tail = ad::slice(y_prev, 0, start2 - start1, b2);
    pred_parts.push_back(ad::sub(ad::scale(y_prev_tail, 2.0), y_prev2));
  }
  out.pred = pred_parts.size() == 1 ? pred_parts[0] : ad::concat(pred_parts, 0);
  if (f.cfg.stopgrad_prediction) out.pred = ad::detach(out.pred);

  // eps_{i-1}: frame-0 rows fall back to eps_i.
  if (b1 == 0) {
    out.eps_prev = out.eps;
  } else if (start1 == 0) {
    out.eps_prev = eps_prev_pass;
  } else {
    out.eps_prev = ad::concat({ad::slice(out.eps, 0, 0, start1), eps_prev_pass}, 0);
  }

  Tensor gain_in = ad::concat({out.eps, out.eps_prev, const_column(t_cur), const_column(t_prev_full)}, -1);
  Tensor k = ad::sigmoid(ad::clamp(linear(b, f.gain.f, gain_in), -kGainClamp, kGainClamp));
  if (start1 > 0) {
    // Frame 0 has no prediction to fuse: the gain is forced to one.
    Tensor ones = Tensor::full(Shape{start1, 3}, 1.0);
    k = (start1 == rows) ? ones : ad::concat({ones, ad::slice(k, 0, start1, b1)}, 0);
  }
  out.gain = k;

  out.fused = ad::add(out.pred, ad::mul(out.gain, ad::sub(out.y, out.pred)));
  out.warped = ad::add(x, out.fused);
  return out;
}

namespace {

Vec3 row_to_vec(const Tensor& t) { return {t.flat(0), t.flat(1), t.flat(2)}; }

}  // namespace

std::pair<Vec3, Vec3> observe_point(const ParamStore& store, const DeformationField& f, const Vec3& x,
                                    double t) {
  Binding b(store, nullptr);
  auto [y, eps] = observe(b, f, Tensor(Shape{1, 3}, {x.x, x.y, x.z}), {t});
  return {row_to_vec(y), row_to_vec(eps)};
}

Vec3 predict_deformation(const ParamStore& store, const DeformationField& f, const Vec3& x, int frame,
                         const Timeline& tl) {
  return estimate_point(store, f, x, frame, tl).pred;
}

DeformationEstimate estimate_point(const ParamStore& store, const DeformationField& f, const Vec3& x,
                                   int frame, const Timeline& tl) {
  Binding b(store, nullptr);
  auto batch = estimate_batch(b, f, Tensor(Shape{1, 3}, {x.x, x.y, x.z}),
                              {FrameGroup{0, 1, frame}}, tl);
  DeformationEstimate e;
  e.y = row_to_vec(batch.y);
  e.eps_i = row_to_vec(batch.eps);
  e.eps_prev = row_to_vec(batch.eps_prev);
  e.pred = row_to_vec(batch.pred);
  e.gain = row_to_vec(batch.gain);
  e.fused = row_to_vec(batch.fused);
  return e;
}

}  // namespace kdrf
