#include "kdrf/canonical.hpp"

#include <stdexcept>

namespace kdrf {

namespace {

using ad::Shape;

Tensor normalize_spatial(const Tensor& x, double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  const double half = 0.5 * (hi - lo);
  return ad::scale(ad::add_const(x, -mid), 1.0 / half);
}

// Shared sigma trunk: tri-plane features ++ PE(raw) ++ PE(t) -> hidden -> out.
Tensor sigma_trunk(const Binding& b, const CanonicalField& f, const Tensor& warped, const Tensor& raw,
                   const std::vector<double>& times) {
  if (warped.rank() != 2 || warped.shape()[1] != 3) {
    throw std::invalid_argument("query expects [B,3] canonical points");
  }
  if (static_cast<std::int64_t>(times.size()) != warped.shape()[0]) {
    throw std::invalid_argument("query: one timestamp per row required");
  }
  Tensor tp = triplane_encode(b, f.grid, warped);
  Tensor pe_pos = positional_encode(normalize_spatial(raw, f.cfg.lo, f.cfg.hi), f.cfg.pe_freqs);
  Tensor pe_t = positional_encode(
      Tensor(Shape{static_cast<std::int64_t>(times.size()), 1}, times), f.cfg.pe_freqs);
  Tensor h = ad::relu(linear(b, f.sigma_l1, ad::concat({tp, pe_pos, pe_t}, -1)));
  return linear(b, f.sigma_out, h);
}

}  // namespace

CanonicalField make_canonical_field(ParamStore& store, const CanonicalConfig& cfg,
                                    std::vector<int> grid_scales, int grid_feat, Rng& rng) {
  CanonicalField f;
  f.cfg = cfg;
  f.grid = make_triplane(store, "grid", std::move(grid_scales), grid_feat, cfg.lo, cfg.hi, rng);
  const std::int64_t pe_dim = 3 * (2 * cfg.pe_freqs + 1);
  const std::int64_t pe_t_dim = 2 * cfg.pe_freqs + 1;
  const std::int64_t sigma_in = f.grid.out_dim() + pe_dim + pe_t_dim;
  f.sigma_l1 = make_linear(store, "sigma.l1", sigma_in, cfg.sigma_width, rng);
  f.sigma_out = make_linear(store, "sigma.out", cfg.sigma_width, 1 + cfg.geo_feat, rng);
  f.color_l1 = make_linear(store, "color.l1", cfg.geo_feat + 9, cfg.color_width, rng);
  f.color_l2 = make_linear(store, "color.l2", cfg.color_width, cfg.color_width, rng);
  f.color_out = make_linear(store, "color.out", cfg.color_width, 3, rng);
  return f;
}

CanonicalQuery query(const Binding& b, const CanonicalField& f, const Tensor& warped,
                     const Tensor& raw, const std::vector<double>& times, const Tensor& sh) {
  Tensor out = sigma_trunk(b, f, warped, raw, times);
  CanonicalQuery q;
  q.sigma = ad::softplus(ad::slice(out, -1, 0, 1));
  q.geo = ad::slice(out, -1, 1, f.cfg.geo_feat);
  Tensor h1 = ad::relu(linear(b, f.color_l1, ad::concat({q.geo, sh}, -1)));
  Tensor h2 = ad::relu(linear(b, f.color_l2, h1));
  q.color = ad::sigmoid(linear(b, f.color_out, h2));
  return q;
}

Tensor query_density(const Binding& b, const CanonicalField& f, const Tensor& warped,
                     const Tensor& raw, const std::vector<double>& times) {
  return ad::softplus(ad::slice(sigma_trunk(b, f, warped, raw, times), -1, 0, 1));
}

std::pair<double, Color3> query_point(const ParamStore& store, const CanonicalField& f,
                                      const Vec3& warped, double t, const Vec3& view) {
  Binding b(store, nullptr);
  Tensor pts(Shape{1, 3}, {warped.x, warped.y, warped.z});
  Tensor sh = sh_encode(Tensor(Shape{1, 3}, {view.x, view.y, view.z}));
  auto q = query(b, f, pts, pts, {t}, sh);
  return {q.sigma.flat(0), Color3{q.color.flat(0), q.color.flat(1), q.color.flat(2)}};
}

double query_density_point(const ParamStore& store, const CanonicalField& f, const Vec3& warped,
                           double t) {
  Binding b(store, nullptr);
  Tensor pts(Shape{1, 3}, {warped.x, warped.y, warped.z});
  return query_density(b, f, pts, pts, {t}).flat(0);
}

}  // namespace kdrf
