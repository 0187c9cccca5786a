#include "kdrf/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kdrf/threadpool.hpp"

namespace kdrf {

using ad::Shape;

std::vector<Ray> generate_rays(const Mat4& c2w, double camera_angle_x, int width, int height,
                               std::span<const std::pair<int, int>> pixels, double time, double near,
                               double far) {
  if (std::abs(c2w.det3()) < 1e-12) throw std::invalid_argument("singular camera pose");
  if (!(near < far)) throw std::invalid_argument("near must be below far");
  const double focal = 0.5 * width / std::tan(0.5 * camera_angle_x);
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& [px, py] : pixels) {
    if (px < 0 || px >= width || py < 0 || py >= height) {
      throw std::invalid_argument("pixel outside image");
    }
    const Vec3 cam_dir{(px + 0.5 - 0.5 * width) / focal, -(py + 0.5 - 0.5 * height) / focal, -1.0};
    Ray r;
    r.origin = c2w.translation();
    r.dir = c2w.mul_dir(cam_dir).normalized();
    r.near = near;
    r.far = far;
    r.px = px;
    r.py = py;
    r.time = time;
    rays.push_back(r);
  }
  return rays;
}

std::vector<double> sample_stratified(double near, double far, int n, Rng* rng) {
  if (n < 1) throw std::invalid_argument("need at least one sample");
  std::vector<double> s(static_cast<std::size_t>(n));
  const double bin = (far - near) / n;
  for (int k = 0; k < n; ++k) {
    const double u = rng != nullptr ? rng->uniform() : 0.5;
    s[static_cast<std::size_t>(k)] = near + (k + u) * bin;
  }
  return s;
}

std::vector<double> quadrature_boundaries(const std::vector<double>& s, double near, double far) {
  const std::size_t n = s.size();
  std::vector<double> b(n + 1);
  b[0] = near;
  for (std::size_t k = 0; k + 1 < n; ++k) b[k + 1] = 0.5 * (s[k] + s[k + 1]);
  b[n] = far;
  return b;
}

std::vector<double> segment_lengths(const std::vector<double>& boundaries) {
  std::vector<double> d(boundaries.size() - 1);
  for (std::size_t k = 0; k + 1 < boundaries.size(); ++k) d[k] = boundaries[k + 1] - boundaries[k];
  return d;
}

std::vector<double> resample_from_weights(const std::vector<double>& boundaries,
                                          const std::vector<double>& weights, int m, Rng* rng) {
  if (boundaries.size() != weights.size() + 1) {
    throw std::invalid_argument("resample: need one boundary more than weights");
  }
  if (m < 1) throw std::invalid_argument("resample: need at least one draw");
  const std::size_t n = weights.size();
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("resample: weights must be >= 0");
    total += w;
  }
  const double lo = boundaries.front(), hi = boundaries.back();

  std::vector<double> out(static_cast<std::size_t>(m));
  if (total <= 0.0) {
    for (int j = 0; j < m; ++j) {
      const double u = (j + (rng ? rng->uniform() : 0.5)) / m;
      out[static_cast<std::size_t>(j)] = lo + u * (hi - lo);
    }
  } else {
    std::vector<double> cdf(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) cdf[k + 1] = cdf[k] + weights[k];
    std::size_t bin = 0;
    for (int j = 0; j < m; ++j) {
      const double u = (j + (rng ? rng->uniform() : 0.5)) / m * total;
      while (bin + 1 < n && cdf[bin + 1] <= u) ++bin;
      const double w = cdf[bin + 1] - cdf[bin];
      const double frac = w > 0.0 ? (u - cdf[bin]) / w : 0.5;
      out[static_cast<std::size_t>(j)] = boundaries[bin] + frac * (boundaries[bin + 1] - boundaries[bin]);
    }
  }
  // Strictly increasing distances — nudge ties generated by point masses.
  const double eps = 1e-12 * (hi - lo);
  for (std::size_t j = 1; j < out.size(); ++j) {
    if (out[j] <= out[j - 1]) out[j] = out[j - 1] + eps;
  }
  return out;
}

std::vector<double> resample_from_weights(const std::vector<double>& distances,
                                          const std::vector<double>& weights, int m, double near,
                                          double far, Rng* rng) {
  return resample_from_weights(quadrature_boundaries(distances, near, far), weights, m, rng);
}

Color3 composite(SampleBatch& sb, const Color3& background) {
  const std::size_t n = sb.s.size();
  if (sb.delta.size() != n || sb.sigma.size() != n || sb.color.size() != n) {
    throw std::invalid_argument("composite: inconsistent sample batch");
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && sb.s[k] <= sb.s[k - 1]) throw std::invalid_argument("composite: distances must increase");
    if (sb.delta[k] <= 0.0) throw std::invalid_argument("composite: segment lengths must be positive");
    if (sb.sigma[k] < 0.0) throw std::invalid_argument("composite: densities must be non-negative");
    for (double c : sb.color[k]) {
      if (c < 0.0 || c > 1.0) throw std::invalid_argument("composite: colors must lie in [0,1]");
    }
  }
  sb.weights.assign(n, 0.0);
  sb.transmittance.assign(n, 0.0);
  double log_t = 0.0;  // running -integral of sigma
  Color3 out{0, 0, 0};
  for (std::size_t k = 0; k < n; ++k) {
    const double t_k = std::exp(-log_t);
    sb.transmittance[k] = t_k;
    const double a = sb.sigma[k] * sb.delta[k];
    const double w = t_k * (-std::expm1(-a));
    sb.weights[k] = w;
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] += w * sb.color[k][static_cast<std::size_t>(c)];
    log_t += a;
  }
  sb.t_final = std::exp(-log_t);
  for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] += sb.t_final * background[static_cast<std::size_t>(c)];
  return out;
}

WeightsResult weights_from_sigma(const Tensor& sigma, const Tensor& delta) {
  Tensor a = ad::mul(sigma, delta);                                   // [R,n]
  Tensor t = ad::exp(ad::scale(ad::cumsum_exclusive(a, 1), -1.0));    // T_k
  Tensor alpha = ad::scale(ad::add_const(ad::exp(ad::scale(a, -1.0)), -1.0), -1.0);
  WeightsResult out;
  out.w = ad::mul(t, alpha);
  out.t_final = ad::exp(ad::scale(ad::sum_axis(a, 1, true), -1.0));
  return out;
}

RenderResult render_rays(const Binding& b, const SceneModel& model, const Timeline& tl,
                         std::span<const Ray> rays, const SamplingConfig& cfg,
                         const Color3& background, Rng* rng) {
  const std::int64_t n_rays = static_cast<std::int64_t>(rays.size());
  if (n_rays == 0) throw std::invalid_argument("render_rays: empty ray batch");
  const int n_prop = cfg.n_proposal, m = cfg.m_fine;

  // Frame groups over rays (must ascend).
  std::vector<FrameGroup> ray_groups;
  for (std::int64_t r = 0; r < n_rays; ++r) {
    if (!ray_groups.empty() && ray_groups.back().frame == rays[static_cast<std::size_t>(r)].frame) {
      ray_groups.back().end = r + 1;
    } else {
      ray_groups.push_back(FrameGroup{r, r + 1, rays[static_cast<std::size_t>(r)].frame});
    }
  }

  RenderResult res;

  // ---- proposal stage -----------------------------------------------------
  std::vector<double> prop_pts(static_cast<std::size_t>(n_rays * n_prop) * 3);
  std::vector<double> prop_delta(static_cast<std::size_t>(n_rays * n_prop));
  std::vector<double> prop_times(static_cast<std::size_t>(n_rays * n_prop));
  res.prop_bounds.resize(static_cast<std::size_t>(n_rays) * (static_cast<std::size_t>(n_prop) + 1));
  std::vector<std::vector<double>> coarse_dists(static_cast<std::size_t>(n_rays));
  for (std::int64_t r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[static_cast<std::size_t>(r)];
    auto s = sample_stratified(ray.near, ray.far, n_prop, rng);
    auto bounds = quadrature_boundaries(s, ray.near, ray.far);
    auto delta = segment_lengths(bounds);
    std::copy(bounds.begin(), bounds.end(),
              res.prop_bounds.begin() + r * (static_cast<std::int64_t>(n_prop) + 1));
    for (int k = 0; k < n_prop; ++k) {
      const Vec3 p = ray.origin + ray.dir * s[static_cast<std::size_t>(k)];
      const std::int64_t row = r * n_prop + k;
      prop_pts[static_cast<std::size_t>(row * 3 + 0)] = p.x;
      prop_pts[static_cast<std::size_t>(row * 3 + 1)] = p.y;
      prop_pts[static_cast<std::size_t>(row * 3 + 2)] = p.z;
      prop_delta[static_cast<std::size_t>(row)] = delta[static_cast<std::size_t>(k)];
      prop_times[static_cast<std::size_t>(row)] = ray.time;
    }
    coarse_dists[static_cast<std::size_t>(r)] = std::move(s);
  }
  Tensor prop_sigma = proposal_density(b, model.proposal, Tensor(Shape{n_rays * n_prop, 3}, prop_pts),
                                       prop_times);
  auto prop_w = weights_from_sigma(ad::reshape(prop_sigma, Shape{n_rays, n_prop}),
                                   Tensor(Shape{n_rays, n_prop}, prop_delta));
  res.prop_weights = prop_w.w;

  // ---- importance resampling (detached) -----------------------------------
  const auto prop_w_vals = res.prop_weights.data();
  std::vector<double> fine_pts(static_cast<std::size_t>(n_rays * m) * 3);
  std::vector<double> fine_delta(static_cast<std::size_t>(n_rays * m));
  std::vector<double> fine_times(static_cast<std::size_t>(n_rays * m));
  res.fine_bounds.resize(static_cast<std::size_t>(n_rays) * (static_cast<std::size_t>(m) + 1));
  for (std::int64_t r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[static_cast<std::size_t>(r)];
    std::vector<double> fine;
    if (cfg.importance_sampling) {
      std::vector<double> w(prop_w_vals.begin() + r * n_prop, prop_w_vals.begin() + (r + 1) * n_prop);
      fine = resample_from_weights(coarse_dists[static_cast<std::size_t>(r)], w, m, ray.near,
                                   ray.far, rng);
    } else {
      fine = sample_stratified(ray.near, ray.far, m, rng);
    }
    auto bounds = quadrature_boundaries(fine, ray.near, ray.far);
    auto delta = segment_lengths(bounds);
    std::copy(bounds.begin(), bounds.end(),
              res.fine_bounds.begin() + r * (static_cast<std::int64_t>(m) + 1));
    for (int k = 0; k < m; ++k) {
      const Vec3 p = ray.origin + ray.dir * fine[static_cast<std::size_t>(k)];
      const std::int64_t row = r * m + k;
      fine_pts[static_cast<std::size_t>(row * 3 + 0)] = p.x;
      fine_pts[static_cast<std::size_t>(row * 3 + 1)] = p.y;
      fine_pts[static_cast<std::size_t>(row * 3 + 2)] = p.z;
      fine_delta[static_cast<std::size_t>(row)] = delta[static_cast<std::size_t>(k)];
      fine_times[static_cast<std::size_t>(row)] = ray.time;
    }
  }
  res.fine_pts = Tensor(Shape{n_rays * m, 3}, std::move(fine_pts));

  // ---- deformation + canonical query --------------------------------------
  std::vector<FrameGroup> pt_groups;
  for (const auto& g : ray_groups) {
    pt_groups.push_back(FrameGroup{g.begin * m, g.end * m, g.frame});
  }
  res.deform = estimate_batch(b, model.deform, res.fine_pts, pt_groups, tl);

  std::vector<double> sh_rows(static_cast<std::size_t>(n_rays * m) * 9);
  for (std::int64_t r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[static_cast<std::size_t>(r)];
    const auto basis = sh_basis(ray.dir.x, ray.dir.y, ray.dir.z);
    for (int k = 0; k < m; ++k) {
      std::copy(basis.begin(), basis.end(), sh_rows.begin() + (r * m + k) * 9);
    }
  }
  const Tensor& raw = model.cfg.concat_prewarp ? res.fine_pts : res.deform.warped;
  auto q = query(b, model.canon, res.deform.warped, raw, fine_times,
                 Tensor(Shape{n_rays * m, 9}, std::move(sh_rows)));

  // ---- compositing ---------------------------------------------------------
  Tensor sigma = ad::reshape(q.sigma, Shape{n_rays, m});
  Tensor color = ad::reshape(q.color, Shape{n_rays, m, 3});
  auto fine_w = weights_from_sigma(sigma, Tensor(Shape{n_rays, m}, fine_delta));
  res.fine_weights = fine_w.w;
  Tensor w3 = ad::reshape(fine_w.w, Shape{n_rays, m, 1});
  Tensor blended = ad::sum_axis(ad::mul(w3, color), 1, false);  // [R,3]
  Tensor bg_row(Shape{1, 3}, {background[0], background[1], background[2]});
  res.colors = ad::add(blended, ad::mul(fine_w.t_final, bg_row));

  // Leading fine rows at time exactly zero (for the canonical loss).
  std::int64_t t0 = 0;
  for (const auto& g : ray_groups) {
    if (tl.at(g.frame) == 0.0) t0 += (g.end - g.begin) * m;
    else break;
  }
  res.t0_rows = t0;
  return res;
}

PixelRender render_pixel(const SceneModel& model, const Timeline& tl, const Ray& ray,
                         const SamplingConfig& cfg, const Color3& background) {
  Binding b(model.store, nullptr);
  auto res = render_rays(b, model, tl, std::span<const Ray>(&ray, 1), cfg, background, nullptr);
  PixelRender out;
  out.rgb = {res.colors.flat(0), res.colors.flat(1), res.colors.flat(2)};
  const auto w = res.prop_weights.data();
  out.prop_weights.assign(w.begin(), w.end());
  return out;
}

Image render_image(const SceneModel& model, const Timeline& tl, const Mat4& pose,
                   double camera_angle_x, int width, int height, double time,
                   const SamplingConfig& cfg, const Color3& background, double near, double far,
                   ThreadPool* pool) {
  std::vector<std::pair<int, int>> pixels;
  pixels.reserve(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) pixels.emplace_back(x, y);
  }
  auto rays = generate_rays(pose, camera_angle_x, width, height, pixels, time, near, far);
  const int frame = tl.index_near(time);
  for (auto& r : rays) r.frame = frame;

  Image img(width, height);
  const std::int64_t total = static_cast<std::int64_t>(rays.size());
  const std::int64_t chunk = 512;
  const int n_chunks = static_cast<int>((total + chunk - 1) / chunk);
  auto run_chunk = [&](int ci) {
    const std::int64_t begin = ci * chunk;
    const std::int64_t end = std::min(total, begin + chunk);
    Binding b(model.store, nullptr);
    auto res = render_rays(b, model, tl,
                           std::span<const Ray>(rays.data() + begin, static_cast<std::size_t>(end - begin)),
                           cfg, background, nullptr);
    for (std::int64_t i = begin; i < end; ++i) {
      const Ray& ray = rays[static_cast<std::size_t>(i)];
      for (int c = 0; c < 3; ++c) img.at(ray.py, ray.px, c) = res.colors.flat((i - begin) * 3 + c);
    }
  };
  if (pool != nullptr) {
    pool->run(n_chunks, run_chunk);
  } else {
    for (int ci = 0; ci < n_chunks; ++ci) run_chunk(ci);
  }
  return img;
}

}  // namespace kdrf
