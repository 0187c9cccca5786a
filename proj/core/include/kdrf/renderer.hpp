#pragma once

#include <span>

#include "kdrf/image.hpp"
#include "kdrf/model.hpp"

namespace kdrf {

class ThreadPool;

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit
  double near = 2.0, far = 6.0;
  int px = 0, py = 0;
  double time = 0.0;
  int frame = 0;  // timeline index
};

struct SamplingConfig {
  int n_proposal = 64;
  int m_fine = 64;
  // When false, fine samples are stratified instead of importance-drawn
  // from the proposal weights (used by gradient checks, where sample
  // positions must not depend on parameters).
  bool importance_sampling = true;
};

// Pinhole rays, synthetic-dataset convention: right-handed camera, -z
// forward, +y up, focal = 0.5 * width / tan(0.5 * camera_angle_x).
// Rejects a singular pose.
std::vector<Ray> generate_rays(const Mat4& c2w, double camera_angle_x, int width, int height,
                               std::span<const std::pair<int, int>> pixels, double time, double near,
                               double far);

// One uniform draw per equal bin of [near, far]; bin midpoints when rng is
// null.
std::vector<double> sample_stratified(double near, double far, int n, Rng* rng);
inline std::vector<double> sample_stratified(const Ray& ray, int n, Rng* rng) {
  return sample_stratified(ray.near, ray.far, n, rng);
}

// Quadrature segments: boundaries at sample midpoints, closed by the near
// and far bounds; lengths sum exactly to far - near.
std::vector<double> quadrature_boundaries(const std::vector<double>& s, double near, double far);
std::vector<double> segment_lengths(const std::vector<double>& boundaries);

// Inverse-transform sampling of the piecewise-constant density proportional
// to `weights` over the bins delimited by `boundaries` (uniform fallback
// when all weights vanish). Stratified midpoint positions when rng is null.
// Results are strictly increasing.
std::vector<double> resample_from_weights(const std::vector<double>& boundaries,
                                          const std::vector<double>& weights, int m, Rng* rng);
std::vector<double> resample_from_weights(const std::vector<double>& distances,
                                          const std::vector<double>& weights, int m, double near,
                                          double far, Rng* rng);

// One ray's quadrature samples (value form).
struct SampleBatch {
  std::vector<double> s;       // strictly increasing distances
  std::vector<double> delta;   // positive segment lengths
  std::vector<double> sigma;   // non-negative densities
  std::vector<Color3> color;   // values in [0,1]
  // filled by composite():
  std::vector<double> weights;
  std::vector<double> transmittance;  // T_1 = 1
  double t_final = 1.0;
};

// w_k = T_k (1 - exp(-sigma_k delta_k)); returns sum_k w_k c_k + T_final bg.
Color3 composite(SampleBatch& sb, const Color3& background);

// Tensor path used in training: sigma, delta are [R,n].
struct WeightsResult {
  Tensor w;        // [R,n]
  Tensor t_final;  // [R,1]
};
WeightsResult weights_from_sigma(const Tensor& sigma, const Tensor& delta);

struct RenderResult {
  Tensor colors;                    // [R,3]
  Tensor prop_weights;              // [R,n_proposal]
  std::vector<double> prop_bounds;  // R*(n_proposal+1)
  Tensor fine_weights;              // [R,m]
  std::vector<double> fine_bounds;  // R*(m+1)
  DeformBatch deform;               // over the R*m fine points
  Tensor fine_pts;                  // [R*m,3]
  std::int64_t t0_rows = 0;         // leading fine rows whose frame time is 0
};

// Full pipeline over rays sorted by ascending frame index: proposal
// sampling, importance resampling, per-point deformation estimation at the
// ray's frame, canonical query, compositing. Deterministic when rng is null.
RenderResult render_rays(const Binding& b, const SceneModel& model, const Timeline& tl,
                         std::span<const Ray> rays, const SamplingConfig& cfg,
                         const Color3& background, Rng* rng);

struct PixelRender {
  Color3 rgb{0, 0, 0};
  std::vector<double> prop_weights;
};
PixelRender render_pixel(const SceneModel& model, const Timeline& tl, const Ray& ray,
                         const SamplingConfig& cfg, const Color3& background);

// Whole image at a fixed pose/time, deterministic and chunk-parallel; the
// result is independent of ray evaluation order by construction.
Image render_image(const SceneModel& model, const Timeline& tl, const Mat4& pose,
                   double camera_angle_x, int width, int height, double time,
                   const SamplingConfig& cfg, const Color3& background, double near, double far,
                   ThreadPool* pool);

}  // namespace kdrf
