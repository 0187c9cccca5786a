#pragma once

#include "kdrf/encoders.hpp"
#include "kdrf/geometry.hpp"
#include "kdrf/image.hpp"

namespace kdrf {

struct CanonicalConfig {
  int pe_freqs = 5;
  int sigma_width = 64;
  int color_width = 64;
  int geo_feat = 15;
  double lo = -1.5, hi = 1.5;
  bool concat_prewarp = false;  // feed pre-warp positions to the raw-input concat
};

// Time-independent canonical radiance field. Sigma Net decodes tri-plane
// features concatenated with positional-encoded raw coordinates and time
// into softplus density plus a geometry feature; Color Net decodes the
// geometry feature with spherical-harmonics view directions into sigmoid RGB.
struct CanonicalField {
  CanonicalConfig cfg;
  TriPlaneGrid grid;
  Linear sigma_l1, sigma_out;         // in -> width -> 1 + geo_feat
  Linear color_l1, color_l2, color_out;  // geo_feat + 9 -> width -> width -> 3
};

CanonicalField make_canonical_field(ParamStore& store, const CanonicalConfig& cfg,
                                    std::vector<int> grid_scales, int grid_feat, Rng& rng);

struct CanonicalQuery {
  Tensor sigma;  // [B,1] softplus density
  Tensor geo;    // [B,geo_feat]
  Tensor color;  // [B,3] sigmoid RGB (undefined for density-only queries)
};

// warped: canonical points [B,3]; raw: positions for the concat (equal to
// warped unless concat_prewarp); times: one per row; sh: [B,9] encoded view.
CanonicalQuery query(const Binding& b, const CanonicalField& f, const Tensor& warped,
                     const Tensor& raw, const std::vector<double>& times, const Tensor& sh);
Tensor query_density(const Binding& b, const CanonicalField& f, const Tensor& warped,
                     const Tensor& raw, const std::vector<double>& times);

// Single-point convenience (value form, untracked).
std::pair<double, Color3> query_point(const ParamStore& store, const CanonicalField& f,
                                      const Vec3& warped, double t, const Vec3& view);
double query_density_point(const ParamStore& store, const CanonicalField& f, const Vec3& warped,
                           double t);

}  // namespace kdrf
