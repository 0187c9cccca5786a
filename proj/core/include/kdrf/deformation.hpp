#pragma once

#include "kdrf/encoders.hpp"
#include "kdrf/geometry.hpp"

namespace kdrf {

// Ascending distinct frame timestamps of a dataset.
struct Timeline {
  std::vector<double> times;

  int size() const { return static_cast<int>(times.size()); }
  double at(int i) const { return times[static_cast<std::size_t>(i)]; }
  // Index of the closest timestamp (ties resolve to the earlier frame).
  int index_near(double t) const;
};

struct DeformationConfig {
  int pe_freqs = 5;
  int width = 128;          // hidden width of the observation MLP
  double lo = -1.5, hi = 1.5;  // spatial normalization bounds
  bool enable_prediction = true;
  bool stopgrad_prediction = false;
};

// Shallow observation MLP: positional-encoded (x, t) -> two hidden ReLU
// layers -> heads y (deformation) and eps (noise term). The y head starts
// at zero so the whole field is the identity warp at initialization.
struct ObservationNet {
  Linear l1, l2, head;  // head emits [y(3) | eps(3)]
};

// Single linear layer (eps_i, eps_{i-1}, t_i, t_{i-1}) -> 3, squashed by a
// sigmoid so the gain stays inside (0,1)^3.
struct GainNet {
  Linear f;
};

struct DeformationField {
  DeformationConfig cfg;
  ObservationNet obs;
  GainNet gain;
};

DeformationField make_deformation_field(ParamStore& store, const DeformationConfig& cfg, Rng& rng);

// Rows [begin,end) of a batch share one timeline frame index.
struct FrameGroup {
  std::int64_t begin = 0, end = 0;
  int frame = 0;
};

// Batched estimate over points sorted by ascending frame index.
struct DeformBatch {
  Tensor y;         // [B,3] observation at t_i
  Tensor eps;       // [B,3]
  Tensor eps_prev;  // [B,3] (eps_i for frame-0 rows)
  Tensor pred;      // [B,3] d x^- (zero for frame 0)
  Tensor gain;      // [B,3] K (forced to one for frame 0)
  Tensor fused;     // [B,3] d x = pred + K (y - pred)
  Tensor warped;    // [B,3] x + fused
};

// Per-point record (value form); fused == pred + gain*(y - pred) exactly.
struct DeformationEstimate {
  Vec3 y, eps_i, eps_prev, pred, gain, fused;
};

// (y, eps) heads of the observation MLP for a batch at per-row times.
// x is raw scene coordinates; times is one value per row.
std::pair<Tensor, Tensor> observe(const Binding& b, const DeformationField& f, const Tensor& x,
                                  const std::vector<double>& times);

DeformBatch estimate_batch(const Binding& b, const DeformationField& f, const Tensor& x,
                           const std::vector<FrameGroup>& groups, const Timeline& tl);

// Single-point wrappers over the batched path.
std::pair<Vec3, Vec3> observe_point(const ParamStore& store, const DeformationField& f, const Vec3& x,
                                    double t);
Vec3 predict_deformation(const ParamStore& store, const DeformationField& f, const Vec3& x, int frame,
                         const Timeline& tl);
DeformationEstimate estimate_point(const ParamStore& store, const DeformationField& f, const Vec3& x,
                                   int frame, const Timeline& tl);

}  // namespace kdrf
