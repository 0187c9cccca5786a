#pragma once

#include "kdrf/encoders.hpp"

namespace kdrf {

// Per-step loss components. total = l_image + l_kf + l_co + l_prop +
// lambda_tv * l_tv (flags may remove the kf/co terms from the total;
// reported components are the raw values).
struct LossReport {
  double l_image = 0, l_kf = 0, l_co = 0, l_prop = 0, l_tv = 0;
  double total = 0;
  static constexpr double kLambdaTv = 1e-4;
};

// Mean squared error over the ray batch, averaged over channels.
Tensor image_loss(const Tensor& predicted, const Tensor& ground_truth);

// Mean over points of ||y - dx||^2 with the fused estimate detached: the
// estimate supervises the observation head, no gradient flows back into it.
Tensor kf_loss(const Tensor& y, const Tensor& fused);

// Mean over a frame-t0 point batch of ||dx||^2 (or the L1 norm when
// `l1` is set). The caller applies the 1(t = 0) indicator by passing only
// rows drawn at t = 0.
Tensor canonical_observation_loss(const Tensor& fused_t0, bool l1 = false);

// Proposal mass overlapping each final-stage bin: [R,m] from proposal
// weights [R,n] and per-ray bin boundary arrays (row-major, n+1 and m+1
// entries per ray). Linear in the proposal weights; differentiable there.
Tensor histogram_cover(const Tensor& prop_weights, const std::vector<double>& prop_bounds,
                       const std::vector<double>& fine_bounds, std::int64_t m);

// One-sided histogram bound: mean over rays of
// sum_j max(0, w_final_j - cover_j)^2. Gradient flows only into the
// proposal weights; the final weights are detached.
Tensor proposal_loss(const Tensor& prop_weights, const std::vector<double>& prop_bounds,
                     const Tensor& fine_weights, const std::vector<double>& fine_bounds);

// tv_loss over the feature planes lives in encoders.hpp (it is a grid op);
// it participates in the total as lambda_tv * tv_loss(grid).

}  // namespace kdrf
