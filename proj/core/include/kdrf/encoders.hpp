#pragma once

#include <array>

#include "kdrf/nets.hpp"

namespace kdrf {

// Frequency encoding with the raw input prepended:
//   (p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p))
// laid out frequency-major (all components of p per block). Output dim is
// d*(2L+1). L = 0 returns the raw input. Inputs are assumed normalized to
// [-1,1] (spatial) or [0,1] (time); gradients flow when p is tracked.
Tensor positional_encode(const Tensor& p, int freqs);

// Real spherical harmonics, degrees 0-2, Cartesian polynomial form.
// Order: Y00, Y1-1(y), Y10(z), Y11(x), Y2-2(xy), Y2-1(yz), Y20(3z^2-1),
// Y21(xz), Y22(x^2-y^2). Rejects zero-length input.
std::array<double, 9> sh_basis(double x, double y, double z);
Tensor sh_encode(const Tensor& v);  // [B,3] unit rows -> [B,9], not tracked

// Three axis-aligned learnable feature planes per scale. Features are
// bilinearly sampled per plane, multiplied across the three planes of a
// scale, and concatenated across scales. Points outside the bounds clamp
// to the boundary.
struct TriPlaneGrid {
  std::vector<int> scales;                      // plane resolutions
  int feat = 32;
  double lo = -1.5, hi = 1.5;                   // cubic canonical bounds
  std::vector<std::array<int, 3>> plane_slots;  // per scale: XY, XZ, YZ slots
  std::int64_t out_dim() const { return static_cast<std::int64_t>(feat) * static_cast<std::int64_t>(scales.size()); }
};

// Plane features initialized uniformly in [0.9, 1.1] so the across-plane
// product starts near one and gradients through the product are alive.
TriPlaneGrid make_triplane(ParamStore& store, const std::string& name, std::vector<int> scales,
                           int feat, double lo, double hi, Rng& rng);

// Fused sample op: [B,3] points -> [B, feat * n_scales]. Differentiable in
// the plane features (gradients go to the tape's runs sink keyed by slot id)
// and in the query points.
Tensor triplane_encode(const Binding& b, const TriPlaneGrid& grid, const Tensor& pts);

// Total variation over every plane: per scale, (1/3) * sum over planes of
// the per-feature mean of summed squared neighbor differences; scales are
// summed. Zero iff every plane is constant. Gradients go to the tape's
// dense sinks.
Tensor tv_loss(const Binding& b, const TriPlaneGrid& grid);

// Value plus direct gradient accumulation: adds coef * d(tv)/d(plane) into
// the per-slot buffers (indexed like the store) and returns the raw value.
// Same math as tv_loss, without tape sink traffic; the training loop's
// fast path.
double tv_loss_accumulate(const ParamStore& store, const TriPlaneGrid& grid, double coef,
                          std::vector<std::vector<double>>& grad_slots);

}  // namespace kdrf
