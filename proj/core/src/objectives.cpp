#include "kdrf/objectives.hpp"

#include <algorithm>
#include <stdexcept>

namespace kdrf {

using ad::Shape;

namespace {

// Walks the overlaps of two bin partitions of one ray's [near, far]:
// emit(j, k, overlap(k, j) / width(k)) for proposal bin k and final bin j.
// Both walks are monotone, O(n + m).
template <typename Emit>
void for_each_overlap(const double* pb, const double* fb, std::int64_t n, std::int64_t m,
                      Emit&& emit) {
  std::int64_t i = 0;
  for (std::int64_t j = 0; j < m; ++j) {
    while (i < n && pb[i + 1] <= fb[j]) ++i;
    for (std::int64_t k = i; k < n && pb[k] < fb[j + 1]; ++k) {
      const double lo = std::max(pb[k], fb[j]);
      const double hi = std::min(pb[k + 1], fb[j + 1]);
      const double width = pb[k + 1] - pb[k];
      if (hi > lo && width > 0.0) emit(j, k, (hi - lo) / width);
    }
  }
}

}  // namespace

Tensor image_loss(const Tensor& predicted, const Tensor& ground_truth) {
  if (predicted.shape() != ground_truth.shape()) {
    throw std::invalid_argument("image_loss batch shapes differ: " + ad::shape_str(predicted.shape()) +
                                " vs " + ad::shape_str(ground_truth.shape()));
  }
  return ad::mean(ad::square(ad::sub(predicted, ground_truth)));
}

Tensor kf_loss(const Tensor& y, const Tensor& fused) {
  if (y.shape() != fused.shape() || y.rank() != 2) {
    throw std::invalid_argument("kf_loss expects matching [N,3] batches");
  }
  const double n = static_cast<double>(y.shape()[0]);
  Tensor residual = ad::sub(y, ad::detach(fused));
  return ad::scale(ad::sum(ad::square(residual)), 1.0 / n);
}

Tensor canonical_observation_loss(const Tensor& fused_t0, bool l1) {
  if (fused_t0.rank() != 2) throw std::invalid_argument("canonical loss expects [N,3]");
  const double n = static_cast<double>(fused_t0.shape()[0]);
  Tensor per = l1 ? ad::abs(fused_t0) : ad::square(fused_t0);
  return ad::scale(ad::sum(per), 1.0 / n);
}

Tensor histogram_cover(const Tensor& prop_weights, const std::vector<double>& prop_bounds,
                       const std::vector<double>& fine_bounds, std::int64_t m) {
  if (prop_weights.rank() != 2) throw std::invalid_argument("histogram_cover expects [R,n] weights");
  const std::int64_t rays = prop_weights.shape()[0];
  const std::int64_t n = prop_weights.shape()[1];
  if (prop_bounds.size() != static_cast<std::size_t>(rays * (n + 1)) ||
      fine_bounds.size() != static_cast<std::size_t>(rays * (m + 1))) {
    throw std::invalid_argument("histogram_cover: boundary array sizes do not match");
  }

  const auto wp = prop_weights.data();
  std::vector<double> out(static_cast<std::size_t>(rays * m), 0.0);
  for (std::int64_t r = 0; r < rays; ++r) {
    for_each_overlap(prop_bounds.data() + r * (n + 1), fine_bounds.data() + r * (m + 1), n, m,
                     [&](std::int64_t j, std::int64_t k, double frac) {
                       out[static_cast<std::size_t>(r * m + j)] += frac * wp[r * n + k];
                     });
  }

  ad::Tape* tape = prop_weights.tracked() ? prop_weights.tape() : nullptr;
  if (tape == nullptr) return Tensor(Shape{rays, m}, std::move(out));

  auto back = [prop_weights, prop_bounds, fine_bounds, rays, n, m](ad::Tape& tp,
                                                                   std::span<const double> g) {
    double* gw = tp.grad_zeroed(prop_weights.node(), prop_weights.size());
    for (std::int64_t r = 0; r < rays; ++r) {
      for_each_overlap(prop_bounds.data() + r * (n + 1), fine_bounds.data() + r * (m + 1), n, m,
                       [&](std::int64_t j, std::int64_t k, double frac) {
                         gw[static_cast<std::size_t>(r * n + k)] +=
                             frac * g[static_cast<std::size_t>(r * m + j)];
                       });
    }
  };
  auto data = std::make_shared<const std::vector<double>>(std::move(out));
  const int node = tape->push(std::move(back));
  return Tensor(Shape{rays, m}, std::move(data), tape, node);
}

Tensor proposal_loss(const Tensor& prop_weights, const std::vector<double>& prop_bounds,
                     const Tensor& fine_weights, const std::vector<double>& fine_bounds) {
  const std::int64_t rays = prop_weights.shape()[0];
  const std::int64_t m = fine_weights.shape()[1];
  if (fine_weights.shape()[0] != rays) throw std::invalid_argument("proposal_loss: ray counts differ");
  Tensor cover = histogram_cover(prop_weights, prop_bounds, fine_bounds, m);
  Tensor deficit = ad::relu(ad::sub(ad::detach(fine_weights), cover));
  return ad::scale(ad::sum(ad::square(deficit)), 1.0 / static_cast<double>(rays));
}

}  // namespace kdrf
