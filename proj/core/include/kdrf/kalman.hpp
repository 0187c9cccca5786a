#pragma once

#include <vector>

namespace kdrf::kalman {

// Scalar linear-Gaussian system:
//   x_t = A x_{t-1} + B u_t + n_t,   n_t ~ N(0, Q)
//   y_t = C x_t + m_t,               m_t ~ N(0, R)
struct LinearGaussianSystem {
  double a = 1.0;
  double b = 0.0;
  double c = 1.0;
  double q = 0.0;  // process-noise variance
  double r = 0.0;  // measurement-noise variance
};

struct FilterState {
  double x = 0.0;  // state estimate
  double p = 0.0;  // estimate error covariance
};

struct UpdateResult {
  FilterState state;
  double gain = 0.0;
};

// Prediction step: x^- = A x + B u, P^- = A P A + Q.
FilterState predict(const FilterState& state, const LinearGaussianSystem& sys, double u);

// Update step: K = P^- C / (C P^- C + R), x = x^- + K (y - C x^-),
// P = (1 - K C) P^-.  Rejects a zero innovation variance.
UpdateResult update(const FilterState& pred, const LinearGaussianSystem& sys, double y);

// Alternating predict/update over equal-length control and observation
// sequences; returns the posterior state after each update.
std::vector<FilterState> filter_sequence(const LinearGaussianSystem& sys, FilterState initial,
                                         const std::vector<double>& controls,
                                         const std::vector<double>& observations);

}  // namespace kdrf::kalman
