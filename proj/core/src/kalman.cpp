#include "kdrf/kalman.hpp"

#include <stdexcept>

namespace kdrf::kalman {

FilterState predict(const FilterState& state, const LinearGaussianSystem& sys, double u) {
  if (sys.q < 0.0 || sys.r < 0.0) throw std::invalid_argument("noise variances must be non-negative");
  FilterState out;
  out.x = sys.a * state.x + sys.b * u;
  out.p = sys.a * state.p * sys.a + sys.q;
  return out;
}

UpdateResult update(const FilterState& pred, const LinearGaussianSystem& sys, double y) {
  const double innovation_var = sys.c * pred.p * sys.c + sys.r;
  if (innovation_var <= 0.0) {
    throw std::invalid_argument("update requires C P C + R > 0");
  }
  UpdateResult out;
  out.gain = pred.p * sys.c / innovation_var;
  out.state.x = pred.x + out.gain * (y - sys.c * pred.x);
  out.state.p = (1.0 - out.gain * sys.c) * pred.p;
  return out;
}

std::vector<FilterState> filter_sequence(const LinearGaussianSystem& sys, FilterState initial,
                                         const std::vector<double>& controls,
                                         const std::vector<double>& observations) {
  if (controls.size() != observations.size()) {
    throw std::invalid_argument("control/observation sequences differ in length");
  }
  std::vector<FilterState> states;
  states.reserve(controls.size());
  FilterState current = initial;
  for (std::size_t t = 0; t < controls.size(); ++t) {
    const FilterState pred = predict(current, sys, controls[t]);
    current = update(pred, sys, observations[t]).state;
    states.push_back(current);
  }
  return states;
}

}  // namespace kdrf::kalman
