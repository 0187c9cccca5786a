#include "kdrf/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace kdrf::ad {

GradCheckResult grad_check(const GradFn& f, const std::vector<Tensor>& point, double step) {
  if (step <= 0.0) throw std::invalid_argument("grad_check step must be positive");

  // Analytic pass.
  Tape tape;
  std::vector<Tensor> tracked;
  tracked.reserve(point.size());
  for (const auto& p : point) tracked.push_back(tape.leaf(p));
  Tensor loss = f(&tape, tracked);
  if (!std::isfinite(loss.value())) throw std::runtime_error("grad_check: non-finite function value at base point");
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : tracked) analytic.push_back(tape.grad_or_zeros(t));

  // Numeric pass.
  GradCheckResult result;
  std::vector<std::vector<double>> values;
  for (const auto& p : point) values.push_back(p.to_vector());
  for (std::size_t pi = 0; pi < point.size(); ++pi) {
    for (std::size_t j = 0; j < values[pi].size(); ++j) {
      const double saved = values[pi][j];
      auto eval = [&](double v) {
        values[pi][j] = v;
        std::vector<Tensor> params;
        params.reserve(point.size());
        for (std::size_t q = 0; q < point.size(); ++q) {
          params.emplace_back(point[q].shape(), values[q]);
        }
        const double out = f(nullptr, params).value();
        if (!std::isfinite(out)) {
          throw std::runtime_error("grad_check: non-finite function value at parameter " +
                                   std::to_string(pi) + " element " + std::to_string(j));
        }
        return out;
      };
      const double fp = eval(saved + step);
      const double fm = eval(saved - step);
      values[pi][j] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = std::abs(analytic[pi][j] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst_param = pi;
        result.worst_element = static_cast<std::int64_t>(j);
      }
    }
  }
  return result;
}

}  // namespace kdrf::ad
