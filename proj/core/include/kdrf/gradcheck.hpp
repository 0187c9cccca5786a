#pragma once

#include <functional>
#include <vector>

#include "kdrf/tape.hpp"

namespace kdrf::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::int64_t worst_element = 0;
};

// Central-difference check of reverse-mode gradients.
//
// `f` evaluates the scalar objective. When `tape` is non-null the given
// parameter tensors are tracked on it; when null they are plain values.
// The relative error of element j is |analytic - numeric| / max(1, |numeric|).
// Throws if the function value turns non-finite, naming the parameter index.
using GradFn = std::function<Tensor(Tape* tape, const std::vector<Tensor>& params)>;

GradCheckResult grad_check(const GradFn& f, const std::vector<Tensor>& point, double step);

}  // namespace kdrf::ad
