#pragma once

#include <string>

#include "kdrf/model.hpp"

namespace kdrf {

class ThreadPool;

struct PipelineCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t params_checked = 0;
};

// Central-difference validation of the reverse-mode gradients across the
// whole pipeline (encoders, deformation, canonical field, rendering math,
// losses, proposal field) on a small-architecture model and a few rays.
//
// Stop-gradient boundaries are part of the pipeline's definition (the
// kf-loss target, importance-sampled positions, and the proposal loss's
// final weights are all detached), so the check runs two finite-difference
// compatible objectives:
//   1. image + canonical + tv loss with stratified fine samples, over every
//      non-proposal parameter;
//   2. the histogram-bound loss against frozen final weights, over the
//      proposal parameters.
// Every parameter of every module receives a gradient in exactly one of
// the two objectives.
PipelineCheckReport full_pipeline_gradcheck(std::uint64_t seed, int n_rays, double fd_step,
                                            ThreadPool* pool);

}  // namespace kdrf
