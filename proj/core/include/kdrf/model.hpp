#pragma once

#include <map>

#include "kdrf/canonical.hpp"
#include "kdrf/deformation.hpp"

namespace kdrf {

// Architecture hyperparameters; serialized into checkpoint manifests.
struct ModelConfig {
  double lo = -1.5, hi = 1.5;
  std::vector<int> grid_scales{64, 128, 256, 512};
  int grid_feat = 32;
  int pe_freqs = 5;
  int obs_width = 128;
  int sigma_width = 64;
  int color_width = 64;
  int geo_feat = 15;
  int prop_scale = 128;
  int prop_width = 64;
  bool enable_prediction = true;
  bool stopgrad_prediction = false;
  bool concat_prewarp = false;
  std::uint64_t init_seed = 1;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Density-only proposal field steering importance sampling: a single-scale
// tri-plane with a SigmaNet-shaped decoder, queried at raw (x, t).
struct ProposalField {
  TriPlaneGrid grid;
  Linear l1, out;
  int pe_freqs = 5;
  double lo = -1.5, hi = 1.5;
};

Tensor proposal_density(const Binding& b, const ProposalField& f, const Tensor& pts,
                        const std::vector<double>& times);

struct SceneModel {
  ModelConfig cfg;
  ParamStore store;
  DeformationField deform;
  CanonicalField canon;
  ProposalField proposal;
};

SceneModel make_scene_model(const ModelConfig& cfg);

// Small-architecture config for gradient checks and fast tests.
ModelConfig micro_model_config(std::uint64_t seed);

}  // namespace kdrf
