#include "kdrf/model.hpp"

#include <sstream>
#include <stdexcept>

#include "kdrf/config.hpp"

namespace kdrf {

namespace {

std::string scales_str(const std::vector<int>& scales) {
  std::ostringstream os;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (i) os << ",";
    os << scales[i];
  }
  return os.str();
}

std::vector<int> parse_scales(const std::string& s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(static_cast<int>(parse_int("grid_scales", item)));
  if (out.empty()) throw std::invalid_argument("grid_scales must be non-empty");
  return out;
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv["bounds_lo"] = num(lo);
  kv["bounds_hi"] = num(hi);
  kv["grid_scales"] = scales_str(grid_scales);
  kv["grid_feat"] = std::to_string(grid_feat);
  kv["pe_freqs"] = std::to_string(pe_freqs);
  kv["obs_width"] = std::to_string(obs_width);
  kv["sigma_width"] = std::to_string(sigma_width);
  kv["color_width"] = std::to_string(color_width);
  kv["geo_feat"] = std::to_string(geo_feat);
  kv["prop_scale"] = std::to_string(prop_scale);
  kv["prop_width"] = std::to_string(prop_width);
  kv["enable_prediction"] = enable_prediction ? "true" : "false";
  kv["stopgrad_prediction"] = stopgrad_prediction ? "true" : "false";
  kv["concat_prewarp"] = concat_prewarp ? "true" : "false";
  kv["init_seed"] = std::to_string(init_seed);
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("missing model key: ") + key);
    return it->second;
  };
  cfg.lo = parse_double("bounds_lo", need("bounds_lo"));
  cfg.hi = parse_double("bounds_hi", need("bounds_hi"));
  cfg.grid_scales = parse_scales(need("grid_scales"));
  cfg.grid_feat = static_cast<int>(parse_int("grid_feat", need("grid_feat")));
  cfg.pe_freqs = static_cast<int>(parse_int("pe_freqs", need("pe_freqs")));
  cfg.obs_width = static_cast<int>(parse_int("obs_width", need("obs_width")));
  cfg.sigma_width = static_cast<int>(parse_int("sigma_width", need("sigma_width")));
  cfg.color_width = static_cast<int>(parse_int("color_width", need("color_width")));
  cfg.geo_feat = static_cast<int>(parse_int("geo_feat", need("geo_feat")));
  cfg.prop_scale = static_cast<int>(parse_int("prop_scale", need("prop_scale")));
  cfg.prop_width = static_cast<int>(parse_int("prop_width", need("prop_width")));
  cfg.enable_prediction = parse_bool("enable_prediction", need("enable_prediction"));
  cfg.stopgrad_prediction = parse_bool("stopgrad_prediction", need("stopgrad_prediction"));
  cfg.concat_prewarp = parse_bool("concat_prewarp", need("concat_prewarp"));
  cfg.init_seed = parse_u64("init_seed", need("init_seed"));
  return cfg;
}

Tensor proposal_density(const Binding& b, const ProposalField& f, const Tensor& pts,
                        const std::vector<double>& times) {
  if (pts.rank() != 2 || pts.shape()[1] != 3) {
    throw std::invalid_argument("proposal_density expects [B,3] points");
  }
  Tensor tp = triplane_encode(b, f.grid, pts);
  const double mid = 0.5 * (f.lo + f.hi), half = 0.5 * (f.hi - f.lo);
  Tensor pe_pos = positional_encode(ad::scale(ad::add_const(pts, -mid), 1.0 / half), f.pe_freqs);
  Tensor pe_t = positional_encode(
      Tensor(ad::Shape{static_cast<std::int64_t>(times.size()), 1}, times), f.pe_freqs);
  Tensor h = ad::relu(linear(b, f.l1, ad::concat({tp, pe_pos, pe_t}, -1)));
  return ad::softplus(linear(b, f.out, h));
}

SceneModel make_scene_model(const ModelConfig& cfg) {
  SceneModel m;
  m.cfg = cfg;
  Rng rng(cfg.init_seed);

  DeformationConfig dc;
  dc.pe_freqs = cfg.pe_freqs;
  dc.width = cfg.obs_width;
  dc.lo = cfg.lo;
  dc.hi = cfg.hi;
  dc.enable_prediction = cfg.enable_prediction;
  dc.stopgrad_prediction = cfg.stopgrad_prediction;
  Rng deform_rng = rng.split(1);
  m.deform = make_deformation_field(m.store, dc, deform_rng);

  CanonicalConfig cc;
  cc.pe_freqs = cfg.pe_freqs;
  cc.sigma_width = cfg.sigma_width;
  cc.color_width = cfg.color_width;
  cc.geo_feat = cfg.geo_feat;
  cc.lo = cfg.lo;
  cc.hi = cfg.hi;
  cc.concat_prewarp = cfg.concat_prewarp;
  Rng canon_rng = rng.split(2);
  m.canon = make_canonical_field(m.store, cc, cfg.grid_scales, cfg.grid_feat, canon_rng);

  Rng prop_rng = rng.split(3);
  m.proposal.pe_freqs = cfg.pe_freqs;
  m.proposal.lo = cfg.lo;
  m.proposal.hi = cfg.hi;
  m.proposal.grid = make_triplane(m.store, "prop.grid", {cfg.prop_scale}, cfg.grid_feat, cfg.lo,
                                  cfg.hi, prop_rng);
  const std::int64_t prop_in = m.proposal.grid.out_dim() + 3 * (2 * cfg.pe_freqs + 1) + (2 * cfg.pe_freqs + 1);
  m.proposal.l1 = make_linear(m.store, "prop.l1", prop_in, cfg.prop_width, prop_rng);
  m.proposal.out = make_linear(m.store, "prop.out", cfg.prop_width, 1, prop_rng);
  return m;
}

ModelConfig micro_model_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.grid_scales = {2, 3, 4, 5};
  cfg.grid_feat = 2;
  cfg.obs_width = 8;
  cfg.sigma_width = 8;
  cfg.color_width = 8;
  cfg.geo_feat = 4;
  cfg.prop_scale = 4;
  cfg.prop_width = 8;
  cfg.init_seed = seed;
  return cfg;
}

}  // namespace kdrf
