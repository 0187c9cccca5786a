#include "kdrf/scenes.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace kdrf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed json in " + path + ": " + e.what());
  }
  return j;
}

Mat4 parse_matrix(const json& jm, const std::string& path, std::size_t frame_idx) {
  const std::string where = path + " frames[" + std::to_string(frame_idx) + "].transform_matrix";
  if (!jm.is_array() || jm.size() != 4) throw std::runtime_error(where + ": expected 4 rows");
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    const auto& row = jm[static_cast<std::size_t>(r)];
    if (!row.is_array() || row.size() != 4) throw std::runtime_error(where + ": expected 4 columns");
    for (int c = 0; c < 4; ++c) {
      if (!row[static_cast<std::size_t>(c)].is_number()) throw std::runtime_error(where + ": non-numeric entry");
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

}  // namespace

SceneDataset load_dataset(const std::string& dir, const std::string& split,
                          const Color3& background) {
  const std::string path = (fs::path(dir) / ("transforms_" + split + ".json")).string();
  const json j = load_json(path);
  if (!j.contains("camera_angle_x") || !j["camera_angle_x"].is_number()) {
    throw std::runtime_error(path + ": missing numeric field camera_angle_x");
  }
  SceneDataset ds;
  ds.camera_angle_x = j["camera_angle_x"].get<double>();
  ds.background = background;
  if (j.contains("near")) ds.near = j["near"].get<double>();
  if (j.contains("far")) ds.far = j["far"].get<double>();
  if (!j.contains("frames") || !j["frames"].is_array()) {
    throw std::runtime_error(path + ": missing frames array");
  }

  for (std::size_t i = 0; i < j["frames"].size(); ++i) {
    const auto& jf = j["frames"][i];
    SceneFrame f;
    if (!jf.contains("file_path") || !jf["file_path"].is_string()) {
      throw std::runtime_error(path + " frames[" + std::to_string(i) + "]: missing file_path");
    }
    f.file_path = jf["file_path"].get<std::string>();
    if (!jf.contains("time") || !jf["time"].is_number()) {
      throw std::runtime_error(path + " frames[" + std::to_string(i) + "]: missing numeric time");
    }
    f.time = jf["time"].get<double>();
    if (f.time < 0.0 || f.time > 1.0) {
      throw std::runtime_error(path + " frames[" + std::to_string(i) + "].time: " +
                               std::to_string(f.time) + " outside [0,1]");
    }
    if (!jf.contains("transform_matrix")) {
      throw std::runtime_error(path + " frames[" + std::to_string(i) + "]: missing transform_matrix");
    }
    f.c2w = parse_matrix(jf["transform_matrix"], path, i);
    ds.frames.push_back(std::move(f));
  }

  std::stable_sort(ds.frames.begin(), ds.frames.end(),
                   [](const SceneFrame& a, const SceneFrame& b) { return a.time < b.time; });

  for (const auto& f : ds.frames) {
    const std::string img_path = (fs::path(dir) / (f.file_path + ".png")).string();
    ds.images.push_back(read_png(img_path, background));
    if (ds.width == 0) {
      ds.width = ds.images.back().width;
      ds.height = ds.images.back().height;
    } else if (ds.images.back().width != ds.width || ds.images.back().height != ds.height) {
      throw std::runtime_error(img_path + ": image size differs from the rest of the split");
    }
  }

  for (const auto& f : ds.frames) {
    if (ds.timeline.times.empty() || f.time > ds.timeline.times.back()) {
      ds.timeline.times.push_back(f.time);
    }
  }
  return ds;
}

void save_transforms(const std::string& dir, const std::string& split, const SceneDataset& ds) {
  json j;
  j["camera_angle_x"] = ds.camera_angle_x;
  j["near"] = ds.near;
  j["far"] = ds.far;
  j["frames"] = json::array();
  for (const auto& f : ds.frames) {
    json jf;
    jf["file_path"] = f.file_path;
    jf["time"] = f.time;
    json rows = json::array();
    for (int r = 0; r < 4; ++r) {
      json row = json::array();
      for (int c = 0; c < 4; ++c) row.push_back(f.c2w(r, c));
      rows.push_back(row);
    }
    jf["transform_matrix"] = rows;
    j["frames"].push_back(jf);
  }
  std::ofstream out((fs::path(dir) / ("transforms_" + split + ".json")).string());
  out << j.dump(2) << "\n";
}

// ---- analytic scene -------------------------------------------------------

MotionKind motion_from_string(const std::string& s) {
  if (s == "translate") return MotionKind::kTranslate;
  if (s == "rotate") return MotionKind::kRotate;
  if (s == "sine") return MotionKind::kSine;
  throw std::invalid_argument("unknown motion kind: " + s);
}

std::string motion_to_string(MotionKind m) {
  switch (m) {
    case MotionKind::kTranslate: return "translate";
    case MotionKind::kRotate: return "rotate";
    case MotionKind::kSine: return "sine";
  }
  return "translate";
}

Vec3 AnalyticScene::deform(const Vec3& x, double t) const {
  switch (kind) {
    case MotionKind::kTranslate:
      return axis * (-amplitude * t);
    case MotionKind::kSine:
      return axis * (-amplitude * std::sin(2.0 * std::numbers::pi * t));
    case MotionKind::kRotate: {
      // rigid rotation about the z axis by angle amplitude * t:
      // canonical point = R(-theta) x, displacement = R(-theta) x - x
      const double c = std::cos(amplitude * t), s = std::sin(amplitude * t);
      const Vec3 back{c * x.x + s * x.y, -s * x.x + c * x.y, x.z};
      return back - x;
    }
  }
  return {0, 0, 0};
}

double AnalyticScene::sigma_at(const Vec3& x, double t) const {
  const Vec3 canonical = x + deform(x, t);
  double sigma = 0.0;
  for (const auto& blob : blobs) {
    const Vec3 d = canonical - blob.center;
    sigma += blob.peak * std::exp(-d.dot(d) / (2.0 * blob.radius * blob.radius));
  }
  return sigma;
}

Color3 AnalyticScene::color_at(const Vec3& x, double t) const {
  const Vec3 canonical = x + deform(x, t);
  double total = 0.0;
  Color3 out{0, 0, 0};
  for (const auto& blob : blobs) {
    const Vec3 d = canonical - blob.center;
    const double w = blob.peak * std::exp(-d.dot(d) / (2.0 * blob.radius * blob.radius));
    // gentle spatial modulation inside the blob so structure is non-trivial
    const double shade = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * d.x / blob.radius * 0.5);
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] += w * std::clamp(blob.color[static_cast<std::size_t>(c)] * shade, 0.0, 1.0);
    total += w;
  }
  if (total <= 1e-300) return {0.5, 0.5, 0.5};
  for (auto& c : out) c /= total;
  return out;
}

void AnalyticScene::save(const std::string& path) const {
  json j;
  j["kind"] = motion_to_string(kind);
  j["axis"] = {axis.x, axis.y, axis.z};
  j["amplitude"] = amplitude;
  j["background"] = {background[0], background[1], background[2]};
  j["blobs"] = json::array();
  for (const auto& b : blobs) {
    j["blobs"].push_back({{"center", {b.center.x, b.center.y, b.center.z}},
                          {"radius", b.radius},
                          {"peak", b.peak},
                          {"color", {b.color[0], b.color[1], b.color[2]}}});
  }
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

AnalyticScene AnalyticScene::load(const std::string& path) {
  const json j = load_json(path);
  AnalyticScene s;
  s.kind = motion_from_string(j.at("kind").get<std::string>());
  s.axis = {j.at("axis")[0].get<double>(), j.at("axis")[1].get<double>(), j.at("axis")[2].get<double>()};
  s.amplitude = j.at("amplitude").get<double>();
  s.background = {j.at("background")[0].get<double>(), j.at("background")[1].get<double>(),
                  j.at("background")[2].get<double>()};
  for (const auto& jb : j.at("blobs")) {
    AnalyticScene::Blob b;
    b.center = {jb.at("center")[0].get<double>(), jb.at("center")[1].get<double>(),
                jb.at("center")[2].get<double>()};
    b.radius = jb.at("radius").get<double>();
    b.peak = jb.at("peak").get<double>();
    b.color = {jb.at("color")[0].get<double>(), jb.at("color")[1].get<double>(),
               jb.at("color")[2].get<double>()};
    s.blobs.push_back(b);
  }
  return s;
}

Image render_analytic(const AnalyticScene& scene, const Mat4& pose, double t, int width, int height,
                      double camera_angle_x, double near, double far, int samples,
                      std::vector<double>* alpha_out) {
  std::vector<std::pair<int, int>> pixels;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) pixels.emplace_back(x, y);
  }
  auto rays = generate_rays(pose, camera_angle_x, width, height, pixels, t, near, far);
  Image img(width, height);
  if (alpha_out != nullptr) alpha_out->assign(img.pixels(), 0.0);

  SampleBatch sb;
  sb.s = sample_stratified(near, far, samples, nullptr);
  sb.delta = segment_lengths(quadrature_boundaries(sb.s, near, far));
  sb.sigma.resize(sb.s.size());
  sb.color.resize(sb.s.size());
  for (const auto& ray : rays) {
    for (std::size_t k = 0; k < sb.s.size(); ++k) {
      const Vec3 p = ray.origin + ray.dir * sb.s[k];
      sb.sigma[k] = scene.sigma_at(p, t);
      sb.color[k] = scene.color_at(p, t);
    }
    const Color3 rgb = composite(sb, scene.background);
    for (int c = 0; c < 3; ++c) img.at(ray.py, ray.px, c) = rgb[static_cast<std::size_t>(c)];
    if (alpha_out != nullptr) {
      (*alpha_out)[static_cast<std::size_t>(ray.py) * width + static_cast<std::size_t>(ray.px)] =
          1.0 - sb.t_final;
    }
  }
  return img;
}

std::pair<SceneDataset, AnalyticScene> generate_blob_scene(const BlobSceneConfig& cfg,
                                                           const std::string& out_dir) {
  if (cfg.n_frames < 3) throw std::invalid_argument("need at least 3 frames");
  if (cfg.n_train < 1 || cfg.n_test < 1) throw std::invalid_argument("need train and test views");

  AnalyticScene scene;
  scene.kind = cfg.motion;
  scene.amplitude = cfg.amplitude;
  scene.axis = cfg.motion == MotionKind::kRotate ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
  scene.background = cfg.background;
  Rng rng(cfg.seed);
  const Color3 palette[4] = {{0.85, 0.25, 0.2}, {0.2, 0.45, 0.85}, {0.25, 0.8, 0.35}, {0.9, 0.75, 0.2}};
  for (int i = 0; i < cfg.n_blobs; ++i) {
    AnalyticScene::Blob b;
    b.center = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4)};
    b.radius = 0.25;
    b.peak = 8.0;
    b.color = palette[i % 4];
    scene.blobs.push_back(b);
  }

  fs::create_directories(fs::path(out_dir) / "train");
  fs::create_directories(fs::path(out_dir) / "test");

  auto make_pose = [&](Rng& r) {
    // upper hemisphere view toward the origin
    const double az = r.uniform(0.0, 2.0 * std::numbers::pi);
    const double el = r.uniform(0.35, 1.1);
    const Vec3 eye{cfg.camera_radius * std::cos(el) * std::cos(az),
                   cfg.camera_radius * std::cos(el) * std::sin(az),
                   cfg.camera_radius * std::sin(el)};
    return look_at(eye, Vec3{0, 0, 0}, Vec3{0, 0, 1});
  };

  auto build_split = [&](const std::string& split, const std::vector<int>& frame_indices, Rng& r) {
    SceneDataset ds;
    ds.camera_angle_x = cfg.camera_angle_x;
    ds.width = cfg.image_size;
    ds.height = cfg.image_size;
    ds.near = cfg.near;
    ds.far = cfg.far;
    ds.background = cfg.background;
    for (std::size_t i = 0; i < frame_indices.size(); ++i) {
      SceneFrame f;
      const int frame_idx = frame_indices[i];
      f.time = static_cast<double>(frame_idx) / (cfg.n_frames - 1);
      f.c2w = make_pose(r);
      char name[64];
      std::snprintf(name, sizeof(name), "%s/r_%03d", split.c_str(), static_cast<int>(i));
      f.file_path = name;
      ds.frames.push_back(f);
    }
    std::stable_sort(ds.frames.begin(), ds.frames.end(),
                     [](const SceneFrame& a, const SceneFrame& b) { return a.time < b.time; });
    for (auto& f : ds.frames) {
      std::vector<double> alpha;
      // straight-alpha RGBA: colors without the background, coverage in alpha
      AnalyticScene no_bg = scene;
      no_bg.background = {0, 0, 0};
      Image obj = render_analytic(no_bg, f.c2w, f.time, cfg.image_size, cfg.image_size,
                                  cfg.camera_angle_x, cfg.near, cfg.far, cfg.gt_samples, &alpha);
      Image straight(obj.width, obj.height);
      for (std::size_t px = 0; px < obj.pixels(); ++px) {
        const double a = alpha[px];
        for (int c = 0; c < 3; ++c) {
          straight.px[px * 3 + static_cast<std::size_t>(c)] =
              a > 1e-9 ? obj.px[px * 3 + static_cast<std::size_t>(c)] / a : 0.0;
        }
      }
      write_png_rgba((fs::path(out_dir) / (f.file_path + ".png")).string(), straight, alpha);
      ds.images.push_back(read_png((fs::path(out_dir) / (f.file_path + ".png")).string(),
                                   cfg.background));
    }
    for (const auto& f : ds.frames) {
      if (ds.timeline.times.empty() || f.time > ds.timeline.times.back()) {
        ds.timeline.times.push_back(f.time);
      }
    }
    save_transforms(out_dir, split, ds);
    return ds;
  };

  // Train views cycle through every frame; test views spread over the
  // timeline so evaluation sees early, middle, and late motion.
  std::vector<int> train_frames, test_frames;
  for (int i = 0; i < cfg.n_train; ++i) train_frames.push_back(i % cfg.n_frames);
  for (int i = 0; i < cfg.n_test; ++i) {
    test_frames.push_back(cfg.n_test == 1
                              ? 0
                              : static_cast<int>(std::lround(static_cast<double>(i) *
                                                             (cfg.n_frames - 1) / (cfg.n_test - 1))));
  }
  Rng train_rng = rng.split(100);
  Rng test_rng = rng.split(200);
  SceneDataset train = build_split("train", train_frames, train_rng);
  build_split("test", test_frames, test_rng);
  scene.save((fs::path(out_dir) / "analytic.json").string());
  return {std::move(train), std::move(scene)};
}

}  // namespace kdrf
