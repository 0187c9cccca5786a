#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kdrf/scenes.hpp"

using namespace kdrf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("kdrf_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter() {
    static int c = 0;
    return c++;
  }
};

BlobSceneConfig tiny_scene_config() {
  BlobSceneConfig cfg;
  cfg.n_frames = 3;
  cfg.image_size = 16;
  cfg.n_train = 4;
  cfg.n_test = 2;
  cfg.gt_samples = 64;
  cfg.n_blobs = 1;
  return cfg;
}

}  // namespace

TEST_CASE("a one-frame fixture round-trips through the loader") {
  TempDir dir;
  fs::create_directories(dir.path / "train");
  Image img(8, 8, {0.5, 0.25, 0.75});
  write_png_rgba((dir.path / "train/r_000.png").string(), img, std::vector<double>(64, 1.0));
  {
    std::ofstream out(dir.path / "transforms_train.json");
    out << R"({"camera_angle_x": 0.6911112, "frames": [
      {"file_path": "train/r_000", "time": 0.0,
       "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]})";
  }
  auto ds = load_dataset(dir.path.string(), "train", {1, 1, 1});
  REQUIRE(ds.frames.size() == 1);
  CHECK(ds.frames[0].time == 0.0);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(ds.frames[0].c2w(r, c) == (r == c ? 1.0 : 0.0));
  }
  CHECK(ds.width == 8);
  CHECK(ds.images[0].at(3, 3, 0) == doctest::Approx(0.5).epsilon(1e-2));
}

TEST_CASE("frames are sorted by time regardless of file order") {
  TempDir dir;
  fs::create_directories(dir.path / "train");
  for (int i = 0; i < 3; ++i) {
    Image img(8, 8, {0.1 * i, 0, 0});
    write_png_rgba((dir.path / ("train/r_00" + std::to_string(i) + ".png")).string(), img,
                   std::vector<double>(64, 1.0));
  }
  {
    std::ofstream out(dir.path / "transforms_train.json");
    out << R"({"camera_angle_x": 0.7, "frames": [
      {"file_path": "train/r_000", "time": 0.9, "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]},
      {"file_path": "train/r_001", "time": 0.1, "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]},
      {"file_path": "train/r_002", "time": 0.5, "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]})";
  }
  auto ds = load_dataset(dir.path.string(), "train", {0, 0, 0});
  REQUIRE(ds.frames.size() == 3);
  CHECK(ds.frames[0].time == 0.1);
  CHECK(ds.frames[1].time == 0.5);
  CHECK(ds.frames[2].time == 0.9);
  CHECK(ds.timeline.times == std::vector<double>{0.1, 0.5, 0.9});
}

TEST_CASE("loader rejections name the path and field") {
  TempDir dir;
  CHECK_THROWS_WITH_AS(load_dataset(dir.path.string(), "train", {1, 1, 1}),
                       doctest::Contains("transforms_train.json"), std::runtime_error);

  {
    std::ofstream out(dir.path / "transforms_train.json");
    out << R"({"camera_angle_x": 0.7, "frames": [
      {"file_path": "x", "time": 1.5, "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]})";
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir.path.string(), "train", {1, 1, 1}),
                       doctest::Contains("time"), std::runtime_error);

  {
    std::ofstream out(dir.path / "transforms_train.json");
    out << R"({"camera_angle_x": 0.7, "frames": [
      {"file_path": "x", "time": 0.5, "transform_matrix": [[1,0,0],[0,1,0],[0,0,1]]}]})";
  }
  CHECK_THROWS_WITH_AS(load_dataset(dir.path.string(), "train", {1, 1, 1}),
                       doctest::Contains("transform_matrix"), std::runtime_error);
}

TEST_CASE("generated datasets round-trip losslessly") {
  TempDir dir;
  auto cfg = tiny_scene_config();
  auto [train, scene] = generate_blob_scene(cfg, dir.path.string());
  auto reloaded = load_dataset(dir.path.string(), "train", cfg.background);
  REQUIRE(reloaded.frames.size() == train.frames.size());
  for (std::size_t i = 0; i < train.frames.size(); ++i) {
    CHECK(reloaded.frames[i].time == train.frames[i].time);
    CHECK(reloaded.frames[i].file_path == train.frames[i].file_path);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        CHECK(std::abs(reloaded.frames[i].c2w(r, c) - train.frames[i].c2w(r, c)) <= 1e-12);
      }
    }
    for (std::size_t px = 0; px < train.images[i].px.size(); ++px) {
      CHECK(reloaded.images[i].px[px] == train.images[i].px[px]);
    }
  }
}

TEST_CASE("a zero-velocity blob renders identically at every frame") {
  TempDir dir;
  auto cfg = tiny_scene_config();
  cfg.amplitude = 0.0;
  auto [train, scene] = generate_blob_scene(cfg, dir.path.string());
  // fix the pose: analytic render at two times must agree pixel for pixel
  const Mat4 pose = train.frames[0].c2w;
  Image a = render_analytic(scene, pose, 0.0, 16, 16, cfg.camera_angle_x, cfg.near, cfg.far, 64, nullptr);
  Image b = render_analytic(scene, pose, 1.0, 16, 16, cfg.camera_angle_x, cfg.near, cfg.far, 64, nullptr);
  for (std::size_t i = 0; i < a.px.size(); ++i) CHECK(a.px[i] == b.px[i]);
}

TEST_CASE("analytic deformation maps frame-t density to the canonical one") {
  AnalyticScene scene;
  scene.kind = MotionKind::kSine;
  scene.axis = {1, 0, 0};
  scene.amplitude = 0.35;
  scene.blobs.push_back({{0.1, -0.2, 0.05}, 0.25, 8.0, {0.8, 0.2, 0.2}});
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double t = rng.uniform(0, 1);
    const Vec3 canonical = x + scene.deform(x, t);
    CHECK(scene.sigma_at(x, t) == doctest::Approx(scene.sigma_at(canonical, 0.0)).epsilon(1e-12));
    CHECK(scene.deform(x, 0.0).x == 0.0);
  }
}

TEST_CASE("rotation deformation is consistent too") {
  AnalyticScene scene;
  scene.kind = MotionKind::kRotate;
  scene.axis = {0, 0, 1};
  scene.amplitude = 0.8;
  scene.blobs.push_back({{0.4, 0.0, 0.0}, 0.25, 8.0, {0.2, 0.8, 0.2}});
  Rng rng(6);
  for (int rep = 0; rep < 30; ++rep) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double t = rng.uniform(0, 1);
    const Vec3 canonical = x + scene.deform(x, t);
    CHECK(scene.sigma_at(x, t) == doctest::Approx(scene.sigma_at(canonical, 0.0)).epsilon(1e-10));
  }
}

TEST_CASE("translate motion shifts the image content consistently") {
  // frame-t analytic density equals the frame-0 density sampled at the
  // translated position (world-space identity, checked directly)
  AnalyticScene scene;
  scene.kind = MotionKind::kTranslate;
  scene.axis = {1, 0, 0};
  scene.amplitude = 0.4;
  scene.blobs.push_back({{0.0, 0.1, -0.1}, 0.25, 8.0, {0.9, 0.4, 0.1}});
  Rng rng(7);
  for (int rep = 0; rep < 30; ++rep) {
    const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double t = rng.uniform(0, 1);
    const Vec3 shifted = x - scene.axis * (scene.amplitude * t);
    CHECK(scene.sigma_at(x, t) == doctest::Approx(scene.sigma_at(shifted, 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("doubling ground-truth quadrature barely changes the image") {
  AnalyticScene scene;
  scene.kind = MotionKind::kTranslate;
  scene.axis = {1, 0, 0};
  scene.amplitude = 0.3;
  scene.blobs.push_back({{0.0, 0.0, 0.0}, 0.25, 8.0, {0.8, 0.3, 0.2}});
  const Mat4 pose = look_at({0, -4, 0.5}, {0, 0, 0}, {0, 0, 1});
  Image a = render_analytic(scene, pose, 0.5, 24, 24, 0.6911112, 2.0, 6.0, 512, nullptr);
  Image b = render_analytic(scene, pose, 0.5, 24, 24, 0.6911112, 2.0, 6.0, 1024, nullptr);
  double max_diff = 0;
  for (std::size_t i = 0; i < a.px.size(); ++i) max_diff = std::max(max_diff, std::abs(a.px[i] - b.px[i]));
  CHECK(max_diff < 1e-4);
}

TEST_CASE("analytic scene parameters round-trip through json") {
  TempDir dir;
  AnalyticScene scene;
  scene.kind = MotionKind::kSine;
  scene.axis = {0.6, 0.8, 0.0};
  scene.amplitude = 0.45;
  scene.blobs.push_back({{0.25, -0.5, 0.125}, 0.3, 6.5, {0.1, 0.2, 0.3}});
  const std::string path = (dir.path / "analytic.json").string();
  scene.save(path);
  auto loaded = AnalyticScene::load(path);
  CHECK(loaded.kind == MotionKind::kSine);
  CHECK(loaded.amplitude == 0.45);
  CHECK(loaded.blobs.size() == 1);
  CHECK(loaded.blobs[0].center.y == -0.5);
  CHECK(loaded.blobs[0].peak == 6.5);
}
