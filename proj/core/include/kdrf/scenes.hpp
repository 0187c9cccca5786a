#pragma once

#include <optional>

#include "kdrf/deformation.hpp"
#include "kdrf/image.hpp"
#include "kdrf/renderer.hpp"

namespace kdrf {

struct SceneFrame {
  std::string file_path;  // extensionless, relative to the dataset root
  double time = 0.0;
  Mat4 c2w;
};

struct SceneDataset {
  double camera_angle_x = 0.6911112;
  int width = 0, height = 0;
  double near = 2.0, far = 6.0;
  Color3 background{1, 1, 1};
  std::vector<SceneFrame> frames;  // sorted by time (stable)
  std::vector<Image> images;       // aligned with frames
  Timeline timeline;               // distinct times, ascending

  int frame_index(double t) const { return timeline.index_near(t); }
};

// Reads <dir>/transforms_<split>.json plus the referenced RGBA PNGs,
// compositing alpha onto `background`. Frames are sorted by time after
// load regardless of file order. Rejections name the path and field.
SceneDataset load_dataset(const std::string& dir, const std::string& split,
                          const Color3& background);

// Writes a dataset in the same on-disk format load_dataset reads
// (poses as decimal text; optional near/far/background passthrough keys).
void save_transforms(const std::string& dir, const std::string& split, const SceneDataset& ds);

// ---- procedural dynamic scene with analytic ground truth -----------------

enum class MotionKind { kTranslate, kRotate, kSine };
MotionKind motion_from_string(const std::string& s);
std::string motion_to_string(MotionKind m);

// Gaussian blobs moving rigidly; frame 0 is the canonical configuration,
// so d(x, 0) = 0 by construction and the frame-t density at x equals the
// canonical density at x + d(x, t).
struct AnalyticScene {
  struct Blob {
    Vec3 center;  // canonical (frame 0) position
    double radius = 0.25;
    double peak = 8.0;
    Color3 color{0.8, 0.3, 0.2};
  };
  MotionKind kind = MotionKind::kTranslate;
  Vec3 axis{1, 0, 0};      // translation / oscillation direction, or rotation axis (z)
  double amplitude = 0.4;  // displacement scale or rotation angle scale (radians)
  std::vector<Blob> blobs;
  Color3 background{1, 1, 1};

  Vec3 deform(const Vec3& x, double t) const;  // displacement into canonical space
  double sigma_at(const Vec3& x, double t) const;
  Color3 color_at(const Vec3& x, double t) const;

  void save(const std::string& path) const;
  static AnalyticScene load(const std::string& path);
};

struct BlobSceneConfig {
  int n_frames = 8;
  int image_size = 40;
  int n_train = 20;
  int n_test = 4;
  MotionKind motion = MotionKind::kTranslate;
  double amplitude = 0.4;
  int n_blobs = 2;
  int gt_samples = 512;  // quadrature points per ray for ground truth
  std::uint64_t seed = 7;
  double camera_radius = 4.0;
  double camera_angle_x = 0.6911112;
  double near = 2.0, far = 6.0;
  Color3 background{1, 1, 1};
};

// Renders ground-truth images by dense quadrature and writes the dataset
// (transforms json + RGBA PNGs + analytic parameters) under out_dir.
std::pair<SceneDataset, AnalyticScene> generate_blob_scene(const BlobSceneConfig& cfg,
                                                           const std::string& out_dir);

// Dense-quadrature render of the closed-form fields; quadrature matches
// composite() exactly (same sample placement). alpha_out, when non-null,
// receives 1 - T_final per pixel.
Image render_analytic(const AnalyticScene& scene, const Mat4& pose, double t, int width, int height,
                      double camera_angle_x, double near, double far, int samples,
                      std::vector<double>* alpha_out);

}  // namespace kdrf
