// Command-line entry points: gen-scene, train, render, eval, gradcheck,
// kalman-demo.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "kdrf/config.hpp"
#include "kdrf/gradsuite.hpp"
#include "kdrf/kalman.hpp"
#include "kdrf/metrics.hpp"
#include "kdrf/threadpool.hpp"
#include "kdrf/trainer.hpp"

namespace fs = std::filesystem;
using namespace kdrf;

namespace {

ModelConfig model_config_from_train(const TrainConfig& cfg, double bounds) {
  ModelConfig mc;
  mc.lo = -bounds;
  mc.hi = bounds;
  mc.enable_prediction = cfg.enable_prediction_branch;
  mc.stopgrad_prediction = cfg.stopgrad_prediction;
  mc.concat_prewarp = cfg.concat_raw == "prewarp";
  mc.init_seed = cfg.seed;
  return mc;
}

SceneModel model_from_checkpoint(const std::string& path, AdamState* adam, CheckpointInfo* info) {
  auto manifest = read_checkpoint_manifest(path);
  SceneModel model = make_scene_model(ModelConfig::from_kv(manifest));
  auto loaded = load_checkpoint(path, model, adam);
  if (info != nullptr) *info = loaded;
  return model;
}

void write_default_train_config(const std::string& path, const std::string& dataset_dir,
                                const std::string& out_dir, long long total_steps) {
  std::ofstream out(path);
  out << "# training configuration\n"
      << "learning_rate=0.001\n"
      << "ray_batch=1024\n"
      << "total_steps=" << total_steps << "\n"
      << "release_steps=" << total_steps / 4 << "\n"
      << "seed=1\n"
      << "enable_prediction_branch=true\n"
      << "enable_l_kf=true\n"
      << "enable_l_co=true\n"
      << "stopgrad_prediction=false\n"
      << "concat_raw=postwarp\n"
      << "dataset=" << dataset_dir << "\n"
      << "out=" << out_dir << "\n";
}

int cmd_gen_scene(const std::string& out_dir, int frames, int size, int train_views, int test_views,
                  const std::string& motion, double amplitude, int blobs, std::uint64_t seed,
                  int gt_samples, long long config_steps) {
  BlobSceneConfig cfg;
  cfg.n_frames = frames;
  cfg.image_size = size;
  cfg.n_train = train_views;
  cfg.n_test = test_views;
  cfg.motion = motion_from_string(motion);
  cfg.amplitude = amplitude;
  cfg.n_blobs = blobs;
  cfg.seed = seed;
  cfg.gt_samples = gt_samples;
  fs::create_directories(out_dir);
  generate_blob_scene(cfg, out_dir);
  write_default_train_config((fs::path(out_dir) / "train_config.txt").string(), out_dir,
                             (fs::path(out_dir) / "run").string(), config_steps);
  std::cout << "scene written to " << out_dir << " (" << train_views << " train / " << test_views
            << " test views, " << frames << " frames)\n";
  return 0;
}

struct TrainCliOverrides {
  std::string dataset, out, concat_raw;
  long long total_steps = -1, release_steps = -2, ray_batch = -1, checkpoint_every = -1;
  double learning_rate = -1;
  std::int64_t seed = -1;
  int enable_prediction = -1, enable_l_kf = -1, enable_l_co = -1, stopgrad_prediction = -1,
      l_co_l1 = -1;
  int n_proposal = -1, m_fine = -1, threads = 0;
  double bounds = 1.5;
  std::string resume;
};

int cmd_train(const std::string& config_path, const TrainCliOverrides& o) {
  TrainConfig cfg = TrainConfig::from_kv(parse_kv_file(config_path));
  if (!o.dataset.empty()) cfg.dataset = o.dataset;
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.concat_raw.empty()) cfg.concat_raw = o.concat_raw;
  if (o.total_steps >= 0) cfg.total_steps = o.total_steps;
  if (o.release_steps >= -1) cfg.release_steps = o.release_steps;
  if (o.ray_batch >= 0) cfg.ray_batch = o.ray_batch;
  if (o.checkpoint_every >= 0) cfg.checkpoint_every = o.checkpoint_every;
  if (o.learning_rate >= 0) cfg.learning_rate = o.learning_rate;
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (o.enable_prediction >= 0) cfg.enable_prediction_branch = o.enable_prediction != 0;
  if (o.enable_l_kf >= 0) cfg.enable_l_kf = o.enable_l_kf != 0;
  if (o.enable_l_co >= 0) cfg.enable_l_co = o.enable_l_co != 0;
  if (o.stopgrad_prediction >= 0) cfg.stopgrad_prediction = o.stopgrad_prediction != 0;
  if (o.l_co_l1 >= 0) cfg.l_co_l1 = o.l_co_l1 != 0;
  if (o.n_proposal > 0) cfg.n_proposal = o.n_proposal;
  if (o.m_fine > 0) cfg.m_fine = o.m_fine;
  cfg.threads = o.threads;
  if (cfg.dataset.empty() || cfg.out.empty()) {
    throw std::runtime_error("config must provide dataset and out paths");
  }

  SceneDataset dataset = load_dataset(cfg.dataset, "train", {1, 1, 1});
  ThreadPool pool(cfg.threads);

  const auto t0 = std::chrono::steady_clock::now();
  if (!o.resume.empty()) {
    AdamState adam;
    CheckpointInfo info;
    SceneModel model = model_from_checkpoint(o.resume, &adam, &info);
    if (info.config_hash != cfg.hash()) {
      throw std::runtime_error("resume checkpoint was written under a different config");
    }
    run_training(model, dataset, cfg, &pool, info.step, &adam);
  } else {
    SceneModel model = make_scene_model(model_config_from_train(cfg, o.bounds));
    run_training(model, dataset, cfg, &pool);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << cfg.total_steps << " steps in " << secs << " s; checkpoint at "
            << (fs::path(cfg.out) / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_render(const std::string& ckpt, const std::string& dataset_dir, const std::string& out_dir,
               const std::string& split, int sweep, int threads) {
  SceneModel model = model_from_checkpoint(ckpt, nullptr, nullptr);
  SceneDataset train = load_dataset(dataset_dir, "train", {1, 1, 1});
  SceneDataset target = split == "train" ? std::move(train) : load_dataset(dataset_dir, split, {1, 1, 1});
  const Timeline& tl = split == "train" ? target.timeline : train.timeline;

  fs::create_directories(out_dir);
  ThreadPool pool(threads);
  SamplingConfig sampling;
  if (sweep > 0) {
    const Mat4 pose = target.frames.front().c2w;
    for (int i = 0; i < sweep; ++i) {
      const double t = sweep == 1 ? 0.0 : static_cast<double>(i) / (sweep - 1);
      Image img = render_image(model, tl, pose, target.camera_angle_x, target.width, target.height,
                               t, sampling, target.background, target.near, target.far, &pool);
      char name[64];
      std::snprintf(name, sizeof(name), "sweep_%03d.png", i);
      write_png((fs::path(out_dir) / name).string(), img);
    }
    std::cout << "wrote " << sweep << " sweep frames to " << out_dir << "\n";
  } else {
    for (std::size_t i = 0; i < target.frames.size(); ++i) {
      const auto& f = target.frames[i];
      Image img = render_image(model, tl, f.c2w, target.camera_angle_x, target.width, target.height,
                               f.time, sampling, target.background, target.near, target.far, &pool);
      char name[64];
      std::snprintf(name, sizeof(name), "frame_%03d.png", static_cast<int>(i));
      write_png((fs::path(out_dir) / name).string(), img);
    }
    std::cout << "wrote " << target.frames.size() << " frames to " << out_dir << "\n";
  }
  return 0;
}

MetricReport evaluate(const SceneModel& model, const Timeline& tl, const SceneDataset& test,
                      const std::string& dataset_dir, ThreadPool* pool) {
  MetricReport report;
  SamplingConfig sampling;
  for (std::size_t i = 0; i < test.frames.size(); ++i) {
    const auto& f = test.frames[i];
    Image rendered = render_image(model, tl, f.c2w, test.camera_angle_x, test.width, test.height,
                                  f.time, sampling, test.background, test.near, test.far, pool);
    MetricRecord rec;
    rec.index = static_cast<int>(i);
    rec.psnr = psnr(rendered, test.images[i]);
    rec.ssim = ssim(rendered, test.images[i]);
    rec.average2 = average2(rec.psnr, rec.ssim);
    report.per_image.push_back(rec);
  }
  for (const auto& r : report.per_image) {
    report.mean_psnr += r.psnr;
    report.mean_ssim += r.ssim;
  }
  report.mean_psnr /= static_cast<double>(report.per_image.size());
  report.mean_ssim /= static_cast<double>(report.per_image.size());
  report.mean_average2 = average2(report.mean_psnr, report.mean_ssim);

  // Learned deformation vs analytic ground truth, when available.
  const std::string analytic_path = (fs::path(dataset_dir) / "analytic.json").string();
  if (fs::exists(analytic_path)) {
    AnalyticScene scene = AnalyticScene::load(analytic_path);
    Rng rng(123);
    double acc = 0.0;
    const int n = 2048;
    for (int i = 0; i < n; ++i) {
      const Vec3 x{rng.uniform(model.cfg.lo, model.cfg.hi), rng.uniform(model.cfg.lo, model.cfg.hi),
                   rng.uniform(model.cfg.lo, model.cfg.hi)};
      const int frame = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(tl.size())));
      const auto est = estimate_point(model.store, model.deform, x, frame, tl);
      const Vec3 gt = scene.deform(x, tl.at(frame));
      const Vec3 d = est.fused - gt;
      acc += d.dot(d);
    }
    report.deformation_rmse = std::sqrt(acc / n);
  }
  return report;
}

std::string format_report(const MetricReport& report) {
  std::ostringstream os;
  os.precision(10);
  for (const auto& r : report.per_image) {
    os << "image=" << r.index << " psnr=" << r.psnr << " ssim=" << r.ssim
       << " average2=" << r.average2 << "\n";
  }
  os << "mean psnr=" << report.mean_psnr << " ssim=" << report.mean_ssim
     << " average2=" << report.mean_average2;
  if (report.deformation_rmse) os << " deformation_rmse=" << *report.deformation_rmse;
  os << "\n";
  return os.str();
}

int cmd_eval(const std::string& ckpt, const std::string& dataset_dir, const std::string& out_path,
             int threads) {
  SceneModel model = model_from_checkpoint(ckpt, nullptr, nullptr);
  SceneDataset train = load_dataset(dataset_dir, "train", {1, 1, 1});
  SceneDataset test = load_dataset(dataset_dir, "test", {1, 1, 1});
  ThreadPool pool(threads);
  const MetricReport report = evaluate(model, train.timeline, test, dataset_dir, &pool);
  const std::string text = format_report(report);
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << text;
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int rays, double step, double tolerance, int threads) {
  ThreadPool pool(threads);
  const auto t0 = std::chrono::steady_clock::now();
  auto report = full_pipeline_gradcheck(seed, rays, step, &pool);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "checked " << report.params_checked << " parameters in " << secs
            << " s: max relative error " << report.max_rel_err << " at " << report.worst_param
            << "\n";
  if (report.max_rel_err > tolerance) {
    std::cerr << "gradcheck FAILED (tolerance " << tolerance << ")\n";
    return 1;
  }
  std::cout << "gradcheck passed (tolerance " << tolerance << ")\n";
  return 0;
}

int cmd_kalman_demo(int steps, std::uint64_t seed) {
  using namespace kdrf::kalman;
  Rng rng(seed);
  LinearGaussianSystem sys;
  sys.a = 0.95;
  sys.b = 0.1;
  sys.c = 1.0;
  sys.q = 0.05;
  sys.r = 0.4;
  FilterState state{0.0, 1.0};
  double truth = 0.0;
  std::cout << "step   control     truth  observed  estimate      gain         P\n";
  for (int t = 0; t < steps; ++t) {
    const double u = std::sin(0.3 * t);
    truth = sys.a * truth + sys.b * u + std::sqrt(sys.q) * rng.normal();
    const double y = sys.c * truth + std::sqrt(sys.r) * rng.normal();
    const auto pred = predict(state, sys, u);
    const auto res = update(pred, sys, y);
    state = res.state;
    std::printf("%4d %9.4f %9.4f %9.4f %9.4f %9.5f %9.6f\n", t, u, truth, y, state.x, res.gain,
                state.p);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kalman-guided deformable radiance field"};
  app.require_subcommand(1);

  // gen-scene
  auto* gen = app.add_subcommand("gen-scene", "generate a procedural dynamic scene with ground truth");
  std::string gen_out = "scene";
  int gen_frames = 8, gen_size = 40, gen_train = 20, gen_test = 4, gen_blobs = 2, gen_gt = 512;
  long long gen_config_steps = 2000;
  std::string gen_motion = "translate";
  double gen_amplitude = 0.4;
  std::uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--frames", gen_frames, "number of distinct timestamps");
  gen->add_option("--size", gen_size, "image side length");
  gen->add_option("--train-views", gen_train, "training view count");
  gen->add_option("--test-views", gen_test, "test view count");
  gen->add_option("--motion", gen_motion, "translate | rotate | sine");
  gen->add_option("--amplitude", gen_amplitude, "motion amplitude");
  gen->add_option("--blobs", gen_blobs, "number of Gaussian blobs");
  gen->add_option("--seed", gen_seed, "scene seed");
  gen->add_option("--gt-samples", gen_gt, "quadrature samples per ground-truth ray");
  gen->add_option("--config-steps", gen_config_steps, "total_steps written to train_config.txt");

  // train
  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string train_config;
  TrainCliOverrides ov;
  train->add_option("--config", train_config, "key=value config file")->required();
  train->add_option("--dataset", ov.dataset, "override dataset directory");
  train->add_option("--out", ov.out, "override output directory");
  train->add_option("--seed", ov.seed, "override seed");
  train->add_option("--total-steps", ov.total_steps, "override total steps");
  train->add_option("--release-steps", ov.release_steps, "override release steps");
  train->add_option("--ray-batch", ov.ray_batch, "override ray batch");
  train->add_option("--learning-rate", ov.learning_rate, "override learning rate");
  train->add_option("--enable-prediction-branch", ov.enable_prediction, "0/1 ablation switch");
  train->add_option("--enable-l-kf", ov.enable_l_kf, "0/1 ablation switch");
  train->add_option("--enable-l-co", ov.enable_l_co, "0/1 ablation switch");
  train->add_option("--stopgrad-prediction", ov.stopgrad_prediction, "0/1 ablation switch");
  train->add_option("--concat-raw", ov.concat_raw, "postwarp | prewarp");
  train->add_option("--l-co-l1", ov.l_co_l1, "0/1: L1 canonical loss variant");
  train->add_option("--n-proposal", ov.n_proposal, "proposal samples per ray");
  train->add_option("--m-fine", ov.m_fine, "fine samples per ray");
  train->add_option("--threads", ov.threads, "worker threads (0 = hardware)");
  train->add_option("--checkpoint-every", ov.checkpoint_every, "periodic checkpoint interval");
  train->add_option("--bounds", ov.bounds, "canonical half-extent");
  train->add_option("--resume", ov.resume, "resume from checkpoint");

  // render
  auto* render = app.add_subcommand("render", "render frames from a checkpoint");
  std::string r_ckpt, r_dataset, r_out = "renders", r_split = "test";
  int r_sweep = 0, r_threads = 0;
  render->add_option("--checkpoint", r_ckpt)->required();
  render->add_option("--dataset", r_dataset)->required();
  render->add_option("--out", r_out, "output directory");
  render->add_option("--split", r_split, "train | test");
  render->add_option("--sweep", r_sweep, "render N frames sweeping t in [0,1] at the first pose");
  render->add_option("--threads", r_threads);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "compute PSNR/SSIM on the test split");
  std::string e_ckpt, e_dataset, e_out;
  int e_threads = 0;
  eval_cmd->add_option("--checkpoint", e_ckpt)->required();
  eval_cmd->add_option("--dataset", e_dataset)->required();
  eval_cmd->add_option("--out", e_out, "also write the report to this file");
  eval_cmd->add_option("--threads", e_threads);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "run the full gradient-check suite");
  std::uint64_t gc_seed = 3;
  int gc_rays = 4, gc_threads = 0;
  double gc_step = 1e-5, gc_tol = 1e-3;
  gc->add_option("--seed", gc_seed);
  gc->add_option("--rays", gc_rays);
  gc->add_option("--step", gc_step, "finite-difference step");
  gc->add_option("--tolerance", gc_tol);
  gc->add_option("--threads", gc_threads);

  // kalman-demo
  auto* kd = app.add_subcommand("kalman-demo", "run the scalar filter on a simulated trajectory");
  int kd_steps = 30;
  std::uint64_t kd_seed = 42;
  kd->add_option("--steps", kd_steps);
  kd->add_option("--seed", kd_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_scene(gen_out, gen_frames, gen_size, gen_train, gen_test, gen_motion,
                           gen_amplitude, gen_blobs, gen_seed, gen_gt, gen_config_steps);
    }
    if (train->parsed()) return cmd_train(train_config, ov);
    if (render->parsed()) return cmd_render(r_ckpt, r_dataset, r_out, r_split, r_sweep, r_threads);
    if (eval_cmd->parsed()) return cmd_eval(e_ckpt, e_dataset, e_out, e_threads);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_rays, gc_step, gc_tol, gc_threads);
    if (kd->parsed()) return cmd_kalman_demo(kd_steps, kd_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
