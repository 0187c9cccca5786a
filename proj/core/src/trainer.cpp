#include "kdrf/trainer.hpp"

#include <Eigen/Core>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "kdrf/config.hpp"
#include "kdrf/threadpool.hpp"

namespace kdrf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blocks are little-endian doubles");

using ad::Shape;

// ---- config ----------------------------------------------------------------

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
    else if (key == "ray_batch") cfg.ray_batch = parse_int(key, value);
    else if (key == "total_steps") cfg.total_steps = parse_int(key, value);
    else if (key == "release_steps") cfg.release_steps = parse_int(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "enable_prediction_branch") cfg.enable_prediction_branch = parse_bool(key, value);
    else if (key == "enable_l_kf") cfg.enable_l_kf = parse_bool(key, value);
    else if (key == "enable_l_co") cfg.enable_l_co = parse_bool(key, value);
    else if (key == "stopgrad_prediction") cfg.stopgrad_prediction = parse_bool(key, value);
    else if (key == "concat_raw") {
      if (value != "postwarp" && value != "prewarp") {
        throw std::invalid_argument("concat_raw must be postwarp or prewarp, got '" + value + "'");
      }
      cfg.concat_raw = value;
    } else if (key == "dataset") cfg.dataset = value;
    else if (key == "out") cfg.out = value;
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  if (cfg.ray_batch < 1) throw std::invalid_argument("ray_batch must be >= 1");
  if (cfg.total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  if (cfg.release_steps > cfg.total_steps) {
    throw std::invalid_argument("release_steps must not exceed total_steps");
  }
  return cfg;
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv["learning_rate"] = num(learning_rate);
  kv["ray_batch"] = std::to_string(ray_batch);
  kv["total_steps"] = std::to_string(total_steps);
  kv["release_steps"] = std::to_string(release_steps);
  kv["seed"] = std::to_string(seed);
  kv["enable_prediction_branch"] = enable_prediction_branch ? "true" : "false";
  kv["enable_l_kf"] = enable_l_kf ? "true" : "false";
  kv["enable_l_co"] = enable_l_co ? "true" : "false";
  kv["stopgrad_prediction"] = stopgrad_prediction ? "true" : "false";
  kv["concat_raw"] = concat_raw;
  kv["dataset"] = dataset;
  kv["out"] = out;
  return kv;
}

std::uint64_t TrainConfig::hash() const { return kv_hash(to_kv()); }

long long release_schedule(long long step, long long n_frames, long long release_steps) {
  if (step < 0) throw std::invalid_argument("release_schedule: negative step");
  if (n_frames < 1) return 0;
  if (release_steps <= 0) return n_frames;
  const long long allowed = 1 + step * n_frames / release_steps;
  return std::min(n_frames, allowed);
}

// ---- Adam ------------------------------------------------------------------

AdamState AdamState::zeros_like(const ParamStore& store) {
  AdamState s;
  s.m.resize(store.count());
  s.v.resize(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    const auto n = static_cast<std::size_t>(store.slot(static_cast<int>(i)).size());
    s.m[i].assign(n, 0.0);
    s.v[i].assign(n, 0.0);
  }
  return s;
}

namespace {

constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

void adam_update_range(double* x, double* m, double* v, const double* g, std::size_t n, double lr,
                       double bias1, double bias2) {
  using Arr = Eigen::Map<Eigen::ArrayXd>;
  using CArr = Eigen::Map<const Eigen::ArrayXd>;
  Arr mx(m, static_cast<Eigen::Index>(n)), vx(v, static_cast<Eigen::Index>(n)),
      xx(x, static_cast<Eigen::Index>(n));
  CArr gx(g, static_cast<Eigen::Index>(n));
  mx = kBeta1 * mx + (1.0 - kBeta1) * gx;
  vx = kBeta2 * vx + (1.0 - kBeta2) * gx.square();
  xx -= lr * (mx / bias1) / ((vx / bias2).sqrt() + kAdamEps);
}

}  // namespace

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr const char* kCkptMagic = "KDRF_CKPT_V1";

void write_block(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_block(std::ifstream& in, std::size_t n, const std::string& path) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double)) {
    throw std::runtime_error("truncated checkpoint: " + path);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const SceneModel& model, const AdamState& adam,
                     long long step, std::uint64_t config_hash) {
  auto kv = model.cfg.to_kv();
  kv["step"] = std::to_string(step);
  kv["config_hash"] = std::to_string(config_hash);
  kv["adam_t"] = std::to_string(adam.t);
  kv["param_count"] = std::to_string(model.store.total_size());
  const std::string manifest = serialize_kv(kv);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << kCkptMagic << "\n" << manifest.size() << "\n" << manifest;
    write_block(out, model.store.flatten());
    for (const auto& m : adam.m) write_block(out, m);
    for (const auto& v : adam.v) write_block(out, v);
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
  }
  std::filesystem::rename(tmp, path);
}

std::map<std::string, std::string> read_checkpoint_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kCkptMagic) throw std::runtime_error("not a checkpoint file: " + path);
  std::string len_line;
  std::getline(in, len_line);
  std::size_t manifest_len = 0;
  try {
    manifest_len = static_cast<std::size_t>(std::stoull(len_line));
  } catch (...) {
    throw std::runtime_error("corrupt checkpoint header: " + path);
  }
  std::string manifest(manifest_len, '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(manifest_len));
  if (static_cast<std::size_t>(in.gcount()) != manifest_len) {
    throw std::runtime_error("truncated checkpoint: " + path);
  }
  return parse_kv_text(manifest);
}

CheckpointInfo load_checkpoint(const std::string& path, SceneModel& model, AdamState* adam) {
  auto kv = read_checkpoint_manifest(path);
  CheckpointInfo info;
  info.step = parse_int("step", kv.at("step"));
  info.config_hash = parse_u64("config_hash", kv.at("config_hash"));
  const long long adam_t = parse_int("adam_t", kv.at("adam_t"));
  const long long params = parse_int("param_count", kv.at("param_count"));

  // Architecture must match the live model exactly.
  auto arch = model.cfg.to_kv();
  for (const auto& [key, value] : arch) {
    auto it = kv.find(key);
    if (it == kv.end() || it->second != value) {
      throw std::runtime_error("checkpoint architecture mismatch on '" + key + "' in " + path);
    }
  }
  if (params != model.store.total_size()) {
    throw std::runtime_error("checkpoint parameter count mismatch in " + path);
  }

  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  const std::size_t manifest_len = static_cast<std::size_t>(std::stoull(line));
  in.seekg(static_cast<std::streamoff>(in.tellg()) + static_cast<std::streamoff>(manifest_len));

  auto flat = read_block(in, static_cast<std::size_t>(params), path);
  AdamState loaded = AdamState::zeros_like(model.store);
  loaded.t = adam_t;
  for (std::size_t i = 0; i < model.store.count(); ++i) {
    loaded.m[i] = read_block(in, loaded.m[i].size(), path);
  }
  for (std::size_t i = 0; i < model.store.count(); ++i) {
    loaded.v[i] = read_block(in, loaded.v[i].size(), path);
  }
  char extra = 0;
  if (in.read(&extra, 1) && in.gcount() == 1) {
    throw std::runtime_error("trailing bytes in checkpoint: " + path);
  }

  model.store.unflatten(flat);
  if (adam != nullptr) *adam = std::move(loaded);
  return info;
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(SceneModel& model, const SceneDataset& dataset, TrainConfig cfg, ThreadPool* pool)
    : model_(model), dataset_(dataset), cfg_(std::move(cfg)), pool_(pool),
      adam_(AdamState::zeros_like(model.store)) {
  if (dataset_.frames.empty()) throw std::invalid_argument("trainer: empty dataset");
  grad_.resize(model_.store.count());
  for (std::size_t i = 0; i < model_.store.count(); ++i) {
    grad_[i].assign(static_cast<std::size_t>(model_.store.slot(static_cast<int>(i)).size()), 0.0);
  }
}

namespace {

struct ShardOut {
  double image_sum = 0, kf_sum = 0, co_sum = 0, prop_sum = 0;
  std::vector<std::vector<double>> dense;                 // per slot (may be empty)
  std::unordered_map<int, Tape::SparseRuns> runs;
  std::unordered_map<int, std::vector<double>> dense_sinks;
};

}  // namespace

LossReport Trainer::step() {
  using Clock = std::chrono::steady_clock;
  static const bool timing = std::getenv("KDRF_TIMING") != nullptr;
  const auto t_start = Clock::now();
  const long long n_frames = dataset_.timeline.size();
  const long long allowed = release_schedule(step_, n_frames, cfg_.effective_release_steps());
  const long long batch = cfg_.ray_batch;
  Rng draw_rng = Rng(cfg_.seed).split(static_cast<std::uint64_t>(step_), 1);

  // Views grouped by timeline frame (several views can share a timestamp).
  std::vector<std::vector<int>> views_per_frame(static_cast<std::size_t>(n_frames));
  for (std::size_t i = 0; i < dataset_.frames.size(); ++i) {
    const int fi = dataset_.frame_index(dataset_.frames[i].time);
    views_per_frame[static_cast<std::size_t>(fi)].push_back(static_cast<int>(i));
  }

  // Uniform draw over (released frame, view of frame, pixel).
  struct Draw {
    int frame, view, px, py;
  };
  std::vector<Draw> draws(static_cast<std::size_t>(batch));
  for (auto& d : draws) {
    d.frame = static_cast<int>(draw_rng.next_below(static_cast<std::uint64_t>(allowed)));
    const auto& views = views_per_frame[static_cast<std::size_t>(d.frame)];
    if (views.empty()) throw std::logic_error("timeline frame without views");
    d.view = views[draw_rng.next_below(views.size())];
    d.px = static_cast<int>(draw_rng.next_below(static_cast<std::uint64_t>(dataset_.width)));
    d.py = static_cast<int>(draw_rng.next_below(static_cast<std::uint64_t>(dataset_.height)));
  }
  std::stable_sort(draws.begin(), draws.end(),
                   [](const Draw& a, const Draw& b) { return a.frame < b.frame; });

  std::vector<Ray> rays;
  rays.reserve(draws.size());
  std::vector<double> gt(static_cast<std::size_t>(batch) * 3);
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const auto& d = draws[i];
    const auto& frame = dataset_.frames[static_cast<std::size_t>(d.view)];
    auto r = generate_rays(frame.c2w, dataset_.camera_angle_x, dataset_.width, dataset_.height,
                           std::span<const std::pair<int, int>>({{d.px, d.py}}), frame.time,
                           dataset_.near, dataset_.far);
    r[0].frame = d.frame;
    rays.push_back(r[0]);
    for (int c = 0; c < 3; ++c) gt[i * 3 + static_cast<std::size_t>(c)] = dataset_.images[static_cast<std::size_t>(d.view)].at(d.py, d.px, c);
  }

  const SamplingConfig sampling{cfg_.n_proposal, cfg_.m_fine};
  const long long m = cfg_.m_fine;
  const long long n_pts = batch * m;
  long long t0_rays = 0;
  for (const auto& r : rays) {
    if (dataset_.timeline.at(r.frame) == 0.0) ++t0_rays;
  }
  const long long n_t0 = t0_rays * m;

  // Fixed shard partition; the result is independent of the thread count.
  struct Range {
    long long begin, end;
  };
  std::vector<Range> shards;
  const int s_count = static_cast<int>(std::min<long long>(kShards, batch));
  for (int s = 0; s < s_count; ++s) {
    shards.push_back(Range{batch * s / s_count, batch * (s + 1) / s_count});
  }

  std::vector<ShardOut> outs(shards.size());
  const int n_tasks = static_cast<int>(shards.size()) + 1;
  double tv_value = 0.0;

  // Gradient buffers are zeroed up front; the tv task (index 0, it is the
  // longest) accumulates straight into the plane buffers while ray shards
  // render. Plane buffers see no other writer until the merge below.
  const int n_slots = static_cast<int>(model_.store.count());
  auto zero_task = [&](int sl) {
    std::fill(grad_[static_cast<std::size_t>(sl)].begin(), grad_[static_cast<std::size_t>(sl)].end(), 0.0);
  };
  if (pool_ != nullptr) pool_->run(n_slots, zero_task);
  else for (int sl = 0; sl < n_slots; ++sl) zero_task(sl);

  auto run_task = [&](int task) {
    if (task == 0) {
      tv_value = tv_loss_accumulate(model_.store, model_.canon.grid, LossReport::kLambdaTv, grad_);
      return;
    }
    const int ti = task - 1;
    const auto& range = shards[static_cast<std::size_t>(ti)];
    Rng shard_rng = Rng(cfg_.seed).split(static_cast<std::uint64_t>(step_), 100 + static_cast<std::uint64_t>(ti));
    Tape tape;
    Binding b(model_.store, &tape);
    auto res = render_rays(b, model_, dataset_.timeline,
                           std::span<const Ray>(rays.data() + range.begin,
                                                static_cast<std::size_t>(range.end - range.begin)),
                           sampling, dataset_.background, &shard_rng);

    const long long rows = range.end - range.begin;
    Tensor gt_slice(Shape{rows, 3},
                    std::vector<double>(gt.begin() + range.begin * 3, gt.begin() + range.end * 3));
    Tensor image_sum = ad::sum(ad::square(ad::sub(res.colors, gt_slice)));
    Tensor kf_sum = ad::sum(ad::square(ad::sub(res.deform.y, ad::detach(res.deform.fused))));
    Tensor prop_sum = ad::scale(
        proposal_loss(res.prop_weights, res.prop_bounds, res.fine_weights, res.fine_bounds),
        static_cast<double>(rows));

    auto& out = outs[static_cast<std::size_t>(ti)];
    out.image_sum = image_sum.value();
    out.kf_sum = kf_sum.value();
    out.prop_sum = prop_sum.value();

    Tensor total = ad::scale(image_sum, 1.0 / (3.0 * static_cast<double>(batch)));
    if (cfg_.enable_l_kf) {
      total = ad::add(total, ad::scale(kf_sum, 1.0 / static_cast<double>(n_pts)));
    }
    if (res.t0_rows > 0) {
      Tensor fused_t0 = ad::slice(res.deform.fused, 0, 0, res.t0_rows);
      Tensor co_sum = cfg_.l_co_l1 ? ad::sum(ad::abs(fused_t0)) : ad::sum(ad::square(fused_t0));
      out.co_sum = co_sum.value();
      if (cfg_.enable_l_co && n_t0 > 0) {
        total = ad::add(total, ad::scale(co_sum, 1.0 / static_cast<double>(n_t0)));
      }
    }
    total = ad::add(total, ad::scale(prop_sum, 1.0 / static_cast<double>(batch)));
    tape.backward(total);

    out.dense.resize(model_.store.count());
    for (std::size_t sl = 0; sl < model_.store.count(); ++sl) {
      if (model_.store.slot(static_cast<int>(sl)).kind != ParamStore::Kind::kDense) continue;
      auto g = tape.grad(b[static_cast<int>(sl)]);
      if (!g.empty()) out.dense[sl].assign(g.begin(), g.end());
    }
    out.runs = tape.runs_sinks();
    out.dense_sinks = tape.dense_sinks();
  };

  const auto t_setup = Clock::now();
  if (pool_ != nullptr) pool_->run(n_tasks, run_task);
  else for (int ti = 0; ti < n_tasks; ++ti) run_task(ti);
  const auto t_render = Clock::now();

  // ---- merge gradients, fixed shard order per slot -------------------------
  double image_sum = 0, kf_sum = 0, co_sum = 0, prop_sum = 0;
  for (auto& out : outs) {
    image_sum += out.image_sum;
    kf_sum += out.kf_sum;
    co_sum += out.co_sum;
    prop_sum += out.prop_sum;
  }
  auto merge_slot = [&](int sl) {
    auto& acc = grad_[static_cast<std::size_t>(sl)];
    for (auto& out : outs) {
      if (!out.dense[static_cast<std::size_t>(sl)].empty()) {
        const auto& g = out.dense[static_cast<std::size_t>(sl)];
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
      }
      auto runs_it = out.runs.find(sl);
      if (runs_it != out.runs.end()) {
        const auto& runs = runs_it->second;
        for (std::size_t r = 0; r < runs.starts.size(); ++r) {
          const double* src = runs.values.data() + r * static_cast<std::size_t>(runs.run_len);
          double* dst = acc.data() + runs.starts[r];
          for (std::int64_t f = 0; f < runs.run_len; ++f) dst[f] += src[f];
        }
      }
      auto dense_it = out.dense_sinks.find(sl);
      if (dense_it != out.dense_sinks.end()) {
        const auto& dense = dense_it->second;
        for (std::size_t i = 0; i < dense.size(); ++i) acc[i] += dense[i];
      }
    }
  };
  if (pool_ != nullptr) pool_->run(n_slots, merge_slot);
  else for (int sl = 0; sl < n_slots; ++sl) merge_slot(sl);
  const auto t_merge = Clock::now();

  LossReport report;
  report.l_image = image_sum / (3.0 * static_cast<double>(batch));
  report.l_kf = kf_sum / static_cast<double>(n_pts);
  report.l_co = n_t0 > 0 ? co_sum / static_cast<double>(n_t0) : 0.0;
  report.l_prop = prop_sum / static_cast<double>(batch);
  report.l_tv = tv_value;
  report.total = report.l_image + (cfg_.enable_l_kf ? report.l_kf : 0.0) +
                 (cfg_.enable_l_co ? report.l_co : 0.0) + report.l_prop +
                 LossReport::kLambdaTv * report.l_tv;
  if (!std::isfinite(report.total)) {
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_));
  }

  // ---- Adam ----------------------------------------------------------------
  adam_.t += 1;
  const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_.t));
  const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_.t));
  auto adam_task = [&](int sl) {
    auto& slot = model_.store.slot(sl);
    adam_update_range(slot.data->data(), adam_.m[static_cast<std::size_t>(sl)].data(),
                      adam_.v[static_cast<std::size_t>(sl)].data(), grad_[static_cast<std::size_t>(sl)].data(),
                      slot.data->size(), cfg_.learning_rate, bias1, bias2);
  };
  if (pool_ != nullptr) pool_->run(n_slots, adam_task);
  else for (int sl = 0; sl < n_slots; ++sl) adam_task(sl);

  if (timing) {
    const auto t_end = Clock::now();
    auto ms = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count() * 1e3; };
    std::fprintf(stderr, "step %lld: setup %.1f render %.1f merge %.1f adam %.1f total %.4f s\n",
                 step_, ms(t_start, t_setup), ms(t_setup, t_render), ms(t_render, t_merge),
                 ms(t_merge, t_end), std::chrono::duration<double>(t_end - t_start).count());
  }

  ++step_;
  return report;
}

void run_training(SceneModel& model, const SceneDataset& dataset, const TrainConfig& cfg,
                  ThreadPool* pool, long long start_step, const AdamState* resume_adam) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out);
  std::ofstream log((fs::path(cfg.out) / "loss_log.txt").string(),
                    start_step > 0 ? std::ios::app : std::ios::out);
  if (!log) throw std::runtime_error("cannot open loss log in " + cfg.out);

  Trainer trainer(model, dataset, cfg, pool);
  trainer.set_step(start_step);
  if (resume_adam != nullptr) trainer.adam() = *resume_adam;

  const std::string final_path = (fs::path(cfg.out) / "model.ckpt").string();
  for (long long s = start_step; s < cfg.total_steps; ++s) {
    LossReport r;
    try {
      r = trainer.step();
    } catch (const std::exception& e) {
      const std::string last_good = (fs::path(cfg.out) / "last_good.ckpt").string();
      save_checkpoint(last_good, model, trainer.adam(), s, cfg.hash());
      throw std::runtime_error(std::string(e.what()) + "; last good checkpoint: " + last_good);
    }
    log << "step=" << s << " l_image=" << r.l_image << " l_kf=" << r.l_kf << " l_co=" << r.l_co
        << " l_prop=" << r.l_prop << " l_tv=" << r.l_tv << " total=" << r.total << "\n";
    log.flush();
    if (cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.total_steps) {
      save_checkpoint(final_path, model, trainer.adam(), s + 1, cfg.hash());
    }
  }
  save_checkpoint(final_path, model, trainer.adam(), cfg.total_steps, cfg.hash());
}

}  // namespace kdrf
