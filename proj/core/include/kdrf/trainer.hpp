#pragma once

#include <map>

#include "kdrf/objectives.hpp"
#include "kdrf/scenes.hpp"

namespace kdrf {

class ThreadPool;

struct TrainConfig {
  double learning_rate = 1e-3;
  long long ray_batch = 1024;  // paper value 4096; 1024 is the desk default
  long long total_steps = 20000;
  long long release_steps = -1;  // -1: first quarter of training
  std::uint64_t seed = 1;
  bool enable_prediction_branch = true;
  bool enable_l_kf = true;
  bool enable_l_co = true;
  bool stopgrad_prediction = false;
  std::string concat_raw = "postwarp";  // or "prewarp"
  std::string dataset;
  std::string out;

  // Runtime knobs set from CLI flags; not part of the config-file schema.
  int n_proposal = 64;
  int m_fine = 64;
  int threads = 0;
  long long checkpoint_every = 0;  // 0: final checkpoint only
  bool l_co_l1 = false;

  long long effective_release_steps() const {
    return release_steps < 0 ? std::max(1ll, total_steps / 4) : release_steps;
  }

  // Strict schema: exactly the config keys plus dataset/out; unknown keys
  // are rejected.
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
  std::map<std::string, std::string> to_kv() const;
  std::uint64_t hash() const;
};

// Chronological frame release: min(N, 1 + floor(step * N / release_steps)),
// saturating at N when release_steps <= 0.
long long release_schedule(long long step, long long n_frames, long long release_steps);

struct AdamState {
  std::vector<std::vector<double>> m, v;  // aligned with the store's slots
  long long t = 0;

  static AdamState zeros_like(const ParamStore& store);
};

void save_checkpoint(const std::string& path, const SceneModel& model, const AdamState& adam,
                     long long step, std::uint64_t config_hash);

struct CheckpointInfo {
  long long step = 0;
  std::uint64_t config_hash = 0;
};

// Restores parameters and moments into an existing model built with the
// same architecture; rejects manifest or size mismatches and truncation.
CheckpointInfo load_checkpoint(const std::string& path, SceneModel& model, AdamState* adam);

// Reads only the manifest (to rebuild the model before a full load).
std::map<std::string, std::string> read_checkpoint_manifest(const std::string& path);

class Trainer {
 public:
  Trainer(SceneModel& model, const SceneDataset& dataset, TrainConfig cfg, ThreadPool* pool);

  // One optimization step: render a released-frame ray batch, total loss,
  // backward, one Adam update. Throws on a non-finite loss before touching
  // the parameters.
  LossReport step();

  long long current_step() const { return step_; }
  void set_step(long long s) { step_ = s; }
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }

 private:
  SceneModel& model_;
  const SceneDataset& dataset_;
  TrainConfig cfg_;
  ThreadPool* pool_;
  AdamState adam_;
  long long step_ = 0;
  std::vector<std::vector<double>> grad_;  // per-slot accumulators
  static constexpr int kShards = 16;
};

// Full training run with loss logging and checkpointing. Writes one
// structured line per step to <out>/loss_log.txt and the final model to
// <out>/model.ckpt. On a non-finite loss saves <out>/last_good.ckpt from
// the pre-step parameters and throws with that path in the message.
// Pass the checkpointed optimizer state when resuming.
void run_training(SceneModel& model, const SceneDataset& dataset, const TrainConfig& cfg,
                  ThreadPool* pool, long long start_step = 0,
                  const AdamState* resume_adam = nullptr);

}  // namespace kdrf
