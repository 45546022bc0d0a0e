#pragma once

#include "meld/corpus.hpp"
#include "meld/model.hpp"
#include "meld/objectives.hpp"
#include "meld/optim.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace meld::train {

struct TrainConfig {
  int total_steps = 2000;
  int warmup_steps = 200;
  int hold_steps = 1000;
  int decay_steps = 800;
  double peak_lr = 3e-3;
  double grad_clip = 10.0;
  corpus::ModeMix mode = corpus::ModeMix::kJoint;
  /// Joint mode only: TTS-only updates before mixing starts.
  int tts_pretrain_steps = 500;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  int max_frames_per_batch = 400;
  double slow_weight = 0.2;
  double kl_weight = 1.0;
  bool spec_augment = true;
  corpus::SpecAugmentConfig augment = corpus::SpecAugmentConfig::joint_preset();

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

std::string mode_mix_name(corpus::ModeMix m);
corpus::ModeMix parse_mode_mix(const std::string& s);

/// Linear warmup from 0, constant hold, linear decay to 0 at total_steps.
double lr_at(int step, const TrainConfig& cfg);

struct StepRecord {
  int step = 0;
  obj::LossReport loss;
  double lr = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
  std::vector<std::string> batch_ids;
};

std::string csv_header();
std::string csv_row(const StepRecord& r);

struct TrainOptions {
  /// Checkpoints "step_<n>.ckpt" are written here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// CSV log, appended to when resuming.
  std::optional<std::filesystem::path> log_path;
  /// Continue from this checkpoint (model parameters must already be loaded).
  const model::Checkpoint* resume_from = nullptr;
  /// Stop after this step (defaults to total_steps).
  std::optional<int> stop_after;
  std::function<void(const StepRecord&)> on_step;
  /// Extra JSON stored in each checkpoint's meta block.
  nlohmann::json extra_meta = nlohmann::json::object();
};

struct TrainResult {
  std::vector<StepRecord> log;
  std::vector<std::filesystem::path> checkpoints;
  int final_step = 0;
};

/// Runs updates (last checkpointed step, stop_after]. Every source of
/// randomness is derived from (seed, step), so a resumed run reproduces an
/// uninterrupted one exactly.
TrainResult train(model::MeldModel& m, const corpus::PreparedData& data, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

/// Checks that a checkpoint belongs to this data/config before resuming.
void check_resume_compatible(const model::Checkpoint& ckpt, const corpus::PreparedData& data,
                             const model::ModelConfig& expected);

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int step);

}  // namespace meld::train
