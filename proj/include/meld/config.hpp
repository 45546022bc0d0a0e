#pragma once

#include "meld/corpus.hpp"
#include "meld/dsp.hpp"
#include "meld/inference.hpp"
#include "meld/model.hpp"
#include "meld/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace meld::config {

struct EvalConfig {
  /// Utterances used for STT WER and TTS regeneration (from the start of the corpus).
  int n_utterances = 32;
  /// Seeded TTS generations per evaluated utterance.
  int tts_seeds = 1;
  int griffin_lim_iters = 32;
  bool write_wav = false;
};

/// Every knob of one experiment. Section seeds are derived from `seed`.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int n_utterances = 32;
  dsp::MelConfig mel;
  corpus::SynthSpec corpus;
  corpus::PrepareOptions data;
  model::ModelConfig model;
  train::TrainConfig train;
  infer::GenerationConfig generation;
  EvalConfig eval;

  /// Canonical nested form (the schema: unknown keys are rejected against it).
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string hash() const;

  std::uint64_t corpus_seed() const { return seed; }
  std::uint64_t kmeans_seed() const { return seed + 1; }
  std::uint64_t init_seed() const { return seed + 2; }
  std::uint64_t train_seed() const { return seed + 3; }
  std::uint64_t generation_seed() const { return seed + 4; }
};

/// Parses the TOML subset used for configs: [section] and [a.b] headers,
/// key = value lines with integers, reals, booleans, "strings" and flat
/// arrays, and # comments.
nlohmann::json parse_toml(std::string_view text);

/// Parses a single scalar or array literal.
nlohmann::json parse_value(std::string_view text);

/// Applies "a.b.c=value" to `j`.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Raises ConfigError naming the key path of the first unknown key or type
/// mismatch of `user` relative to `schema`.
void check_against_schema(const nlohmann::json& user, const nlohmann::json& schema, const std::string& path = "");

/// Defaults, then the file (if any), then overrides, then MELD_SEED.
ExperimentConfig load_experiment(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides,
                                 const std::optional<std::string>& env_seed);

}  // namespace meld::config
