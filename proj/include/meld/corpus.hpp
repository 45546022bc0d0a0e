#pragma once

#include "meld/bpe.hpp"
#include "meld/codebook.hpp"
#include "meld/dsp.hpp"
#include "meld/model.hpp"
#include "meld/vocab.hpp"

#include "json.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace meld::corpus {

/// Synthetic speech: every word is a fixed sequence of sine tones and a
/// speaker shifts all tone frequencies by a constant offset.
struct SynthSpec {
  int word_vocab_size = 8;
  int tones_per_word = 2;
  double base_f0_hz = 300.0;
  /// Spacing between consecutive tone frequencies of the word inventory.
  double tone_step_hz = 150.0;
  std::vector<double> speaker_offsets_hz = {0.0, 60.0};
  double tone_dur_ms = 80.0;
  int min_words = 2;
  int max_words = 4;
  /// Silence between words is drawn uniformly from [0, max_pause_ms].
  double max_pause_ms = 120.0;
  /// Fixed silence before the first and after the last word.
  double edge_silence_ms = 48.0;
  double amplitude = 0.5;
  /// Standard deviation of the additive white noise floor.
  double noise_std = 1e-3;
  int sample_rate_hz = 16000;
  std::uint64_t seed = 0;

  void validate(double fmax_hz) const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct Utterance {
  std::string id;
  std::string transcript;
  dsp::WaveBuffer wave;
  int speaker_id = 0;
};

/// Syllable-like symbol of word index w ("ba", "ke", ...).
std::string word_symbol(int w);
/// Tone frequencies of word w spoken by `speaker`.
std::vector<double> word_frequencies(const SynthSpec& spec, int w, int speaker);
/// Deterministic in (transcript, speaker, spec); throws on unknown words.
dsp::WaveBuffer synthesize_utterance(const SynthSpec& spec, const std::string& transcript, int speaker);
std::vector<Utterance> generate_corpus(const SynthSpec& spec, int n_utterances);

// ---- sequence assembly ---------------------------------------------------------

/// Inputs [y..., <TTS>, x...]; the <TTS> position and every frame position but
/// the last predict the next latent, the last frame position predicts <EOS>.
model::SequenceItem build_tts_sequence(const UnifiedVocab& vocab, std::span<const int> tokens, const Matrix& mel,
                                       const vq::Codebook& cb);
/// Inputs [x..., <STT>, y...]; targets y_1..y_M, <EOS> at the <STT> and y positions.
model::SequenceItem build_stt_sequence(const UnifiedVocab& vocab, const Matrix& mel, std::span<const int> tokens);

/// Frames kept as the speaker prompt: 25% of T, at least 4, at most T.
int prompt_frames(int total_frames);

// ---- augmentation ---------------------------------------------------------------

struct SpecAugmentConfig {
  int n_freq_masks = 2;
  int max_freq_bands = 30;
  int n_time_masks = 10;
  int max_frames_per_mask = 50;
  double time_mask_cap_ratio = 0.1;

  static SpecAugmentConfig joint_preset();
  void validate() const;
  nlohmann::json to_json() const;
  static SpecAugmentConfig from_json(const nlohmann::json& j);
};

struct MaskSpan {
  int start = 0;
  int length = 0;
};

struct SpecAugmentResult {
  Matrix frames;
  std::vector<MaskSpan> time_masks;
  std::vector<MaskSpan> freq_masks;
};

/// Zeroes random time spans and frequency bands. Identity when !train.
SpecAugmentResult spec_augment(const Matrix& mel, const SpecAugmentConfig& cfg, Rng& rng, bool train);

// ---- batching -------------------------------------------------------------------

enum class ModeMix { kTts, kStt, kJoint };

struct BatchPlan {
  Mode mode = Mode::kTts;
  std::vector<int> items;
  int frames = 0;
};

/// Length-bucketed batches whose summed lengths stay within the budget. In
/// joint mode each batch is TTS or STT with probability 1/2.
std::vector<BatchPlan> make_batches(std::span<const int> lengths, int max_frames_per_batch, ModeMix mix, Rng& rng);

// ---- prepared data ----------------------------------------------------------------

struct Example {
  std::string id;
  std::string transcript;
  int speaker_id = 0;
  Matrix mel;  // normalized (and stacked) frames
  std::vector<int> tokens;
};

struct ManifestEntry {
  std::string id;
  std::string transcript;
  std::string wav;
  int speaker_id = 0;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Everything derived from a corpus that training and evaluation share.
struct PreparedData {
  dsp::MelConfig mel_config;
  dsp::NormStats stats;
  text::BpeModel bpe;
  vq::Codebook codebook;
  UnifiedVocab vocab;
  std::vector<Example> examples;
};

struct PrepareOptions {
  int bpe_vocab = 280;
  int codebook_k = 32;
  int kmeans_iters = 100;
  std::uint64_t kmeans_seed = 0;
};

/// Featurize, fit normalization, train BPE, fit the codebook on the
/// normalized (stacked) frames, and tokenize transcripts.
PreparedData prepare_data(const std::vector<Utterance>& utts, const dsp::MelConfig& mel_cfg,
                          const PrepareOptions& opts);

}  // namespace meld::corpus
