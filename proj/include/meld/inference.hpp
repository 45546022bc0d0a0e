#pragma once

#include "meld/codebook.hpp"
#include "meld/model.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <vector>

namespace meld::infer {

struct GenerationConfig {
  Mode mode = Mode::kTts;
  int top_k = 60;
  double top_p = 0.9;
  bool repetition_penalty_on = true;
  double rep_penalty_value = -1.0;
  int max_frames = 200;
  int max_tokens = 64;
  int beam_size = 5;
  bool test_time_gmel_dropout = true;
  bool ablate_zero_codeword = false;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GenerationConfig from_json(const nlohmann::json& j);
};

struct FilterResult {
  /// Surviving ids, by descending probability (ties: lower id first).
  std::vector<int> candidates;
  /// Renormalized probabilities aligned with `candidates`.
  std::vector<double> probs;
};

/// Top-k by logit, then the shortest descending-probability prefix whose
/// mass reaches p (probabilities taken after the top-k cut).
FilterResult filter_top_k_top_p(std::span<const int> ids, std::span<const double> logits, int k, double p);

/// Adds `value` to the logit of every id of `previous` except `exempt_id`.
void apply_repetition_penalty(std::span<const int> ids, std::span<double> logits, std::span<const int> previous,
                              double value, int exempt_id);

struct StepSummary {
  double max_logit = 0.0;
  double eos_prob = 0.0;
  int n_candidates = 0;
};

enum class Termination { kEos, kMaxFrames };

struct GenerationTrace {
  /// Sampled vocabulary ids (latent ids, then <EOS> if it was drawn).
  std::vector<int> sampled;
  std::vector<std::vector<int>> candidates;
  std::vector<StepSummary> steps;
  Termination termination = Termination::kMaxFrames;
  int frames = 0;

  nlohmann::json to_json() const;
};

struct TtsOutput {
  /// Refined continuation x_hat + conv(x_hat), one row per generated frame.
  Matrix mel;
  /// SpecNet output before the postnet.
  Matrix coarse;
  GenerationTrace trace;
};

/// Continues `prompt_mel` (normalized frames, teacher-forced) for the text.
TtsOutput generate_tts(model::MeldModel& m, const vq::Codebook& cb, std::span<const int> text_tokens,
                       const Matrix& prompt_mel, const GenerationConfig& cfg);

struct Hypothesis {
  std::vector<int> tokens;  // text ids, <EOS> excluded
  double log_prob = 0.0;    // including the <EOS> step when finished
  bool finished = false;
  /// log_prob divided by the number of predicted tokens (<EOS> included).
  double score() const;
};

/// Greedy decoding over text ids and <EOS> with g_Mel dropout off.
Hypothesis transcribe_greedy(model::MeldModel& m, const Matrix& mel, int max_tokens);
/// Length-normalized beam search. The greedy hypothesis is also scored and
/// returned if it beats every beam result, so the answer never scores below
/// greedy decoding.
Hypothesis transcribe_beam(model::MeldModel& m, const Matrix& mel, int beam_size, int max_tokens);

struct DurationReport {
  double total_seconds = 0.0;
  int total_frames = 0;
  int eos = 0;
  int max_frames = 0;
  nlohmann::json to_json() const;
};

DurationReport duration_report(std::span<const GenerationTrace> traces, double frame_seconds);

}  // namespace meld::infer
