#pragma once

#include "meld/common.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace meld::eval {

struct WerBreakdown {
  double wer = 0.0;
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int n_ref_words = 0;

  int edits() const { return substitutions + deletions + insertions; }
  nlohmann::json to_json() const;
};

/// Lowercases and splits on whitespace.
std::vector<std::string> normalize_words(const std::string& text);

/// Word-level Levenshtein alignment with unit costs. When several
/// alignments are optimal the backtrace prefers substitution, then
/// insertion, then deletion.
WerBreakdown wer(const std::string& ref, const std::string& hyp);
WerBreakdown wer_words(std::span<const std::string> ref, std::span<const std::string> hyp);

/// Pools counts over all (ref, hyp) pairs.
WerBreakdown corpus_wer(std::span<const std::pair<std::string, std::string>> pairs);

/// Cosine similarity of per-bin [mean, std] statistics of two mel segments.
/// A cheap stand-in for a learned speaker-similarity score, not one.
double mel_stat_similarity(const Matrix& prompt, const Matrix& continuation);

/// Per-frame squared error of a generated segment against a reference,
/// divided by T_ref * d. The shorter sequence is zero-padded to the longer.
double regeneration_mse(const Matrix& reference, const Matrix& generated);
/// The same error for a generator that always emits the all-zero frame
/// (the corpus mean in normalized space).
double mean_frame_baseline(const Matrix& reference);

}  // namespace meld::eval
