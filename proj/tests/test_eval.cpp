#include "doctest.h"
#include "test_util.hpp"
#include "meld/corpus.hpp"
#include "meld/dsp.hpp"
#include "meld/eval.hpp"

#include <algorithm>
#include <functional>

using namespace meld;
using namespace meld::eval;
using meld::testing::random_matrix;

namespace {

/// Plain recursive edit distance, exponential but fine for six words.
int brute_distance(const std::vector<std::string>& a, std::size_t i, const std::vector<std::string>& b, std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const int sub = brute_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const int del = brute_distance(a, i + 1, b, j) + 1;
  const int ins = brute_distance(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

std::vector<std::string> random_words(Rng& rng, int max_len) {
  static const char* alphabet[] = {"a", "b", "c"};
  std::vector<std::string> out;
  const auto n = rng.uniform_int(0, max_len);
  for (std::int64_t i = 0; i < n; ++i) out.emplace_back(alphabet[rng.uniform_int(0, 2)]);
  return out;
}

}  // namespace

TEST_CASE("wer examples") {
  const auto same = wer("a b c", "a b c");
  CHECK(same.wer == 0.0);
  CHECK(same.edits() == 0);
  CHECK(same.n_ref_words == 3);

  const auto mixed = wer("a b c", "a x c d");
  CHECK(mixed.substitutions == 1);
  CHECK(mixed.insertions == 1);
  CHECK(mixed.deletions == 0);
  CHECK(mixed.wer == doctest::Approx(2.0 / 3.0));

  const auto gone = wer("a b", "");
  CHECK(gone.deletions == 2);
  CHECK(gone.wer == 1.0);

  CHECK(wer("The  Cat", "the cat").wer == 0.0);
  CHECK_THROWS_AS(wer("", "a"), EmptyInputError);
  CHECK_THROWS_AS(wer("   ", "a"), EmptyInputError);
}

TEST_CASE("wer tie-breaking prefers substitution") {
  // "a b" -> "b a": two substitutions beat a deletion plus an insertion.
  const auto r = wer("a b", "b a");
  CHECK(r.substitutions == 2);
  CHECK(r.deletions == 0);
  CHECK(r.insertions == 0);
}

TEST_CASE("wer matches a brute-force edit distance") {
  Rng rng(7);
  for (int trial = 0; trial < 400; ++trial) {
    auto ref = random_words(rng, 6);
    if (ref.empty()) ref.emplace_back("a");
    const auto hyp = random_words(rng, 6);
    const auto r = wer_words(ref, hyp);
    CHECK(r.edits() == brute_distance(ref, 0, hyp, 0));
    CHECK(r.substitutions >= 0);
    CHECK(r.deletions >= 0);
    CHECK(r.insertions >= 0);
    // Alignment bookkeeping: the hypothesis length follows from the counts.
    CHECK(static_cast<int>(ref.size()) - r.deletions + r.insertions == static_cast<int>(hyp.size()));
    CHECK(r.wer == doctest::Approx(static_cast<double>(r.edits()) / static_cast<double>(ref.size())));
  }
}

TEST_CASE("corpus wer pools counts") {
  const std::vector<std::pair<std::string, std::string>> one = {{"a b c", "a x c d"}};
  const auto single = corpus_wer(one);
  const auto direct = wer("a b c", "a x c d");
  CHECK(single.wer == direct.wer);
  CHECK(single.edits() == direct.edits());

  const std::vector<std::pair<std::string, std::string>> twice = {{"a b c", "a x c d"}, {"a b c", "a x c d"}};
  CHECK(corpus_wer(twice).wer == doctest::Approx(direct.wer));
  CHECK(corpus_wer(twice).edits() == 2 * direct.edits());

  const std::vector<std::pair<std::string, std::string>> half = {{"a b", "a b"}, {"c d", ""}};
  CHECK(corpus_wer(half).wer == doctest::Approx(0.5));

  // Pooling weights by reference length rather than averaging rates.
  const std::vector<std::pair<std::string, std::string>> uneven = {{"a", "b"}, {"a b c", "a b c"}};
  CHECK(corpus_wer(uneven).wer == doctest::Approx(0.25));
  CHECK_THROWS_AS(corpus_wer(std::span<const std::pair<std::string, std::string>>()), EmptyInputError);
}

TEST_CASE("mel statistics similarity") {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 20, 8);
  CHECK(mel_stat_similarity(a, a) == doctest::Approx(1.0));
  // Constant segments have zero spread, so negating them negates every statistic.
  const Matrix flat = Matrix::Ones(10, 1) * random_matrix(rng, 1, 8);
  CHECK(mel_stat_similarity(flat, -flat) == doctest::Approx(-1.0));
  const double s = mel_stat_similarity(a, random_matrix(rng, 15, 8));
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
  CHECK_THROWS_AS(mel_stat_similarity(Matrix(0, 8), a), EmptyInputError);
  CHECK_THROWS(mel_stat_similarity(a, random_matrix(rng, 5, 7)));
}

TEST_CASE("similarity separates synthetic speakers") {
  corpus::SynthSpec spec;
  spec.seed = 11;
  spec.speaker_offsets_hz = {0.0, 90.0};
  dsp::MelConfig mel_cfg;
  std::vector<dsp::MelSpectrogram> mels;
  std::vector<int> speakers;
  const auto utts = corpus::generate_corpus(spec, 16);
  for (const auto& u : utts) {
    mels.push_back(dsp::extract_mel(u.wave, mel_cfg));
    speakers.push_back(u.speaker_id);
  }
  const auto stats = dsp::fit_norm_stats(mels);
  double same = 0.0, cross = 0.0;
  int n_same = 0, n_cross = 0;
  for (std::size_t i = 0; i < mels.size(); ++i) {
    for (std::size_t j = i + 1; j < mels.size(); ++j) {
      const double s = mel_stat_similarity(dsp::normalize(mels[i], stats).frames, dsp::normalize(mels[j], stats).frames);
      if (speakers[i] == speakers[j]) {
        same += s;
        ++n_same;
      } else {
        cross += s;
        ++n_cross;
      }
    }
  }
  REQUIRE(n_same > 0);
  REQUIRE(n_cross > 0);
  CHECK(same / n_same > cross / n_cross);
}

TEST_CASE("regeneration mse") {
  Rng rng(3);
  const Matrix ref = random_matrix(rng, 6, 4);
  CHECK(regeneration_mse(ref, ref) == 0.0);
  CHECK(regeneration_mse(ref, Matrix::Zero(6, 4)) == doctest::Approx(mean_frame_baseline(ref)));
  CHECK(mean_frame_baseline(ref) == doctest::Approx(ref.squaredNorm() / 24.0));
  // An empty generation is scored as all-zero frames.
  CHECK(regeneration_mse(ref, Matrix(0, 4)) == doctest::Approx(mean_frame_baseline(ref)));
  // Extra generated frames are penalized against zero padding.
  Matrix longer(8, 4);
  longer.topRows(6) = ref;
  longer.bottomRows(2).setOnes();
  CHECK(regeneration_mse(ref, longer) == doctest::Approx(8.0 / 24.0));
}
