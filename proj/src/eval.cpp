#include "meld/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace meld::eval {

nlohmann::json WerBreakdown::to_json() const {
  return nlohmann::json{{"wer", wer},
                        {"S", substitutions},
                        {"D", deletions},
                        {"I", insertions},
                        {"n_ref_words", n_ref_words}};
}

std::vector<std::string> normalize_words(const std::string& text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::istringstream is(lower);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

WerBreakdown wer_words(std::span<const std::string> ref, std::span<const std::string> hyp) {
  if (ref.empty()) throw EmptyInputError("wer: empty reference");
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i][j - 1] + 1, d[i - 1][j] + 1});
    }
  }
  WerBreakdown out;
  out.n_ref_words = static_cast<int>(n);
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = ref[i - 1] == hyp[j - 1];
      if (d[i][j] == d[i - 1][j - 1] + (match ? 0 : 1)) {
        if (!match) ++out.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && d[i][j] == d[i][j - 1] + 1) {
      ++out.insertions;
      --j;
      continue;
    }
    ++out.deletions;
    --i;
  }
  out.wer = static_cast<double>(out.edits()) / static_cast<double>(n);
  return out;
}

WerBreakdown wer(const std::string& ref, const std::string& hyp) {
  const auto r = normalize_words(ref);
  const auto h = normalize_words(hyp);
  return wer_words(r, h);
}

WerBreakdown corpus_wer(std::span<const std::pair<std::string, std::string>> pairs) {
  if (pairs.empty()) throw EmptyInputError("corpus_wer: no pairs");
  WerBreakdown total;
  for (const auto& [ref, hyp] : pairs) {
    const auto w = wer(ref, hyp);
    total.substitutions += w.substitutions;
    total.deletions += w.deletions;
    total.insertions += w.insertions;
    total.n_ref_words += w.n_ref_words;
  }
  total.wer = static_cast<double>(total.edits()) / static_cast<double>(total.n_ref_words);
  return total;
}

namespace {

RowVector mean_std(const Matrix& m) {
  const RowVector mean = m.colwise().mean();
  const RowVector sd = ((m.rowwise() - mean).array().square().colwise().mean()).sqrt();
  RowVector out(2 * m.cols());
  out << mean, sd;
  return out;
}

}  // namespace

double mel_stat_similarity(const Matrix& prompt, const Matrix& continuation) {
  if (prompt.rows() == 0 || continuation.rows() == 0) throw EmptyInputError("mel_stat_similarity: empty segment");
  if (prompt.cols() != continuation.cols()) throw ShapeError("mel_stat_similarity: width mismatch");
  const RowVector a = mean_std(prompt);
  const RowVector b = mean_std(continuation);
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double regeneration_mse(const Matrix& reference, const Matrix& generated) {
  if (reference.rows() == 0) throw EmptyInputError("regeneration_mse: empty reference");
  if (generated.rows() > 0 && generated.cols() != reference.cols()) throw ShapeError("regeneration_mse: width mismatch");
  const Eigen::Index common = std::min(reference.rows(), generated.rows());
  double err = (reference.topRows(common) - generated.topRows(common)).squaredNorm();
  err += reference.bottomRows(reference.rows() - common).squaredNorm();
  err += generated.bottomRows(generated.rows() - common).squaredNorm();
  return err / static_cast<double>(reference.rows() * reference.cols());
}

double mean_frame_baseline(const Matrix& reference) {
  if (reference.rows() == 0) throw EmptyInputError("mean_frame_baseline: empty reference");
  return reference.squaredNorm() / static_cast<double>(reference.size());
}

}  // namespace meld::eval
