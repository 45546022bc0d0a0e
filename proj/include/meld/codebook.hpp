#pragma once

#include "meld/common.hpp"
#include "meld/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace meld::vq {

/// K frozen codewords (one per row) and the soft-assignment temperature.
struct Codebook {
  Matrix codewords;  // K x d
  double tau = 1.0;
  bool frozen = false;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(codewords.rows()); }
  int dim() const { return static_cast<int>(codewords.cols()); }
  /// Content hash of the codeword matrix and temperature.
  std::string fingerprint() const;
  void validate() const;
};

/// Probability vector over the K codewords.
struct SoftAssignment {
  Vector probs;
};

struct KMeansOptions {
  int k = 32;
  int max_iters = 100;
  std::uint64_t seed = 0;
  double tau = 1.0;
  double rel_tol = 1e-6;
};

struct KMeansReport {
  Codebook codebook;
  /// Mean squared distance to the assigned centroid, one entry per Lloyd step.
  std::vector<double> distortion;
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations on the rows of `frames`.
/// Empty clusters are re-seeded to the point farthest from its centroid.
KMeansReport kmeans_fit(const Matrix& frames, const KMeansOptions& opts);

/// q(k | x) proportional to exp(-||x - c_k||^2 / tau).
SoftAssignment soft_assign(const Codebook& cb, const Eigen::Ref<const RowVector>& frame);
/// Row t holds soft_assign(cb, frames.row(t)).
Matrix soft_assign_rows(const Codebook& cb, const Matrix& frames);

int sample_from(const SoftAssignment& a, Rng& rng);
int sample_latent(const Codebook& cb, const Eigen::Ref<const RowVector>& frame, Rng& rng);

/// -sum p log p with 0 log 0 = 0.
double assignment_entropy(const SoftAssignment& a);

/// Index of the nearest codeword in Euclidean distance.
int nearest_codeword(const Codebook& cb, const Eigen::Ref<const RowVector>& frame);

// File: u32 header length, JSON header {K, d, tau, seed}, LE f32 K x d payload.
void save_codebook(const std::filesystem::path& path, const Codebook& cb);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace meld::vq
