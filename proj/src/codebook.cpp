#include "meld/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "meld/feature_io.hpp"

namespace meld::vq {

std::string Codebook::fingerprint() const {
  std::string bytes;
  io::append_f64(bytes, tau);
  for (Eigen::Index i = 0; i < codewords.size(); ++i) io::append_f64(bytes, codewords.data()[i]);
  return hex64(fnv1a(bytes));
}

void Codebook::validate() const {
  if (codewords.rows() < 2) throw ConfigError("codebook needs at least 2 codewords");
  if (!(tau > 0.0)) throw ConfigError("codebook temperature must be positive");
  if (!codewords.allFinite()) throw NumericError("codebook contains non-finite values");
}

namespace {

double sq_dist(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b) {
  return (a - b).squaredNorm();
}

}  // namespace

KMeansReport kmeans_fit(const Matrix& frames, const KMeansOptions& opts) {
  const Eigen::Index n = frames.rows();
  const int k = opts.k;
  if (k < 2) throw ConfigError("k-means needs K >= 2");
  if (n < k) {
    throw EmptyInputError("k-means: " + std::to_string(n) + " frames is fewer than K = " + std::to_string(k));
  }
  if (!frames.allFinite()) throw NumericError("k-means: non-finite frames");
  Rng rng(opts.seed);

  // k-means++ seeding.
  Matrix centers(k, frames.cols());
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  centers.row(0) = frames.row(static_cast<Eigen::Index>(rng.uniform_int(0, n - 1)));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& di = d2[static_cast<std::size_t>(i)];
      di = std::min(di, sq_dist(frames.row(i), centers.row(c - 1)));
      total += di;
    }
    Eigen::Index pick;
    if (total > 0.0) {
      pick = static_cast<Eigen::Index>(rng.categorical(d2));
    } else {
      pick = static_cast<Eigen::Index>(rng.uniform_int(0, n - 1));
    }
    centers.row(c) = frames.row(pick);
  }

  KMeansReport report;
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
  auto assign_points = [&] {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(frames.row(i), centers.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
      dist[static_cast<std::size_t>(i)] = best_d;
      sum += best_d;
    }
    return sum / static_cast<double>(n);
  };

  double prev = assign_points();
  report.distortion.push_back(prev);
  for (int it = 0; it < opts.max_iters; ++it) {
    Matrix sums = Matrix::Zero(k, frames.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += frames.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      // Empty cluster: move it onto the worst-served point.
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!taken[static_cast<std::size_t>(i)] && dist[static_cast<std::size_t>(i)] > far_d) {
          far_d = dist[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      taken[static_cast<std::size_t>(far)] = true;
      dist[static_cast<std::size_t>(far)] = 0.0;
      centers.row(c) = frames.row(far);
    }
    const double cur = assign_points();
    report.distortion.push_back(cur);
    report.iterations = it + 1;
    const double rel = prev > 0.0 ? (prev - cur) / prev : 0.0;
    prev = cur;
    if (rel < opts.rel_tol) break;
  }

  report.codebook.codewords = std::move(centers);
  report.codebook.tau = opts.tau;
  report.codebook.frozen = true;
  report.codebook.seed = opts.seed;
  return report;
}

SoftAssignment soft_assign(const Codebook& cb, const Eigen::Ref<const RowVector>& frame) {
  if (frame.size() != cb.dim()) throw ShapeError("soft_assign: frame dimension does not match codebook");
  if (!frame.allFinite()) throw NumericError("soft_assign: non-finite frame");
  Vector logits(cb.size());
  for (int k = 0; k < cb.size(); ++k) logits[k] = -sq_dist(frame, cb.codewords.row(k)) / cb.tau;
  const double mx = logits.maxCoeff();
  Vector p = (logits.array() - mx).unaryExpr([](double v) { return std::exp(v); }).matrix();
  p /= p.sum();
  return SoftAssignment{std::move(p)};
}

Matrix soft_assign_rows(const Codebook& cb, const Matrix& frames) {
  Matrix out(frames.rows(), cb.size());
  for (Eigen::Index t = 0; t < frames.rows(); ++t) out.row(t) = soft_assign(cb, frames.row(t)).probs.transpose();
  return out;
}

int sample_from(const SoftAssignment& a, Rng& rng) {
  return static_cast<int>(rng.categorical(std::span<const double>(a.probs.data(), static_cast<std::size_t>(a.probs.size()))));
}

int sample_latent(const Codebook& cb, const Eigen::Ref<const RowVector>& frame, Rng& rng) {
  return sample_from(soft_assign(cb, frame), rng);
}

double assignment_entropy(const SoftAssignment& a) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < a.probs.size(); ++i) {
    const double p = a.probs[i];
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

int nearest_codeword(const Codebook& cb, const Eigen::Ref<const RowVector>& frame) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    const double d = sq_dist(frame, cb.codewords.row(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
  cb.validate();
  const nlohmann::json header{{"K", cb.size()}, {"d", cb.dim()}, {"tau", cb.tau}, {"seed", cb.seed}, {"frozen", cb.frozen}};
  const std::string h = header.dump();
  std::string out;
  io::append_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  for (Eigen::Index i = 0; i < cb.codewords.rows(); ++i) {
    for (Eigen::Index j = 0; j < cb.codewords.cols(); ++j) io::append_f32(out, static_cast<float>(cb.codewords(i, j)));
  }
  io::write_file(path, out);
}

Codebook load_codebook(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const auto hlen = io::load_u32(bytes, 0);
  if (4 + hlen > bytes.size()) throw FormatError("truncated codebook header");
  const auto header = nlohmann::json::parse(bytes.substr(4, hlen));
  Codebook cb;
  const int k = header.at("K").get<int>();
  const int d = header.at("d").get<int>();
  cb.tau = header.at("tau").get<double>();
  cb.seed = header.at("seed").get<std::uint64_t>();
  cb.frozen = header.value("frozen", true);
  cb.codewords.resize(k, d);
  std::size_t off = 4 + hlen;
  if (off + static_cast<std::size_t>(k) * static_cast<std::size_t>(d) * 4 != bytes.size()) {
    throw FormatError("codebook payload size mismatch");
  }
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < d; ++j, off += 4) cb.codewords(i, j) = io::load_f32(bytes, off);
  }
  cb.validate();
  return cb;
}

}  // namespace meld::vq
