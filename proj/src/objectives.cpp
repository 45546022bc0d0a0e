#include "meld/objectives.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace meld::obj {

using ad::Graph;
using ad::Var;

double entropy(const Vector& q) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] > 0.0) h -= q[i] * std::log(q[i]);
  }
  return h;
}

double cross_entropy(const Vector& q, const Vector& log_p) {
  if (q.size() != log_p.size()) throw ShapeError("cross_entropy: size mismatch");
  double ce = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    if (!std::isfinite(log_p[i])) throw NumericError("cross_entropy: p has no mass where q does");
    ce -= q[i] * log_p[i];
  }
  return ce;
}

double kl_q_p(const Vector& q, const Vector& log_p) { return cross_entropy(q, log_p) - entropy(q); }

double reconstruction_mse(const Matrix& x, const Matrix& x_hat, const Matrix& conv) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols() || x.rows() != conv.rows() || x.cols() != conv.cols()) {
    throw ShapeError("reconstruction_mse: shape mismatch");
  }
  if (x.rows() == 0) throw EmptyInputError("reconstruction_mse: no frames");
  const double a = (x - x_hat).squaredNorm();
  const double b = (x - (conv + x_hat)).squaredNorm();
  return (a + b) / static_cast<double>(x.rows());
}

double slowness_penalty(const Matrix& x_hat) {
  const Eigen::Index t = x_hat.rows();
  if (t < 2) return 0.0;
  const double s = (x_hat.bottomRows(t - 1) - x_hat.topRows(t - 1)).squaredNorm();
  return -s / static_cast<double>(t - 1);
}

Var slowness_penalty(Var x_hat, std::span<const int> segments) {
  Graph& g = *x_hat.graph();
  std::vector<Var> parts;
  int steps = 0;
  Eigen::Index off = 0;
  for (int len : segments) {
    if (len >= 2) {
      Var d = ad::sub(ad::slice_rows(x_hat, off + 1, len - 1), ad::slice_rows(x_hat, off, len - 1));
      parts.push_back(ad::sum(ad::mul(d, d)));
      steps += len - 1;
    }
    off += len;
  }
  if (steps == 0) return g.constant(Matrix::Zero(1, 1));
  Var total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  return ad::scale(total, -1.0 / steps);
}

LossResult tts_loss(Graph& g, model::MeldModel& m, const vq::Codebook& cb, std::span<const model::SequenceItem> items,
                    Rng& rng, const TtsLossOptions& opts, const model::ForwardOptions& fwd) {
  if (items.empty()) throw EmptyInputError("tts_loss: empty batch");
  const auto& vocab = m.config().vocab;
  if (cb.size() != vocab.k_latent) throw ConfigError("codebook size does not match the latent vocabulary");
  if (cb.dim() != m.config().d_mel_in) throw ConfigError("codebook dimension does not match d_mel_in");

  auto fr = m.forward(g, items, fwd);

  std::vector<int> lat_rows, eos_rows, eos_ids, segments;
  int n_frames = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.mode != Mode::kTts) throw ConfigError("tts_loss given a non-TTS item");
    const int t = static_cast<int>(it.latent_positions.size());
    if (t == 0 || it.target_frames.rows() != t || it.soft_targets.rows() != t || it.soft_targets.cols() != cb.size()) {
      throw ShapeError("tts item " + it.utt_id + " has inconsistent latent targets");
    }
    for (int p : it.latent_positions) lat_rows.push_back(fr.offsets[i] + p);
    for (int p = 0; p < it.length(); ++p) {
      const int id = it.hard_targets[static_cast<std::size_t>(p)];
      if (id < 0) continue;
      if (!vocab.is_target_for(Mode::kTts, id) || vocab.is_latent(id)) {
        throw ConfigError("tts item " + it.utt_id + " carries a non-<EOS> hard target");
      }
      eos_rows.push_back(fr.offsets[i] + p);
      eos_ids.push_back(id);
    }
    segments.push_back(t);
    n_frames += t;
  }
  const int n_targets = n_frames + static_cast<int>(eos_rows.size());

  // Soft targets over the full vocabulary and the matching frames/codewords.
  Matrix q_full = Matrix::Zero(n_frames, vocab.total);
  Matrix x = Matrix(n_frames, cb.dim());
  Matrix c = Matrix::Zero(n_frames, cb.dim());
  double h_sum = 0.0;
  int r = 0;
  for (const auto& it : items) {
    for (Eigen::Index t = 0; t < it.soft_targets.rows(); ++t, ++r) {
      const RowVector q = it.soft_targets.row(t);
      q_full.block(r, vocab.v_text, 1, cb.size()) = q;
      h_sum += entropy(q.transpose());
      x.row(r) = it.target_frames.row(t);
      const auto z = rng.categorical(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
      if (!opts.ablate_zero_codeword) c.row(r) = cb.codewords.row(static_cast<Eigen::Index>(z));
    }
  }

  Var lat_logits = ad::gather_rows(fr.logits, lat_rows);
  Var kl_sum = ad::add_scalar(ad::cross_entropy_soft(lat_logits, q_full), -h_sum);
  Var kl_term = ad::scale(kl_sum, 1.0 / n_targets);
  Var eos_term = eos_rows.empty()
                     ? g.constant(Matrix::Zero(1, 1))
                     : ad::scale(ad::cross_entropy_hard(ad::gather_rows(fr.logits, eos_rows), eos_ids), 1.0 / n_targets);

  Var h = ad::gather_rows(fr.hidden, lat_rows);
  Var x_hat = m.specnet(g, h, g.constant(std::move(c)), fwd);
  Var x_post = ad::add(x_hat, m.postnet(g, x_hat, segments, fwd.train));
  Var xv = g.constant(std::move(x));
  Var recon = ad::add(ad::mse(x_hat, xv), ad::mse(x_post, xv));
  Var slow = slowness_penalty(x_hat, segments);

  Var vlb = ad::add(ad::add(kl_term, eos_term), recon);
  Var total = ad::add(ad::add(ad::add(ad::scale(kl_term, opts.kl_weight), eos_term), recon),
                      ad::scale(slow, opts.slow_weight));

  LossResult out;
  out.total = total;
  auto& rep = out.report;
  rep.mode = Mode::kTts;
  rep.kl_term = kl_term.scalar();
  rep.eos_ce = eos_term.scalar();
  rep.reconstruction_mse = recon.scalar();
  rep.entropy_q = h_sum / n_frames;
  rep.slowness = slow.scalar();
  rep.vlb_total = vlb.scalar();
  rep.weighted_total = total.scalar();
  rep.n_targets = n_targets;
  rep.n_frames = n_frames;
  rep.n_items = static_cast<int>(items.size());
  if (!std::isfinite(rep.weighted_total)) throw NumericError("tts_loss: non-finite loss");
  return out;
}

LossResult stt_loss(Graph& g, model::MeldModel& m, std::span<const model::SequenceItem> items,
                    const model::ForwardOptions& fwd) {
  if (items.empty()) throw EmptyInputError("stt_loss: empty batch");
  const auto& vocab = m.config().vocab;
  auto fr = m.forward(g, items, fwd);
  std::vector<int> rows, ids;
  int n_frames = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.mode != Mode::kStt) throw ConfigError("stt_loss given a non-STT item");
    for (int p = 0; p < it.length(); ++p) {
      const int id = it.hard_targets[static_cast<std::size_t>(p)];
      if (id < 0) continue;
      if (!vocab.is_target_for(Mode::kStt, id)) throw ConfigError("stt item " + it.utt_id + " has a non-text target");
      rows.push_back(fr.offsets[i] + p);
      ids.push_back(id);
    }
    n_frames += it.num_frames();
  }
  if (rows.empty()) throw EmptyInputError("stt_loss: no targets");
  const int n = static_cast<int>(rows.size());
  Var ce = ad::scale(ad::cross_entropy_hard(ad::gather_rows(fr.logits, rows), ids), 1.0 / n);
  LossResult out;
  out.total = ce;
  auto& rep = out.report;
  rep.mode = Mode::kStt;
  rep.stt_ce = ce.scalar();
  rep.weighted_total = rep.stt_ce;
  rep.n_targets = n;
  rep.n_frames = n_frames;
  rep.n_items = static_cast<int>(items.size());
  if (!std::isfinite(rep.weighted_total)) throw NumericError("stt_loss: non-finite loss");
  return out;
}

double two_stage_gaussian_nll(const RowVector& x, const RowVector& x_hat, const RowVector& x_post) {
  if (x.size() != x_hat.size() || x.size() != x_post.size()) throw ShapeError("two_stage_gaussian_nll: size mismatch");
  const double d = static_cast<double>(x.size());
  return 0.5 * (x - x_hat).squaredNorm() + 0.5 * (x - x_post).squaredNorm() + d * std::log(2.0 * std::numbers::pi);
}

double negative_vlb(const Vector& q, const Vector& log_prior, const Vector& nll) {
  if (q.size() != log_prior.size() || q.size() != nll.size()) throw ShapeError("negative_vlb: size mismatch");
  double expected = 0.0;
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    if (q[k] > 0.0) expected += q[k] * nll[k];
  }
  return expected + kl_q_p(q, log_prior);
}

double exact_negative_log_marginal(const Vector& log_prior, const Vector& nll) {
  if (log_prior.size() != nll.size() || nll.size() == 0) throw ShapeError("exact_negative_log_marginal: bad sizes");
  const Vector a = log_prior - nll;
  const double mx = a.maxCoeff();
  if (!std::isfinite(mx)) return std::numeric_limits<double>::infinity();
  return -(mx + std::log((a.array() - mx).exp().sum()));
}

}  // namespace meld::obj
