#pragma once

#include "meld/autodiff.hpp"
#include "meld/codebook.hpp"
#include "meld/model.hpp"

#include <span>
#include <string>

namespace meld::obj {

/// -sum q log q with 0 log 0 = 0.
double entropy(const Vector& q);
/// -sum q_k log p_k over the support of q.
double cross_entropy(const Vector& q, const Vector& log_p);
/// sum q_k (log q_k - log p_k), evaluated as cross_entropy(q, log p) - entropy(q).
/// Throws NumericError when p has no mass on a code that q supports.
double kl_q_p(const Vector& q, const Vector& log_p);

/// (1/T) sum_t ||x_t - x_hat_t||^2 + ||x_t - (conv_t + x_hat_t)||^2.
double reconstruction_mse(const Matrix& x, const Matrix& x_hat, const Matrix& conv);
/// -(1/(T-1)) sum_t ||x_hat_t - x_hat_{t+1}||^2, or 0 when T < 2.
double slowness_penalty(const Matrix& x_hat);

/// Differentiable slowness over ragged sequences: the squared steps of all
/// sequences are pooled and divided by the pooled step count.
ad::Var slowness_penalty(ad::Var x_hat, std::span<const int> segments);

struct LossReport {
  Mode mode = Mode::kTts;
  double vlb_total = 0.0;
  double kl_term = 0.0;
  double eos_ce = 0.0;
  double reconstruction_mse = 0.0;
  double entropy_q = 0.0;
  double stt_ce = 0.0;
  double slowness = 0.0;
  double weighted_total = 0.0;
  int n_targets = 0;
  int n_frames = 0;
  int n_items = 0;
};

struct TtsLossOptions {
  double slow_weight = 0.2;
  double kl_weight = 1.0;
  /// Replace the sampled codeword with a zero vector before g_Mel.
  bool ablate_zero_codeword = false;
};

struct LossResult {
  ad::Var total;
  LossReport report;
};

/// Next-latent KL with soft targets, hard <EOS> cross-entropy, two-stage
/// reconstruction through SpecNet and the postnet (one z_t sampled per frame
/// from q), and the slowness term. Token terms are averaged over target
/// positions, frame terms over frames.
LossResult tts_loss(ad::Graph& g, model::MeldModel& m, const vq::Codebook& cb,
                    std::span<const model::SequenceItem> items, Rng& rng, const TtsLossOptions& opts,
                    const model::ForwardOptions& fwd);

/// Hard cross-entropy over text and <EOS> targets, averaged over targets.
LossResult stt_loss(ad::Graph& g, model::MeldModel& m, std::span<const model::SequenceItem> items,
                    const model::ForwardOptions& fwd);

// ---- exact quantities for small discrete toys ---------------------------------

/// Negative log-density of x under two unit-variance Gaussians centred at
/// x_hat and x_post, constants included.
double two_stage_gaussian_nll(const RowVector& x, const RowVector& x_hat, const RowVector& x_post);
/// E_q[nll_z] + KL(q || prior): the negated variational bound.
double negative_vlb(const Vector& q, const Vector& log_prior, const Vector& nll);
/// -log sum_z prior(z) exp(-nll_z), by enumeration.
double exact_negative_log_marginal(const Vector& log_prior, const Vector& nll);

}  // namespace meld::obj
