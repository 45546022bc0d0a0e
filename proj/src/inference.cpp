#include "meld/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace meld::infer {

using ad::Graph;
using ad::Var;

void GenerationConfig::validate() const {
  if (top_k < 1) throw ConfigError("generation.top_k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("generation.top_p must be in (0, 1]");
  if (max_frames < 1) throw ConfigError("generation.max_frames must be >= 1");
  if (max_tokens < 1) throw ConfigError("generation.max_tokens must be >= 1");
  if (beam_size < 1) throw ConfigError("generation.beam_size must be >= 1");
}

nlohmann::json GenerationConfig::to_json() const {
  return nlohmann::json{{"mode", mode == Mode::kTts ? "tts" : "stt"},
                        {"top_k", top_k},
                        {"top_p", top_p},
                        {"repetition_penalty_on", repetition_penalty_on},
                        {"rep_penalty_value", rep_penalty_value},
                        {"max_frames", max_frames},
                        {"max_tokens", max_tokens},
                        {"beam_size", beam_size},
                        {"test_time_gmel_dropout", test_time_gmel_dropout},
                        {"ablate_zero_codeword", ablate_zero_codeword},
                        {"seed", seed}};
}

GenerationConfig GenerationConfig::from_json(const nlohmann::json& j) {
  GenerationConfig c;
  const auto mode = j.value("mode", std::string("tts"));
  if (mode != "tts" && mode != "stt") throw ConfigError("generation.mode must be tts or stt");
  c.mode = mode == "tts" ? Mode::kTts : Mode::kStt;
  c.top_k = j.value("top_k", c.top_k);
  c.top_p = j.value("top_p", c.top_p);
  c.repetition_penalty_on = j.value("repetition_penalty_on", c.repetition_penalty_on);
  c.rep_penalty_value = j.value("rep_penalty_value", c.rep_penalty_value);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.beam_size = j.value("beam_size", c.beam_size);
  c.test_time_gmel_dropout = j.value("test_time_gmel_dropout", c.test_time_gmel_dropout);
  c.ablate_zero_codeword = j.value("ablate_zero_codeword", c.ablate_zero_codeword);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

FilterResult filter_top_k_top_p(std::span<const int> ids, std::span<const double> logits, int k, double p) {
  if (ids.size() != logits.size() || ids.empty()) throw ShapeError("filter_top_k_top_p: ids and logits must align");
  if (k < 1 || !(p > 0.0 && p <= 1.0)) throw ConfigError("filter_top_k_top_p: invalid k or p");
  for (double l : logits) {
    if (!std::isfinite(l)) throw NumericError("filter_top_k_top_p: non-finite logit");
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return ids[a] < ids[b];
  });
  order.resize(std::min(order.size(), static_cast<std::size_t>(k)));

  const double mx = logits[order.front()];
  std::vector<double> probs;
  double z = 0.0;
  for (auto i : order) {
    probs.push_back(std::exp(logits[i] - mx));
    z += probs.back();
  }
  for (double& q : probs) q /= z;

  FilterResult out;
  double cum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    out.candidates.push_back(ids[order[r]]);
    out.probs.push_back(probs[r]);
    cum += probs[r];
    if (cum >= p) break;
  }
  const double kept = std::accumulate(out.probs.begin(), out.probs.end(), 0.0);
  for (double& q : out.probs) q /= kept;
  return out;
}

void apply_repetition_penalty(std::span<const int> ids, std::span<double> logits, std::span<const int> previous,
                              double value, int exempt_id) {
  if (ids.size() != logits.size()) throw ShapeError("apply_repetition_penalty: ids and logits must align");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == exempt_id) continue;
    if (std::find(previous.begin(), previous.end(), ids[i]) != previous.end()) logits[i] += value;
  }
}

nlohmann::json GenerationTrace::to_json() const {
  nlohmann::json steps_j = nlohmann::json::array();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    steps_j.push_back({{"sampled", sampled[i]},
                       {"candidates", candidates[i]},
                       {"max_logit", steps[i].max_logit},
                       {"eos_prob", steps[i].eos_prob},
                       {"n_candidates", steps[i].n_candidates}});
  }
  return nlohmann::json{{"termination", termination == Termination::kEos ? "eos" : "max_frames"},
                        {"frames", frames},
                        {"steps", steps_j}};
}

TtsOutput generate_tts(model::MeldModel& m, const vq::Codebook& cb, std::span<const int> text_tokens,
                       const Matrix& prompt_mel, const GenerationConfig& cfg) {
  cfg.validate();
  const auto& mc = m.config();
  const auto& vocab = mc.vocab;
  if (text_tokens.empty()) throw EmptyInputError("generate_tts: empty text");
  for (int id : text_tokens) {
    if (!vocab.is_text(id)) throw RangeError("generate_tts: non-text id in transcript");
  }
  if (prompt_mel.rows() > 0 && prompt_mel.cols() != mc.d_mel_in) throw ShapeError("generate_tts: prompt width mismatch");
  if (cb.size() != vocab.k_latent || cb.dim() != mc.d_mel_in) throw ConfigError("generate_tts: codebook mismatch");
  const int prefix = static_cast<int>(text_tokens.size()) + 1 + static_cast<int>(prompt_mel.rows());
  if (prefix >= mc.max_seq_len) throw RangeError("generate_tts: prompt exceeds the max_seq_len budget");
  const int budget = std::min(cfg.max_frames, mc.max_seq_len - prefix);

  std::vector<int> cand_ids;
  for (int k = 0; k < vocab.k_latent; ++k) cand_ids.push_back(vocab.latent_id(k));
  cand_ids.push_back(vocab.id_eos);

  model::ForwardOptions fwd;
  fwd.train = false;
  fwd.gmel_rate = mc.gmel_dropout;
  fwd.gmel_active = cfg.test_time_gmel_dropout;

  Rng rng(cfg.seed);
  model::SequenceItem item;
  item.mode = Mode::kTts;
  item.input_ids.assign(text_tokens.begin(), text_tokens.end());
  item.input_ids.push_back(vocab.id_tts);
  item.input_ids.insert(item.input_ids.end(), static_cast<std::size_t>(prompt_mel.rows()), model::kFrameInput);
  std::vector<RowVector> frames;
  for (Eigen::Index t = 0; t < prompt_mel.rows(); ++t) frames.push_back(prompt_mel.row(t));

  TtsOutput out;
  std::vector<RowVector> generated;
  std::vector<int> previous;
  std::vector<double> logits(cand_ids.size());
  for (int step = 0; step < budget; ++step) {
    item.frames.resize(static_cast<Eigen::Index>(frames.size()), mc.d_mel_in);
    for (std::size_t t = 0; t < frames.size(); ++t) item.frames.row(static_cast<Eigen::Index>(t)) = frames[t];
    Graph g(rng.next_u64());
    auto fr = m.forward(g, std::span<const model::SequenceItem>(&item, 1), fwd);
    const auto last = fr.logits.rows() - 1;
    for (std::size_t i = 0; i < cand_ids.size(); ++i) logits[i] = fr.logits.value()(last, cand_ids[i]);
    if (cfg.repetition_penalty_on) {
      apply_repetition_penalty(cand_ids, logits, previous, cfg.rep_penalty_value, vocab.id_eos);
    }
    auto filt = filter_top_k_top_p(cand_ids, logits, cfg.top_k, cfg.top_p);
    const auto pick = filt.candidates[rng.categorical(filt.probs)];

    StepSummary s;
    s.max_logit = *std::max_element(logits.begin(), logits.end());
    {
      double z = 0.0;
      for (double l : logits) z += std::exp(l - s.max_logit);
      s.eos_prob = std::exp(logits.back() - s.max_logit) / z;
    }
    s.n_candidates = static_cast<int>(filt.candidates.size());
    out.trace.sampled.push_back(pick);
    out.trace.candidates.push_back(filt.candidates);
    out.trace.steps.push_back(s);
    previous = filt.candidates;

    if (pick == vocab.id_eos) {
      out.trace.termination = Termination::kEos;
      break;
    }
    Matrix c = Matrix::Zero(1, mc.d_mel_in);
    if (!cfg.ablate_zero_codeword) c.row(0) = cb.codewords.row(vocab.latent_index(pick));
    Var h = ad::slice_rows(fr.hidden, last, 1);
    Var x_hat = m.specnet(g, h, g.constant(std::move(c)), fwd);
    const RowVector x = x_hat.value().row(0);
    generated.push_back(x);
    frames.push_back(x);
    item.input_ids.push_back(model::kFrameInput);
  }
  out.trace.frames = static_cast<int>(generated.size());

  out.coarse.resize(static_cast<Eigen::Index>(generated.size()), mc.d_mel_in);
  for (std::size_t t = 0; t < generated.size(); ++t) out.coarse.row(static_cast<Eigen::Index>(t)) = generated[t];
  if (generated.empty()) {
    out.mel = out.coarse;
    return out;
  }
  Graph g(rng.next_u64());
  const int seg[] = {static_cast<int>(generated.size())};
  Var xc = g.constant(out.coarse);
  out.mel = ad::add(xc, m.postnet(g, xc, seg, false)).value();
  return out;
}

double Hypothesis::score() const {
  const auto n = static_cast<double>(tokens.size() + (finished ? 1 : 0));
  return n > 0 ? log_prob / n : 0.0;
}

namespace {

/// Log-probabilities over text ids and <EOS> (renormalized within that set)
/// at the last position of each prefix.
std::vector<Vector> stt_step(model::MeldModel& m, const Matrix& mel, const std::vector<std::vector<int>>& prefixes) {
  const auto& vocab = m.config().vocab;
  std::vector<model::SequenceItem> items;
  for (const auto& pre : prefixes) {
    model::SequenceItem it;
    it.mode = Mode::kStt;
    it.input_ids.assign(static_cast<std::size_t>(mel.rows()), model::kFrameInput);
    it.input_ids.push_back(vocab.id_stt);
    it.input_ids.insert(it.input_ids.end(), pre.begin(), pre.end());
    it.frames = mel;
    items.push_back(std::move(it));
  }
  Graph g(0);
  model::ForwardOptions fwd;  // eval mode, g_Mel dropout off
  auto fr = m.forward(g, items, fwd);
  std::vector<Vector> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto row = fr.offsets[i] + items[i].length() - 1;
    Vector l(vocab.v_text + 1);
    for (int id = 0; id < vocab.v_text; ++id) l[id] = fr.logits.value()(row, id);
    l[vocab.v_text] = fr.logits.value()(row, vocab.id_eos);
    const double mx = l.maxCoeff();
    const double lse = mx + std::log((l.array() - mx).exp().sum());
    out.push_back((l.array() - lse).matrix());
  }
  return out;
}

void check_stt_input(const model::MeldModel& m, const Matrix& mel, int max_tokens) {
  if (mel.rows() == 0) throw EmptyInputError("transcribe: empty mel");
  if (mel.cols() != m.config().d_mel_in) throw ShapeError("transcribe: frame width mismatch");
  if (max_tokens < 1) throw ConfigError("transcribe: max_tokens must be >= 1");
  if (mel.rows() + 1 >= m.config().max_seq_len) throw RangeError("transcribe: mel exceeds max_seq_len");
}

}  // namespace

Hypothesis transcribe_greedy(model::MeldModel& m, const Matrix& mel, int max_tokens) {
  check_stt_input(m, mel, max_tokens);
  const int v_text = m.config().vocab.v_text;
  const int limit = std::min(max_tokens, m.config().max_seq_len - static_cast<int>(mel.rows()) - 1);
  Hypothesis h;
  for (int step = 0; step < limit; ++step) {
    const auto lp = stt_step(m, mel, {h.tokens})[0];
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < lp.size(); ++i) {
      if (lp[i] > lp[best]) best = i;
    }
    h.log_prob += lp[best];
    if (best == v_text) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(static_cast<int>(best));
  }
  return h;
}

Hypothesis transcribe_beam(model::MeldModel& m, const Matrix& mel, int beam_size, int max_tokens) {
  check_stt_input(m, mel, max_tokens);
  if (beam_size < 1) throw ConfigError("transcribe_beam: beam_size must be >= 1");
  const int v_text = m.config().vocab.v_text;
  const int limit = std::min(max_tokens, m.config().max_seq_len - static_cast<int>(mel.rows()) - 1);

  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (int step = 0; step < limit && !alive.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : alive) prefixes.push_back(h.tokens);
    const auto lps = stt_step(m, mel, prefixes);
    struct Cand {
      double lp;
      std::size_t parent;
      int id;
    };
    std::vector<Cand> cands;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      for (Eigen::Index i = 0; i < lps[b].size(); ++i) {
        cands.push_back({alive[b].log_prob + lps[b][i], b, static_cast<int>(i)});
      }
    }
    // All candidates share one length, so the summed log-prob orders them.
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.lp != b.lp) return a.lp > b.lp;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.id < b.id;
    });
    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      if (static_cast<int>(next.size()) >= beam_size) break;
      Hypothesis h = alive[c.parent];
      h.log_prob = c.lp;
      if (c.id == v_text) {
        h.finished = true;
        finished.push_back(std::move(h));
        // A finished hypothesis uses up one beam slot.
        next.push_back(Hypothesis{{}, -std::numeric_limits<double>::infinity(), true});
      } else {
        h.tokens.push_back(c.id);
        next.push_back(std::move(h));
      }
    }
    alive.clear();
    for (auto& h : next) {
      if (!h.finished) alive.push_back(std::move(h));
    }
  }
  // Hypotheses cut off by the token limit compete on the same normalized
  // score as finished ones.
  std::vector<Hypothesis> pool = finished;
  pool.insert(pool.end(), alive.begin(), alive.end());
  Hypothesis best = pool.front();
  for (const auto& h : pool) {
    if (h.score() > best.score()) best = h;
  }
  if (beam_size > 1) {
    Hypothesis greedy = transcribe_greedy(m, mel, max_tokens);
    if (greedy.score() > best.score()) best = greedy;
  }
  return best;
}

nlohmann::json DurationReport::to_json() const {
  return nlohmann::json{{"total_seconds", total_seconds},
                        {"total_minutes", total_seconds / 60.0},
                        {"total_frames", total_frames},
                        {"termination", {{"eos", eos}, {"max_frames", max_frames}}}};
}

DurationReport duration_report(std::span<const GenerationTrace> traces, double frame_seconds) {
  if (traces.empty()) throw EmptyInputError("duration_report: no traces");
  DurationReport r;
  for (const auto& t : traces) {
    r.total_frames += t.frames;
    if (t.termination == Termination::kEos) {
      ++r.eos;
    } else {
      ++r.max_frames;
    }
  }
  r.total_seconds = r.total_frames * frame_seconds;
  return r;
}

}  // namespace meld::infer
