#include "meld/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "meld/feature_io.hpp"

namespace meld::train {

void TrainConfig::validate() const {
  if (total_steps < 0 || warmup_steps < 0 || hold_steps < 0 || decay_steps < 0) {
    throw ConfigError("train step counts must be non-negative");
  }
  if (warmup_steps + hold_steps + decay_steps != total_steps) {
    throw ConfigError("train.warmup_steps + train.hold_steps + train.decay_steps must equal train.total_steps");
  }
  if (!(peak_lr >= 0.0)) throw ConfigError("train.peak_lr must be non-negative");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  if (tts_pretrain_steps < 0) throw ConfigError("train.tts_pretrain_steps must be non-negative");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (max_frames_per_batch < 1) throw ConfigError("train.max_frames_per_batch must be >= 1");
  if (slow_weight < 0.0 || kl_weight < 0.0) throw ConfigError("loss weights must be non-negative");
  augment.validate();
}

std::string mode_mix_name(corpus::ModeMix m) {
  switch (m) {
    case corpus::ModeMix::kTts:
      return "tts";
    case corpus::ModeMix::kStt:
      return "stt";
    case corpus::ModeMix::kJoint:
      return "joint";
  }
  return "joint";
}

corpus::ModeMix parse_mode_mix(const std::string& s) {
  if (s == "tts") return corpus::ModeMix::kTts;
  if (s == "stt") return corpus::ModeMix::kStt;
  if (s == "joint") return corpus::ModeMix::kJoint;
  throw ConfigError("train.mode must be tts, stt or joint (got '" + s + "')");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"total_steps", total_steps},
                        {"warmup_steps", warmup_steps},
                        {"hold_steps", hold_steps},
                        {"decay_steps", decay_steps},
                        {"peak_lr", peak_lr},
                        {"grad_clip", grad_clip},
                        {"mode", mode_mix_name(mode)},
                        {"tts_pretrain_steps", tts_pretrain_steps},
                        {"seed", seed},
                        {"checkpoint_every", checkpoint_every},
                        {"max_frames_per_batch", max_frames_per_batch},
                        {"slow_weight", slow_weight},
                        {"kl_weight", kl_weight},
                        {"spec_augment", spec_augment},
                        {"augment", augment.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.total_steps = j.value("total_steps", c.total_steps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.hold_steps = j.value("hold_steps", c.hold_steps);
  c.decay_steps = j.value("decay_steps", c.decay_steps);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.mode = parse_mode_mix(j.value("mode", mode_mix_name(c.mode)));
  c.tts_pretrain_steps = j.value("tts_pretrain_steps", c.tts_pretrain_steps);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.max_frames_per_batch = j.value("max_frames_per_batch", c.max_frames_per_batch);
  c.slow_weight = j.value("slow_weight", c.slow_weight);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.spec_augment = j.value("spec_augment", c.spec_augment);
  if (j.contains("augment")) c.augment = corpus::SpecAugmentConfig::from_json(j.at("augment"));
  c.validate();
  return c;
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) throw RangeError("lr_at: step outside [0, total_steps]");
  if (step < cfg.warmup_steps) return cfg.peak_lr * step / cfg.warmup_steps;
  if (step <= cfg.warmup_steps + cfg.hold_steps) return cfg.peak_lr;
  if (cfg.decay_steps == 0) return 0.0;
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) / cfg.decay_steps;
}

std::string csv_header() {
  return "step,mode,vlb_total,kl_term,eos_ce,reconstruction_mse,entropy_q,stt_ce,slowness,weighted_total,"
         "n_targets,n_frames,lr,grad_norm,seconds";
}

std::string csv_row(const StepRecord& r) {
  char buf[512];
  const auto& l = r.loss;
  std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d,%.9g,%.9g,%.4f", r.step,
                l.mode == Mode::kTts ? "tts" : "stt", l.vlb_total, l.kl_term, l.eos_ce, l.reconstruction_mse,
                l.entropy_q, l.stt_ce, l.slowness, l.weighted_total, l.n_targets, l.n_frames, r.lr, r.grad_norm,
                r.seconds);
  return buf;
}

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d.ckpt", step);
  return dir / buf;
}

void check_resume_compatible(const model::Checkpoint& ckpt, const corpus::PreparedData& data,
                             const model::ModelConfig& expected) {
  if (ckpt.config.hash() != expected.hash()) throw ConfigError("checkpoint model config differs from the current config");
  if (!(ckpt.config.vocab == data.vocab)) throw ConfigError("checkpoint vocabulary differs from the data vocabulary");
  const auto fp = ckpt.meta.value("codebook_fingerprint", std::string{});
  if (fp != data.codebook.fingerprint()) throw ConfigError("checkpoint was trained with a different codebook");
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, const std::string& what, std::int64_t n) {
  return fnv1a(what + ":" + std::to_string(n), fnv1a(std::to_string(seed)));
}

}  // namespace

TrainResult train(model::MeldModel& m, const corpus::PreparedData& data, const TrainConfig& cfg,
                  const TrainOptions& opts) {
  cfg.validate();
  if (data.examples.empty()) throw EmptyInputError("train: no examples");
  if (!(m.config().vocab == data.vocab)) throw ConfigError("model vocabulary does not match the data vocabulary");
  if (data.codebook.size() != data.vocab.k_latent || data.codebook.dim() != m.config().d_mel_in) {
    throw ConfigError("codebook shape does not match the model");
  }

  optim::Adam adam;
  int start = 0;
  if (opts.resume_from != nullptr) {
    check_resume_compatible(*opts.resume_from, data, m.config());
    start = opts.resume_from->meta.value("step", 0);
    adam.import_state(opts.resume_from->optimizer, opts.resume_from->optimizer_steps);
  }
  const int stop = std::min(cfg.total_steps, opts.stop_after.value_or(cfg.total_steps));

  // TTS items carry fixed soft targets, so they are assembled once.
  std::vector<model::SequenceItem> tts_items;
  std::vector<int> lengths;
  for (const auto& ex : data.examples) {
    tts_items.push_back(corpus::build_tts_sequence(data.vocab, ex.tokens, ex.mel, data.codebook));
    tts_items.back().utt_id = ex.id;
    lengths.push_back(tts_items.back().length());
  }

  std::map<int, std::vector<corpus::BatchPlan>> epochs;
  auto plan_for = [&](int step) -> const corpus::BatchPlan& {
    // step is 1-based; epochs are consumed in order.
    int e = 0;
    int idx = step - 1;
    while (true) {
      auto it = epochs.find(e);
      if (it == epochs.end()) {
        Rng r(derive_seed(cfg.seed, "epoch", e));
        it = epochs.emplace(e, corpus::make_batches(lengths, cfg.max_frames_per_batch, cfg.mode, r)).first;
      }
      if (idx < static_cast<int>(it->second.size())) return it->second[static_cast<std::size_t>(idx)];
      idx -= static_cast<int>(it->second.size());
      ++e;
    }
  };

  std::ofstream log;
  if (opts.log_path) {
    const bool fresh = opts.resume_from == nullptr || !std::filesystem::exists(*opts.log_path);
    if (opts.log_path->has_parent_path()) std::filesystem::create_directories(opts.log_path->parent_path());
    log.open(*opts.log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw Error("cannot open training log " + opts.log_path->string());
    if (fresh) log << csv_header() << '\n';
  }

  TrainResult result;
  result.final_step = start;
  auto trainable = m.params().trainable();
  const obj::TtsLossOptions loss_opts{cfg.slow_weight, cfg.kl_weight, false};

  for (int step = start + 1; step <= stop; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& plan = plan_for(step);
    Mode mode = plan.mode;
    if (cfg.mode == corpus::ModeMix::kJoint && step <= cfg.tts_pretrain_steps) mode = Mode::kTts;

    Rng rng(derive_seed(cfg.seed, "step", step));
    std::vector<model::SequenceItem> batch;
    StepRecord rec;
    rec.step = step;
    for (int i : plan.items) {
      const auto& ex = data.examples[static_cast<std::size_t>(i)];
      rec.batch_ids.push_back(ex.id);
      if (mode == Mode::kTts) {
        batch.push_back(tts_items[static_cast<std::size_t>(i)]);
      } else {
        const Matrix mel = corpus::spec_augment(ex.mel, cfg.augment, rng, cfg.spec_augment).frames;
        batch.push_back(corpus::build_stt_sequence(data.vocab, mel, ex.tokens));
        batch.back().utt_id = ex.id;
      }
    }

    m.params().zero_grad();
    ad::Graph g(rng.next_u64());
    model::ForwardOptions fwd;
    fwd.train = true;
    obj::LossResult loss;
    try {
      if (mode == Mode::kTts) {
        fwd.gmel_rate = m.config().gmel_dropout;
        fwd.gmel_active = true;
        loss = obj::tts_loss(g, m, data.codebook, batch, rng, loss_opts, fwd);
      } else {
        loss = obj::stt_loss(g, m, batch, fwd);
      }
    } catch (const NumericError& e) {
      std::string ids;
      for (const auto& id : rec.batch_ids) ids += (ids.empty() ? "" : ",") + id;
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) + " on batch [" + ids + "]");
    }
    g.backward(loss.total);
    rec.grad_norm = optim::clip_grad_norm(trainable, cfg.grad_clip);
    rec.lr = lr_at(step, cfg);
    adam.step(trainable, rec.lr);
    rec.loss = loss.report;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (log.is_open()) log << csv_row(rec) << '\n';
    if (opts.on_step) opts.on_step(rec);
    result.final_step = step;

    if (opts.checkpoint_dir && (step % cfg.checkpoint_every == 0 || step == cfg.total_steps || step == stop)) {
      nlohmann::json meta = opts.extra_meta;
      meta["step"] = step;
      meta["train_config"] = cfg.to_json();
      meta["codebook_fingerprint"] = data.codebook.fingerprint();
      const auto path = checkpoint_name(*opts.checkpoint_dir, step);
      model::save_checkpoint(path, m, &adam, meta);
      result.checkpoints.push_back(path);
    }
    result.log.push_back(std::move(rec));
  }
  return result;
}

}  // namespace meld::train
