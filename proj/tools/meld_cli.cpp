// Command-line front end: one subcommand per pipeline stage, all rooted in a
// run directory. Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "meld/bpe.hpp"
#include "meld/codebook.hpp"
#include "meld/config.hpp"
#include "meld/corpus.hpp"
#include "meld/dsp.hpp"
#include "meld/eval.hpp"
#include "meld/feature_io.hpp"
#include "meld/inference.hpp"
#include "meld/model.hpp"
#include "meld/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace meld;

namespace {

constexpr const char* kVersion = "meld 0.1.0";

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string run_dir = ".";
  bool force = false;
};

config::ExperimentConfig resolve(const Common& c) {
  std::optional<fs::path> file;
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw ConfigError("--config: file not found: " + c.config_path);
    file = c.config_path;
  }
  std::optional<std::string> env;
  if (const char* s = std::getenv("MELD_SEED")) env = std::string(s);
  return config::load_experiment(file, c.sets, env);
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a(io::read_file(p))); }

void require_input(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p)) throw ConfigError("missing input " + what + " (" + p.string() + "); run `meld " + producer + "` first");
}

/// Creates a stage directory, refusing to reuse one unless forced.
fs::path stage_dir(const Common& c, const std::string& name) {
  const fs::path dir = fs::path(c.run_dir) / name;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!c.force) throw ConfigError("output directory " + dir.string() + " already exists; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

/// Config snapshot plus a manifest of inputs and outputs for one stage.
/// Input paths are recorded relative to the run directory.
void write_run_record(const Common& c, const fs::path& dir, const std::string& command,
                      const config::ExperimentConfig& cfg, const std::vector<fs::path>& inputs, const json& outputs) {
  const auto root = fs::absolute(fs::path(c.run_dir)).lexically_normal();
  json in = json::object();
  for (const auto& p : inputs) {
    const auto abs = fs::absolute(p).lexically_normal();
    const auto rel = abs.lexically_relative(root);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    in[(inside ? rel : abs).generic_string()] = file_hash(p);
  }
  io::write_json(dir / "config.json", cfg.to_json());
  io::write_json(dir / "run.json", json{{"command", command},
                                        {"version", kVersion},
                                        {"config_hash", cfg.hash()},
                                        {"inputs", in},
                                        {"outputs", outputs}});
}

fs::path P(const Common& c, const std::string& rel) { return fs::path(c.run_dir) / rel; }

// ---- stages -----------------------------------------------------------------

int cmd_gen_corpus(const Common& c) {
  const auto cfg = resolve(c);
  const auto dir = stage_dir(c, "corpus");
  const auto utts = corpus::generate_corpus(cfg.corpus, cfg.n_utterances);
  fs::create_directories(dir / "wav");
  std::vector<corpus::ManifestEntry> entries;
  for (const auto& u : utts) {
    const std::string rel = "wav/" + u.id + ".wav";
    dsp::write_wav(dir / rel, u.wave);
    entries.push_back({u.id, u.transcript, rel, u.speaker_id});
  }
  corpus::write_manifest(dir / "manifest.jsonl", entries);
  write_run_record(c, dir, "gen-corpus", cfg, {}, json{{"utterances", entries.size()}, {"manifest", "manifest.jsonl"}});
  std::printf("wrote %zu utterances to %s\n", entries.size(), dir.string().c_str());
  return 0;
}

int cmd_featurize(const Common& c) {
  const auto cfg = resolve(c);
  const auto manifest_path = P(c, "corpus/manifest.jsonl");
  require_input(manifest_path, "corpus manifest", "gen-corpus");
  const auto entries = corpus::read_manifest(manifest_path);
  const auto dir = stage_dir(c, "features");
  std::vector<dsp::MelSpectrogram> mels;
  std::vector<fs::path> inputs{manifest_path};
  for (const auto& e : entries) {
    const auto wav = P(c, "corpus/" + e.wav);
    require_input(wav, "wav for " + e.id, "gen-corpus");
    mels.push_back(dsp::extract_mel(dsp::read_wav(wav), cfg.mel));
    inputs.push_back(wav);
  }
  const auto stats = dsp::fit_norm_stats(mels);
  io::write_json(dir / "norm_stats.json", io::to_json(stats));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto norm = dsp::stack_frames(dsp::normalize(mels[i], stats), cfg.mel.stack_factor);
    io::write_mel(dir / (entries[i].id + ".mel"), norm);
  }
  write_run_record(c, dir, "featurize", cfg, inputs, json{{"mel_files", entries.size()}, {"norm_stats", "norm_stats.json"}});
  std::printf("wrote %zu mel files to %s\n", entries.size(), dir.string().c_str());
  return 0;
}

int cmd_train_bpe(const Common& c) {
  const auto cfg = resolve(c);
  const auto manifest_path = P(c, "corpus/manifest.jsonl");
  require_input(manifest_path, "corpus manifest", "gen-corpus");
  std::vector<std::string> lines;
  for (const auto& e : corpus::read_manifest(manifest_path)) lines.push_back(e.transcript);
  const auto dir = stage_dir(c, "bpe");
  const auto bpe = text::train_bpe(lines, cfg.data.bpe_vocab);
  io::write_json(dir / "bpe.json", bpe.to_json());
  write_run_record(c, dir, "train-bpe", cfg, {manifest_path}, json{{"vocab_size", bpe.vocab_size()}, {"model", "bpe.json"}});
  std::printf("trained BPE with %d tokens\n", bpe.vocab_size());
  return 0;
}

std::vector<corpus::ManifestEntry> load_entries(const Common& c) {
  const auto manifest_path = P(c, "corpus/manifest.jsonl");
  require_input(manifest_path, "corpus manifest", "gen-corpus");
  return corpus::read_manifest(manifest_path);
}

Matrix load_features(const Common& c, const std::string& id) {
  const auto p = P(c, "features/" + id + ".mel");
  require_input(p, "features for " + id, "featurize");
  return io::read_mel(p).frames;
}

int cmd_kmeans_init(const Common& c) {
  const auto cfg = resolve(c);
  const auto entries = load_entries(c);
  std::vector<Matrix> frames;
  Eigen::Index rows = 0;
  std::vector<fs::path> inputs;
  for (const auto& e : entries) {
    frames.push_back(load_features(c, e.id));
    inputs.push_back(P(c, "features/" + e.id + ".mel"));
    rows += frames.back().rows();
  }
  Matrix all(rows, frames.front().cols());
  Eigen::Index r = 0;
  for (const auto& f : frames) {
    all.middleRows(r, f.rows()) = f;
    r += f.rows();
  }
  const auto dir = stage_dir(c, "codebook");
  vq::KMeansOptions ko;
  ko.k = cfg.data.codebook_k;
  ko.max_iters = cfg.data.kmeans_iters;
  ko.seed = cfg.kmeans_seed();
  const auto rep = vq::kmeans_fit(all, ko);
  vq::save_codebook(dir / "codebook.bin", rep.codebook);
  write_run_record(c, dir, "kmeans-init", cfg, inputs,
                   json{{"codebook", "codebook.bin"},
                        {"iterations", rep.iterations},
                        {"distortion", rep.distortion},
                        {"fingerprint", vq::load_codebook(dir / "codebook.bin").fingerprint()}});
  std::printf("k-means: K=%d, %d iterations, final distortion %.6g\n", ko.k, rep.iterations, rep.distortion.back());
  return 0;
}

/// Reassembles the prepared data from the stage outputs on disk.
corpus::PreparedData load_prepared(const Common& c, const config::ExperimentConfig& cfg, std::vector<fs::path>* inputs) {
  corpus::PreparedData d;
  d.mel_config = cfg.mel;
  const auto stats_p = P(c, "features/norm_stats.json");
  const auto bpe_p = P(c, "bpe/bpe.json");
  const auto cb_p = P(c, "codebook/codebook.bin");
  require_input(stats_p, "normalization stats", "featurize");
  require_input(bpe_p, "BPE model", "train-bpe");
  require_input(cb_p, "codebook", "kmeans-init");
  d.stats = io::norm_stats_from_json(io::read_json(stats_p));
  d.bpe = text::BpeModel::from_json(io::read_json(bpe_p));
  d.codebook = vq::load_codebook(cb_p);
  if (d.codebook.size() != cfg.data.codebook_k) throw ConfigError("data.codebook_k differs from the stored codebook");
  d.vocab = make_unified_vocab(d.bpe.vocab_size(), d.codebook.size());
  if (inputs) inputs->insert(inputs->end(), {stats_p, bpe_p, cb_p});
  for (const auto& e : load_entries(c)) {
    d.examples.push_back({e.id, e.transcript, e.speaker_id, load_features(c, e.id), d.bpe.encode(e.transcript)});
    if (inputs) inputs->push_back(P(c, "features/" + e.id + ".mel"));
  }
  return d;
}

model::ModelConfig model_config_for(const config::ExperimentConfig& cfg, const corpus::PreparedData& d) {
  auto mc = cfg.model;
  mc.vocab = d.vocab;
  mc.d_mel_in = d.codebook.dim();
  mc.validate();
  return mc;
}

int cmd_train(const Common& c, const std::string& resume_path) {
  const auto cfg = resolve(c);
  std::vector<fs::path> inputs;
  const auto data = load_prepared(c, cfg, &inputs);
  const auto mc = model_config_for(cfg, data);

  train::TrainOptions opts;
  std::optional<model::Checkpoint> ckpt;
  fs::path dir;
  if (!resume_path.empty()) {
    require_input(resume_path, "checkpoint to resume", "train");
    ckpt = model::load_checkpoint(resume_path, mc.hash());
    opts.resume_from = &*ckpt;
    dir = fs::path(c.run_dir) / "train";
    fs::create_directories(dir);
  } else {
    dir = stage_dir(c, "train");
  }
  model::MeldModel m = ckpt ? model::model_from_checkpoint(*ckpt) : model::MeldModel(mc, cfg.init_seed());
  opts.checkpoint_dir = dir / "checkpoints";
  opts.log_path = dir / "train_log.csv";
  opts.extra_meta = json{{"experiment_config_hash", cfg.hash()}, {"vocab", data.vocab.to_json()}};
  opts.on_step = [&](const train::StepRecord& r) {
    if (r.step % 100 == 0 || r.step == cfg.train.total_steps) {
      std::printf("step %5d %s loss %.4f lr %.2e |g| %.3f\n", r.step, r.loss.mode == Mode::kTts ? "tts" : "stt",
                  r.loss.weighted_total, r.lr, r.grad_norm);
      std::fflush(stdout);
    }
  };
  const auto res = train::train(m, data, cfg.train, opts);
  json ck = json::array();
  for (const auto& p : res.checkpoints) ck.push_back(fs::relative(p, dir).generic_string());
  const auto final_path = train::checkpoint_name(*opts.checkpoint_dir, res.final_step);
  if (fs::exists(final_path)) fs::copy_file(final_path, dir / "final.ckpt", fs::copy_options::overwrite_existing);
  write_run_record(c, dir, "train", cfg, inputs,
                   json{{"checkpoints", ck}, {"final", "final.ckpt"}, {"final_step", res.final_step},
                        {"log", "train_log.csv"}, {"model_config_hash", mc.hash()}});
  std::printf("trained to step %d; checkpoint %s\n", res.final_step, (dir / "final.ckpt").string().c_str());
  return 0;
}

struct Loaded {
  corpus::PreparedData data;
  model::MeldModel model;
};

Loaded load_trained(const Common& c, const config::ExperimentConfig& cfg, const std::string& ckpt_arg,
                    std::vector<fs::path>* inputs) {
  auto data = load_prepared(c, cfg, inputs);
  const fs::path ckpt_path = ckpt_arg.empty() ? P(c, "train/final.ckpt") : fs::path(ckpt_arg);
  require_input(ckpt_path, "checkpoint", "train");
  const auto mc = model_config_for(cfg, data);
  auto ck = model::load_checkpoint(ckpt_path, mc.hash());
  if (ck.meta.value("codebook_fingerprint", std::string{}) != data.codebook.fingerprint()) {
    throw ConfigError("checkpoint was trained with a different codebook");
  }
  if (inputs) inputs->push_back(ckpt_path);
  return Loaded{std::move(data), model::model_from_checkpoint(ck)};
}

const corpus::Example& find_example(const corpus::PreparedData& d, const std::string& id) {
  for (const auto& e : d.examples) {
    if (e.id == id) return e;
  }
  throw ConfigError("unknown utterance id: " + id);
}

dsp::MelSpectrogram as_mel(const Matrix& frames, const config::ExperimentConfig& cfg) {
  return dsp::MelSpectrogram{frames, cfg.mel, true, cfg.mel.stack_factor};
}

int cmd_synthesize(const Common& c, const std::string& ckpt, std::string text, const std::string& prompt_utt,
                   bool wav, const std::string& name) {
  auto cfg = resolve(c);
  std::vector<fs::path> inputs;
  auto L = load_trained(c, cfg, ckpt, &inputs);
  Matrix prompt(0, L.data.codebook.dim());
  if (!prompt_utt.empty()) {
    const auto& ex = find_example(L.data, prompt_utt);
    prompt = ex.mel.topRows(corpus::prompt_frames(static_cast<int>(ex.mel.rows())));
    if (text.empty()) text = ex.transcript;
  }
  if (text.empty()) throw ConfigError("synthesize: --text or --prompt-utt is required");
  const auto dir = stage_dir(c, "synth/" + name);
  auto gen = cfg.generation;
  gen.mode = Mode::kTts;
  const auto out = infer::generate_tts(L.model, L.data.codebook, L.data.bpe.encode(text), prompt, gen);
  io::write_mel(dir / "continuation.mel", as_mel(out.mel, cfg));
  io::write_json(dir / "trace.json", out.trace.to_json());
  json outputs{{"mel", "continuation.mel"}, {"trace", "trace.json"}, {"frames", out.trace.frames}, {"text", text}};
  if (wav && out.mel.rows() > 0) {
    const auto gl = dsp::invert_mel_griffin_lim(as_mel(out.mel, cfg), L.data.stats, cfg.eval.griffin_lim_iters,
                                                cfg.generation_seed());
    dsp::write_wav(dir / "continuation.wav", gl.wave);
    outputs["wav"] = "continuation.wav";
  }
  write_run_record(c, dir, "synthesize", cfg, inputs, outputs);
  std::printf("generated %d frames (%s)\n", out.trace.frames,
              out.trace.termination == infer::Termination::kEos ? "eos" : "max_frames");
  return 0;
}

int cmd_transcribe(const Common& c, const std::string& ckpt, const std::string& utt, const std::string& mel_path) {
  auto cfg = resolve(c);
  std::vector<fs::path> inputs;
  auto L = load_trained(c, cfg, ckpt, &inputs);
  Matrix mel;
  std::string label;
  if (!mel_path.empty()) {
    require_input(mel_path, "mel file", "featurize");
    mel = io::read_mel(mel_path).frames;
    label = fs::path(mel_path).stem().string();
    inputs.push_back(mel_path);
  } else if (!utt.empty()) {
    mel = find_example(L.data, utt).mel;
    label = utt;
  } else {
    throw ConfigError("transcribe: --utt or --mel is required");
  }
  const auto hyp = infer::transcribe_beam(L.model, mel, cfg.generation.beam_size, cfg.generation.max_tokens);
  const auto text = L.data.bpe.decode(hyp.tokens);
  const auto dir = stage_dir(c, "transcribe/" + label);
  write_run_record(c, dir, "transcribe", cfg, inputs,
                   json{{"text", text}, {"tokens", hyp.tokens}, {"score", hyp.score()}, {"finished", hyp.finished}});
  std::printf("%s\n", text.c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt, bool ablations) {
  auto cfg = resolve(c);
  std::vector<fs::path> inputs;
  auto L = load_trained(c, cfg, ckpt, &inputs);
  const auto dir = stage_dir(c, "eval");
  if (cfg.eval.write_wav) fs::create_directories(dir / "wav");
  const int n = std::min<int>(cfg.eval.n_utterances, static_cast<int>(L.data.examples.size()));

  json per_utt = json::array();
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<infer::GenerationTrace> traces;
  double mse_sum = 0.0, base_sum = 0.0, abl_zero_sum = 0.0;
  int abl_frames_on = 0, abl_frames_off = 0;
  for (int i = 0; i < n; ++i) {
    const auto& ex = L.data.examples[static_cast<std::size_t>(i)];
    const auto hyp = infer::transcribe_beam(L.model, ex.mel, cfg.generation.beam_size, cfg.generation.max_tokens);
    const auto text = L.data.bpe.decode(hyp.tokens);
    pairs.emplace_back(ex.transcript, text);

    const int p = corpus::prompt_frames(static_cast<int>(ex.mel.rows()));
    const Matrix prompt = ex.mel.topRows(p);
    const Matrix ref = ex.mel.bottomRows(ex.mel.rows() - p);
    json tts = json::array();
    for (int s = 0; s < cfg.eval.tts_seeds; ++s) {
      auto gen = cfg.generation;
      gen.mode = Mode::kTts;
      gen.seed = cfg.generation_seed() + static_cast<std::uint64_t>(1000 * i + s);
      const auto out = infer::generate_tts(L.model, L.data.codebook, ex.tokens, prompt, gen);
      const double mse = ref.rows() > 0 ? eval::regeneration_mse(ref, out.mel) : 0.0;
      const double base = ref.rows() > 0 ? eval::mean_frame_baseline(ref) : 0.0;
      mse_sum += mse;
      base_sum += base;
      traces.push_back(out.trace);
      json entry{{"seed", gen.seed}, {"frames", out.trace.frames}, {"mse", mse}, {"mean_frame_baseline", base},
                 {"termination", out.trace.termination == infer::Termination::kEos ? "eos" : "max_frames"}};
      if (out.mel.rows() > 0) entry["mel_stat_similarity_proxy"] = eval::mel_stat_similarity(prompt, out.mel);
      if (ablations) {
        auto g2 = gen;
        g2.ablate_zero_codeword = true;
        const auto z = infer::generate_tts(L.model, L.data.codebook, ex.tokens, prompt, g2);
        const double zm = ref.rows() > 0 ? eval::regeneration_mse(ref, z.mel) : 0.0;
        abl_zero_sum += zm;
        auto g3 = gen;
        g3.repetition_penalty_on = false;
        const auto np = infer::generate_tts(L.model, L.data.codebook, ex.tokens, prompt, g3);
        abl_frames_on += out.trace.frames;
        abl_frames_off += np.trace.frames;
        entry["ablation"] = {{"zero_codeword_mse", zm}, {"no_rep_penalty_frames", np.trace.frames}};
      }
      if (cfg.eval.write_wav && out.mel.rows() > 0) {
        const auto gl = dsp::invert_mel_griffin_lim(as_mel(out.mel, cfg), L.data.stats, cfg.eval.griffin_lim_iters, gen.seed);
        dsp::write_wav(dir / "wav" / (ex.id + "_s" + std::to_string(s) + ".wav"), gl.wave);
      }
      tts.push_back(entry);
    }
    per_utt.push_back(json{{"id", ex.id}, {"reference", ex.transcript}, {"hypothesis", text},
                           {"wer", eval::wer(ex.transcript, text).to_json()}, {"tts", tts}});
  }
  const auto pooled = eval::corpus_wer(pairs);
  const double denom = static_cast<double>(n) * cfg.eval.tts_seeds;
  json report{{"stt", pooled.to_json()},
              {"tts",
               {{"mean_regeneration_mse", mse_sum / denom},
                {"mean_frame_baseline", base_sum / denom},
                {"note", "mel_stat_similarity_proxy is a mel-statistics cosine, not a speaker-embedding similarity"}}},
              {"duration", infer::duration_report(traces, cfg.mel.frame_seconds()).to_json()},
              {"utterances", per_utt}};
  if (ablations) {
    report["ablation"] = {{"zero_codeword_mean_mse", abl_zero_sum / denom},
                          {"frames_with_rep_penalty", abl_frames_on},
                          {"frames_without_rep_penalty", abl_frames_off}};
  }
  io::write_json(dir / "report.json", report);
  write_run_record(c, dir, "eval", cfg, inputs, json{{"report", "report.json"}});
  std::printf("WER %.4f (S=%d D=%d I=%d / %d words); TTS mse %.4f vs baseline %.4f\n", pooled.wer,
              pooled.substitutions, pooled.deletions, pooled.insertions, pooled.n_ref_words, mse_sum / denom,
              base_sum / denom);
  return 0;
}

int cmd_inspect(const std::string& path) {
  require_input(path, "checkpoint", "train");
  const auto ck = model::load_checkpoint(path);
  json params = json::array();
  std::int64_t count = 0;
  for (const auto& t : ck.params) {
    params.push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}});
    count += t.value.size();
  }
  const json out{{"config_hash", ck.config.hash()},
                 {"model_config", ck.config.to_json()},
                 {"optimizer_steps", ck.optimizer_steps},
                 {"optimizer_tensors", ck.optimizer.size()},
                 {"num_values", count},
                 {"meta", ck.meta},
                 {"parameters", params}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

void write_pgm(const fs::path& path, const Matrix& frames) {
  const auto t = frames.rows();
  const auto d = frames.cols();
  if (t == 0 || d == 0) throw EmptyInputError("plot: empty mel");
  const double lo = frames.minCoeff();
  const double hi = frames.maxCoeff();
  std::string out = "P5\n" + std::to_string(t) + " " + std::to_string(d) + "\n255\n";
  for (Eigen::Index row = d - 1; row >= 0; --row) {
    for (Eigen::Index col = 0; col < t; ++col) {
      const double v = hi > lo ? (frames(col, row) - lo) / (hi - lo) : 0.5;
      out += static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  io::write_file(path, out);
}

int cmd_plot(const std::string& mel_path, const std::string& log_path, const std::string& out_path) {
  if (out_path.empty()) throw ConfigError("plot: --out is required");
  if (!mel_path.empty()) {
    require_input(mel_path, "mel file", "featurize");
    write_pgm(out_path, io::read_mel(mel_path).frames);
    return 0;
  }
  if (!log_path.empty()) {
    require_input(log_path, "training log", "train");
    std::istringstream is(io::read_file(log_path));
    std::string line, out;
    std::getline(is, line);
    std::vector<std::string> cols;
    {
      std::stringstream ss(line);
      std::string h;
      while (std::getline(ss, h, ',')) cols.push_back(h);
    }
    const std::vector<std::string> keep{"step", "mode", "weighted_total", "vlb_total", "kl_term",
                                        "reconstruction_mse", "stt_ce", "lr"};
    std::vector<std::size_t> idx;
    for (const auto& k : keep) {
      const auto it = std::find(cols.begin(), cols.end(), k);
      if (it == cols.end()) throw FormatError("training log lacks column " + k);
      idx.push_back(static_cast<std::size_t>(it - cols.begin()));
    }
    for (std::size_t i = 0; i < keep.size(); ++i) out += (i ? "," : "") + keep[i];
    out += "\n";
    while (std::getline(is, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string v;
      while (std::getline(ss, v, ',')) f.push_back(v);
      if (f.size() != cols.size()) throw FormatError("malformed training log row");
      for (std::size_t i = 0; i < idx.size(); ++i) out += (i ? "," : "") + f[idx[i]];
      out += "\n";
    }
    io::write_file(out_path, out);
    return 0;
  }
  throw ConfigError("plot: --mel or --log is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MELD: discrete-latent speech-text model toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Experiment config (TOML subset)");
    sub->add_option("--set", common.sets, "Override: section.key=value (repeatable)")->expected(1, -1);
    sub->add_option("--run-dir", common.run_dir, "Run directory all paths are relative to");
    sub->add_flag("--force", common.force, "Overwrite an existing stage output");
  };

  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus");
  auto* feat = app.add_subcommand("featurize", "Extract normalized log-mel features");
  auto* bpe = app.add_subcommand("train-bpe", "Train the byte-level BPE tokenizer");
  auto* km = app.add_subcommand("kmeans-init", "Fit and freeze the k-means codebook");
  auto* tr = app.add_subcommand("train", "Train the model");
  auto* syn = app.add_subcommand("synthesize", "Zero-shot TTS continuation");
  auto* trn = app.add_subcommand("transcribe", "Beam-search STT");
  auto* ev = app.add_subcommand("eval", "WER, regeneration error and durations");
  auto* insp = app.add_subcommand("inspect-checkpoint", "Print checkpoint metadata");
  auto* plot = app.add_subcommand("plot", "Render a mel as PGM or extract loss curves as CSV");
  for (auto* s : {gen, feat, bpe, km, tr, syn, trn, ev}) add_common(s);

  std::string resume, ckpt, text, prompt_utt, utt, mel, name = "default", log, out;
  bool wav = false, ablations = false;
  tr->add_option("--resume", resume, "Continue from this checkpoint");
  for (auto* s : {syn, trn, ev}) s->add_option("--checkpoint", ckpt, "Checkpoint (default train/final.ckpt)");
  syn->add_option("--text", text, "Text to speak");
  syn->add_option("--prompt-utt", prompt_utt, "Corpus utterance whose first frames are the prompt");
  syn->add_option("--name", name, "Output subdirectory under synth/");
  syn->add_flag("--wav", wav, "Also write a Griffin-Lim waveform");
  trn->add_option("--utt", utt, "Corpus utterance id");
  trn->add_option("--mel", mel, "Mel feature file");
  ev->add_flag("--ablations", ablations, "Also run the zero-codeword and no-penalty variants");
  std::string insp_path;
  insp->add_option("checkpoint", insp_path, "Checkpoint file")->required();
  plot->add_option("--mel", mel, "Mel feature file to render");
  plot->add_option("--log", log, "Training log CSV");
  plot->add_option("--out", out, "Output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_corpus(common);
    if (*feat) return cmd_featurize(common);
    if (*bpe) return cmd_train_bpe(common);
    if (*km) return cmd_kmeans_init(common);
    if (*tr) return cmd_train(common, resume);
    if (*syn) return cmd_synthesize(common, ckpt, text, prompt_utt, wav, name);
    if (*trn) return cmd_transcribe(common, ckpt, utt, mel);
    if (*ev) return cmd_eval(common, ckpt, ablations);
    if (*insp) return cmd_inspect(insp_path);
    if (*plot) return cmd_plot(mel, log, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const EmptyInputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
  return 1;
}
