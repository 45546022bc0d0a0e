#include "meld/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "meld/feature_io.hpp"

namespace meld::corpus {

// ---- spec -----------------------------------------------------------------------

void SynthSpec::validate(double fmax_hz) const {
  if (word_vocab_size < 1 || word_vocab_size > 60) throw ConfigError("corpus.word_vocab_size must be in [1, 60]");
  if (tones_per_word < 1) throw ConfigError("corpus.tones_per_word must be >= 1");
  if (!(base_f0_hz > 0.0) || !(tone_step_hz > 0.0)) throw ConfigError("corpus tone frequencies must be positive");
  if (speaker_offsets_hz.empty()) throw ConfigError("corpus.speaker_offsets_hz must not be empty");
  for (std::size_t i = 0; i < speaker_offsets_hz.size(); ++i) {
    if (speaker_offsets_hz[i] < 0.0) throw ConfigError("corpus.speaker_offsets_hz must be non-negative");
    for (std::size_t j = 0; j < i; ++j) {
      if (speaker_offsets_hz[i] == speaker_offsets_hz[j]) throw ConfigError("corpus speaker offsets must be distinct");
    }
  }
  if (!(tone_dur_ms > 0.0)) throw ConfigError("corpus.tone_dur_ms must be positive");
  if (min_words < 1 || max_words < min_words) throw ConfigError("corpus word-count range is invalid");
  if (max_pause_ms < 0.0 || edge_silence_ms < 0.0) throw ConfigError("corpus silences must be non-negative");
  if (!(amplitude > 0.0) || amplitude > 1.0) throw ConfigError("corpus.amplitude must be in (0, 1]");
  if (noise_std < 0.0) throw ConfigError("corpus.noise_std must be non-negative");
  if (sample_rate_hz <= 0) throw ConfigError("corpus.sample_rate_hz must be positive");
  const double top = base_f0_hz + tone_step_hz * (word_vocab_size * tones_per_word - 1) +
                     *std::max_element(speaker_offsets_hz.begin(), speaker_offsets_hz.end());
  if (top >= std::min(fmax_hz, sample_rate_hz / 2.0)) {
    throw ConfigError("corpus word inventory needs tones up to " + std::to_string(top) + " Hz, above fmax");
  }
}

nlohmann::json SynthSpec::to_json() const {
  return nlohmann::json{{"word_vocab_size", word_vocab_size},
                        {"tones_per_word", tones_per_word},
                        {"base_f0_hz", base_f0_hz},
                        {"tone_step_hz", tone_step_hz},
                        {"speaker_offsets_hz", speaker_offsets_hz},
                        {"tone_dur_ms", tone_dur_ms},
                        {"min_words", min_words},
                        {"max_words", max_words},
                        {"max_pause_ms", max_pause_ms},
                        {"edge_silence_ms", edge_silence_ms},
                        {"amplitude", amplitude},
                        {"noise_std", noise_std},
                        {"sample_rate_hz", sample_rate_hz},
                        {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.word_vocab_size = j.value("word_vocab_size", s.word_vocab_size);
  s.tones_per_word = j.value("tones_per_word", s.tones_per_word);
  s.base_f0_hz = j.value("base_f0_hz", s.base_f0_hz);
  s.tone_step_hz = j.value("tone_step_hz", s.tone_step_hz);
  s.speaker_offsets_hz = j.value("speaker_offsets_hz", s.speaker_offsets_hz);
  s.tone_dur_ms = j.value("tone_dur_ms", s.tone_dur_ms);
  s.min_words = j.value("min_words", s.min_words);
  s.max_words = j.value("max_words", s.max_words);
  s.max_pause_ms = j.value("max_pause_ms", s.max_pause_ms);
  s.edge_silence_ms = j.value("edge_silence_ms", s.edge_silence_ms);
  s.amplitude = j.value("amplitude", s.amplitude);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.sample_rate_hz = j.value("sample_rate_hz", s.sample_rate_hz);
  s.seed = j.value("seed", s.seed);
  return s;
}

// ---- synthesis ------------------------------------------------------------------

std::string word_symbol(int w) {
  static constexpr std::string_view kConsonants = "bdfgklmnprst";
  static constexpr std::string_view kVowels = "aeiou";
  if (w < 0 || w >= static_cast<int>(kConsonants.size() * kVowels.size())) throw RangeError("word index out of range");
  const auto nc = static_cast<int>(kConsonants.size());
  std::string s;
  s += kConsonants[static_cast<std::size_t>(w % nc)];
  s += kVowels[static_cast<std::size_t>((w / nc + w) % static_cast<int>(kVowels.size()))];
  return s;
}

std::vector<double> word_frequencies(const SynthSpec& spec, int w, int speaker) {
  if (w < 0 || w >= spec.word_vocab_size) throw RangeError("word index out of range");
  if (speaker < 0 || speaker >= static_cast<int>(spec.speaker_offsets_hz.size())) throw RangeError("unknown speaker");
  std::vector<double> f;
  for (int j = 0; j < spec.tones_per_word; ++j) {
    f.push_back(spec.base_f0_hz + spec.tone_step_hz * (w * spec.tones_per_word + j) +
                spec.speaker_offsets_hz[static_cast<std::size_t>(speaker)]);
  }
  return f;
}

namespace {

int word_index(const SynthSpec& spec, const std::string& sym) {
  for (int w = 0; w < spec.word_vocab_size; ++w) {
    if (word_symbol(w) == sym) return w;
  }
  throw RangeError("word '" + sym + "' is not in the synthetic inventory");
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

dsp::WaveBuffer synthesize_utterance(const SynthSpec& spec, const std::string& transcript, int speaker) {
  const auto words = split_words(transcript);
  if (words.empty()) throw EmptyInputError("empty transcript");
  const double sr = spec.sample_rate_hz;
  const auto tone_len = static_cast<std::size_t>(std::lround(spec.tone_dur_ms * sr / 1000.0));
  const auto edge_len = static_cast<std::size_t>(std::lround(spec.edge_silence_ms * sr / 1000.0));
  const auto ramp = std::min<std::size_t>(tone_len / 4, static_cast<std::size_t>(std::lround(0.005 * sr)));

  std::string key = transcript + "|" + std::to_string(speaker) + "|" + std::to_string(spec.seed);
  Rng rng(fnv1a(key));

  std::vector<double> out(edge_len, 0.0);
  for (std::size_t wi = 0; wi < words.size(); ++wi) {
    if (wi > 0) {
      const auto pause_ms = rng.uniform() * spec.max_pause_ms;
      out.resize(out.size() + static_cast<std::size_t>(std::lround(pause_ms * sr / 1000.0)), 0.0);
    }
    for (double f : word_frequencies(spec, word_index(spec, words[wi]), speaker)) {
      for (std::size_t n = 0; n < tone_len; ++n) {
        double env = 1.0;
        if (ramp > 0 && n < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * n / ramp);
        if (ramp > 0 && tone_len - 1 - n < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (tone_len - 1 - n) / ramp);
        out.push_back(spec.amplitude * env * std::sin(2.0 * std::numbers::pi * f * n / sr));
      }
    }
  }
  out.resize(out.size() + edge_len, 0.0);
  if (spec.noise_std > 0.0) {
    for (double& s : out) s = std::clamp(s + spec.noise_std * rng.normal(), -1.0, 1.0);
  }
  return dsp::WaveBuffer{std::move(out), spec.sample_rate_hz};
}

std::vector<Utterance> generate_corpus(const SynthSpec& spec, int n_utterances) {
  if (n_utterances < 1) throw ConfigError("corpus needs at least one utterance");
  Rng rng(spec.seed);
  std::vector<Utterance> out;
  out.reserve(static_cast<std::size_t>(n_utterances));
  for (int i = 0; i < n_utterances; ++i) {
    const auto n_words = rng.uniform_int(spec.min_words, spec.max_words);
    std::string transcript;
    for (std::int64_t w = 0; w < n_words; ++w) {
      if (w > 0) transcript += ' ';
      transcript += word_symbol(static_cast<int>(rng.uniform_int(0, spec.word_vocab_size - 1)));
    }
    const int speaker = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(spec.speaker_offsets_hz.size()) - 1));
    char id[32];
    std::snprintf(id, sizeof id, "utt%04d", i);
    out.push_back(Utterance{id, transcript, synthesize_utterance(spec, transcript, speaker), speaker});
  }
  return out;
}

// ---- sequences --------------------------------------------------------------------

model::SequenceItem build_tts_sequence(const UnifiedVocab& vocab, std::span<const int> tokens, const Matrix& mel,
                                       const vq::Codebook& cb) {
  if (tokens.empty()) throw EmptyInputError("TTS sequence needs a non-empty transcript");
  if (mel.rows() == 0) throw EmptyInputError("TTS sequence needs at least one frame");
  if (cb.size() != vocab.k_latent) throw ConfigError("codebook size does not match the latent vocabulary");
  for (int id : tokens) {
    if (!vocab.is_text(id)) throw RangeError("TTS transcript contains non-text id " + std::to_string(id));
  }
  model::SequenceItem it;
  it.mode = Mode::kTts;
  const int m = static_cast<int>(tokens.size());
  const int t = static_cast<int>(mel.rows());
  it.input_ids.assign(tokens.begin(), tokens.end());
  it.input_ids.push_back(vocab.id_tts);
  it.input_ids.insert(it.input_ids.end(), static_cast<std::size_t>(t), model::kFrameInput);
  it.frames = mel;
  it.hard_targets.assign(it.input_ids.size(), -1);
  it.hard_targets.back() = vocab.id_eos;
  for (int k = 0; k < t; ++k) it.latent_positions.push_back(m + k);
  it.target_frames = mel;
  it.soft_targets = vq::soft_assign_rows(cb, mel);
  return it;
}

model::SequenceItem build_stt_sequence(const UnifiedVocab& vocab, const Matrix& mel, std::span<const int> tokens) {
  if (tokens.empty()) throw EmptyInputError("STT sequence needs a non-empty transcript");
  if (mel.rows() == 0) throw EmptyInputError("STT sequence needs at least one frame");
  for (int id : tokens) {
    if (!vocab.is_text(id)) throw RangeError("STT transcript contains non-text id " + std::to_string(id));
  }
  model::SequenceItem it;
  it.mode = Mode::kStt;
  const int t = static_cast<int>(mel.rows());
  it.input_ids.assign(static_cast<std::size_t>(t), model::kFrameInput);
  it.input_ids.push_back(vocab.id_stt);
  it.input_ids.insert(it.input_ids.end(), tokens.begin(), tokens.end());
  it.frames = mel;
  it.hard_targets.assign(it.input_ids.size(), -1);
  for (std::size_t k = 0; k < tokens.size(); ++k) it.hard_targets[static_cast<std::size_t>(t) + k] = tokens[k];
  it.hard_targets.back() = vocab.id_eos;
  return it;
}

int prompt_frames(int total_frames) {
  if (total_frames <= 0) return 0;
  return std::min(total_frames, std::max(4, total_frames / 4));
}

// ---- SpecAugment ----------------------------------------------------------------------

SpecAugmentConfig SpecAugmentConfig::joint_preset() {
  SpecAugmentConfig c;
  c.n_time_masks = 2;
  c.n_freq_masks = 2;
  return c;
}

void SpecAugmentConfig::validate() const {
  if (n_freq_masks < 0 || max_freq_bands < 0 || n_time_masks < 0 || max_frames_per_mask < 0) {
    throw ConfigError("specaugment counts must be non-negative");
  }
  if (!(time_mask_cap_ratio > 0.0 && time_mask_cap_ratio <= 1.0)) {
    throw ConfigError("specaugment.time_mask_cap_ratio must be in (0, 1]");
  }
}

nlohmann::json SpecAugmentConfig::to_json() const {
  return nlohmann::json{{"n_freq_masks", n_freq_masks},
                        {"max_freq_bands", max_freq_bands},
                        {"n_time_masks", n_time_masks},
                        {"max_frames_per_mask", max_frames_per_mask},
                        {"time_mask_cap_ratio", time_mask_cap_ratio}};
}

SpecAugmentConfig SpecAugmentConfig::from_json(const nlohmann::json& j) {
  SpecAugmentConfig c;
  c.n_freq_masks = j.value("n_freq_masks", c.n_freq_masks);
  c.max_freq_bands = j.value("max_freq_bands", c.max_freq_bands);
  c.n_time_masks = j.value("n_time_masks", c.n_time_masks);
  c.max_frames_per_mask = j.value("max_frames_per_mask", c.max_frames_per_mask);
  c.time_mask_cap_ratio = j.value("time_mask_cap_ratio", c.time_mask_cap_ratio);
  c.validate();
  return c;
}

SpecAugmentResult spec_augment(const Matrix& mel, const SpecAugmentConfig& cfg, Rng& rng, bool train) {
  SpecAugmentResult out{mel, {}, {}};
  if (!train) return out;
  cfg.validate();
  const int t = static_cast<int>(mel.rows());
  const int d = static_cast<int>(mel.cols());
  if (t == 0 || d == 0) return out;
  const int max_len = std::min(cfg.max_frames_per_mask, static_cast<int>(std::floor(cfg.time_mask_cap_ratio * t)));
  for (int i = 0; i < cfg.n_time_masks; ++i) {
    const int len = static_cast<int>(rng.uniform_int(0, std::max(0, max_len)));
    const int start = static_cast<int>(rng.uniform_int(0, t - len));
    out.frames.middleRows(start, len).setZero();
    out.time_masks.push_back({start, len});
  }
  for (int i = 0; i < cfg.n_freq_masks; ++i) {
    const int width = std::min(d, static_cast<int>(rng.uniform_int(0, cfg.max_freq_bands)));
    const int start = static_cast<int>(rng.uniform_int(0, d - width));
    out.frames.middleCols(start, width).setZero();
    out.freq_masks.push_back({start, width});
  }
  return out;
}

// ---- batching -------------------------------------------------------------------------

std::vector<BatchPlan> make_batches(std::span<const int> lengths, int max_frames_per_batch, ModeMix mix, Rng& rng) {
  if (lengths.empty()) throw EmptyInputError("make_batches: no items");
  if (max_frames_per_batch < 1) throw ConfigError("max_frames_per_batch must be positive");
  std::vector<int> order(lengths.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = static_cast<int>(i);
    if (lengths[i] > max_frames_per_batch) {
      throw ConfigError("item " + std::to_string(i) + " of length " + std::to_string(lengths[i]) +
                        " exceeds max_frames_per_batch");
    }
  }
  // Shuffle then stable-sort so equal lengths land in a seed-dependent order.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lengths[a] < lengths[b]; });

  std::vector<BatchPlan> batches;
  BatchPlan cur;
  for (int idx : order) {
    if (!cur.items.empty() && cur.frames + lengths[idx] > max_frames_per_batch) {
      batches.push_back(std::move(cur));
      cur = BatchPlan{};
    }
    cur.items.push_back(idx);
    cur.frames += lengths[idx];
  }
  if (!cur.items.empty()) batches.push_back(std::move(cur));

  for (std::size_t i = batches.size(); i > 1; --i) {
    std::swap(batches[i - 1], batches[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  for (auto& b : batches) {
    switch (mix) {
      case ModeMix::kTts:
        b.mode = Mode::kTts;
        break;
      case ModeMix::kStt:
        b.mode = Mode::kStt;
        break;
      case ModeMix::kJoint:
        b.mode = rng.uniform() < 0.5 ? Mode::kTts : Mode::kStt;
        break;
    }
  }
  return batches;
}

// ---- manifest ---------------------------------------------------------------------------

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += nlohmann::json{{"id", e.id}, {"transcript", e.transcript}, {"wav", e.wav}, {"speaker_id", e.speaker_id}}
               .dump();
    out += '\n';
  }
  io::write_file(path, out);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::istringstream is(io::read_file(path));
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(ManifestEntry{j.at("id").get<std::string>(), j.at("transcript").get<std::string>(),
                                  j.at("wav").get<std::string>(), j.value("speaker_id", 0)});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---- preparation ------------------------------------------------------------------------

PreparedData prepare_data(const std::vector<Utterance>& utts, const dsp::MelConfig& mel_cfg,
                          const PrepareOptions& opts) {
  if (utts.empty()) throw EmptyInputError("prepare_data: no utterances");
  PreparedData out;
  out.mel_config = mel_cfg;
  std::vector<dsp::MelSpectrogram> mels;
  mels.reserve(utts.size());
  for (const auto& u : utts) mels.push_back(dsp::extract_mel(u.wave, mel_cfg));
  out.stats = dsp::fit_norm_stats(mels);

  std::vector<std::string> lines;
  for (const auto& u : utts) lines.push_back(u.transcript);
  out.bpe = text::train_bpe(lines, opts.bpe_vocab);

  Matrix all;
  std::vector<Matrix> frames;
  Eigen::Index rows = 0;
  for (const auto& m : mels) {
    auto n = dsp::stack_frames(dsp::normalize(m, out.stats), mel_cfg.stack_factor);
    rows += n.frames.rows();
    frames.push_back(std::move(n.frames));
  }
  all.resize(rows, frames.front().cols());
  Eigen::Index r = 0;
  for (const auto& f : frames) {
    all.middleRows(r, f.rows()) = f;
    r += f.rows();
  }
  vq::KMeansOptions ko;
  ko.k = opts.codebook_k;
  ko.max_iters = opts.kmeans_iters;
  ko.seed = opts.kmeans_seed;
  out.codebook = vq::kmeans_fit(all, ko).codebook;
  out.vocab = make_unified_vocab(out.bpe.vocab_size(), opts.codebook_k);

  for (std::size_t i = 0; i < utts.size(); ++i) {
    out.examples.push_back(
        Example{utts[i].id, utts[i].transcript, utts[i].speaker_id, std::move(frames[i]), out.bpe.encode(utts[i].transcript)});
  }
  return out;
}

}  // namespace meld::corpus
