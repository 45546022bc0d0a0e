#include "meld/feature_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace meld::io {

using nlohmann::json;

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void append_f32(std::string& out, float v) { append_u32(out, std::bit_cast<std::uint32_t>(v)); }
void append_f64(std::string& out, double v) { append_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t load_u32(const std::string& in, std::size_t offset) {
  if (offset + 4 > in.size()) throw FormatError("truncated binary payload");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return v;
}
std::uint64_t load_u64(const std::string& in, std::size_t offset) {
  if (offset + 8 > in.size()) throw FormatError("truncated binary payload");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(i)])) << (8 * i);
  }
  return v;
}
float load_f32(const std::string& in, std::size_t offset) { return std::bit_cast<float>(load_u32(in, offset)); }
double load_f64(const std::string& in, std::size_t offset) { return std::bit_cast<double>(load_u64(in, offset)); }

json to_json(const dsp::MelConfig& cfg) {
  return json{{"sample_rate_hz", cfg.sample_rate_hz}, {"n_mels", cfg.n_mels},
              {"hop_ms", cfg.hop_ms},                 {"win_ms", cfg.win_ms},
              {"fft_size", cfg.fft_size},             {"fmin_hz", cfg.fmin_hz},
              {"fmax_hz", cfg.fmax_hz},               {"window", "hann"},
              {"stack_factor", cfg.stack_factor}};
}

dsp::MelConfig mel_config_from_json(const json& j) {
  dsp::MelConfig cfg;
  cfg.sample_rate_hz = j.value("sample_rate_hz", cfg.sample_rate_hz);
  cfg.n_mels = j.value("n_mels", cfg.n_mels);
  cfg.hop_ms = j.value("hop_ms", cfg.hop_ms);
  cfg.win_ms = j.value("win_ms", cfg.win_ms);
  cfg.fft_size = j.value("fft_size", cfg.fft_size);
  cfg.fmin_hz = j.value("fmin_hz", cfg.fmin_hz);
  cfg.fmax_hz = j.value("fmax_hz", cfg.fmax_hz);
  cfg.stack_factor = j.value("stack_factor", cfg.stack_factor);
  if (j.contains("window") && j.at("window") != "hann") throw ConfigError("only the hann window is supported");
  cfg.validate();
  return cfg;
}

json to_json(const dsp::NormStats& stats) {
  return json{{"mean", std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size())},
              {"std", std::vector<double>(stats.std.data(), stats.std.data() + stats.std.size())}};
}

dsp::NormStats norm_stats_from_json(const json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  dsp::NormStats stats{Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                       Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()))};
  stats.validate();
  return stats;
}

std::string encode_mel(const dsp::MelSpectrogram& mel) {
  std::string out = "MELD";
  append_u32(out, kMelFormatVersion);
  append_u32(out, static_cast<std::uint32_t>(mel.num_frames()));
  append_u32(out, static_cast<std::uint32_t>(mel.dim()));
  out.reserve(out.size() + static_cast<std::size_t>(mel.frames.size()) * 4 + 256);
  for (Eigen::Index t = 0; t < mel.num_frames(); ++t) {
    for (Eigen::Index d = 0; d < mel.dim(); ++d) append_f32(out, static_cast<float>(mel.frames(t, d)));
  }
  const json meta{{"config", to_json(mel.config)}, {"normalized", mel.normalized}, {"stacked", mel.stacked}};
  out += meta.dump();
  return out;
}

dsp::MelSpectrogram decode_mel(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "MELD") != 0) throw FormatError("missing MELD magic");
  const auto version = load_u32(bytes, 4);
  if (version != kMelFormatVersion) throw FormatError("unsupported mel container version " + std::to_string(version));
  const auto frames = load_u32(bytes, 8);
  const auto dim = load_u32(bytes, 12);
  const std::size_t payload = static_cast<std::size_t>(frames) * dim * 4;
  if (16 + payload > bytes.size()) throw FormatError("truncated mel payload");
  dsp::MelSpectrogram mel;
  mel.frames.resize(frames, dim);
  std::size_t off = 16;
  for (std::uint32_t t = 0; t < frames; ++t) {
    for (std::uint32_t d = 0; d < dim; ++d, off += 4) mel.frames(t, d) = load_f32(bytes, off);
  }
  const json meta = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  mel.config = mel_config_from_json(meta.at("config"));
  mel.normalized = meta.at("normalized").get<bool>();
  mel.stacked = meta.value("stacked", 1);
  return mel;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_mel(const std::filesystem::path& path, const dsp::MelSpectrogram& mel) {
  write_file(path, encode_mel(mel));
}

dsp::MelSpectrogram read_mel(const std::filesystem::path& path) { return decode_mel(read_file(path)); }

void write_json(const std::filesystem::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace meld::io
