#pragma once

#include "meld/dsp.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace meld::io {

inline constexpr std::uint32_t kMelFormatVersion = 1;

nlohmann::json to_json(const dsp::MelConfig& cfg);
dsp::MelConfig mel_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const dsp::NormStats& stats);
dsp::NormStats norm_stats_from_json(const nlohmann::json& j);

// Binary mel container: "MELD", version u32, T u32, D u32, row-major LE f32
// payload, then a JSON metadata trailer (config, normalized, stacked).
std::string encode_mel(const dsp::MelSpectrogram& mel);
dsp::MelSpectrogram decode_mel(const std::string& bytes);

void write_mel(const std::filesystem::path& path, const dsp::MelSpectrogram& mel);
dsp::MelSpectrogram read_mel(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// Little-endian scalar helpers shared by the binary formats.
void append_u32(std::string& out, std::uint32_t v);
void append_u64(std::string& out, std::uint64_t v);
void append_f32(std::string& out, float v);
void append_f64(std::string& out, double v);
std::uint32_t load_u32(const std::string& in, std::size_t offset);
std::uint64_t load_u64(const std::string& in, std::size_t offset);
float load_f32(const std::string& in, std::size_t offset);
double load_f64(const std::string& in, std::size_t offset);

}  // namespace meld::io
