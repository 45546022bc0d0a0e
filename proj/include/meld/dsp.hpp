#pragma once

#include "meld/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace meld::dsp {

inline constexpr double kLogEpsilon = 1e-10;
inline constexpr double kStdFloor = 1e-5;

struct WaveBuffer {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  void validate() const;
};

struct MelConfig {
  int sample_rate_hz = 16000;
  int n_mels = 80;
  double hop_ms = 16.0;
  double win_ms = 64.0;
  int fft_size = 1024;
  double fmin_hz = 80.0;
  double fmax_hz = 7600.0;
  // Frames concatenated per model step: 1 -> 62.5 Hz, 2 -> 31.25 Hz.
  int stack_factor = 1;

  int hop_samples() const;
  int win_samples() const;
  int n_bins() const { return fft_size / 2 + 1; }
  /// Seconds covered by one model step after stacking.
  double frame_seconds() const { return hop_ms * stack_factor / 1000.0; }
  void validate() const;
};

/// Time-major log-mel matrix. `stacked` counts how many analysis frames
/// were concatenated into each row (1 straight out of extract_mel).
struct MelSpectrogram {
  Matrix frames;
  MelConfig config;
  bool normalized = false;
  int stacked = 1;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

struct NormStats {
  Vector mean;
  Vector std;

  void validate() const;
};

// Mel scale (HTK formula).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x n_bins triangular filterbank over [fmin, fmax], peak weight 1.
Matrix mel_filterbank(const MelConfig& cfg);
/// Center frequency of each mel band.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

/// Periodic Hann window.
std::vector<double> hann_window(int length);

/// Complex STFT without centering: frame t starts at sample t*hop.
/// Returns rows = frames, cols = n_bins.
Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
stft(std::span<const double> samples, const MelConfig& cfg);

/// Least-squares (windowed overlap-add) inverse of stft().
std::vector<double> istft(
    const Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& spec,
    const MelConfig& cfg);

MelSpectrogram extract_mel(const WaveBuffer& wave, const MelConfig& cfg);

NormStats fit_norm_stats(std::span<const MelSpectrogram> corpus);
MelSpectrogram normalize(const MelSpectrogram& mel, const NormStats& stats);
MelSpectrogram denormalize(const MelSpectrogram& mel, const NormStats& stats);

MelSpectrogram stack_frames(const MelSpectrogram& mel, int factor);
MelSpectrogram unstack_frames(const MelSpectrogram& mel, int factor);

/// Non-negative least squares lift of mel power frames to linear power.
/// `mel_power` is T x n_mels; result is T x n_bins.
Matrix mel_power_to_linear(const Matrix& mel_power, const MelConfig& cfg, int iterations = 300);

struct GriffinLimResult {
  WaveBuffer wave;
  /// || |STFT(wave)| - target ||_F / ||target||_F
  double spectral_convergence = 0.0;
};

/// Plain Griffin-Lim phase recovery for a T x n_bins magnitude matrix.
GriffinLimResult griffin_lim(const Matrix& magnitude, const MelConfig& cfg, int iters,
                             std::uint64_t seed);

/// Full mel -> waveform path: denormalize, unstack, NNLS lift, Griffin-Lim.
GriffinLimResult invert_mel_griffin_lim(const MelSpectrogram& mel, const NormStats& stats,
                                        int iters, std::uint64_t seed = 0);

double spectral_convergence(std::span<const double> samples, const Matrix& magnitude,
                            const MelConfig& cfg);

/// Integer-factor decimation with a windowed-sinc low-pass.
WaveBuffer decimate(const WaveBuffer& wave, int factor);

// 16-bit PCM mono RIFF/WAVE.
WaveBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WaveBuffer& wave);

}  // namespace meld::dsp
