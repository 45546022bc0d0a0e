#include "meld/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "meld/rng.hpp"

namespace meld::dsp {

namespace {

using ComplexMatrix =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

int round_samples(double ms, int sr) {
  return static_cast<int>(std::lround(ms * sr / 1000.0));
}

}  // namespace

void WaveBuffer::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("sample rate must be positive");
  for (double s : samples) {
    if (!std::isfinite(s)) throw NumericError("waveform contains non-finite samples");
  }
}

int MelConfig::hop_samples() const { return round_samples(hop_ms, sample_rate_hz); }
int MelConfig::win_samples() const { return round_samples(win_ms, sample_rate_hz); }

void MelConfig::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("mel.sample_rate_hz must be positive");
  if (n_mels < 1) throw ConfigError("mel.n_mels must be >= 1");
  if (hop_ms <= 0.0) throw ConfigError("mel.hop_ms must be positive");
  if (win_ms < hop_ms) throw ConfigError("mel.win_ms must be >= mel.hop_ms");
  if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz)) throw ConfigError("mel.fmin_hz must be in [0, fmax_hz)");
  if (fmax_hz > sample_rate_hz / 2.0) throw ConfigError("mel.fmax_hz exceeds Nyquist");
  if (fft_size < win_samples()) throw ConfigError("mel.fft_size smaller than window");
  if (hop_samples() < 1) throw ConfigError("mel.hop_ms shorter than one sample");
  if (stack_factor < 1) throw ConfigError("mel.stack_factor must be >= 1");
}

void NormStats::validate() const {
  if (mean.size() != std.size()) throw ShapeError("norm stats mean/std size mismatch");
  for (Eigen::Index i = 0; i < std.size(); ++i) {
    if (!(std[i] > 0.0)) throw ConfigError("norm stats std must be positive");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) {
    centers[static_cast<std::size_t>(m)] = mel_to_hz(lo + (hi - lo) * (m + 1) / (cfg.n_mels + 1));
  }
  return centers;
}

Matrix mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }
  Matrix fb = Matrix::Zero(cfg.n_mels, cfg.n_bins());
  const double bin_hz = static_cast<double>(cfg.sample_rate_hz) / cfg.fft_size;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < cfg.n_bins(); ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n) {
    w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / length);
  }
  return w;
}

ComplexMatrix stft(std::span<const double> samples, const MelConfig& cfg) {
  const int win = cfg.win_samples();
  const int hop = cfg.hop_samples();
  if (static_cast<int>(samples.size()) < win) {
    throw EmptyInputError("waveform shorter than one analysis window");
  }
  const int frames = (static_cast<int>(samples.size()) - win) / hop + 1;
  const auto window = hann_window(win);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size), 0.0);
  std::vector<std::complex<double>> out;
  ComplexMatrix spec(frames, cfg.n_bins());
  for (int t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(hop);
    for (int n = 0; n < win; ++n) {
      buf[static_cast<std::size_t>(n)] = samples[start + static_cast<std::size_t>(n)] * window[static_cast<std::size_t>(n)];
    }
    fft.fwd(out, buf);
    for (int k = 0; k < cfg.n_bins(); ++k) spec(t, k) = out[static_cast<std::size_t>(k)];
  }
  return spec;
}

std::vector<double> istft(const ComplexMatrix& spec, const MelConfig& cfg) {
  const int win = cfg.win_samples();
  const int hop = cfg.hop_samples();
  const auto frames = static_cast<int>(spec.rows());
  if (frames == 0) return {};
  if (spec.cols() != cfg.n_bins()) throw ShapeError("istft: bin count does not match fft_size");
  const std::size_t n_out = static_cast<std::size_t>((frames - 1) * hop + win);
  const auto window = hann_window(win);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> out(n_out, 0.0);
  std::vector<double> norm(n_out, 0.0);
  std::vector<std::complex<double>> half(static_cast<std::size_t>(cfg.n_bins()));
  std::vector<double> frame;
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < cfg.n_bins(); ++k) half[static_cast<std::size_t>(k)] = spec(t, k);
    fft.inv(frame, half, cfg.fft_size);
    const std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(hop);
    for (int n = 0; n < win; ++n) {
      const double w = window[static_cast<std::size_t>(n)];
      out[start + static_cast<std::size_t>(n)] += w * frame[static_cast<std::size_t>(n)];
      norm[start + static_cast<std::size_t>(n)] += w * w;
    }
  }
  for (std::size_t i = 0; i < n_out; ++i) {
    out[i] = norm[i] > 1e-12 ? out[i] / norm[i] : 0.0;
  }
  return out;
}

MelSpectrogram extract_mel(const WaveBuffer& wave, const MelConfig& cfg) {
  cfg.validate();
  wave.validate();
  if (wave.sample_rate_hz != cfg.sample_rate_hz) {
    throw ConfigError("waveform sample rate " + std::to_string(wave.sample_rate_hz) +
                      " does not match mel config " + std::to_string(cfg.sample_rate_hz));
  }
  const auto spec = stft(wave.samples, cfg);
  const Matrix power = spec.cwiseAbs2();
  const Matrix fb = mel_filterbank(cfg);
  Matrix mel = power * fb.transpose();
  mel = (mel.array() + kLogEpsilon).log().matrix();
  return MelSpectrogram{std::move(mel), cfg, false, 1};
}

NormStats fit_norm_stats(std::span<const MelSpectrogram> corpus) {
  Eigen::Index dim = -1;
  Eigen::Index count = 0;
  for (const auto& m : corpus) {
    if (m.num_frames() == 0) continue;
    if (dim < 0) dim = m.dim();
    if (m.dim() != dim) throw ShapeError("fit_norm_stats: inconsistent frame dimensions");
    count += m.num_frames();
  }
  if (count == 0) throw EmptyInputError("fit_norm_stats: corpus has no frames");

  // Two passes for numerical accuracy.
  Vector mean = Vector::Zero(dim);
  for (const auto& m : corpus) {
    if (m.num_frames() > 0) mean += m.frames.colwise().sum().transpose();
  }
  mean /= static_cast<double>(count);
  Vector var = Vector::Zero(dim);
  for (const auto& m : corpus) {
    if (m.num_frames() == 0) continue;
    const Matrix centered = m.frames.rowwise() - mean.transpose();
    var += centered.cwiseAbs2().colwise().sum().transpose();
  }
  var /= static_cast<double>(count);
  Vector sd = var.cwiseSqrt().cwiseMax(kStdFloor);
  return NormStats{std::move(mean), std::move(sd)};
}

MelSpectrogram normalize(const MelSpectrogram& mel, const NormStats& stats) {
  stats.validate();
  if (mel.dim() != stats.mean.size()) throw ShapeError("normalize: dimension mismatch");
  MelSpectrogram out = mel;
  out.frames = ((mel.frames.rowwise() - stats.mean.transpose()).array().rowwise() /
                stats.std.transpose().array())
                   .matrix();
  out.normalized = true;
  return out;
}

MelSpectrogram denormalize(const MelSpectrogram& mel, const NormStats& stats) {
  stats.validate();
  if (mel.dim() != stats.mean.size()) throw ShapeError("denormalize: dimension mismatch");
  MelSpectrogram out = mel;
  out.frames = ((mel.frames.array().rowwise() * stats.std.transpose().array()).rowwise() +
                stats.mean.transpose().array())
                   .matrix();
  out.normalized = false;
  return out;
}

MelSpectrogram stack_frames(const MelSpectrogram& mel, int factor) {
  if (factor < 1) throw ConfigError("stack factor must be >= 1");
  const Eigen::Index groups = mel.num_frames() / factor;
  const Eigen::Index d = mel.dim();
  MelSpectrogram out = mel;
  out.frames.resize(groups, d * factor);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (int j = 0; j < factor; ++j) {
      out.frames.block(g, j * d, 1, d) = mel.frames.row(g * factor + j);
    }
  }
  out.stacked = mel.stacked * factor;
  return out;
}

MelSpectrogram unstack_frames(const MelSpectrogram& mel, int factor) {
  if (factor < 1) throw ConfigError("stack factor must be >= 1");
  if (mel.dim() % factor != 0) throw ShapeError("unstack: dimension not divisible by factor");
  const Eigen::Index d = mel.dim() / factor;
  MelSpectrogram out = mel;
  out.frames.resize(mel.num_frames() * factor, d);
  for (Eigen::Index g = 0; g < mel.num_frames(); ++g) {
    for (int j = 0; j < factor; ++j) {
      out.frames.row(g * factor + j) = mel.frames.block(g, j * d, 1, d);
    }
  }
  out.stacked = std::max(1, mel.stacked / factor);
  return out;
}

Matrix mel_power_to_linear(const Matrix& mel_power, const MelConfig& cfg, int iterations) {
  const Matrix fb = mel_filterbank(cfg);
  if (mel_power.cols() != fb.rows()) throw ShapeError("mel_power_to_linear: expected n_mels columns");
  const Matrix gram = fb * fb.transpose();  // n_mels x n_mels

  // Lipschitz constant of the gradient = largest eigenvalue of F F^T.
  Vector v = Vector::Ones(gram.rows());
  double lipschitz = 1.0;
  for (int i = 0; i < 100; ++i) {
    Vector w = gram * v;
    lipschitz = w.norm();
    if (lipschitz <= 0.0) break;
    v = w / lipschitz;
  }
  const double step = 1.0 / std::max(lipschitz, 1e-12);

  // FISTA projected gradient on min ||F s - m||^2, s >= 0, all frames at once.
  // Rows are frames; work in the transposed layout S (T x n_bins).
  Matrix s = (mel_power * fb).cwiseMax(0.0);
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    // Scale the back-projection so that F s matches the target energy.
    const double target = mel_power.row(r).sum();
    const double got = (s.row(r) * fb.transpose()).sum();
    if (got > 0.0) s.row(r) *= target / got;
  }
  Matrix y = s;
  double momentum = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const Matrix residual = y * fb.transpose() - mel_power;
    Matrix next = (y - step * residual * fb).cwiseMax(0.0);
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    y = next + ((momentum - 1.0) / next_momentum) * (next - s);
    s = std::move(next);
    momentum = next_momentum;
  }
  return s;
}

double spectral_convergence(std::span<const double> samples, const Matrix& magnitude,
                            const MelConfig& cfg) {
  const auto spec = stft(samples, cfg);
  if (spec.rows() != magnitude.rows() || spec.cols() != magnitude.cols()) {
    throw ShapeError("spectral_convergence: shape mismatch");
  }
  const double denom = magnitude.norm();
  const double num = (spec.cwiseAbs() - magnitude).norm();
  return denom > 0.0 ? num / denom : num;
}

GriffinLimResult griffin_lim(const Matrix& magnitude, const MelConfig& cfg, int iters,
                             std::uint64_t seed) {
  if (iters < 1) throw ConfigError("griffin-lim iterations must be >= 1");
  if (magnitude.cols() != cfg.n_bins()) throw ShapeError("griffin_lim: expected n_bins columns");
  Rng rng(seed);
  ComplexMatrix estimate(magnitude.rows(), magnitude.cols());
  for (Eigen::Index t = 0; t < magnitude.rows(); ++t) {
    for (Eigen::Index k = 0; k < magnitude.cols(); ++k) {
      const double phase = 2.0 * M_PI * rng.uniform();
      estimate(t, k) = std::polar(magnitude(t, k), phase);
    }
  }
  std::vector<double> wave = istft(estimate, cfg);
  for (int it = 0; it < iters; ++it) {
    const auto rebuilt = stft(wave, cfg);
    for (Eigen::Index t = 0; t < magnitude.rows(); ++t) {
      for (Eigen::Index k = 0; k < magnitude.cols(); ++k) {
        const auto c = rebuilt(t, k);
        const double a = std::abs(c);
        estimate(t, k) = a > 1e-12 ? magnitude(t, k) * (c / a) : std::complex<double>(magnitude(t, k), 0.0);
      }
    }
    wave = istft(estimate, cfg);
  }
  GriffinLimResult result;
  result.spectral_convergence = magnitude.rows() > 0 ? spectral_convergence(wave, magnitude, cfg) : 0.0;
  result.wave = WaveBuffer{std::move(wave), cfg.sample_rate_hz};
  return result;
}

GriffinLimResult invert_mel_griffin_lim(const MelSpectrogram& mel, const NormStats& stats,
                                        int iters, std::uint64_t seed) {
  if (iters < 1) throw ConfigError("griffin-lim iterations must be >= 1");
  MelSpectrogram work = mel;
  if (work.stacked > 1) work = unstack_frames(work, work.stacked);
  if (work.normalized) work = denormalize(work, stats);
  if (work.dim() != mel.config.n_mels) throw ShapeError("invert_mel_griffin_lim: expected n_mels columns");
  if (work.num_frames() == 0) return GriffinLimResult{WaveBuffer{{}, mel.config.sample_rate_hz}, 0.0};
  const Matrix mel_power = (work.frames.array().exp() - kLogEpsilon).cwiseMax(0.0).matrix();
  const Matrix linear_power = mel_power_to_linear(mel_power, mel.config);
  const Matrix magnitude = linear_power.cwiseSqrt();
  return griffin_lim(magnitude, mel.config, iters, seed);
}

WaveBuffer decimate(const WaveBuffer& wave, int factor) {
  if (factor < 1) throw ConfigError("decimation factor must be >= 1");
  if (factor == 1) return wave;
  if (wave.sample_rate_hz % factor != 0) throw ConfigError("sample rate not divisible by decimation factor");
  const int half = 16 * factor;
  const double cutoff = 0.5 / factor;  // cycles per input sample
  std::vector<double> taps(static_cast<std::size_t>(2 * half + 1));
  double sum = 0.0;
  for (int n = -half; n <= half; ++n) {
    const double x = 2.0 * cutoff * n;
    const double sinc = n == 0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double blackman = 0.42 + 0.5 * std::cos(M_PI * n / half) + 0.08 * std::cos(2.0 * M_PI * n / half);
    taps[static_cast<std::size_t>(n + half)] = 2.0 * cutoff * sinc * blackman;
    sum += taps[static_cast<std::size_t>(n + half)];
  }
  for (double& t : taps) t /= sum;
  WaveBuffer out;
  out.sample_rate_hz = wave.sample_rate_hz / factor;
  const auto n_in = static_cast<std::ptrdiff_t>(wave.samples.size());
  for (std::ptrdiff_t i = 0; i < n_in; i += factor) {
    double acc = 0.0;
    for (int k = -half; k <= half; ++k) {
      const std::ptrdiff_t j = i + k;
      if (j >= 0 && j < n_in) acc += taps[static_cast<std::size_t>(k + half)] * wave.samples[static_cast<std::size_t>(j)];
    }
    out.samples.push_back(acc);
  }
  return out;
}

namespace {

std::uint32_t read_u32(const char* p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24;
}
std::uint16_t read_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                    static_cast<unsigned char>(p[1]) << 8);
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
}

}  // namespace

WaveBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open wav file: " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || data.compare(0, 4, "RIFF") != 0 || data.compare(8, 4, "WAVE") != 0) {
    throw FormatError("not a RIFF/WAVE file: " + path.string());
  }
  std::size_t pos = 12;
  int channels = 0, bits = 0, rate = 0, format = 0;
  const char* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  while (pos + 8 <= data.size()) {
    const std::string id = data.substr(pos, 4);
    const std::size_t size = read_u32(data.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > data.size()) throw FormatError("truncated wav chunk in " + path.string());
    if (id == "fmt ") {
      if (size < 16) throw FormatError("short fmt chunk");
      format = read_u16(data.data() + body);
      channels = read_u16(data.data() + body + 2);
      rate = static_cast<int>(read_u32(data.data() + body + 4));
      bits = read_u16(data.data() + body + 14);
    } else if (id == "data") {
      pcm = data.data() + body;
      pcm_bytes = size;
    }
    pos = body + size + (size & 1);
  }
  if (format != 1 || bits != 16) throw FormatError("only 16-bit PCM wav is supported");
  if (channels != 1) throw FormatError("only mono wav is supported");
  if (pcm == nullptr) throw FormatError("wav has no data chunk");
  WaveBuffer wave;
  wave.sample_rate_hz = rate;
  wave.samples.resize(pcm_bytes / 2);
  for (std::size_t i = 0; i < wave.samples.size(); ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(pcm + 2 * i));
    wave.samples[i] = v / 32768.0;
  }
  return wave;
}

void write_wav(const std::filesystem::path& path, const WaveBuffer& wave) {
  wave.validate();
  std::string out;
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (double s : wave.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(c * 32768.0, -32768.0, 32767.0)));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write wav file: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace meld::dsp
