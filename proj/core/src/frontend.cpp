#include "mlma/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "mlma/error.hpp"
#include "mlma/io_util.hpp"

namespace mlma::frontend {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::string fourcc(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::string(reinterpret_cast<const char*>(bytes.data() + offset), 4);
}

[[noreturn]] void parse_fail(const std::string& what, std::size_t offset) {
  throw ParseError("wav: " + what + " at byte offset " + std::to_string(offset));
}

// FFTW planning is not thread-safe; execution with the new-array API is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanDeleter {
  void operator()(fftw_plan_s* plan) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
};

struct FftwBuffer {
  explicit FftwBuffer(std::size_t bytes) : ptr(fftw_malloc(bytes)) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void* ptr;
};

}  // namespace

Waveform parse_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) parse_fail("truncated RIFF header", bytes.size());
  if (fourcc(bytes, 0) != "RIFF") parse_fail("missing RIFF magic", 0);
  if (fourcc(bytes, 8) != "WAVE") parse_fail("missing WAVE form type", 8);

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t offset = 12;
  while (true) {
    if (offset + 8 > bytes.size()) {
      parse_fail(have_fmt ? "missing data chunk" : "missing fmt chunk", offset);
    }
    const std::string id = fourcc(bytes, offset);
    const std::uint32_t size = io::get<std::uint32_t>(bytes, offset + 4);
    const std::size_t body = offset + 8;
    if (id == "fmt ") {
      if (size < 16 || body + 16 > bytes.size()) parse_fail("truncated fmt chunk", body);
      std::uint16_t format = io::get<std::uint16_t>(bytes, body);
      channels = io::get<std::uint16_t>(bytes, body + 2);
      rate = io::get<std::uint32_t>(bytes, body + 4);
      bits = io::get<std::uint16_t>(bytes, body + 14);
      if (format == kFormatExtensible) {
        if (size < 40 || body + 26 > bytes.size()) parse_fail("truncated extensible fmt chunk", body);
        format = io::get<std::uint16_t>(bytes, body + 24);
      }
      if (format != kFormatPcm) {
        throw UnsupportedFormatError("wav: unsupported sample format code " +
                                     std::to_string(format) + " (PCM only)");
      }
      if (bits != 16) {
        throw UnsupportedFormatError("wav: unsupported bit depth " + std::to_string(bits) +
                                     " (16-bit PCM only)");
      }
      if (channels != 1 && channels != 2) {
        throw UnsupportedFormatError("wav: unsupported channel count " + std::to_string(channels));
      }
      if (rate == 0) parse_fail("zero sample rate", body + 4);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) parse_fail("data chunk before fmt chunk", offset);
      if (body + size > bytes.size()) parse_fail("truncated data chunk", bytes.size());
      const std::size_t frame_bytes = 2u * channels;
      const std::size_t count = size / frame_bytes;
      Waveform wave;
      wave.sample_rate = static_cast<int>(rate);
      wave.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        float acc = 0.0f;
        for (std::size_t c = 0; c < channels; ++c) {
          acc += static_cast<float>(io::get<std::int16_t>(bytes, body + i * frame_bytes + 2 * c));
        }
        wave.samples[i] = acc / static_cast<float>(channels) / 32768.0f;
      }
      return wave;
    }
    offset = body + size + (size & 1u);
  }
}

Waveform load_wav(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_wav(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const Waveform& wave) {
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  io::put<std::uint32_t>(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  io::put<std::uint32_t>(out, 16);
  io::put<std::uint16_t>(out, kFormatPcm);
  io::put<std::uint16_t>(out, 1);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  io::put<std::uint16_t>(out, 2);
  io::put<std::uint16_t>(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  io::put<std::uint32_t>(out, 2 * n);
  for (float s : wave.samples) {
    const float scaled = std::round(s * 32768.0f);
    io::put<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(scaled, -32768.0f, 32767.0f)));
  }
  return out;
}

void save_wav(const std::filesystem::path& path, const Waveform& wave) {
  io::write_file_atomic(path, encode_wav(wave));
}

std::size_t FeatureConfig::window_samples() const {
  return static_cast<std::size_t>(std::lround(frame_length_s * expected_rate));
}

std::size_t FeatureConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(frame_shift_s * expected_rate));
}

std::size_t num_frames(std::size_t num_samples, std::size_t win, std::size_t hop) {
  if (hop == 0 || win == 0) throw ConfigError("frame window and hop must be positive");
  if (num_samples < win) return 0;
  return (num_samples - win) / hop + 1;
}

namespace {
constexpr double kMelLinearHzPerMel = 200.0 / 3.0;
constexpr double kMelLogStartHz = 1000.0;
constexpr double kMelLogStartMel = kMelLogStartHz / kMelLinearHzPerMel;  // 15
const double kMelLogStep = std::log(6.4) / 27.0;
}  // namespace

double hz_to_mel(double hz) {
  if (hz < kMelLogStartHz) return hz / kMelLinearHzPerMel;
  return kMelLogStartMel + std::log(hz / kMelLogStartHz) / kMelLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMelLogStartMel) return mel * kMelLinearHzPerMel;
  return kMelLogStartHz * std::exp(kMelLogStep * (mel - kMelLogStartMel));
}

namespace {
std::vector<double> band_edges_hz(const FeatureConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min);
  const double hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  return edges;
}
}  // namespace

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  const auto edges = band_edges_hz(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<double> mel_filterbank(const FeatureConfig& cfg) {
  if (cfg.n_mels == 0 || cfg.n_fft < 2) throw ConfigError("filterbank needs n_mels >= 1 and n_fft >= 2");
  if (!(cfg.f_max > cfg.f_min) || cfg.f_max > cfg.expected_rate / 2.0) {
    throw ConfigError("mel range must satisfy f_min < f_max <= sample_rate / 2");
  }
  const auto edges = band_edges_hz(cfg);
  const std::size_t bins = cfg.n_fft / 2 + 1;
  std::vector<double> fb(cfg.n_mels * bins, 0.0);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.expected_rate / static_cast<double>(cfg.n_fft);
      const double rise = (f - lo) / (center - lo);
      const double fall = (hi - f) / (hi - center);
      fb[m * bins + k] = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

LogMelSpectrogram compute_logmel(const Waveform& wave, const FeatureConfig& cfg) {
  if (wave.sample_rate != cfg.expected_rate) {
    throw ConfigError("sample rate " + std::to_string(wave.sample_rate) + " Hz does not match the expected " +
                      std::to_string(cfg.expected_rate) + " Hz (no resampling is performed)");
  }
  const std::size_t win = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  if (win > cfg.n_fft) throw ConfigError("window longer than the FFT size");
  const std::size_t frames = num_frames(wave.samples.size(), win, hop);
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const auto fb = mel_filterbank(cfg);

  std::vector<double> window(win);
  for (std::size_t n = 0; n < win; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(win));
  }

  FftwBuffer in_buf(sizeof(double) * cfg.n_fft);
  FftwBuffer out_buf(sizeof(fftw_complex) * bins);
  auto* in = static_cast<double*>(in_buf.ptr);
  auto* out = static_cast<fftw_complex*>(out_buf.ptr);
  std::unique_ptr<fftw_plan_s, PlanDeleter> plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan.reset(fftw_plan_dft_r2c_1d(static_cast<int>(cfg.n_fft), in, out, FFTW_ESTIMATE));
  }

  std::vector<float> data(frames * cfg.n_mels);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill_n(in, cfg.n_fft, 0.0);
    for (std::size_t n = 0; n < win; ++n) in[n] = wave.samples[t * hop + n] * window[n];
    fftw_execute_dft_r2c(plan.get(), in, out);
    for (std::size_t k = 0; k < bins; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double energy = 0.0;
      const double* row = fb.data() + m * bins;
      for (std::size_t k = 0; k < bins; ++k) energy += row[k] * power[k];
      data[t * cfg.n_mels + m] = static_cast<float>(std::log(std::max(energy, cfg.log_floor)));
    }
  }
  LogMelSpectrogram spec;
  spec.frames = Tensor<float>({frames, cfg.n_mels}, std::move(data));
  spec.n_mels = cfg.n_mels;
  spec.frame_shift_s = cfg.frame_shift_s;
  spec.frame_length_s = cfg.frame_length_s;
  return spec;
}

LogMelSpectrogram normalize(const LogMelSpectrogram& spec) {
  const std::size_t frames = spec.num_frames();
  if (frames == 0) throw ValidationError("cannot normalize an empty spectrogram");
  const std::size_t d = spec.n_mels;
  const auto in = spec.frames.data();
  std::vector<float> out(in.size());
  for (std::size_t c = 0; c < d; ++c) {
    double mu = 0.0;
    for (std::size_t t = 0; t < frames; ++t) mu += in[t * d + c];
    mu /= static_cast<double>(frames);
    double var = 0.0;
    for (std::size_t t = 0; t < frames; ++t) var += (in[t * d + c] - mu) * (in[t * d + c] - mu);
    var /= static_cast<double>(frames);
    const double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
    for (std::size_t t = 0; t < frames; ++t) out[t * d + c] = static_cast<float>((in[t * d + c] - mu) * inv);
  }
  LogMelSpectrogram result = spec;
  result.frames = Tensor<float>(spec.frames.shape(), std::move(out));
  return result;
}

std::vector<std::uint8_t> encode_feature_cache(const LogMelSpectrogram& spec) {
  std::vector<std::uint8_t> out{'M', 'L', 'F', 'B'};
  io::put<std::uint32_t>(out, kFeatureCacheVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.num_frames()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(spec.n_mels));
  if (spec.frames.defined()) {
    for (float v : spec.frames.data()) io::put<float>(out, v);
  }
  return out;
}

LogMelSpectrogram decode_feature_cache(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw ParseError("feature cache: truncated header");
  if (std::string(reinterpret_cast<const char*>(bytes.data()), 4) != "MLFB") {
    throw ParseError("feature cache: bad magic at byte offset 0");
  }
  const auto version = io::get<std::uint32_t>(bytes, 4);
  if (version != kFeatureCacheVersion) {
    throw VersionError("feature cache: version " + std::to_string(version) + " is not supported");
  }
  const std::size_t frames = io::get<std::uint32_t>(bytes, 8);
  const std::size_t mels = io::get<std::uint32_t>(bytes, 12);
  if (bytes.size() != 16 + 4 * frames * mels) {
    throw IntegrityError("feature cache: payload holds " + std::to_string(bytes.size() - 16) +
                         " bytes, header declares " + std::to_string(4 * frames * mels));
  }
  std::vector<float> data(frames * mels);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = io::get<float>(bytes, 16 + 4 * i);
  LogMelSpectrogram spec;
  spec.frames = Tensor<float>({frames, mels}, std::move(data));
  spec.n_mels = mels;
  return spec;
}

void save_feature_cache(const std::filesystem::path& path, const LogMelSpectrogram& spec) {
  io::write_file_atomic(path, encode_feature_cache(spec));
}

LogMelSpectrogram load_feature_cache(const std::filesystem::path& path) {
  return decode_feature_cache(io::read_file(path));
}

}  // namespace mlma::frontend
