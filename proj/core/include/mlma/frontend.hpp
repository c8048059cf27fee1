#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mlma/tensor.hpp"

namespace mlma::frontend {

struct Waveform {
  std::vector<float> samples;  // [-1, 1]
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

// RIFF/WAVE PCM16 reader; stereo is averaged to mono and values scaled by 1/32768.
Waveform parse_wav(std::span<const std::uint8_t> bytes);
Waveform load_wav(const std::filesystem::path& path);

// Mono PCM16 writer (samples clipped to the representable range).
std::vector<std::uint8_t> encode_wav(const Waveform& wave);
void save_wav(const std::filesystem::path& path, const Waveform& wave);

struct FeatureConfig {
  int expected_rate = 16000;
  double frame_length_s = 0.025;
  double frame_shift_s = 0.010;
  std::size_t n_fft = 512;
  std::size_t n_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-10;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
};

struct LogMelSpectrogram {
  Tensor<float> frames;  // [T x n_mels]
  std::size_t n_mels = 80;
  double frame_shift_s = 0.010;
  double frame_length_s = 0.025;

  std::size_t num_frames() const { return frames.defined() ? frames.dim(0) : 0; }
};

// floor((num_samples - win) / hop) + 1 when num_samples >= win, else 0.
std::size_t num_frames(std::size_t num_samples, std::size_t win, std::size_t hop);

// Slaney mel scale: linear (200/3 Hz per mel) below 1 kHz, logarithmic above
// with 27 mels per factor 6.4.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters with unit peak whose band edges are n_mels + 2 points
// equally spaced on the mel scale between f_min and f_max. Row-major
// [n_mels x (n_fft / 2 + 1)].
std::vector<double> mel_filterbank(const FeatureConfig& cfg);
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg);

// Periodic Hann window, |FFT|^2, mel filterbank, natural log with floor.
LogMelSpectrogram compute_logmel(const Waveform& wave, const FeatureConfig& cfg = {});

// Per-utterance, per-coefficient mean/variance normalization (variance floor 1e-8).
LogMelSpectrogram normalize(const LogMelSpectrogram& spec);

// Feature cache: "MLFB", u32 version, u32 T, u32 n_mels, float32 LE row-major.
inline constexpr std::uint32_t kFeatureCacheVersion = 1;
std::vector<std::uint8_t> encode_feature_cache(const LogMelSpectrogram& spec);
LogMelSpectrogram decode_feature_cache(std::span<const std::uint8_t> bytes);
void save_feature_cache(const std::filesystem::path& path, const LogMelSpectrogram& spec);
LogMelSpectrogram load_feature_cache(const std::filesystem::path& path);

}  // namespace mlma::frontend
