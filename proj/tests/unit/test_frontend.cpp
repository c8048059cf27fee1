#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

#include "mlma/error.hpp"
#include "mlma/frontend.hpp"

namespace mlma::frontend {
namespace {

// Minimal RIFF writer independent of encode_wav.
std::vector<std::uint8_t> make_wav(const std::vector<std::int16_t>& pcm, std::uint16_t channels, int rate,
                                   std::uint16_t bits = 16) {
  std::vector<std::uint8_t> out;
  const auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  const auto u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  const auto tag = [&](const char* s) { out.insert(out.end(), s, s + 4); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  tag("RIFF");
  u32(36 + data_bytes);
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(1);
  u16(channels);
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate) * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  tag("data");
  u32(data_bytes);
  for (auto s : pcm) u16(static_cast<std::uint16_t>(s));
  return out;
}

std::size_t naive_frames(std::size_t n, std::size_t win, std::size_t hop) {
  std::size_t count = 0;
  for (std::size_t start = 0; start + win <= n; start += hop) ++count;
  return count;
}

Waveform sine(double hz, double seconds, double amp = 0.5) {
  Waveform w;
  const auto n = static_cast<std::size_t>(seconds * w.sample_rate);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / w.sample_rate));
  }
  return w;
}

TEST(Wav, SilenceDecodesToZeros) {
  const auto w = parse_wav(make_wav(std::vector<std::int16_t>(16000, 0), 1, 16000));
  ASSERT_EQ(w.samples.size(), 16000u);
  EXPECT_EQ(w.sample_rate, 16000);
  for (float s : w.samples) EXPECT_EQ(s, 0.0f);
}

TEST(Wav, FullScaleSquareWaveScaling) {
  std::vector<std::int16_t> pcm(64);
  for (std::size_t i = 0; i < pcm.size(); ++i) pcm[i] = i % 2 ? -32767 : 32767;
  const auto w = parse_wav(make_wav(pcm, 1, 16000));
  for (std::size_t i = 0; i < pcm.size(); ++i) {
    EXPECT_EQ(w.samples[i], (i % 2 ? -1.0f : 1.0f) * 32767.0f / 32768.0f);
  }
}

TEST(Wav, StereoIsAveraged) {
  const auto w = parse_wav(make_wav({1000, 3000, -200, 200}, 2, 16000));
  ASSERT_EQ(w.samples.size(), 2u);
  EXPECT_FLOAT_EQ(w.samples[0], 2000.0f / 32768.0f);
  EXPECT_FLOAT_EQ(w.samples[1], 0.0f);
}

TEST(Wav, TruncatedHeaderIsParseError) {
  auto bytes = make_wav({1, 2, 3}, 1, 16000);
  bytes.resize(20);
  EXPECT_THROW(parse_wav(bytes), ParseError);
}

TEST(Wav, BadMagicReportsOffset) {
  auto bytes = make_wav({1, 2, 3}, 1, 16000);
  bytes[8] = 'X';
  try {
    parse_wav(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 8"), std::string::npos) << e.what();
  }
}

TEST(Wav, EightBitIsUnsupported) {
  auto bytes = make_wav({0, 0}, 1, 16000, 8);
  EXPECT_THROW(parse_wav(bytes), UnsupportedFormatError);
}

TEST(Wav, WriterRoundTrip) {
  Waveform w;
  w.samples = {0.0f, 0.5f, -0.25f, 32767.0f / 32768.0f};
  const auto back = parse_wav(encode_wav(w));
  EXPECT_EQ(back.samples, w.samples);
  const auto path = std::filesystem::temp_directory_path() / "mlma_frontend_roundtrip.wav";
  save_wav(path, w);
  EXPECT_EQ(load_wav(path).samples, w.samples);
  std::filesystem::remove(path);
}

TEST(FrameCount, OneSecondGivesNinetyEight) {
  EXPECT_EQ(num_frames(16000, 400, 160), 98u);
  const auto spec = compute_logmel(sine(440, 1.0));
  EXPECT_EQ(spec.num_frames(), 98u);
  EXPECT_EQ(spec.frames.dim(1), 80u);
}

TEST(FrameCount, MatchesNaiveSlicing) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> n_dist(0, 50000), win_dist(1, 1024), hop_dist(1, 512);
  for (int i = 0; i < 1000; ++i) {
    const auto n = n_dist(rng), win = win_dist(rng), hop = hop_dist(rng);
    ASSERT_EQ(num_frames(n, win, hop), naive_frames(n, win, hop)) << n << " " << win << " " << hop;
  }
}

TEST(FrameCount, ShortInputHasNoFrames) {
  Waveform w;
  w.samples.assign(399, 0.1f);
  EXPECT_EQ(compute_logmel(w).num_frames(), 0u);
}

TEST(Logmel, SilenceHitsFloor) {
  Waveform w;
  w.samples.assign(3200, 0.0f);
  const auto spec = compute_logmel(w);
  const float floor = static_cast<float>(std::log(1e-10));
  for (float v : spec.frames.data()) EXPECT_EQ(v, floor);
}

TEST(Logmel, SampleRateMismatchIsConfigError) {
  Waveform w;
  w.sample_rate = 8000;
  w.samples.assign(8000, 0.0f);
  EXPECT_THROW(compute_logmel(w), ConfigError);
}

TEST(Logmel, OneKilohertzPeaksAtNearestCenter) {
  FeatureConfig cfg;
  const auto centers = mel_center_frequencies(cfg);
  ASSERT_EQ(centers.size(), 80u);
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < centers.size(); ++m) {
    if (std::abs(centers[m] - 1000.0) < std::abs(centers[nearest] - 1000.0)) nearest = m;
  }
  const auto spec = compute_logmel(sine(1000.0, 0.5), cfg);
  for (std::size_t t = 0; t < spec.num_frames(); ++t) {
    std::size_t arg = 0;
    for (std::size_t m = 1; m < 80; ++m) {
      if (spec.frames.at(t, m) > spec.frames.at(t, arg)) arg = m;
    }
    EXPECT_EQ(arg, nearest) << "frame " << t;
  }
}

TEST(Logmel, ScalingUpNeverDecreasesAnyCell) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<float> dist(-0.3f, 0.3f);
  Waveform w;
  w.samples.resize(4000);
  for (auto& s : w.samples) s = dist(rng);
  auto louder = w;
  for (auto& s : louder.samples) s *= 2.5f;
  const auto a = compute_logmel(w), b = compute_logmel(louder);
  for (std::size_t i = 0; i < a.frames.size(); ++i) EXPECT_GE(b.frames.data()[i], a.frames.data()[i]);
}

TEST(MelScale, BreakpointAndInverse) {
  EXPECT_NEAR(hz_to_mel(1000.0), 15.0, 1e-12);
  EXPECT_NEAR(hz_to_mel(200.0 / 3.0), 1.0, 1e-12);
  for (double hz : {0.0, 100.0, 999.0, 1000.0, 4321.0, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
  // Above 1 kHz a factor of 6.4 in frequency is 27 mels.
  EXPECT_NEAR(hz_to_mel(6400.0) - hz_to_mel(1000.0), 27.0, 1e-9);
}

TEST(MelFilterbank, NonNegativeAndCoversRange) {
  FeatureConfig cfg;
  const auto fb = mel_filterbank(cfg);
  const std::size_t bins = cfg.n_fft / 2 + 1;
  ASSERT_EQ(fb.size(), cfg.n_mels * bins);
  const auto centers = mel_center_frequencies(cfg);
  const double bin_hz = static_cast<double>(cfg.expected_rate) / static_cast<double>(cfg.n_fft);
  for (double w : fb) EXPECT_GE(w, 0.0);
  for (std::size_t k = 0; k < bins; ++k) {
    const double hz = static_cast<double>(k) * bin_hz;
    if (hz < centers.front() || hz > centers.back()) continue;
    double total = 0.0;
    for (std::size_t m = 0; m < cfg.n_mels; ++m) total += fb[m * bins + k];
    EXPECT_GT(total, 0.0) << "bin " << k;
  }
}

LogMelSpectrogram random_spec(std::size_t frames, std::size_t mels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(-5.0f, 3.0f);
  std::vector<float> data(frames * mels);
  for (auto& v : data) v = dist(rng);
  LogMelSpectrogram s;
  s.frames = Tensor<float>({frames, mels}, std::move(data));
  s.n_mels = mels;
  return s;
}

TEST(Normalize, MomentsPerCoefficient) {
  const auto out = normalize(random_spec(150, 80, 23));
  for (std::size_t m = 0; m < 80; ++m) {
    double mu = 0, var = 0;
    for (std::size_t t = 0; t < 150; ++t) mu += out.frames.at(t, m) / 150.0;
    for (std::size_t t = 0; t < 150; ++t) var += std::pow(out.frames.at(t, m) - mu, 2) / 150.0;
    EXPECT_LT(std::abs(mu), 1e-5);
    EXPECT_GE(var, 0.99);
    EXPECT_LE(var, 1.01);
  }
}

TEST(Normalize, Idempotent) {
  const auto once = normalize(random_spec(120, 10, 24));
  const auto twice = normalize(once);
  for (std::size_t i = 0; i < once.frames.size(); ++i) {
    EXPECT_NEAR(once.frames.data()[i], twice.frames.data()[i], 1e-6);
  }
}

TEST(Normalize, ConstantCoefficientBecomesZero) {
  LogMelSpectrogram s;
  s.frames = Tensor<float>({4, 2}, {3, 1, 3, 2, 3, 3, 3, 4});
  s.n_mels = 2;
  const auto out = normalize(s);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(out.frames.at(t, 0), 0.0f);
}

TEST(FeatureCache, RoundTripAndCorruption) {
  const auto spec = random_spec(7, 80, 25);
  auto bytes = encode_feature_cache(spec);
  EXPECT_EQ(bytes.size(), 16u + 7 * 80 * 4);
  EXPECT_EQ(std::memcmp(bytes.data(), "MLFB", 4), 0);
  const auto back = decode_feature_cache(bytes);
  ASSERT_EQ(back.frames.shape(), spec.frames.shape());
  for (std::size_t i = 0; i < spec.frames.size(); ++i) EXPECT_EQ(back.frames.data()[i], spec.frames.data()[i]);
  bytes.pop_back();
  EXPECT_THROW(decode_feature_cache(bytes), IntegrityError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_feature_cache(bytes), ParseError);
}

}  // namespace
}  // namespace mlma::frontend
