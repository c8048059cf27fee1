#include "mlma/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "mlma/error.hpp"
#include "mlma/rng.hpp"

namespace mlma::synth {

namespace {

// Characters of both languages with log-spaced tones between 300 Hz and
// 3.4 kHz, far enough apart to land in distinct mel bands.
constexpr std::string_view kAlphabet = "abdikoelmtu";

std::size_t samples_for(double seconds, int rate) {
  return static_cast<std::size_t>(std::llround(seconds * rate));
}

}  // namespace

const std::vector<LanguageSpec>& languages() {
  static const std::vector<LanguageSpec> specs{
      {"syn_a", {"ba", "di", "ko", "ab", "id"}},
      {"syn_b", {"mu", "te", "lu", "em", "ut"}},
  };
  return specs;
}

double char_frequency(char c) {
  const auto pos = kAlphabet.find(c);
  if (pos == std::string_view::npos) throw ValidationError(std::string("synth: no tone for character '") + c + "'");
  const double lo = 300.0, hi = 3400.0;
  const double frac = static_cast<double>(pos) / static_cast<double>(kAlphabet.size() - 1);
  return lo * std::pow(hi / lo, frac);
}

std::vector<SynthUtterance> generate(const SynthConfig& cfg) {
  if (cfg.min_words == 0 || cfg.min_words > cfg.max_words) throw ConfigError("synth: need 1 <= min_words <= max_words");
  if (cfg.sample_rate <= 0 || cfg.char_s <= 0 || cfg.gap_s < 0 || cfg.edge_s < 0) {
    throw ConfigError("synth: durations and sample rate must be positive");
  }
  auto rng = derive_rng(cfg.seed, RngStream::kSynth);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  const auto& langs = languages();
  const int rate = cfg.sample_rate;
  const std::size_t tone_n = samples_for(cfg.char_s, rate), gap_n = samples_for(cfg.gap_s, rate);
  const std::size_t edge_n = samples_for(cfg.edge_s, rate), ramp_n = samples_for(cfg.ramp_s, rate);

  std::vector<SynthUtterance> out;
  for (std::size_t u = 0; u < cfg.utterances; ++u) {
    const auto& lang = langs[u % langs.size()];
    const std::size_t n_words =
        std::uniform_int_distribution<std::size_t>(cfg.min_words, cfg.max_words)(rng);
    std::vector<std::string> words;
    for (std::size_t w = 0; w < n_words; ++w) {
      words.push_back(lang.words[std::uniform_int_distribution<std::size_t>(0, lang.words.size() - 1)(rng)]);
    }
    std::vector<double> signal(edge_n, 0.0);
    std::string transcript;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w > 0) {
        signal.insert(signal.end(), gap_n, 0.0);
        transcript += ' ';
      }
      transcript += words[w];
      for (char c : words[w]) {
        const double f = char_frequency(c);
        for (std::size_t i = 0; i < tone_n; ++i) {
          double env = 1.0;
          if (i < ramp_n) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp_n);
          if (tone_n - 1 - i < ramp_n) {
            env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(tone_n - 1 - i) / ramp_n);
          }
          signal.push_back(cfg.amplitude * env *
                           std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / rate));
        }
      }
    }
    signal.insert(signal.end(), edge_n, 0.0);

    SynthUtterance utt;
    utt.wave.sample_rate = rate;
    utt.wave.samples.reserve(signal.size());
    for (double s : signal) utt.wave.samples.push_back(static_cast<float>(s + noise(rng)));
    char id[32];
    std::snprintf(id, sizeof id, "%s_%03zu", lang.tag.c_str(), u);
    utt.record.id = id;
    utt.record.audio_path = std::string(id) + ".wav";
    utt.record.transcript = transcript;
    utt.record.language = lang.tag;
    utt.record.duration_s = utt.wave.duration_s();
    out.push_back(std::move(utt));
  }
  return out;
}

std::vector<data::UtteranceRecord> write_corpus(const std::filesystem::path& dir, const SynthConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::vector<data::UtteranceRecord> manifest, resolved;
  for (auto& utt : generate(cfg)) {
    frontend::save_wav(dir / utt.record.audio_path, utt.wave);
    manifest.push_back(utt.record);
    utt.record.audio_path = dir / utt.record.audio_path;
    resolved.push_back(std::move(utt.record));
  }
  data::save_manifest(dir / "manifest.jsonl", manifest);
  return resolved;
}

}  // namespace mlma::synth
