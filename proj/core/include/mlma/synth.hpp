#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mlma/data.hpp"
#include "mlma/frontend.hpp"

namespace mlma::synth {

// Tone-coded toy speech. Every character has its own sine frequency; a word
// is its characters' tones back to back, words are separated by silence, and
// the whole utterance sits on a low white-noise floor. Two languages draw
// from disjoint word lists, so transcripts carry a language signal while the
// acoustics stay trivially separable.
struct SynthConfig {
  std::size_t utterances = 20;
  std::size_t min_words = 2;
  std::size_t max_words = 3;
  std::uint64_t seed = 7;
  double char_s = 0.1;    // tone length per character
  double gap_s = 0.08;    // silence between words
  double edge_s = 0.05;   // silence at both ends
  double ramp_s = 0.005;  // raised-cosine on/off ramp of each tone
  double amplitude = 0.4;
  double noise = 1e-3;  // white-noise standard deviation
  int sample_rate = 16000;
};

struct LanguageSpec {
  std::string tag;
  std::vector<std::string> words;
};

// The two built-in languages ("syn_a", "syn_b").
const std::vector<LanguageSpec>& languages();
// Tone frequency of a character used by the built-in languages.
double char_frequency(char c);

struct SynthUtterance {
  data::UtteranceRecord record;  // audio_path is "<id>.wav"
  frontend::Waveform wave;
};

// Utterances alternate between the languages; word choice and noise are
// seeded by cfg.seed.
std::vector<SynthUtterance> generate(const SynthConfig& cfg = {});

// Writes <dir>/<id>.wav for every utterance plus <dir>/manifest.jsonl and
// returns the manifest records with paths resolved against `dir`.
std::vector<data::UtteranceRecord> write_corpus(const std::filesystem::path& dir, const SynthConfig& cfg = {});

}  // namespace mlma::synth
