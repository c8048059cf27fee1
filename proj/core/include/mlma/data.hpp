#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mlma/frontend.hpp"
#include "mlma/tensor.hpp"
#include "mlma/tokenizer.hpp"
#include "mlma/types.hpp"

namespace mlma::data {

struct UtteranceRecord {
  std::string id;
  std::filesystem::path audio_path;
  std::string transcript;
  std::string language;
  double duration_s = 0.0;

  bool operator==(const UtteranceRecord&) const = default;
};

// One JSON object per line with exactly the keys id, audio_path, transcript,
// language, duration_s. Blank lines are skipped. Relative audio paths are
// resolved against `base_dir`. All problems are collected and raised together
// as one ValidationError, each prefixed with its 1-based line number.
std::vector<UtteranceRecord> parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path);

std::string manifest_line(const UtteranceRecord& record);
void save_manifest(const std::filesystem::path& path, std::span<const UtteranceRecord> records);

// Hours per (corpus, language). Rows keep the order corpora were given in;
// language columns are sorted.
struct CorpusStats {
  std::vector<std::string> corpora;
  std::vector<std::string> languages;
  std::map<std::pair<std::string, std::string>, double> seconds;

  // std::nullopt when the corpus has no utterance in that language.
  std::optional<double> hours(const std::string& corpus, const std::string& language) const;
  double total_hours(const std::string& language) const;
  double total_hours() const;

  // Aligned table: one row per corpus plus "Total", absent cells shown as "x".
  std::string to_text() const;
  // "dataset,<lang>..." header, one row per corpus, then "Total"; absent cells empty.
  std::string to_csv() const;
};

CorpusStats corpus_stats(std::span<const UtteranceRecord> records, const std::string& corpus = "all");
CorpusStats corpus_stats(const std::vector<std::pair<std::string, std::vector<UtteranceRecord>>>& corpora);

// Feature frames a recording of `duration_s` seconds yields.
std::size_t frames_for_duration(double duration_s, const frontend::FeatureConfig& cfg = {});

struct BucketConfig {
  std::size_t max_frames = 0;  // budget: batch size * longest item, padding included
  std::uint64_t seed = 0;
  // Per-language repetition weight; absent languages use 1 (natural sampling).
  // A weight w contributes floor(w) copies of each utterance plus one more
  // with probability w - floor(w), redrawn every epoch.
  std::map<std::string, double> language_weights;
};

// Batches of item indices for one epoch. Items are shuffled by (seed, epoch),
// stable-sorted by length so equal lengths stay shuffled, packed greedily
// under the budget, and the batch order is shuffled again. With default
// weights every index appears exactly once. An item longer than the budget or
// with zero frames raises ValidationError.
std::vector<std::vector<std::size_t>> plan_batches(std::span<const std::size_t> frames,
                                                   std::span<const std::string> languages,
                                                   const BucketConfig& cfg, std::uint64_t epoch = 0);

std::vector<std::vector<std::size_t>> bucket_batches(std::span<const UtteranceRecord> records,
                                                     const BucketConfig& cfg, std::uint64_t epoch = 0,
                                                     const frontend::FeatureConfig& features = {});

// A loaded, tokenized utterance ready for training or decoding.
struct Example {
  std::string id;
  std::string language;
  std::string text;  // normalized transcript
  Tensor<float> features;  // normalized log-mel [T x n_mels]
  TokenSequence target;
};

struct PrepareOptions {
  frontend::FeatureConfig features;
  tokenizer::NormalizerConfig normalizer;
  // Feature cache directory (one <id>.mlfb per utterance); empty disables it.
  std::filesystem::path cache_dir;
  // When false the target stays empty, so transcripts with characters outside
  // the vocabulary are accepted (decoding).
  bool with_targets = true;
};

// Un-normalized log-mel features of one utterance, read from the cache when
// present and written to it otherwise.
frontend::LogMelSpectrogram load_features(const UtteranceRecord& record, const PrepareOptions& options = {});

std::vector<Example> prepare_examples(std::span<const UtteranceRecord> records, const tokenizer::Vocab& vocab,
                                      const PrepareOptions& options = {});

struct Batch {
  std::vector<std::string> ids;
  std::vector<std::string> languages;
  std::vector<std::size_t> feature_lengths;
  Tensor<float> features;  // [B x T_max x n_mels], zero padded
  std::vector<std::size_t> target_lengths;
  std::vector<TokenId> targets;  // [B x L_max], padded with the blank id

  std::size_t size() const { return ids.size(); }
  // Unpadded views of item i.
  Tensor<float> item_features(std::size_t i) const;
  std::span<const TokenId> item_target(std::size_t i) const;
};

Batch collate(std::span<const Example> examples, std::span<const std::size_t> indices);

}  // namespace mlma::data
