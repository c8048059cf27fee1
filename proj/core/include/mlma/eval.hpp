#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mlma/data.hpp"
#include "mlma/tokenizer.hpp"

namespace mlma::eval {

struct WerBreakdown {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_words = 0;
  // Set when the reference has no words; rate() then divides by 1.
  bool empty_reference = false;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  double rate() const;
  WerBreakdown& operator+=(const WerBreakdown& other);
};

std::vector<std::string> split_words(std::string_view text);

// Unit-cost Levenshtein alignment. Among alignments with the fewest edits the
// one with the fewest insertions + deletions wins, i.e. substitutions are
// preferred over insert/delete pairs.
WerBreakdown align(std::span<const std::string> ref, std::span<const std::string> hyp);

// Word level; both texts are split on whitespace as given.
WerBreakdown wer(std::string_view ref, std::string_view hyp);
// Character level over code points, spaces included.
WerBreakdown cer(std::string_view ref, std::string_view hyp);

struct Hypothesis {
  std::string id;
  std::string language;
  std::string text;

  bool operator==(const Hypothesis&) const = default;
};

// JSONL with the keys id, language, text.
std::string hypotheses_jsonl(std::span<const Hypothesis> hyps);
std::vector<Hypothesis> parse_hypotheses(std::string_view text);
void save_hypotheses(const std::filesystem::path& path, std::span<const Hypothesis> hyps);
std::vector<Hypothesis> load_hypotheses(const std::filesystem::path& path);

// Rows are datasets in insertion order, columns are languages (sorted). Each
// cell pools its utterances: WER% = 100 * sum(errors) / sum(reference words).
class Report {
 public:
  void add(const std::string& dataset, const std::string& language, const WerBreakdown& utterance);

  const std::vector<std::string>& datasets() const { return datasets_; }
  std::vector<std::string> languages() const;
  bool empty() const { return cells_.empty(); }

  std::optional<WerBreakdown> cell(const std::string& dataset, const std::string& language) const;
  std::optional<double> wer_percent(const std::string& dataset, const std::string& language) const;
  // Arithmetic mean of the present cells of a column; absent cells are skipped.
  std::optional<double> average(const std::string& language) const;

  // Aligned table with an "Avg." row; absent cells are shown as "x".
  // Raises ValidationError when the report has no cells.
  std::string to_text(const std::string& metric = "WER") const;
  // Columns dataset,language,wer_percent; one row per present cell, then one
  // "Avg." row per language.
  std::string to_csv() const;

 private:
  std::vector<std::string> datasets_;
  std::map<std::pair<std::string, std::string>, WerBreakdown> cells_;
};

struct ScoreOptions {
  tokenizer::NormalizerConfig normalizer;
  bool character_level = false;
};

// Scores hypotheses against manifest references. Both sides pass through the
// same text normalization. Every reference needs a hypothesis and vice versa.
Report score(std::span<const data::UtteranceRecord> references, std::span<const Hypothesis> hyps,
             const std::string& dataset, const ScoreOptions& options = {});
void score_into(Report& report, std::span<const data::UtteranceRecord> references,
                std::span<const Hypothesis> hyps, const std::string& dataset, const ScoreOptions& options = {});

}  // namespace mlma::eval
