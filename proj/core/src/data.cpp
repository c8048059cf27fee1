#include "mlma/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <unordered_set>

#include "mlma/error.hpp"
#include "mlma/io_util.hpp"
#include "mlma/rng.hpp"

namespace mlma::data {

namespace {

using nlohmann::json;

constexpr const char* kFields[] = {"id", "audio_path", "transcript", "language", "duration_s"};

std::string format_hours(double h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", h);
  return buf;
}

}  // namespace

std::vector<UtteranceRecord> parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<UtteranceRecord> records;
  std::vector<std::string> problems;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    const std::string where = "line " + std::to_string(line_no) + ": ";
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      problems.push_back(where + "malformed JSON (" + e.what() + ")");
      continue;
    }
    if (!obj.is_object()) {
      problems.push_back(where + "expected a JSON object");
      continue;
    }
    bool ok = true;
    for (const char* field : kFields) {
      if (!obj.contains(field)) {
        problems.push_back(where + "missing field \"" + field + "\"");
        ok = false;
      }
    }
    for (const auto& [key, value] : obj.items()) {
      if (std::find_if(std::begin(kFields), std::end(kFields), [&](const char* f) { return key == f; }) ==
          std::end(kFields)) {
        problems.push_back(where + "unexpected field \"" + key + "\"");
        ok = false;
      }
    }
    if (!ok) continue;
    for (const char* field : {"id", "audio_path", "transcript", "language"}) {
      if (!obj[field].is_string()) {
        problems.push_back(where + "field \"" + field + "\" must be a string");
        ok = false;
      }
    }
    if (!obj["duration_s"].is_number()) {
      problems.push_back(where + "field \"duration_s\" must be a number");
      ok = false;
    }
    if (!ok) continue;
    UtteranceRecord r;
    r.id = obj["id"].get<std::string>();
    r.audio_path = obj["audio_path"].get<std::string>();
    r.transcript = obj["transcript"].get<std::string>();
    r.language = obj["language"].get<std::string>();
    r.duration_s = obj["duration_s"].get<double>();
    if (r.id.empty()) problems.push_back(where + "empty id"), ok = false;
    if (r.audio_path.empty()) problems.push_back(where + "empty audio_path"), ok = false;
    if (r.language.empty()) problems.push_back(where + "empty language"), ok = false;
    if (!(std::isfinite(r.duration_s) && r.duration_s > 0.0)) {
      problems.push_back(where + "duration_s must be positive, got " + std::to_string(r.duration_s));
      ok = false;
    }
    if (!r.id.empty() && !seen.insert(r.id).second) {
      problems.push_back(where + "duplicate id \"" + r.id + "\"");
      ok = false;
    }
    if (!ok) continue;
    if (r.audio_path.is_relative() && !base_dir.empty()) r.audio_path = base_dir / r.audio_path;
    records.push_back(std::move(r));
  }
  if (!problems.empty()) {
    std::string msg = "manifest has " + std::to_string(problems.size()) + " problem(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
  return records;
}

std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                          path.parent_path());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string manifest_line(const UtteranceRecord& record) {
  nlohmann::ordered_json obj;
  obj["id"] = record.id;
  obj["audio_path"] = record.audio_path.generic_string();
  obj["transcript"] = record.transcript;
  obj["language"] = record.language;
  obj["duration_s"] = record.duration_s;
  return obj.dump();
}

void save_manifest(const std::filesystem::path& path, std::span<const UtteranceRecord> records) {
  std::string text;
  for (const auto& r : records) text += manifest_line(r) + "\n";
  io::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::optional<double> CorpusStats::hours(const std::string& corpus, const std::string& language) const {
  const auto it = seconds.find({corpus, language});
  if (it == seconds.end()) return std::nullopt;
  return it->second / 3600.0;
}

double CorpusStats::total_hours(const std::string& language) const {
  double s = 0.0;
  for (const auto& [key, value] : seconds) {
    if (key.second == language) s += value;
  }
  return s / 3600.0;
}

double CorpusStats::total_hours() const {
  double s = 0.0;
  for (const auto& [key, value] : seconds) s += value;
  return s / 3600.0;
}

std::string CorpusStats::to_text() const {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Dataset"};
  header.insert(header.end(), languages.begin(), languages.end());
  header.push_back("all");
  rows.push_back(header);
  for (const auto& corpus : corpora) {
    std::vector<std::string> row{corpus};
    double sum = 0.0;
    for (const auto& lang : languages) {
      const auto h = hours(corpus, lang);
      row.push_back(h ? format_hours(*h) : "x");
      sum += h.value_or(0.0);
    }
    row.push_back(format_hours(sum));
    rows.push_back(row);
  }
  std::vector<std::string> total{"Total"};
  for (const auto& lang : languages) total.push_back(format_hours(total_hours(lang)));
  total.push_back(format_hours(total_hours()));
  rows.push_back(total);

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  const auto rule = [&] {
    std::size_t n = 0;
    for (auto w : width) n += w + 2;
    out += std::string(n, '-') + "\n";
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r == 1 || r + 1 == rows.size()) rule();
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto& cell = rows[r][c];
      const auto pad = std::string(width[c] - cell.size(), ' ');
      out += c == 0 ? cell + pad : pad + cell;
      out += c + 1 < rows[r].size() ? "  " : "\n";
    }
  }
  return out;
}

std::string CorpusStats::to_csv() const {
  std::string out = "dataset";
  for (const auto& lang : languages) out += "," + lang;
  out += "\n";
  char buf[32];
  for (const auto& corpus : corpora) {
    out += corpus;
    for (const auto& lang : languages) {
      out += ",";
      if (const auto h = hours(corpus, lang)) {
        std::snprintf(buf, sizeof buf, "%.6f", *h);
        out += buf;
      }
    }
    out += "\n";
  }
  out += "Total";
  for (const auto& lang : languages) {
    std::snprintf(buf, sizeof buf, "%.6f", total_hours(lang));
    out += std::string(",") + buf;
  }
  out += "\n";
  return out;
}

CorpusStats corpus_stats(const std::vector<std::pair<std::string, std::vector<UtteranceRecord>>>& corpora) {
  CorpusStats stats;
  std::set<std::string> langs;
  for (const auto& [name, records] : corpora) {
    if (std::find(stats.corpora.begin(), stats.corpora.end(), name) == stats.corpora.end()) {
      stats.corpora.push_back(name);
    }
    for (const auto& r : records) {
      stats.seconds[{name, r.language}] += r.duration_s;
      langs.insert(r.language);
    }
  }
  stats.languages.assign(langs.begin(), langs.end());
  return stats;
}

CorpusStats corpus_stats(std::span<const UtteranceRecord> records, const std::string& corpus) {
  return corpus_stats({{corpus, std::vector<UtteranceRecord>(records.begin(), records.end())}});
}

std::size_t frames_for_duration(double duration_s, const frontend::FeatureConfig& cfg) {
  const auto samples = static_cast<std::size_t>(std::llround(duration_s * cfg.expected_rate));
  return frontend::num_frames(samples, cfg.window_samples(), cfg.hop_samples());
}

std::vector<std::vector<std::size_t>> plan_batches(std::span<const std::size_t> frames,
                                                   std::span<const std::string> languages,
                                                   const BucketConfig& cfg, std::uint64_t epoch) {
  if (!languages.empty() && languages.size() != frames.size()) {
    throw DimensionError("plan_batches: " + std::to_string(languages.size()) + " language tags for " +
                         std::to_string(frames.size()) + " items");
  }
  if (cfg.max_frames == 0) throw ConfigError("plan_batches: max_frames must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i] == 0) throw ValidationError("plan_batches: item " + std::to_string(i) + " has no frames");
    if (frames[i] > cfg.max_frames) {
      throw ValidationError("plan_batches: item " + std::to_string(i) + " has " + std::to_string(frames[i]) +
                            " frames, over the batch budget of " + std::to_string(cfg.max_frames));
    }
  }
  auto rng = derive_rng(cfg.seed, RngStream::kDataOrder, epoch);
  std::vector<std::size_t> order;
  order.reserve(frames.size());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    double w = 1.0;
    if (!languages.empty()) {
      const auto it = cfg.language_weights.find(languages[i]);
      if (it != cfg.language_weights.end()) w = it->second;
    }
    if (!(w >= 0.0)) throw ConfigError("plan_batches: language weights must be non-negative");
    auto copies = static_cast<std::size_t>(std::floor(w));
    if (w != std::floor(w) && coin(rng) < w - std::floor(w)) ++copies;
    order.insert(order.end(), copies, i);
  }
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frames[a] < frames[b]; });

  std::vector<std::vector<std::size_t>> batches;
  std::size_t longest = 0;
  for (std::size_t idx : order) {
    const std::size_t f = frames[idx];
    if (batches.empty() || (batches.back().size() + 1) * std::max(longest, f) > cfg.max_frames) {
      batches.emplace_back();
      longest = 0;
    }
    batches.back().push_back(idx);
    longest = std::max(longest, f);
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::vector<std::vector<std::size_t>> bucket_batches(std::span<const UtteranceRecord> records,
                                                     const BucketConfig& cfg, std::uint64_t epoch,
                                                     const frontend::FeatureConfig& features) {
  std::vector<std::size_t> frames;
  std::vector<std::string> languages;
  for (const auto& r : records) {
    frames.push_back(frames_for_duration(r.duration_s, features));
    languages.push_back(r.language);
  }
  try {
    return plan_batches(frames, languages, cfg, epoch);
  } catch (const ValidationError& e) {
    // Re-label item indices with utterance ids.
    std::string msg = e.what();
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i] == 0 || frames[i] > cfg.max_frames) {
        throw ValidationError("utterance " + records[i].id + ": " + msg);
      }
    }
    throw;
  }
}

frontend::LogMelSpectrogram load_features(const UtteranceRecord& r, const PrepareOptions& options) {
  frontend::LogMelSpectrogram spec;
  const auto cache = options.cache_dir.empty() ? std::filesystem::path() : options.cache_dir / (r.id + ".mlfb");
  if (!cache.empty() && std::filesystem::exists(cache)) {
    spec = frontend::load_feature_cache(cache);
    if (spec.n_mels != options.features.n_mels) {
      throw ValidationError("feature cache " + cache.string() + " has " + std::to_string(spec.n_mels) +
                            " coefficients, expected " + std::to_string(options.features.n_mels));
    }
  } else {
    spec = frontend::compute_logmel(frontend::load_wav(r.audio_path), options.features);
    if (!cache.empty()) {
      std::filesystem::create_directories(options.cache_dir);
      frontend::save_feature_cache(cache, spec);
    }
  }
  if (spec.num_frames() == 0) {
    throw ValidationError("utterance " + r.id + ": audio shorter than one analysis window");
  }
  return spec;
}

std::vector<Example> prepare_examples(std::span<const UtteranceRecord> records, const tokenizer::Vocab& vocab,
                                      const PrepareOptions& options) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example ex;
    ex.id = r.id;
    ex.language = r.language;
    ex.text = tokenizer::normalize_text(r.transcript, options.normalizer);
    ex.features = frontend::normalize(load_features(r, options)).frames;
    if (options.with_targets) ex.target = tokenizer::encode(ex.text, vocab, r.id);
    out.push_back(std::move(ex));
  }
  return out;
}

Tensor<float> Batch::item_features(std::size_t i) const {
  const std::size_t t_max = features.dim(1), mels = features.dim(2);
  const auto begin = features.data().begin() + static_cast<std::ptrdiff_t>(i * t_max * mels);
  return Tensor<float>({feature_lengths[i], mels},
                       std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(feature_lengths[i] * mels)));
}

std::span<const TokenId> Batch::item_target(std::size_t i) const {
  const std::size_t l_max = targets.size() / std::max<std::size_t>(1, size());
  return std::span<const TokenId>(targets).subspan(i * l_max, target_lengths[i]);
}

Batch collate(std::span<const Example> examples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("collate: empty batch");
  Batch b;
  std::size_t t_max = 0, l_max = 0, mels = 0;
  for (std::size_t idx : indices) {
    if (idx >= examples.size()) {
      throw ValidationError("collate: index " + std::to_string(idx) + " out of range for " +
                            std::to_string(examples.size()) + " examples");
    }
    const auto& ex = examples[idx];
    t_max = std::max(t_max, ex.features.dim(0));
    l_max = std::max(l_max, ex.target.size());
    mels = ex.features.dim(1);
  }
  std::vector<float> feats(indices.size() * t_max * mels, 0.0f);
  b.targets.assign(indices.size() * l_max, kBlankId);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& ex = examples[indices[i]];
    if (ex.features.dim(1) != mels) throw DimensionError("collate: mixed feature widths in one batch");
    b.ids.push_back(ex.id);
    b.languages.push_back(ex.language);
    b.feature_lengths.push_back(ex.features.dim(0));
    b.target_lengths.push_back(ex.target.size());
    std::copy(ex.features.data().begin(), ex.features.data().end(),
              feats.begin() + static_cast<std::ptrdiff_t>(i * t_max * mels));
    std::copy(ex.target.begin(), ex.target.end(), b.targets.begin() + static_cast<std::ptrdiff_t>(i * l_max));
  }
  b.features = Tensor<float>({indices.size(), t_max, mels}, std::move(feats));
  return b;
}

}  // namespace mlma::data
