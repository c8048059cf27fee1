#include "mlma/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <set>
#include <unordered_map>

#include "mlma/error.hpp"
#include "mlma/io_util.hpp"

namespace mlma::eval {

namespace {

struct Cost {
  std::size_t edits = 0;
  std::size_t indels = 0;
  std::size_t subs = 0, ins = 0, dels = 0;

  bool operator<(const Cost& o) const { return edits != o.edits ? edits < o.edits : indels < o.indels; }
};

template <typename Seq>
WerBreakdown align_generic(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<Cost> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, j, 0, j, 0};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, i, 0, 0, i};
    for (std::size_t j = 1; j <= m; ++j) {
      Cost diag = prev[j - 1];
      if (!(ref[i - 1] == hyp[j - 1])) {
        ++diag.edits;
        ++diag.subs;
      }
      Cost del = prev[j];
      ++del.edits, ++del.indels, ++del.dels;
      Cost ins = cur[j - 1];
      ++ins.edits, ++ins.indels, ++ins.ins;
      cur[j] = std::min({diag, del, ins});
    }
    std::swap(prev, cur);
  }
  const Cost& best = prev[m];
  WerBreakdown out;
  out.substitutions = best.subs;
  out.insertions = best.ins;
  out.deletions = best.dels;
  out.ref_words = n;
  out.empty_reference = n == 0;
  return out;
}

std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

double WerBreakdown::rate() const {
  return static_cast<double>(errors()) / static_cast<double>(std::max<std::size_t>(1, ref_words));
}

WerBreakdown& WerBreakdown::operator+=(const WerBreakdown& other) {
  substitutions += other.substitutions;
  insertions += other.insertions;
  deletions += other.deletions;
  ref_words += other.ref_words;
  empty_reference = ref_words == 0;
  return *this;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  const auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

WerBreakdown align(std::span<const std::string> ref, std::span<const std::string> hyp) {
  return align_generic(ref, hyp);
}

WerBreakdown wer(std::string_view ref, std::string_view hyp) {
  return align(split_words(ref), split_words(hyp));
}

WerBreakdown cer(std::string_view ref, std::string_view hyp) {
  return align_generic(tokenizer::to_code_points(ref), tokenizer::to_code_points(hyp));
}

std::string hypotheses_jsonl(std::span<const Hypothesis> hyps) {
  std::string out;
  for (const auto& h : hyps) {
    nlohmann::ordered_json obj;
    obj["id"] = h.id;
    obj["language"] = h.language;
    obj["text"] = h.text;
    out += obj.dump() + "\n";
  }
  return out;
}

std::vector<Hypothesis> parse_hypotheses(std::string_view text) {
  std::vector<Hypothesis> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "hypotheses line " + std::to_string(line_no) + ": ";
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + e.what());
    }
    for (const char* key : {"id", "language", "text"}) {
      if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
        throw ParseError(where + "missing string field \"" + key + "\"");
      }
    }
    out.push_back({obj["id"].get<std::string>(), obj["language"].get<std::string>(), obj["text"].get<std::string>()});
  }
  return out;
}

void save_hypotheses(const std::filesystem::path& path, std::span<const Hypothesis> hyps) {
  const auto text = hypotheses_jsonl(hyps);
  io::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<Hypothesis> load_hypotheses(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_hypotheses(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void Report::add(const std::string& dataset, const std::string& language, const WerBreakdown& utterance) {
  if (std::find(datasets_.begin(), datasets_.end(), dataset) == datasets_.end()) datasets_.push_back(dataset);
  cells_[{dataset, language}] += utterance;
}

std::vector<std::string> Report::languages() const {
  std::set<std::string> langs;
  for (const auto& [key, cell] : cells_) langs.insert(key.second);
  return {langs.begin(), langs.end()};
}

std::optional<WerBreakdown> Report::cell(const std::string& dataset, const std::string& language) const {
  const auto it = cells_.find({dataset, language});
  if (it == cells_.end()) return std::nullopt;
  return it->second;
}

std::optional<double> Report::wer_percent(const std::string& dataset, const std::string& language) const {
  const auto c = cell(dataset, language);
  if (!c) return std::nullopt;
  return 100.0 * c->rate();
}

std::optional<double> Report::average(const std::string& language) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ds : datasets_) {
    if (const auto v = wer_percent(ds, language)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::string Report::to_text(const std::string& metric) const {
  if (empty()) throw ValidationError("report: no result cells to render");
  const auto langs = languages();
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Dataset"};
  for (const auto& l : langs) header.push_back(l);
  rows.push_back(header);
  for (const auto& ds : datasets_) {
    std::vector<std::string> row{ds};
    for (const auto& l : langs) {
      const auto v = wer_percent(ds, l);
      row.push_back(v ? format_percent(*v) : "x");
    }
    rows.push_back(row);
  }
  std::vector<std::string> avg{"Avg."};
  for (const auto& l : langs) {
    const auto v = average(l);
    avg.push_back(v ? format_percent(*v) : "x");
  }
  rows.push_back(avg);

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::size_t total_width = 0;
  for (auto w : width) total_width += w + 2;
  std::string out = metric + " (%), greedy CTC decoding\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r == 1 || r + 1 == rows.size()) out += std::string(total_width, '-') + "\n";
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto& cell = rows[r][c];
      const auto pad = std::string(width[c] - cell.size(), ' ');
      out += c == 0 ? cell + pad : pad + cell;
      out += c + 1 < rows[r].size() ? "  " : "\n";
    }
  }
  return out;
}

std::string Report::to_csv() const {
  std::string out = "dataset,language,wer_percent\n";
  char buf[64];
  for (const auto& ds : datasets_) {
    for (const auto& l : languages()) {
      if (const auto v = wer_percent(ds, l)) {
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        out += ds + "," + l + "," + buf + "\n";
      }
    }
  }
  for (const auto& l : languages()) {
    if (const auto v = average(l)) {
      std::snprintf(buf, sizeof buf, "%.6f", *v);
      out += "Avg.," + l + "," + buf + "\n";
    }
  }
  return out;
}

void score_into(Report& report, std::span<const data::UtteranceRecord> references,
                std::span<const Hypothesis> hyps, const std::string& dataset, const ScoreOptions& options) {
  std::unordered_map<std::string, const Hypothesis*> by_id;
  for (const auto& h : hyps) {
    if (!by_id.emplace(h.id, &h).second) throw ValidationError("score: duplicate hypothesis id " + h.id);
  }
  for (const auto& r : references) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw ValidationError("score: no hypothesis for utterance " + r.id);
    const auto ref = tokenizer::normalize_text(r.transcript, options.normalizer);
    const auto hyp = tokenizer::normalize_text(it->second->text, options.normalizer);
    report.add(dataset, r.language, options.character_level ? cer(ref, hyp) : wer(ref, hyp));
    by_id.erase(it);
  }
  if (!by_id.empty()) {
    throw ValidationError("score: hypothesis " + by_id.begin()->first + " has no reference in the manifest");
  }
}

Report score(std::span<const data::UtteranceRecord> references, std::span<const Hypothesis> hyps,
             const std::string& dataset, const ScoreOptions& options) {
  Report report;
  score_into(report, references, hyps, dataset, options);
  return report;
}

}  // namespace mlma::eval
