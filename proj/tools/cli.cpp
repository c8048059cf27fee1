#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "mlma/checkpoint.hpp"
#include "mlma/config.hpp"
#include "mlma/data.hpp"
#include "mlma/error.hpp"
#include "mlma/eval.hpp"
#include "mlma/io_util.hpp"
#include "mlma/ssm.hpp"
#include "mlma/synth.hpp"
#include "mlma/train.hpp"
#include "mlma/verify.hpp"

namespace mlma::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "Run configuration (JSON)");
    app->add_option("--set", overrides, "Override one field, section.key=value (repeatable)");
  }

  config::RunConfig load() const {
    config::RunConfig cfg = path.empty() ? config::RunConfig{} : config::load_run_config(path);
    for (const auto& o : overrides) config::apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<data::UtteranceRecord> load_manifests(const std::vector<std::string>& paths) {
  std::vector<data::UtteranceRecord> all;
  for (const auto& p : paths) {
    auto records = data::load_manifest(p);
    all.insert(all.end(), records.begin(), records.end());
  }
  return all;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// Names given on the command line, or the manifest file stems.
std::vector<std::string> dataset_names(const std::vector<std::string>& given, const std::vector<std::string>& paths,
                                       const char* flag) {
  if (given.empty()) {
    std::vector<std::string> names;
    for (const auto& p : paths) names.push_back(stem_of(p));
    return names;
  }
  if (given.size() != paths.size()) {
    throw ValidationError(std::string(flag) + " must be given once per manifest (" + std::to_string(paths.size()) +
                          "), got " + std::to_string(given.size()));
  }
  return given;
}

data::PrepareOptions prepare_options(const config::RunConfig& cfg, const std::string& cache_dir) {
  data::PrepareOptions opts;
  opts.features = cfg.features;
  opts.normalizer = cfg.normalizer;
  opts.cache_dir = cache_dir;
  return opts;
}

// featurize

struct FeaturizeCmd {
  ConfigFlags config;
  std::vector<std::string> manifests;
  std::string out_dir;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("featurize", "Compute log-mel features into a cache directory");
    config.attach(sub);
    sub->add_option("--manifest", manifests, "Manifest (repeatable)")->required();
    sub->add_option("--out", out_dir, "Cache directory, one <id>.mlfb per utterance")->required();
  }

  int run(std::ostream& out) const {
    const auto cfg = config.load();
    const auto opts = prepare_options(cfg, out_dir);
    std::size_t frames = 0, count = 0;
    for (const auto& r : load_manifests(manifests)) {
      frames += data::load_features(r, opts).num_frames();
      ++count;
    }
    out << "featurized " << count << " utterances, " << frames << " frames, into " << out_dir << "\n";
    return kExitOk;
  }
};

// build-vocab

struct BuildVocabCmd {
  ConfigFlags config;
  std::vector<std::string> manifests;
  std::string out_path;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("build-vocab", "Build the character vocabulary of training transcripts");
    config.attach(sub);
    sub->add_option("--manifest", manifests, "Manifest (repeatable)")->required();
    sub->add_option("--out", out_path, "Vocabulary file")->required();
  }

  int run(std::ostream& out) const {
    const auto cfg = config.load();
    std::vector<std::string> transcripts;
    for (const auto& r : load_manifests(manifests)) transcripts.push_back(r.transcript);
    const auto vocab = tokenizer::Vocab::build(transcripts, cfg.normalizer);
    vocab.save(out_path);
    out << "vocabulary of " << vocab.size() << " ids (" << vocab.symbols().size() << " characters) written to "
        << out_path << "\nsha256 " << vocab.digest() << "\n";
    return kExitOk;
  }
};

// train

struct TrainCmd {
  ConfigFlags config;
  std::vector<std::string> train_manifests;
  std::string vocab_path;
  std::string out_dir;
  std::string cache_dir;
  std::string resume_path;
  std::string valid_manifest;
  std::string valid_name = "valid";
  std::size_t threads = 0;
  std::size_t log_every = 50;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("train", "Train an encoder with CTC");
    config.attach(sub);
    sub->add_option("--train", train_manifests, "Training manifest (repeatable)")->required();
    sub->add_option("--vocab", vocab_path, "Vocabulary file; built from the training transcripts when omitted");
    sub->add_option("--out", out_dir, "Output directory for metrics, logs and checkpoints")->required();
    sub->add_option("--cache", cache_dir, "Feature cache directory");
    sub->add_option("--resume", resume_path, "Checkpoint to resume from");
    sub->add_option("--valid", valid_manifest, "Validation manifest scored after training");
    sub->add_option("--valid-name", valid_name, "Dataset label of the validation report")->capture_default_str();
    sub->add_option("--threads", threads, "Validation decode threads (0 = all cores)")->capture_default_str();
    sub->add_option("--log-every", log_every, "Log interval in steps")->capture_default_str();
  }

  template <typename T>
  int finish(train::Trainer<T>& trainer, const config::RunConfig& cfg, std::ostream& out) const {
    train::RunOptions opts;
    opts.output_dir = out_dir;
    opts.log = &out;
    opts.log_every = log_every;
    const auto stats = train::run(trainer, opts);
    if (!stats.empty()) out << "finished at step " << stats.back().step << ", loss " << stats.back().loss << "\n";
    if (valid_manifest.empty()) return kExitOk;
    const auto records = data::load_manifest(valid_manifest);
    const auto examples = data::prepare_examples(records, trainer.vocab(), prepare_options(cfg, cache_dir));
    const auto result = train::validate(trainer.model(), trainer.vocab(), examples, valid_name, threads);
    eval::save_hypotheses(fs::path(out_dir) / "valid_hyps.jsonl", result.hypotheses);
    write_text(fs::path(out_dir) / "report.csv", result.report.to_csv());
    out << result.report.to_text() << "mean validation loss " << result.mean_loss << "\n";
    return kExitOk;
  }

  int run(std::ostream& out) const {
    auto cfg = config.load();
    fs::create_directories(out_dir);
    const auto records = load_manifests(train_manifests);

    if (!resume_path.empty()) {
      const auto ckpt = train::load_checkpoint(resume_path);
      const auto vocab = vocab_path.empty() ? train::checkpoint_vocab(ckpt) : tokenizer::Vocab::load(vocab_path);
      auto examples = data::prepare_examples(records, vocab, prepare_options(cfg, cache_dir));
      out << "resuming " << resume_path << " at step " << ckpt.step << "\n";
      if (ckpt.dtype == DType::kFloat64) {
        auto trainer = train::Trainer<double>::resume(ckpt, vocab, std::move(examples), cfg.language_weights);
        return finish(trainer, cfg, out);
      }
      auto trainer = train::Trainer<float>::resume(ckpt, vocab, std::move(examples), cfg.language_weights);
      return finish(trainer, cfg, out);
    }

    tokenizer::Vocab vocab;
    if (vocab_path.empty()) {
      std::vector<std::string> transcripts;
      for (const auto& r : records) transcripts.push_back(r.transcript);
      vocab = tokenizer::Vocab::build(transcripts, cfg.normalizer);
      vocab.save(fs::path(out_dir) / "vocab.txt");
    } else {
      vocab = tokenizer::Vocab::load(vocab_path);
    }
    cfg.model.vocab_size = vocab.size();
    cfg.validate();
    write_text(fs::path(out_dir) / "config.json", config::run_config_json(cfg));
    auto examples = data::prepare_examples(records, vocab, prepare_options(cfg, cache_dir));
    out << "training on " << examples.size() << " utterances, vocabulary " << vocab.size() << ", "
        << encoder::count_params(cfg.model) << " parameters, " << train::to_string(cfg.train.precision) << "\n";
    if (cfg.train.precision == train::Precision::kFloat64) {
      train::Trainer<double> trainer(cfg.model, cfg.train, vocab, std::move(examples), cfg.language_weights);
      return finish(trainer, cfg, out);
    }
    train::Trainer<float> trainer(cfg.model, cfg.train, vocab, std::move(examples), cfg.language_weights);
    return finish(trainer, cfg, out);
  }
};

// decode

struct DecodeCmd {
  ConfigFlags config;
  std::string checkpoint;
  std::vector<std::string> manifests;
  std::string out_path;
  std::string cache_dir;
  std::size_t threads = 0;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("decode", "Greedy CTC decoding of a manifest into hypotheses JSONL");
    config.attach(sub);
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    sub->add_option("--manifest", manifests, "Manifest (repeatable)")->required();
    sub->add_option("--out", out_path, "Hypotheses JSONL")->required();
    sub->add_option("--cache", cache_dir, "Feature cache directory");
    sub->add_option("--threads", threads, "Decode threads (0 = all cores)")->capture_default_str();
  }

  template <typename T>
  std::vector<eval::Hypothesis> decode(const train::Checkpoint& ckpt, const tokenizer::Vocab& vocab,
                                       const std::vector<data::Example>& examples) const {
    const auto model = train::restore_model<T>(ckpt);
    return train::decode(model, vocab, examples, threads);
  }

  int run(std::ostream& out) const {
    const auto cfg = config.load();
    const auto ckpt = train::load_checkpoint(checkpoint);
    if (cfg.features.n_mels != ckpt.model.n_mels) {
      throw ConfigError("features.n_mels is " + std::to_string(cfg.features.n_mels) + " but the checkpoint expects " +
                        std::to_string(ckpt.model.n_mels));
    }
    const auto vocab = train::checkpoint_vocab(ckpt);
    auto opts = prepare_options(cfg, cache_dir);
    opts.with_targets = false;
    const auto examples = data::prepare_examples(load_manifests(manifests), vocab, opts);
    const auto hyps = ckpt.dtype == DType::kFloat64 ? decode<double>(ckpt, vocab, examples)
                                                    : decode<float>(ckpt, vocab, examples);
    eval::save_hypotheses(out_path, hyps);
    out << "decoded " << hyps.size() << " utterances into " << out_path << "\n";
    return kExitOk;
  }
};

// eval

struct EvalCmd {
  ConfigFlags config;
  std::vector<std::string> refs;
  std::vector<std::string> hyps;
  std::vector<std::string> datasets;
  std::string report_path;
  bool cer = false;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("eval", "Score hypotheses against manifest references");
    config.attach(sub);
    sub->add_option("--refs", refs, "Reference manifest (repeatable)")->required();
    sub->add_option("--hyps", hyps, "Hypotheses JSONL, one per --refs")->required();
    sub->add_option("--dataset", datasets, "Dataset label per --refs (default: manifest file stem)");
    sub->add_option("--report", report_path, "Write the report as CSV");
    sub->add_flag("--cer", cer, "Score characters instead of words (diagnostic)");
  }

  int run(std::ostream& out) const {
    const auto cfg = config.load();
    if (hyps.size() != refs.size()) {
      throw ValidationError("--hyps must be given once per --refs (" + std::to_string(refs.size()) + "), got " +
                            std::to_string(hyps.size()));
    }
    const auto names = dataset_names(datasets, refs, "--dataset");
    eval::ScoreOptions opts{cfg.normalizer, cer};
    eval::Report report;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      eval::score_into(report, data::load_manifest(refs[i]), eval::load_hypotheses(hyps[i]), names[i], opts);
    }
    out << report.to_text(cer ? "CER" : "WER");
    if (!report_path.empty()) write_text(report_path, report.to_csv());
    return kExitOk;
  }
};

// gradcheck

struct GradcheckCmd {
  std::uint64_t seed = 2024;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("gradcheck", "Finite-difference gradient checks of every differentiable op");
    sub->add_option("--seed", seed, "Seed of the random inputs")->capture_default_str();
  }

  int run(std::ostream& out) const {
    const auto outcomes = verify::gradcheck_suite(seed);
    std::size_t failed = 0;
    out << std::left << std::setw(28) << "check" << std::right << std::setw(14) << "max rel err" << std::setw(10)
        << "limit" << "  result\n";
    for (const auto& o : outcomes) {
      char err[32], tol[32];
      std::snprintf(err, sizeof err, "%.3e", o.max_rel_error);
      std::snprintf(tol, sizeof tol, "%.0e", o.tolerance);
      out << std::left << std::setw(28) << o.name << std::right << std::setw(14) << err << std::setw(10) << tol
          << "  " << (o.passed ? "pass" : "FAIL") << "\n";
      if (!o.passed) {
        out << "    " << o.detail << "\n";
        ++failed;
      }
    }
    if (failed > 0) {
      out << failed << " of " << outcomes.size() << " checks failed\n";
      return kExitRuntime;
    }
    out << "all " << outcomes.size() << " checks passed\n";
    return kExitOk;
  }
};

// bench-scan

struct BenchScanCmd {
  std::vector<std::size_t> lengths{256, 1024};
  std::vector<std::size_t> chunks{4, 16, 64};
  std::size_t d_inner = 32;
  std::size_t n_state = 16;
  std::size_t repeats = 5;
  std::string precision = "float32";
  std::uint64_t seed = 1;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("bench-scan", "Throughput of the sequential and chunked selective scans");
    sub->add_option("--lengths", lengths, "Sequence lengths")->capture_default_str()->delimiter(',');
    sub->add_option("--chunks", chunks, "Chunk sizes")->capture_default_str()->delimiter(',');
    sub->add_option("--d-inner", d_inner, "Channels")->capture_default_str();
    sub->add_option("--n-state", n_state, "State size per channel")->capture_default_str();
    sub->add_option("--repeats", repeats, "Timed repetitions; the fastest counts")->capture_default_str();
    sub->add_option("--precision", precision, "float32 or float64")->capture_default_str();
    sub->add_option("--seed", seed, "Seed of the random inputs")->capture_default_str();
  }

  template <typename T>
  int bench(std::ostream& out) const {
    NoGradGuard no_grad;
    std::mt19937_64 rng(seed);
    const auto core = ssm::SsmCoreParams<T>::create(d_inner, n_state, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    out << std::setw(8) << "T" << std::setw(12) << "kernel" << std::setw(8) << "chunk" << std::setw(12) << "ms"
        << std::setw(14) << "frames/s" << std::setw(10) << "speedup" << std::setw(14) << "max |diff|" << "\n";
    for (std::size_t t : lengths) {
      std::vector<T> data(t * d_inner);
      for (auto& v : data) v = static_cast<T>(normal(rng));
      const Tensor<T> x({t, d_inner}, std::move(data));
      Tensor<T> reference;
      const auto time = [&](const std::function<Tensor<T>()>& f, Tensor<T>& result) {
        double best = INFINITY;
        for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
          const auto start = std::chrono::steady_clock::now();
          result = f();
          best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
        }
        return best;
      };
      const auto row = [&](const char* kernel, std::size_t chunk, double ms, double base, const Tensor<T>& y) {
        double diff = 0.0;
        for (std::size_t i = 0; i < y.data().size(); ++i) {
          diff = std::max(diff, std::abs(static_cast<double>(y.data()[i]) - static_cast<double>(reference.data()[i])));
        }
        char cells[4][32];
        std::snprintf(cells[0], sizeof cells[0], "%.3f", ms);
        std::snprintf(cells[1], sizeof cells[1], "%.3g", static_cast<double>(t) / (ms / 1000.0));
        std::snprintf(cells[2], sizeof cells[2], "%.2fx", base / ms);
        std::snprintf(cells[3], sizeof cells[3], "%.2e", diff);
        out << std::setw(8) << t << std::setw(12) << kernel << std::setw(8) << (chunk == 0 ? std::string("-") : std::to_string(chunk))
            << std::setw(12) << cells[0] << std::setw(14) << cells[1] << std::setw(10) << cells[2] << std::setw(14)
            << cells[3] << "\n";
      };
      const double base = time([&] { return ssm::ssm_scan_sequential(x, core); }, reference);
      row("sequential", 0, base, base, reference);
      for (std::size_t c : chunks) {
        Tensor<T> y;
        const double ms = time([&] { return ssm::ssm_scan_chunked(x, core, c); }, y);
        row("chunked", c, ms, base, y);
      }
    }
    return kExitOk;
  }

  int run(std::ostream& out) const {
    if (lengths.empty() || chunks.empty()) throw ValidationError("bench-scan: --lengths and --chunks must not be empty");
    for (std::size_t v : lengths) {
      if (v == 0) throw ValidationError("bench-scan: lengths must be positive");
    }
    for (std::size_t v : chunks) {
      if (v == 0) throw ValidationError("bench-scan: chunk sizes must be positive");
    }
    if (d_inner == 0 || n_state == 0) throw ValidationError("bench-scan: --d-inner and --n-state must be positive");
    return train::parse_precision(precision) == train::Precision::kFloat64 ? bench<double>(out) : bench<float>(out);
  }
};

// stats

struct StatsCmd {
  std::vector<std::string> manifests;
  std::vector<std::string> corpora;
  std::string csv_path;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("stats", "Hours per corpus and language");
    sub->add_option("--manifest", manifests, "Manifest (repeatable)")->required();
    sub->add_option("--corpus", corpora, "Corpus label per --manifest (default: manifest file stem)");
    sub->add_option("--csv", csv_path, "Also write the table as CSV");
  }

  int run(std::ostream& out) const {
    const auto names = dataset_names(corpora, manifests, "--corpus");
    std::vector<std::pair<std::string, std::vector<data::UtteranceRecord>>> groups;
    for (std::size_t i = 0; i < manifests.size(); ++i) groups.emplace_back(names[i], data::load_manifest(manifests[i]));
    const auto stats = data::corpus_stats(groups);
    out << stats.to_text();
    if (!csv_path.empty()) write_text(csv_path, stats.to_csv());
    return kExitOk;
  }
};

// synth-corpus

struct SynthCmd {
  std::string out_dir;
  synth::SynthConfig cfg;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("synth-corpus", "Write the tone-coded two-language toy corpus");
    sub->add_option("--out", out_dir, "Directory for WAV files and manifest.jsonl")->required();
    sub->add_option("--utterances", cfg.utterances, "Number of utterances")->capture_default_str();
    sub->add_option("--seed", cfg.seed, "Seed")->capture_default_str();
  }

  int run(std::ostream& out) const {
    const auto records = synth::write_corpus(out_dir, cfg);
    double seconds = 0.0;
    for (const auto& r : records) seconds += r.duration_s;
    out << "wrote " << records.size() << " utterances (" << seconds << " s) and " << (fs::path(out_dir) / "manifest.jsonl").string()
        << "\n";
    return kExitOk;
  }
};

// show-config

struct ShowConfigCmd {
  ConfigFlags config;

  void attach(CLI::App& app) {
    auto* sub = app.add_subcommand("show-config", "Print the effective configuration with every field");
    config.attach(sub);
  }

  int run(std::ostream& out) const {
    out << config::run_config_json(config.load()) << "\n";
    return kExitOk;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multilingual ASR with a ConMamba encoder and CTC", "mlma"};
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);

  FeaturizeCmd featurize;
  BuildVocabCmd build_vocab;
  TrainCmd train_cmd;
  DecodeCmd decode_cmd;
  EvalCmd eval_cmd;
  GradcheckCmd gradcheck;
  BenchScanCmd bench_scan;
  StatsCmd stats;
  SynthCmd synth_cmd;
  ShowConfigCmd show_config;
  featurize.attach(app);
  build_vocab.attach(app);
  train_cmd.attach(app);
  decode_cmd.attach(app);
  eval_cmd.attach(app);
  gradcheck.attach(app);
  bench_scan.attach(app);
  stats.attach(app);
  synth_cmd.attach(app);
  show_config.attach(app);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  const std::map<std::string, std::function<int()>> commands{
      {"featurize", [&] { return featurize.run(out); }},
      {"build-vocab", [&] { return build_vocab.run(out); }},
      {"train", [&] { return train_cmd.run(out); }},
      {"decode", [&] { return decode_cmd.run(out); }},
      {"eval", [&] { return eval_cmd.run(out); }},
      {"gradcheck", [&] { return gradcheck.run(out); }},
      {"bench-scan", [&] { return bench_scan.run(out); }},
      {"stats", [&] { return stats.run(out); }},
      {"synth-corpus", [&] { return synth_cmd.run(out); }},
      {"show-config", [&] { return show_config.run(out); }},
  };
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return commands.at(name)();
  } catch (const ValidationError& e) {
    err << "mlma " << name << ": " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "mlma " << name << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace mlma::cli
