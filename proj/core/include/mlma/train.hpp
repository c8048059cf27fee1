#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mlma/data.hpp"
#include "mlma/encoder.hpp"
#include "mlma/eval.hpp"
#include "mlma/nn.hpp"
#include "mlma/tokenizer.hpp"

namespace mlma::train {

enum class Precision { kFloat32, kFloat64 };

std::string to_string(Precision precision);
Precision parse_precision(std::string_view text);

struct TrainConfig {
  double lr_peak = 1e-3;
  std::size_t warmup_steps = 200;
  std::size_t max_steps = 2000;
  double grad_clip = 5.0;  // max global L2 norm
  std::uint64_t seed = 1;
  std::size_t max_batch_frames = 8000;  // batch size * longest item, in feature frames
  std::size_t eval_every = 500;         // checkpoint interval in steps
  Precision precision = Precision::kFloat32;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// lr_peak * min(step / warmup, sqrt(warmup / step)) for 1-based steps.
double learning_rate(const TrainConfig& cfg, std::size_t step);

template <typename T>
double global_grad_norm(const NamedParams<T>& params);

// Rescales all gradients so their global L2 norm is at most max_norm and
// returns the norm before clipping.
template <typename T>
double clip_grad_norm(const NamedParams<T>& params, double max_norm);

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(NamedParams<T> params, double beta1, double beta2, double eps);

  // One bias-corrected update from the current gradients. Parameters that
  // received no gradient keep decaying their moments as if the gradient were 0.
  void step(double lr);

  std::size_t steps() const { return steps_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_state(std::size_t steps, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

 private:
  NamedParams<T> params_;
  double beta1_ = 0.9, beta2_ = 0.98, eps_ = 1e-9;
  std::size_t steps_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct StepStats {
  std::size_t step = 0;  // 1-based index of the finished step
  double loss = 0.0;     // batch mean of CTC loss / target length
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
  std::size_t batch_size = 0;
  std::uint64_t epoch = 0;
};

struct Checkpoint;

template <typename T>
class Trainer {
 public:
  Trainer(const encoder::EncoderConfig& model, const TrainConfig& cfg, const tokenizer::Vocab& vocab,
          std::vector<data::Example> examples, std::map<std::string, double> language_weights = {});

  // Restores model, optimizer moments, step counter and data position.
  // Refuses a vocabulary whose digest differs from the checkpoint's.
  static Trainer resume(const Checkpoint& ckpt, const tokenizer::Vocab& vocab, std::vector<data::Example> examples,
                        std::map<std::string, double> language_weights = {});

  // Runs one optimizer step on the next batch. A non-finite loss raises
  // RuntimeFailure naming the batch's utterance ids.
  StepStats step();

  bool done() const { return steps_done_ >= cfg_.max_steps; }
  std::size_t steps_done() const { return steps_done_; }
  const TrainConfig& config() const { return cfg_; }
  const encoder::Encoder<T>& model() const { return model_; }
  const tokenizer::Vocab& vocab() const { return vocab_; }
  const std::vector<data::Example>& examples() const { return examples_; }

  Checkpoint checkpoint() const;

 private:
  void ensure_plan();

  TrainConfig cfg_;
  tokenizer::Vocab vocab_;
  std::vector<data::Example> examples_;
  std::vector<Tensor<T>> features_;
  data::BucketConfig bucket_;
  encoder::Encoder<T> model_;
  NamedParams<T> params_;
  Adam<T> adam_;
  std::size_t steps_done_ = 0;
  std::uint64_t epoch_ = 0;
  std::size_t batch_in_epoch_ = 0;
  std::vector<std::vector<std::size_t>> plan_;
  bool plan_valid_ = false;
};

struct RunOptions {
  // Receives metrics.csv, train.log and checkpoints; empty writes nothing.
  std::filesystem::path output_dir;
  std::ostream* log = nullptr;
  std::size_t log_every = 50;
  // Called after every step; returning false stops the run early.
  std::function<bool(const StepStats&)> on_step;
};

// Steps until max_steps or until on_step declines. Checkpoints are written
// every eval_every steps and after the last step as step-<n>.mlma plus
// latest.mlma; metrics.csv has the columns step,loss,lr,grad_norm.
template <typename T>
std::vector<StepStats> run(Trainer<T>& trainer, const RunOptions& options = {});

// Greedy CTC decoding of every example, spread over `threads` workers
// (0 = hardware concurrency).
template <typename T>
std::vector<eval::Hypothesis> decode(const encoder::Encoder<T>& model, const tokenizer::Vocab& vocab,
                                     const std::vector<data::Example>& examples, std::size_t threads = 0);

struct ValidationResult {
  eval::Report report;
  std::vector<eval::Hypothesis> hypotheses;
  double mean_loss = 0.0;       // over utterances with a feasible target
  std::size_t infeasible = 0;   // targets longer than the encoder output allows
};

template <typename T>
ValidationResult validate(const encoder::Encoder<T>& model, const tokenizer::Vocab& vocab,
                          const std::vector<data::Example>& examples, const std::string& dataset,
                          std::size_t threads = 0);

}  // namespace mlma::train
