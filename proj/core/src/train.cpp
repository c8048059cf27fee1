#include "mlma/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <thread>

#include "mlma/checkpoint.hpp"
#include "mlma/ctc.hpp"
#include "mlma/error.hpp"
#include "mlma/rng.hpp"

namespace mlma::train {

using mlma::to_string;

std::string to_string(Precision precision) {
  return precision == Precision::kFloat32 ? "float32" : "float64";
}

Precision parse_precision(std::string_view text) {
  if (text == "float32") return Precision::kFloat32;
  if (text == "float64") return Precision::kFloat64;
  throw ConfigError("precision must be float32 or float64, got \"" + std::string(text) + "\"");
}

void TrainConfig::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("train config: ") + what);
  };
  require(lr_peak > 0.0 && std::isfinite(lr_peak), "lr_peak must be positive");
  require(warmup_steps > 0, "warmup_steps must be positive");
  require(max_steps > 0, "max_steps must be positive");
  require(warmup_steps <= max_steps, "warmup_steps must not exceed max_steps");
  require(grad_clip > 0.0, "grad_clip must be positive");
  require(max_batch_frames > 0, "max_batch_frames must be positive");
  require(eval_every > 0, "eval_every must be positive");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step == 0) throw ValidationError("learning_rate: steps are 1-based");
  const double s = static_cast<double>(step), w = static_cast<double>(cfg.warmup_steps);
  return cfg.lr_peak * std::min(s / w, std::sqrt(w / s));
}

template <typename T>
double global_grad_norm(const NamedParams<T>& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(const NamedParams<T>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && std::isfinite(norm)) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      auto leaf = p;
      for (T& g : leaf.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template <typename T>
Adam<T>::Adam(NamedParams<T> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.size(), T{0});
    v_.emplace_back(p.size(), T{0});
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(beta1_, t), c2 = 1.0 - std::pow(beta2_, t);
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto param = params_[k].second;
    auto values = param.mutable_data();
    const auto grad = param.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T g = grad.empty() ? T{0} : grad[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      const double m_hat = static_cast<double>(m[i]) / c1;
      const double v_hat = static_cast<double>(v[i]) / c2;
      values[i] = static_cast<T>(static_cast<double>(values[i]) - lr * m_hat / (std::sqrt(v_hat) + eps_));
    }
  }
}

template <typename T>
void Adam<T>::set_state(std::size_t steps, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw DimensionError("adam: moment count does not match the parameter count");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    if (m[k].size() != params_[k].second.size() || v[k].size() != params_[k].second.size()) {
      throw DimensionError("adam: moment size mismatch for " + params_[k].first);
    }
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

namespace {

template <typename T>
Tensor<T> as_precision(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    return tensor_cast<T>(x);
  }
}

template <typename T>
void load_entries(const NamedParams<T>& params, const std::vector<TensorEntry>& entries, const std::string& what) {
  if (entries.size() != params.size()) {
    throw ValidationError("checkpoint: " + what + " has " + std::to_string(entries.size()) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, tensor] = params[k];
    const auto& e = entries[k];
    if (e.name != name || e.shape != tensor.shape()) {
      throw ValidationError("checkpoint: " + what + " entry " + e.name + " " + to_string(e.shape) +
                            " does not match model tensor " + name + " " + to_string(tensor.shape()));
    }
    auto leaf = tensor;
    auto out = leaf.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(e.values[i]);
  }
}

template <typename T>
std::vector<std::vector<T>> entry_values(const std::vector<TensorEntry>& entries) {
  std::vector<std::vector<T>> out;
  for (const auto& e : entries) out.emplace_back(e.values.begin(), e.values.end());
  return out;
}

template <typename T>
std::vector<TensorEntry> moment_entries(const NamedParams<T>& params, const std::vector<std::vector<T>>& moments) {
  std::vector<TensorEntry> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    out.push_back({params[k].first, params[k].second.shape(), {moments[k].begin(), moments[k].end()}});
  }
  return out;
}

Precision precision_of(DType dtype) { return dtype == DType::kFloat32 ? Precision::kFloat32 : Precision::kFloat64; }

std::string join_ids(const std::vector<data::Example>& examples, const std::vector<std::size_t>& batch) {
  std::string ids;
  for (auto i : batch) ids += (ids.empty() ? "" : ", ") + examples[i].id;
  return ids;
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(const encoder::EncoderConfig& model, const TrainConfig& cfg, const tokenizer::Vocab& vocab,
                    std::vector<data::Example> examples, std::map<std::string, double> language_weights)
    : cfg_(cfg), vocab_(vocab), examples_(std::move(examples)) {
  cfg_.validate();
  model.validate();
  if (cfg_.precision != precision_of(dtype_of<T>())) {
    throw ConfigError("trainer: precision " + to_string(cfg_.precision) + " does not match the " +
                      to_string(dtype_of<T>()) + " trainer");
  }
  if (model.vocab_size != vocab_.size()) {
    throw ConfigError("trainer: model vocab_size " + std::to_string(model.vocab_size) + " differs from vocabulary size " +
                      std::to_string(vocab_.size()));
  }
  if (examples_.empty()) throw ValidationError("trainer: no training examples");
  for (const auto& ex : examples_) {
    if (ex.features.rank() != 2 || ex.features.dim(1) != model.n_mels) {
      throw DimensionError("trainer: utterance " + ex.id + " has features " + to_string(ex.features.shape()) +
                           ", expected [T x " + std::to_string(model.n_mels) + "]");
    }
    if (ex.features.dim(0) > cfg_.max_batch_frames) {
      throw ValidationError("trainer: utterance " + ex.id + " has " + std::to_string(ex.features.dim(0)) +
                            " frames, over the batch budget of " + std::to_string(cfg_.max_batch_frames));
    }
    features_.push_back(as_precision<T>(ex.features));
  }
  bucket_.max_frames = cfg_.max_batch_frames;
  bucket_.seed = cfg_.seed;
  bucket_.language_weights = std::move(language_weights);
  auto init_rng = derive_rng(cfg_.seed, RngStream::kInit);
  model_ = encoder::Encoder<T>::create(model, init_rng());
  params_ = model_.named_params();
  adam_ = Adam<T>(params_, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
}

template <typename T>
Trainer<T> Trainer<T>::resume(const Checkpoint& ckpt, const tokenizer::Vocab& vocab,
                              std::vector<data::Example> examples, std::map<std::string, double> language_weights) {
  if (vocab.digest() != ckpt.vocab_digest) {
    throw ValidationError("resume: vocabulary digest " + vocab.digest() + " differs from the checkpoint's " +
                          ckpt.vocab_digest);
  }
  if (ckpt.dtype != dtype_of<T>()) {
    throw ConfigError("resume: checkpoint holds " + to_string(ckpt.dtype) + " tensors, trainer uses " +
                      to_string(dtype_of<T>()));
  }
  Trainer trainer(ckpt.model, ckpt.train, vocab, std::move(examples), std::move(language_weights));
  load_entries(trainer.params_, ckpt.params, "parameters");
  if (ckpt.adam_m.empty() || ckpt.adam_v.empty()) {
    throw ValidationError("resume: checkpoint has no optimizer state");
  }
  {
    // Moments share the parameter layout; check names and shapes on scratch tensors.
    NamedParams<T> probe;
    for (const auto& [name, p] : trainer.params_) probe.emplace_back(name, Tensor<T>::zeros(p.shape()));
    load_entries(probe, ckpt.adam_m, "first moments");
    load_entries(probe, ckpt.adam_v, "second moments");
  }
  trainer.adam_.set_state(ckpt.step, entry_values<T>(ckpt.adam_m), entry_values<T>(ckpt.adam_v));
  trainer.steps_done_ = ckpt.step;
  trainer.epoch_ = ckpt.epoch;
  trainer.batch_in_epoch_ = ckpt.batch_in_epoch;
  trainer.plan_valid_ = false;
  return trainer;
}

template <typename T>
void Trainer<T>::ensure_plan() {
  std::vector<std::size_t> frames;
  std::vector<std::string> languages;
  for (const auto& ex : examples_) {
    frames.push_back(ex.features.dim(0));
    languages.push_back(ex.language);
  }
  for (int attempt = 0;; ++attempt) {
    if (!plan_valid_) {
      plan_ = data::plan_batches(frames, languages, bucket_, epoch_);
      plan_valid_ = true;
    }
    if (batch_in_epoch_ < plan_.size()) return;
    if (plan_.empty() && attempt > 0) throw ValidationError("trainer: language weights schedule no utterances");
    ++epoch_;
    batch_in_epoch_ = 0;
    plan_valid_ = false;
  }
}

template <typename T>
StepStats Trainer<T>::step() {
  ensure_plan();
  const auto& batch = plan_[batch_in_epoch_];
  const std::size_t step_no = steps_done_ + 1;
  auto rng = derive_rng(cfg_.seed, RngStream::kDropout, step_no);
  const ForwardContext ctx{true, &rng};
  for (auto& [name, p] : params_) p.zero_grad();

  const double batch_size = static_cast<double>(batch.size());
  double loss_sum = 0.0;
  for (auto idx : batch) {
    const auto& ex = examples_[idx];
    Tensor<T> loss;
    try {
      loss = ctc::ctc_loss_op(model_.encode(features_[idx], ctx).log_probs, ex.target);
    } catch (const DomainError& e) {
      // Softplus step sizes only leave the domain when activations are NaN.
      throw RuntimeFailure("non-finite activations at step " + std::to_string(step_no) + " on utterance " + ex.id +
                           " (batch: " + join_ids(examples_, batch) + "): " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("utterance " + ex.id + ": " + e.what());
    }
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw RuntimeFailure("non-finite loss at step " + std::to_string(step_no) + " on utterance " + ex.id +
                           " (batch: " + join_ids(examples_, batch) + ")");
    }
    const double weight = 1.0 / (batch_size * static_cast<double>(std::max<std::size_t>(1, ex.target.size())));
    backward(scale(loss, static_cast<T>(weight)));
    loss_sum += value * weight;
  }

  const double lr = learning_rate(cfg_, step_no);
  const double norm = clip_grad_norm(params_, cfg_.grad_clip);
  if (!std::isfinite(norm)) {
    throw RuntimeFailure("non-finite gradient norm at step " + std::to_string(step_no) +
                         " (batch: " + join_ids(examples_, batch) + ")");
  }
  adam_.step(lr);
  steps_done_ = step_no;
  ++batch_in_epoch_;
  return {step_no, loss_sum, lr, norm, batch.size(), epoch_};
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() const {
  Checkpoint ckpt;
  ckpt.model = model_.config();
  ckpt.train = cfg_;
  ckpt.dtype = dtype_of<T>();
  ckpt.step = steps_done_;
  ckpt.epoch = epoch_;
  ckpt.batch_in_epoch = batch_in_epoch_;
  ckpt.vocab = vocab_.serialize();
  ckpt.vocab_digest = vocab_.digest();
  ckpt.params = to_entries(params_);
  ckpt.adam_m = moment_entries(params_, adam_.first_moments());
  ckpt.adam_v = moment_entries(params_, adam_.second_moments());
  return ckpt;
}

template <typename T>
std::vector<TensorEntry> to_entries(const NamedParams<T>& params) {
  std::vector<TensorEntry> out;
  for (const auto& [name, p] : params) out.push_back({name, p.shape(), {p.data().begin(), p.data().end()}});
  return out;
}

template <typename T>
encoder::Encoder<T> restore_model(const Checkpoint& ckpt) {
  auto model = encoder::Encoder<T>::create(ckpt.model, 0);
  load_entries(model.named_params(), ckpt.params, "parameters");
  return model;
}

template <typename T>
std::vector<StepStats> run(Trainer<T>& trainer, const RunOptions& options) {
  std::ofstream metrics, log_file;
  const bool write = !options.output_dir.empty();
  if (write) {
    std::filesystem::create_directories(options.output_dir);
    const auto metrics_path = options.output_dir / "metrics.csv";
    const bool fresh = trainer.steps_done() == 0 || !std::filesystem::exists(metrics_path);
    metrics.open(metrics_path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh) metrics << "step,loss,lr,grad_norm\n";
    log_file.open(options.output_dir / "train.log", fresh ? std::ios::trunc : std::ios::app);
    if (!metrics || !log_file) throw RuntimeFailure("train: cannot write to " + options.output_dir.string());
  }
  const auto save = [&](std::size_t step) {
    if (!write) return;
    char name[32];
    std::snprintf(name, sizeof name, "step-%06zu.mlma", step);
    const auto ckpt = trainer.checkpoint();
    save_checkpoint(options.output_dir / name, ckpt);
    save_checkpoint(options.output_dir / "latest.mlma", ckpt);
  };

  std::vector<StepStats> history;
  std::size_t last_saved = trainer.steps_done();
  while (!trainer.done()) {
    const auto s = trainer.step();
    history.push_back(s);
    char line[160];
    if (write) {
      std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.10g\n", s.step, s.loss, s.lr, s.grad_norm);
      metrics << line << std::flush;
    }
    if (s.step % options.log_every == 0 || s.step == 1 || trainer.done()) {
      std::snprintf(line, sizeof line, "step %zu epoch %llu batch %zu loss %.6f lr %.3e grad_norm %.4f\n", s.step,
                    static_cast<unsigned long long>(s.epoch), s.batch_size, s.loss, s.lr, s.grad_norm);
      if (options.log) *options.log << line << std::flush;
      if (write) log_file << line << std::flush;
    }
    if (s.step % trainer.config().eval_every == 0 || trainer.done()) {
      save(s.step);
      last_saved = s.step;
    }
    if (options.on_step && !options.on_step(s)) break;
  }
  if (trainer.steps_done() != last_saved) save(trainer.steps_done());
  return history;
}

namespace {

struct Decoded {
  std::string text;
  double loss = 0.0;
  bool feasible = true;
};

template <typename T>
std::vector<Decoded> decode_all(const encoder::Encoder<T>& model, const tokenizer::Vocab& vocab,
                                const std::vector<data::Example>& examples, std::size_t threads, bool with_loss) {
  std::vector<Decoded> out(examples.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(1, examples.size()));
  std::vector<std::exception_ptr> errors(threads);
  const auto work = [&](std::size_t w) {
    try {
      NoGradGuard no_grad;
      for (std::size_t i = w; i < examples.size(); i += threads) {
        const auto& ex = examples[i];
        const auto result = model.encode(as_precision<T>(ex.features));
        out[i].text = tokenizer::decode(ctc::greedy_decode(result.log_probs), vocab);
        if (!with_loss) continue;
        try {
          out[i].loss = ctc::ctc_loss(result.log_probs, ex.target) /
                        static_cast<double>(std::max<std::size_t>(1, ex.target.size()));
        } catch (const InfeasibleTargetError&) {
          out[i].feasible = false;
        }
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<eval::Hypothesis> decode(const encoder::Encoder<T>& model, const tokenizer::Vocab& vocab,
                                     const std::vector<data::Example>& examples, std::size_t threads) {
  const auto decoded = decode_all(model, vocab, examples, threads, false);
  std::vector<eval::Hypothesis> hyps;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    hyps.push_back({examples[i].id, examples[i].language, decoded[i].text});
  }
  return hyps;
}

template <typename T>
ValidationResult validate(const encoder::Encoder<T>& model, const tokenizer::Vocab& vocab,
                          const std::vector<data::Example>& examples, const std::string& dataset, std::size_t threads) {
  const auto decoded = decode_all(model, vocab, examples, threads, true);
  ValidationResult result;
  double loss_sum = 0.0;
  std::size_t feasible = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    result.hypotheses.push_back({ex.id, ex.language, decoded[i].text});
    result.report.add(dataset, ex.language, eval::wer(ex.text, decoded[i].text));
    if (decoded[i].feasible) {
      loss_sum += decoded[i].loss;
      ++feasible;
    } else {
      ++result.infeasible;
    }
  }
  result.mean_loss = feasible > 0 ? loss_sum / static_cast<double>(feasible) : std::numeric_limits<double>::quiet_NaN();
  return result;
}

#define MLMA_INSTANTIATE_TRAIN(T)                                                                           \
  template double global_grad_norm(const NamedParams<T>&);                                                  \
  template double clip_grad_norm(const NamedParams<T>&, double);                                            \
  template class Adam<T>;                                                                                   \
  template class Trainer<T>;                                                                                \
  template std::vector<TensorEntry> to_entries(const NamedParams<T>&);                                      \
  template encoder::Encoder<T> restore_model(const Checkpoint&);                                            \
  template std::vector<StepStats> run(Trainer<T>&, const RunOptions&);                                      \
  template std::vector<eval::Hypothesis> decode(const encoder::Encoder<T>&, const tokenizer::Vocab&,        \
                                                const std::vector<data::Example>&, std::size_t);            \
  template ValidationResult validate(const encoder::Encoder<T>&, const tokenizer::Vocab&,                   \
                                     const std::vector<data::Example>&, const std::string&, std::size_t);

MLMA_INSTANTIATE_TRAIN(float)
MLMA_INSTANTIATE_TRAIN(double)

}  // namespace mlma::train
