#include "mlma/config.hpp"

#include <functional>
#include <limits>
#include <type_traits>
#include <vector>

#include "config_json.hpp"
#include "mlma/error.hpp"
#include "mlma/io_util.hpp"

namespace mlma::config {

namespace detail {

namespace {

template <typename S>
struct Field {
  const char* name;
  std::function<Json(const S&)> get;
  std::function<void(S&, const Json&, const std::string&)> set;
};

template <typename M>
M read_value(const Json& j, const std::string& key) {
  if constexpr (std::is_same_v<M, bool>) {
    if (!j.is_boolean()) throw ConfigError(key + ": expected true or false");
    return j.get<bool>();
  } else if constexpr (std::is_integral_v<M>) {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
      throw ConfigError(key + ": expected a non-negative integer");
    }
    const auto v = j.get<std::uint64_t>();
    if (v > std::numeric_limits<M>::max()) throw ConfigError(key + ": value out of range");
    return static_cast<M>(v);
  } else if constexpr (std::is_floating_point_v<M>) {
    if (!j.is_number()) throw ConfigError(key + ": expected a number");
    return j.get<M>();
  } else {
    static_assert(std::is_same_v<M, std::string>);
    if (!j.is_string()) throw ConfigError(key + ": expected a string");
    return j.get<std::string>();
  }
}

template <typename S, typename M>
Field<S> field(const char* name, M S::*member) {
  return {name, [member](const S& s) { return Json(s.*member); },
          [member](S& s, const Json& j, const std::string& key) { s.*member = read_value<M>(j, key); }};
}

template <typename S>
Json write_fields(const S& s, const std::vector<Field<S>>& fields) {
  Json out = Json::object();
  for (const auto& f : fields) out[f.name] = f.get(s);
  return out;
}

template <typename S>
void read_fields(S& s, const Json& j, const std::string& where, const std::vector<Field<S>>& fields) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const Field<S>& f) { return key == f.name; });
    if (it == fields.end()) throw ConfigError(where + "." + key + ": unknown key");
    it->set(s, value, where + "." + key);
  }
}

const std::vector<Field<encoder::EncoderConfig>>& encoder_fields() {
  using C = encoder::EncoderConfig;
  static const std::vector<Field<C>> fields{
      field("num_layers", &C::num_layers),
      field("d_model", &C::d_model),
      field("ffn_dim", &C::ffn_dim),
      field("dropout", &C::dropout),
      {"activation", [](const C&) { return Json("gelu"); },
       [](C& c, const Json& j, const std::string& key) {
         if (read_value<std::string>(j, key) != "gelu") throw ConfigError(key + ": only \"gelu\" is supported");
         c.activation = encoder::Activation::kGelu;
       }},
      field("n_state", &C::n_state),
      field("expand", &C::expand),
      field("dconv", &C::dconv),
      field("n_mels", &C::n_mels),
      field("vocab_size", &C::vocab_size),
      field("subsample_factor", &C::subsample_factor),
      field("subsample_channels", &C::subsample_channels),
      field("conv_kernel", &C::conv_kernel),
      field("scan_chunk", &C::scan_chunk),
  };
  return fields;
}

const std::vector<Field<train::TrainConfig>>& train_fields() {
  using C = train::TrainConfig;
  static const std::vector<Field<C>> fields{
      field("lr_peak", &C::lr_peak),
      field("warmup_steps", &C::warmup_steps),
      field("max_steps", &C::max_steps),
      field("grad_clip", &C::grad_clip),
      field("seed", &C::seed),
      field("max_batch_frames", &C::max_batch_frames),
      field("eval_every", &C::eval_every),
      {"precision", [](const C& c) { return Json(train::to_string(c.precision)); },
       [](C& c, const Json& j, const std::string& key) {
         try {
           c.precision = train::parse_precision(read_value<std::string>(j, key));
         } catch (const ConfigError& e) {
           throw ConfigError(key + ": " + e.what());
         }
       }},
      field("adam_beta1", &C::adam_beta1),
      field("adam_beta2", &C::adam_beta2),
      field("adam_eps", &C::adam_eps),
  };
  return fields;
}

const std::vector<Field<frontend::FeatureConfig>>& feature_fields() {
  using C = frontend::FeatureConfig;
  static const std::vector<Field<C>> fields{
      field("expected_rate", &C::expected_rate),
      field("frame_length_s", &C::frame_length_s),
      field("frame_shift_s", &C::frame_shift_s),
      field("n_fft", &C::n_fft),
      field("n_mels", &C::n_mels),
      field("f_min", &C::f_min),
      field("f_max", &C::f_max),
      field("log_floor", &C::log_floor),
  };
  return fields;
}

const std::vector<Field<tokenizer::NormalizerConfig>>& normalizer_fields() {
  using C = tokenizer::NormalizerConfig;
  static const std::vector<Field<C>> fields{
      field("lowercase", &C::lowercase),
      field("strip_punctuation", &C::strip_punctuation),
  };
  return fields;
}

}  // namespace

Json to_json(const encoder::EncoderConfig& cfg) { return write_fields(cfg, encoder_fields()); }
Json to_json(const train::TrainConfig& cfg) { return write_fields(cfg, train_fields()); }
Json to_json(const frontend::FeatureConfig& cfg) { return write_fields(cfg, feature_fields()); }
Json to_json(const tokenizer::NormalizerConfig& cfg) { return write_fields(cfg, normalizer_fields()); }

void update(encoder::EncoderConfig& cfg, const Json& j, const std::string& where) {
  read_fields(cfg, j, where, encoder_fields());
}
void update(train::TrainConfig& cfg, const Json& j, const std::string& where) {
  read_fields(cfg, j, where, train_fields());
}
void update(frontend::FeatureConfig& cfg, const Json& j, const std::string& where) {
  read_fields(cfg, j, where, feature_fields());
}
void update(tokenizer::NormalizerConfig& cfg, const Json& j, const std::string& where) {
  read_fields(cfg, j, where, normalizer_fields());
}

}  // namespace detail

namespace {

using detail::Json;

Json to_json(const RunConfig& cfg) {
  Json out = Json::object();
  out["model"] = detail::to_json(cfg.model);
  out["train"] = detail::to_json(cfg.train);
  out["features"] = detail::to_json(cfg.features);
  out["normalizer"] = detail::to_json(cfg.normalizer);
  Json weights = Json::object();
  for (const auto& [lang, w] : cfg.language_weights) weights[lang] = w;
  out["language_weights"] = weights;
  return out;
}

RunConfig from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      detail::update(cfg.model, value, key);
    } else if (key == "train") {
      detail::update(cfg.train, value, key);
    } else if (key == "features") {
      detail::update(cfg.features, value, key);
    } else if (key == "normalizer") {
      detail::update(cfg.normalizer, value, key);
    } else if (key == "language_weights") {
      if (!value.is_object()) throw ConfigError("language_weights: expected an object");
      for (const auto& [lang, w] : value.items()) {
        if (!w.is_number() || w.get<double>() < 0.0) {
          throw ConfigError("language_weights." + lang + ": expected a non-negative number");
        }
        cfg.language_weights[lang] = w.get<double>();
      }
    } else {
      throw ConfigError(key + ": unknown config section");
    }
  }
  return cfg;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (model.n_mels != features.n_mels) {
    throw ConfigError("config: model.n_mels (" + std::to_string(model.n_mels) + ") differs from features.n_mels (" +
                      std::to_string(features.n_mels) + ")");
  }
  if (!(features.frame_shift_s > 0.0) || !(features.frame_length_s > 0.0) || features.expected_rate <= 0) {
    throw ConfigError("config: feature frame length, shift and rate must be positive");
  }
}

RunConfig parse_run_config(std::string_view json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string run_config_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq || dot == 0 || dot + 1 == eq) {
    throw ConfigError("override \"" + std::string(assignment) + "\" is not of the form section.key=value");
  }
  const std::string section(assignment.substr(0, dot));
  const std::string key(assignment.substr(dot + 1, eq - dot - 1));
  const std::string raw(assignment.substr(eq + 1));
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  Json j = to_json(cfg);
  if (!j.contains(section)) throw ConfigError(section + ": unknown config section");
  if (section != "language_weights" && !j[section].contains(key)) throw ConfigError(section + "." + key + ": unknown key");
  j[section][key] = value;
  cfg = from_json(j);
}

}  // namespace mlma::config
