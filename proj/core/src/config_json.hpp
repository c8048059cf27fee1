#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "mlma/encoder.hpp"
#include "mlma/frontend.hpp"
#include "mlma/tokenizer.hpp"
#include "mlma/train.hpp"

namespace mlma::config::detail {

using Json = nlohmann::ordered_json;

Json to_json(const encoder::EncoderConfig& cfg);
Json to_json(const train::TrainConfig& cfg);
Json to_json(const frontend::FeatureConfig& cfg);
Json to_json(const tokenizer::NormalizerConfig& cfg);

// Strict readers: keys absent from `j` keep their current value, unknown keys
// and wrongly typed values raise ConfigError naming `where`.key.
void update(encoder::EncoderConfig& cfg, const Json& j, const std::string& where);
void update(train::TrainConfig& cfg, const Json& j, const std::string& where);
void update(frontend::FeatureConfig& cfg, const Json& j, const std::string& where);
void update(tokenizer::NormalizerConfig& cfg, const Json& j, const std::string& where);

}  // namespace mlma::config::detail
