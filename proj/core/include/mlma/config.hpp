#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "mlma/encoder.hpp"
#include "mlma/frontend.hpp"
#include "mlma/tokenizer.hpp"
#include "mlma/train.hpp"

namespace mlma::config {

// Everything a run needs besides file paths. The JSON form has the sections
// "model", "train", "features", "normalizer" and "language_weights"; any
// section or key may be omitted to keep its default.
struct RunConfig {
  encoder::EncoderConfig model;
  train::TrainConfig train;
  frontend::FeatureConfig features;
  tokenizer::NormalizerConfig normalizer;
  std::map<std::string, double> language_weights;

  // Section validators plus cross-section consistency (mel bins).
  void validate() const;
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
// Pretty-printed JSON with every field spelled out.
std::string run_config_json(const RunConfig& cfg);

// Applies "section.key=value". The value is read as JSON when it parses as
// JSON and as a plain string otherwise, so train.precision=float64 works.
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace mlma::config
