#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mlma/encoder.hpp"
#include "mlma/tensor.hpp"
#include "mlma/tokenizer.hpp"
#include "mlma/train.hpp"

namespace mlma::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;  // exact for both payload precisions

  bool operator==(const TensorEntry&) const = default;
};

// Layout: "MLMA", u32 version, u64 header length, JSON header, payload. The
// header holds both configs, counters, the vocabulary and one record per
// tensor (name, shape, kind, byte offset) plus the payload length and its
// SHA-256. Payload values are little-endian in the model's precision.
struct Checkpoint {
  encoder::EncoderConfig model;
  TrainConfig train;
  DType dtype = DType::kFloat32;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;
  std::string vocab;  // serialized vocabulary
  std::string vocab_digest;
  std::vector<TensorEntry> params;
  std::vector<TensorEntry> adam_m;  // empty for inference-only checkpoints
  std::vector<TensorEntry> adam_v;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
// Raises VersionError for another format version and IntegrityError for a
// truncated, padded or altered payload.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Vocabulary stored in the checkpoint, verified against its digest.
tokenizer::Vocab checkpoint_vocab(const Checkpoint& ckpt);

template <typename T>
std::vector<TensorEntry> to_entries(const NamedParams<T>& params);

// Model with the checkpoint's configuration and weights.
template <typename T>
encoder::Encoder<T> restore_model(const Checkpoint& ckpt);

}  // namespace mlma::train
