#include "mlma/checkpoint.hpp"

#include <cstring>

#include "config_json.hpp"
#include "mlma/error.hpp"
#include "mlma/io_util.hpp"

namespace mlma::train {

using mlma::to_string;

namespace {

using config::detail::Json;

constexpr char kMagic[4] = {'M', 'L', 'M', 'A'};
constexpr std::size_t kPreambleBytes = 4 + 4 + 8;

std::size_t element_bytes(DType dtype) { return dtype == DType::kFloat32 ? 4 : 8; }

DType parse_dtype(const std::string& text) {
  if (text == "float32") return DType::kFloat32;
  if (text == "float64") return DType::kFloat64;
  throw IntegrityError("checkpoint: unknown dtype \"" + text + "\"");
}

void append_values(std::vector<std::uint8_t>& out, const std::vector<double>& values, DType dtype) {
  for (double v : values) {
    if (dtype == DType::kFloat32) {
      io::put<float>(out, static_cast<float>(v));
    } else {
      io::put<double>(out, v);
    }
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> payload;
  Json tensors = Json::array();
  const auto add_group = [&](const std::vector<TensorEntry>& entries, const char* kind) {
    for (const auto& e : entries) {
      if (e.values.size() != numel(e.shape)) {
        throw DimensionError("checkpoint: tensor " + e.name + " has " + std::to_string(e.values.size()) +
                             " values for shape " + to_string(e.shape));
      }
      Json t = Json::object();
      t["name"] = e.name;
      t["kind"] = kind;
      t["shape"] = e.shape;
      t["offset"] = payload.size();
      tensors.push_back(t);
      append_values(payload, e.values, ckpt.dtype);
    }
  };
  add_group(ckpt.params, "param");
  add_group(ckpt.adam_m, "adam_m");
  add_group(ckpt.adam_v, "adam_v");

  Json header = Json::object();
  header["dtype"] = to_string(ckpt.dtype);
  header["model"] = config::detail::to_json(ckpt.model);
  header["train"] = config::detail::to_json(ckpt.train);
  header["step"] = ckpt.step;
  header["epoch"] = ckpt.epoch;
  header["batch_in_epoch"] = ckpt.batch_in_epoch;
  header["vocab"] = ckpt.vocab;
  header["vocab_digest"] = ckpt.vocab_digest;
  header["tensors"] = tensors;
  header["payload_bytes"] = payload.size();
  header["payload_sha256"] = io::sha256_hex(payload);
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  io::put<std::uint32_t>(out, kCheckpointVersion);
  io::put<std::uint64_t>(out, header_text.size());
  out.insert(out.end(), header_text.begin(), header_text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleBytes) throw IntegrityError("checkpoint: file shorter than its fixed preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("checkpoint: missing MLMA magic at offset 0");
  const auto version = io::get<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: format version " + std::to_string(version) + " cannot be read by this build (reads version " +
                       std::to_string(kCheckpointVersion) + "); convert it with the release that wrote it");
  }
  const auto header_len = io::get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kPreambleBytes) throw IntegrityError("checkpoint: header runs past end of file");
  const std::string_view header_text(reinterpret_cast<const char*>(bytes.data() + kPreambleBytes), header_len);
  const auto payload = bytes.subspan(kPreambleBytes + header_len);

  Checkpoint ckpt;
  try {
    const Json header = Json::parse(header_text);
    ckpt.dtype = parse_dtype(header.at("dtype").get<std::string>());
    config::detail::update(ckpt.model, header.at("model"), "model");
    config::detail::update(ckpt.train, header.at("train"), "train");
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.epoch = header.at("epoch").get<std::uint64_t>();
    ckpt.batch_in_epoch = header.at("batch_in_epoch").get<std::uint64_t>();
    ckpt.vocab = header.at("vocab").get<std::string>();
    ckpt.vocab_digest = header.at("vocab_digest").get<std::string>();

    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (payload.size() != payload_bytes) {
      throw IntegrityError("checkpoint: payload holds " + std::to_string(payload.size()) + " bytes, header declares " +
                           std::to_string(payload_bytes));
    }
    if (io::sha256_hex(payload) != header.at("payload_sha256").get<std::string>()) {
      throw IntegrityError("checkpoint: payload checksum mismatch");
    }

    const std::size_t elem = element_bytes(ckpt.dtype);
    std::size_t expected_offset = 0;
    for (const auto& t : header.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = numel(e.shape);
      if (offset != expected_offset || offset + count * elem > payload.size()) {
        throw IntegrityError("checkpoint: tensor " + e.name + " has an inconsistent payload offset");
      }
      e.values.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t at = offset + i * elem;
        e.values.push_back(ckpt.dtype == DType::kFloat32 ? static_cast<double>(io::get<float>(payload, at))
                                                         : io::get<double>(payload, at));
      }
      expected_offset = offset + count * elem;
      const auto kind = t.at("kind").get<std::string>();
      if (kind == "param") {
        ckpt.params.push_back(std::move(e));
      } else if (kind == "adam_m") {
        ckpt.adam_m.push_back(std::move(e));
      } else if (kind == "adam_v") {
        ckpt.adam_v.push_back(std::move(e));
      } else {
        throw IntegrityError("checkpoint: unknown tensor kind \"" + kind + "\"");
      }
    }
    if (expected_offset != payload.size()) throw IntegrityError("checkpoint: payload has unreferenced bytes");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_checkpoint(bytes);
  } catch (const IntegrityError& e) {
    throw IntegrityError(path.string() + ": " + e.what());
  } catch (const VersionError& e) {
    throw VersionError(path.string() + ": " + e.what());
  }
}

tokenizer::Vocab checkpoint_vocab(const Checkpoint& ckpt) {
  auto vocab = tokenizer::Vocab::parse(ckpt.vocab);
  if (vocab.digest() != ckpt.vocab_digest) throw IntegrityError("checkpoint: vocabulary does not match its digest");
  return vocab;
}

}  // namespace mlma::train
