#pragma once

#include <cstdint>
#include <random>

namespace mlma {

// Independent generator for (master seed, stream, index), e.g. the data-order
// stream for epoch 3 or the dropout stream for step 1200.
enum class RngStream : std::uint32_t { kInit = 1, kDataOrder = 2, kDropout = 3, kSynth = 4 };

inline std::mt19937_64 derive_rng(std::uint64_t seed, RngStream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace mlma
