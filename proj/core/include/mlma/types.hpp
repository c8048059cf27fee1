#pragma once

#include <cstdint>
#include <vector>

namespace mlma {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Reserved vocabulary ids.
inline constexpr TokenId kBlankId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kFirstSymbolId = 3;

}  // namespace mlma
