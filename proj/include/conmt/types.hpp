#pragma once

#include <cstdint>
#include <vector>

namespace conmt {

using TokenId = std::uint32_t;
using Sentence = std::vector<TokenId>;

inline constexpr std::size_t kDefaultDim = 128;

}  // namespace conmt
