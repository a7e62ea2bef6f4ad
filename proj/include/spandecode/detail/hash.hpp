#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace spandecode::detail {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

// FNV-1a, used for stable fingerprints that must not vary across platforms
// (std::hash gives no such guarantee).
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_u32(std::span<const std::uint32_t> values,
                               std::uint64_t h = kFnvOffset) {
  for (std::uint32_t v : values) {
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= kFnvPrime;
    }
  }
  return h;
}

}  // namespace spandecode::detail
