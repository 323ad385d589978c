#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace mmalign {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// FNV-1a over raw bytes; chainable via `seed`.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = kFnvOffset);

std::string digest_hex(std::uint64_t digest);

}  // namespace mmalign
