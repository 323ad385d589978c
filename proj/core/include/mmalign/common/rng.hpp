#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mmalign {

/// Derives independent, reproducible RNG streams from one root seed.
/// Every randomized component pulls a named stream ("data-shuffle", "init",
/// "dropout", "tsne", ...) so any stage can be replayed in isolation.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t root_seed) : root_(root_seed) {}

  std::uint64_t root() const noexcept { return root_; }

  /// Stable 64-bit sub-seed for (name, lane). `lane` separates per-epoch or
  /// per-sample uses of the same stream.
  std::uint64_t derive(std::string_view name, std::uint64_t lane = 0) const;

  std::mt19937_64 engine(std::string_view name, std::uint64_t lane = 0) const {
    return std::mt19937_64(derive(name, lane));
  }

 private:
  std::uint64_t root_;
};

/// SplitMix64 step; used to decorrelate derived seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mmalign
