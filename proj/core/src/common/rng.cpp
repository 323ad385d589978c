#include "mmalign/common/rng.hpp"

#include "mmalign/common/digest.hpp"

namespace mmalign {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t SeedStream::derive(std::string_view name, std::uint64_t lane) const {
  std::uint64_t h = fnv1a64(name.data(), name.size());
  return splitmix64(splitmix64(root_ ^ h) + lane);
}

}  // namespace mmalign
