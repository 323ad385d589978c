#pragma once

#include <cstdint>
#include <vector>

namespace mmalign::data {

/// Shuffled index batches for one epoch. The shuffle is a pure function of
/// (seed, epoch); batch_size must be >= 2 (a contrastive batch needs at
/// least one negative). With drop_last the trailing partial batch is
/// discarded.
std::vector<std::vector<int>> make_batches(int n_samples, int batch_size, std::uint64_t seed,
                                           std::int64_t epoch, bool drop_last);

}  // namespace mmalign::data
