#include "mmalign/data/batches.hpp"

#include <algorithm>
#include <numeric>

#include "mmalign/common/error.hpp"
#include "mmalign/common/rng.hpp"

namespace mmalign::data {

std::vector<std::vector<int>> make_batches(int n_samples, int batch_size, std::uint64_t seed,
                                           std::int64_t epoch, bool drop_last) {
  MMA_REQUIRE(n_samples >= 1, "data.empty", "make_batches: no samples");
  MMA_REQUIRE(batch_size >= 2, "data.batch_size",
              "make_batches: contrastive batches need batch_size >= 2");
  std::vector<int> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  auto rng = SeedStream(seed).engine("data-shuffle", static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<int>> batches;
  for (int at = 0; at < n_samples; at += batch_size) {
    const int take = std::min(batch_size, n_samples - at);
    if (take < batch_size && drop_last) break;
    batches.emplace_back(order.begin() + at, order.begin() + at + take);
  }
  return batches;
}

}  // namespace mmalign::data
