#include "mmalign/eval/retrieval.hpp"

#include <algorithm>

#include "mmalign/common/error.hpp"

namespace mmalign::eval {

namespace {

/// Rank of the true partner for each query row of `sim` (query i's partner
/// is column i). Rank = number of candidates strictly better, plus those
/// equal with a lower index.
RetrievalReport one_direction(const nn::MatF& sim, const std::vector<int>& k_list,
                              std::string direction) {
  const auto N = sim.rows();
  RetrievalReport rep;
  rep.direction = std::move(direction);
  rep.batch_size = static_cast<int>(N);
  for (int k : k_list) rep.topk[k] = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const float own = sim(i, i);
    int rank = 0;
    for (Eigen::Index j = 0; j < N; ++j) {
      if (j == i) continue;
      if (sim(i, j) > own || (sim(i, j) == own && j < i)) ++rank;
    }
    for (int k : k_list)
      if (rank < k) rep.topk[k] += 1.0;
  }
  for (int k : k_list) rep.topk[k] *= 100.0 / static_cast<double>(N);
  if (rep.topk.count(1)) rep.top1 = rep.topk.at(1);
  if (rep.topk.count(5)) rep.top5 = rep.topk.at(5);
  return rep;
}

}  // namespace

std::pair<RetrievalReport, RetrievalReport> retrieval_accuracy(const nn::MatF& imu_emb,
                                                               const nn::MatF& vis_emb,
                                                               const std::vector<int>& k_list) {
  MMA_REQUIRE(imu_emb.rows() == vis_emb.rows() && imu_emb.cols() == vis_emb.cols(),
              "retrieval.shape", "retrieval_accuracy: embedding shapes differ");
  MMA_REQUIRE(imu_emb.rows() >= 2, "retrieval.shape", "retrieval_accuracy: need N >= 2");
  MMA_REQUIRE(!k_list.empty(), "retrieval.config", "retrieval_accuracy: empty k list");
  for (int k : k_list)
    MMA_REQUIRE(k >= 1, "retrieval.config", "retrieval_accuracy: k must be >= 1");
  const nn::MatF sim = imu_emb * vis_emb.transpose();
  return {one_direction(sim, k_list, "imu->vision"),
          one_direction(nn::MatF(sim.transpose()), k_list, "vision->imu")};
}

}  // namespace mmalign::eval
