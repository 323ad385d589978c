#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmalign/nn/matrix.hpp"

namespace mmalign::eval {

struct RetrievalReport {
  std::string direction;  // "imu->vision" or "vision->imu"
  double top1 = 0.0;      // percentage
  double top5 = 0.0;
  int batch_size = 0;
  std::map<int, double> topk;  // every requested k
};

/// In-batch retrieval: row i of both matrices is a positive pair. Candidates
/// rank by similarity (dot product of the given rows, cosine when inputs are
/// normalized), ties broken toward the lower index — the partner at rank
/// < k counts as a top-k hit.
std::pair<RetrievalReport, RetrievalReport> retrieval_accuracy(
    const nn::MatF& imu_emb, const nn::MatF& vis_emb, const std::vector<int>& k_list = {1, 5});

}  // namespace mmalign::eval
