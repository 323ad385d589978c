#pragma once

#include <cmath>
#include <vector>

#include "mmalign/common/error.hpp"
#include "mmalign/nn/graph.hpp"
#include "mmalign/nn/matrix.hpp"

namespace mmalign::align {

struct LossConfig {
  double tau = 0.07;
  double lambda_sup = 1.0;
  bool symmetric = true;

  void validate() const {
    MMA_REQUIRE(tau > 0, "loss.config", "tau must be > 0");
    MMA_REQUIRE(lambda_sup >= 0, "loss.config", "lambda_sup must be >= 0");
  }
};

/// values[i][j] = dot(imu[i], vis[j]). Inputs must be row-normalized — this
/// is what makes the dot product a cosine.
template <typename S>
nn::Mat<S> cosine_similarity_matrix(const nn::Mat<S>& imu_emb, const nn::Mat<S>& vis_emb) {
  MMA_REQUIRE(imu_emb.rows() == vis_emb.rows() && imu_emb.cols() == vis_emb.cols(),
              "align.shape", "cosine_similarity_matrix: embedding shapes differ");
  MMA_REQUIRE(imu_emb.rows() >= 2, "align.shape", "cosine_similarity_matrix: need N >= 2");
  for (Eigen::Index r = 0; r < imu_emb.rows(); ++r) {
    MMA_REQUIRE(std::abs(static_cast<double>(imu_emb.row(r).norm()) - 1.0) < 1e-4 &&
                    std::abs(static_cast<double>(vis_emb.row(r).norm()) - 1.0) < 1e-4,
                "align.not_normalized",
                "cosine_similarity_matrix: rows must be L2-normalized upstream");
  }
  return imu_emb * vis_emb.transpose();
}

/// Plain (tape-free) symmetric infoNCE; max-shifted log-sum-exp. Instantiate
/// with S = double for tight closed-form checks.
template <typename S>
S info_nce_value(const nn::Mat<S>& sim, S tau, bool symmetric) {
  MMA_REQUIRE(tau > static_cast<S>(0), "loss.config", "info_nce: tau must be > 0");
  MMA_REQUIRE(sim.rows() == sim.cols() && sim.rows() >= 1, "nn.shape",
              "info_nce: square matrix required");
  MMA_REQUIRE(nn::all_finite(sim), "loss.nonfinite", "info_nce: non-finite similarity entries");
  const auto N = sim.rows();
  auto direction = [N, tau](const nn::Mat<S>& A) {
    S acc = 0;
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto row = (A.row(i) / tau).eval();
      const S mx = row.maxCoeff();
      const S denom = (row.array() - mx).exp().sum();
      acc += std::log(denom) + mx - row(i);
    }
    return acc / static_cast<S>(N);
  };
  S loss = direction(sim);
  if (symmetric) loss = static_cast<S>(0.5) * (loss + direction(sim.transpose()));
  return loss;
}

/// Plain mean softmax cross entropy of row logits against labels.
template <typename S>
S cross_entropy_value(const nn::Mat<S>& logits, const std::vector<int>& labels) {
  const auto N = logits.rows();
  MMA_REQUIRE(static_cast<Eigen::Index>(labels.size()) == N, "nn.shape",
              "cross_entropy: labels size mismatch");
  S acc = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols())
      raise("loss.label_range", "cross_entropy: label out of range at index " +
                                    std::to_string(i) + ": " + std::to_string(labels[i]));
    const S mx = logits.row(i).maxCoeff();
    const S denom = (logits.row(i).array() - mx).exp().sum();
    acc += std::log(denom) + mx - logits(i, labels[i]);
  }
  return acc / static_cast<S>(N);
}

template <typename S>
S supervised_loss_value(const nn::Mat<S>& imu_emb, const nn::Mat<S>& head_w,
                        const nn::Mat<S>& head_b, const std::vector<int>& labels) {
  const nn::Mat<S> logits = (imu_emb * head_w).rowwise() + head_b.row(0);
  return cross_entropy_value(logits, labels);
}

struct LossTerms {
  double info_nce = 0.0;
  double supervised = 0.0;
  double total = 0.0;
};

/// total = info_nce + lambda_sup * supervised, terms reported separately.
/// With lambda_sup == 0 the supervised term is skipped so total equals
/// info_nce exactly, not merely within rounding.
template <typename S>
LossTerms total_loss_value(const LossConfig& cfg, const nn::Mat<S>& sim,
                           const nn::Mat<S>& imu_emb, const nn::Mat<S>& head_w,
                           const nn::Mat<S>& head_b, const std::vector<int>& labels) {
  cfg.validate();
  LossTerms t;
  t.info_nce = static_cast<double>(info_nce_value(sim, static_cast<S>(cfg.tau), cfg.symmetric));
  if (cfg.lambda_sup > 0) {
    t.supervised = static_cast<double>(supervised_loss_value(imu_emb, head_w, head_b, labels));
    t.total = t.info_nce + cfg.lambda_sup * t.supervised;
  } else {
    t.total = t.info_nce;
  }
  return t;
}

/// Graph builder for the batch objective. `imu_raw` is the pre-normalization
/// pooled IMU embedding (N x D, grad leaf); `vis_norm` the frozen normalized
/// vision embeddings. The supervised head reads the pre-normalization
/// embedding — a linear classifier wants the magnitude information that
/// normalization throws away.
template <typename S>
nn::Var total_loss_graph(nn::Graph<S>& g, const LossConfig& cfg, nn::Var imu_raw,
                         nn::Var vis_norm, nn::Var head_w, nn::Var head_b,
                         const std::vector<int>& labels, bool normalize, nn::Var* out_nce,
                         nn::Var* out_sup) {
  cfg.validate();
  nn::Var imu_norm = normalize ? g.l2_normalize_rows(imu_raw) : imu_raw;
  nn::Var sim = g.matmul_nt(imu_norm, vis_norm);
  nn::Var nce = g.info_nce(sim, static_cast<S>(cfg.tau), cfg.symmetric);
  if (out_nce) *out_nce = nce;
  if (cfg.lambda_sup == 0) {
    if (out_sup) *out_sup = nn::Var{};
    return nce;
  }
  nn::Var logits = g.add_rowvec(g.matmul(imu_raw, head_w), head_b);
  nn::Var sup = g.cross_entropy_logits(logits, labels);
  if (out_sup) *out_sup = sup;
  return g.add(nce, g.scale(sup, static_cast<S>(cfg.lambda_sup)));
}

}  // namespace mmalign::align
