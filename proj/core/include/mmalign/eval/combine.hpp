#pragma once

#include "mmalign/common/error.hpp"
#include "mmalign/nn/matrix.hpp"

namespace mmalign::eval {

/// Convex weights over the two modalities.
struct CombinationWeights {
  double w_vision = 0.8;
  double w_imu = 0.2;

  void validate() const {
    MMA_REQUIRE(w_vision >= 0 && w_imu >= 0, "combine.weights",
                "combination weights must be >= 0");
    MMA_REQUIRE(std::abs(w_vision + w_imu - 1.0) < 1e-9, "combine.weights",
                "combination weights must sum to 1");
  }
};

/// v = w_vision * e_vis + w_imu * e_imu, optionally renormalized. Degenerate
/// weights (1, 0) / (0, 1) return the respective input bitwise — already
/// unit vectors upstream, so renormalizing would only add rounding noise.
nn::VecF combine_embeddings(const nn::VecF& e_vis, const nn::VecF& e_imu,
                            const CombinationWeights& w, bool renormalize);

/// Row-wise batch variant.
nn::MatF combine_embeddings(const nn::MatF& e_vis, const nn::MatF& e_imu,
                            const CombinationWeights& w, bool renormalize);

/// Latent-level combination (64 x D slot-wise weighted sum). Pooling is
/// linear, so pool(combine_latents(a, b)) equals combining the pooled
/// embeddings with the same weights.
nn::MatF combine_latents(const nn::MatF& lat_vis, const nn::MatF& lat_imu,
                         const CombinationWeights& w);

}  // namespace mmalign::eval
