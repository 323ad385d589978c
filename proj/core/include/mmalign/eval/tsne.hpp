#pragma once

// Exact (non-approximated) t-SNE for qualitative embedding inspection.
//
// The implementation follows the classic recipe: per-point conditional
// Gaussian affinities whose bandwidths are binary-searched so each row's
// perplexity matches the target, symmetrized into a joint distribution P,
// Student-t similarities Q in the low-dimensional map, and gradient descent
// with momentum, per-coordinate gains and early exaggeration.  Everything is
// computed in double precision and is deterministic for a fixed seed.
//
// This is O(N^2) time and memory, which is exactly right for the dataset
// sizes we visualize (hundreds to a few thousand points).

#include <cstdint>

#include "mmalign/common/error.hpp"
#include "mmalign/nn/matrix.hpp"

namespace mmalign::eval {

struct TsneConfig {
  double perplexity = 30.0;     // effective number of neighbors per point
  int iterations = 1000;        // gradient descent steps
  double learning_rate = 200.0; // eta
  int out_dim = 2;              // map dimensionality
  std::uint64_t seed = 0;       // drives the map initialization

  // Early exaggeration: P is multiplied by this factor for the first
  // `exaggeration_iters` steps to let clusters form before fine-tuning.
  double exaggeration = 12.0;
  int exaggeration_iters = 250;

  // Momentum schedule: `momentum_initial` until `exaggeration_iters`,
  // `momentum_final` afterwards.
  double momentum_initial = 0.5;
  double momentum_final = 0.8;

  void validate() const {
    MMA_REQUIRE(perplexity > 0.0, "tsne.config", "perplexity must be positive");
    MMA_REQUIRE(iterations >= 1, "tsne.config", "iterations must be >= 1");
    MMA_REQUIRE(learning_rate > 0.0, "tsne.config", "learning_rate must be positive");
    MMA_REQUIRE(out_dim >= 1, "tsne.config", "out_dim must be >= 1");
    MMA_REQUIRE(exaggeration >= 1.0, "tsne.config", "exaggeration must be >= 1");
  }
};

struct TsneResult {
  nn::MatD coords;     // N x out_dim map coordinates
  double kl = 0.0;     // final KL(P || Q) on the un-exaggerated P
  int iterations = 0;  // steps actually run
};

// Computes the symmetrized joint affinity matrix P for `x` (N x D, one point
// per row).  Each row's Gaussian bandwidth is binary-searched until the
// Shannon entropy matches log(perplexity) within 1e-4 (at most 50 bisection
// steps).  The result is symmetric, has a zero diagonal and sums to 1.
// Exposed separately so tests can pin its invariants directly.
nn::MatD tsne_affinities(const nn::MatD& x, double perplexity);

// Runs exact t-SNE on `x` (N x D).  Requires N >= 3 * perplexity + 1 so the
// bandwidth search is well-posed.  Deterministic for fixed config.
TsneResult tsne(const nn::MatD& x, const TsneConfig& cfg);

// Convenience overload for float embeddings as produced by the model.
TsneResult tsne(const nn::MatF& x, const TsneConfig& cfg);

}  // namespace mmalign::eval
