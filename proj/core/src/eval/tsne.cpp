#include "mmalign/eval/tsne.hpp"

#include <cmath>
#include <random>

#include "mmalign/common/rng.hpp"

namespace mmalign::eval {

namespace {

constexpr double kPFloor = 1e-12;  // keeps log(P/Q) finite for far-apart pairs

// Pairwise squared Euclidean distances, computed stably via the Gram trick
// with a clamp at zero (cancellation can produce tiny negatives).
nn::MatD squared_distances(const nn::MatD& x) {
  const Eigen::Index n = x.rows();
  const nn::VecD sq = x.rowwise().squaredNorm();
  nn::MatD d = -2.0 * (x * x.transpose());
  d.colwise() += sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

// Shannon entropy (nats) and normalized probabilities of row i's conditional
// Gaussian at precision beta = 1 / (2 sigma^2).  The diagonal is excluded.
double row_entropy(const nn::MatD& d2, Eigen::Index i, double beta, nn::VecD& p_out) {
  const Eigen::Index n = d2.rows();
  double sum_p = 0.0;
  double sum_dp = 0.0;  // sum of d2 * p, for the entropy identity
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) {
      p_out(j) = 0.0;
      continue;
    }
    const double p = std::exp(-beta * d2(i, j));
    p_out(j) = p;
    sum_p += p;
    sum_dp += d2(i, j) * p;
  }
  if (sum_p <= 0.0) {
    // All neighbors are at effectively infinite distance for this beta.
    p_out.setZero();
    return 0.0;
  }
  // H = log(sum_p) + beta * E[d2]  (entropy of the Boltzmann distribution)
  const double h = std::log(sum_p) + beta * sum_dp / sum_p;
  p_out /= sum_p;
  return h;
}

}  // namespace

nn::MatD tsne_affinities(const nn::MatD& x, double perplexity) {
  MMA_REQUIRE(perplexity > 0.0, "tsne.config", "perplexity must be positive");
  const Eigen::Index n = x.rows();
  if (static_cast<double>(n) < 3.0 * perplexity + 1.0)
    raise("tsne.too_few_points", "t-SNE needs at least 3*perplexity+1 points",
          std::to_string(n) + " points at perplexity " + std::to_string(perplexity));
  MMA_REQUIRE(nn::all_finite(x), "tsne.nonfinite_input", "t-SNE input contains NaN/Inf");

  const nn::MatD d2 = squared_distances(x);
  const double target_h = std::log(perplexity);
  constexpr double kTol = 1e-4;
  constexpr int kMaxBisect = 50;

  nn::MatD cond = nn::MatD::Zero(n, n);
  nn::VecD row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double h = row_entropy(d2, i, beta, row);
    for (int it = 0; it < kMaxBisect && std::abs(h - target_h) > kTol; ++it) {
      if (h > target_h) {
        lo = beta;  // too flat: sharpen
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
      } else {
        hi = beta;  // too peaked: widen
        beta = (lo == 0.0) ? beta / 2.0 : 0.5 * (lo + hi);
      }
      h = row_entropy(d2, i, beta, row);
    }
    cond.row(i) = row.transpose();
  }

  // Joint distribution: symmetrize and normalize so the whole matrix sums
  // to 1, then floor to keep later logs finite.  The diagonal stays zero.
  nn::MatD p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j && p(i, j) < kPFloor) p(i, j) = kPFloor;
  return p;
}

TsneResult tsne(const nn::MatD& x, const TsneConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = x.rows();
  nn::MatD p = tsne_affinities(x, cfg.perplexity);

  // Map initialization: small isotropic Gaussian, seeded from its own stream
  // so adding unrelated randomness elsewhere cannot silently move the plot.
  SeedStream stream(cfg.seed);
  auto eng = stream.engine("tsne");
  std::normal_distribution<double> init(0.0, 1e-4);
  nn::MatD y(n, cfg.out_dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < cfg.out_dim; ++j) y(i, j) = init(eng);

  nn::MatD vel = nn::MatD::Zero(n, cfg.out_dim);
  nn::MatD gains = nn::MatD::Ones(n, cfg.out_dim);
  nn::MatD grad(n, cfg.out_dim);
  nn::MatD num(n, n);

  const int exag_iters = std::min(cfg.exaggeration_iters, cfg.iterations);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exag = iter < exag_iters ? cfg.exaggeration : 1.0;
    const double momentum = iter < exag_iters ? cfg.momentum_initial : cfg.momentum_final;

    // Student-t kernel numerators: 1 / (1 + |y_i - y_j|^2), zero diagonal.
    const nn::MatD yd2 = squared_distances(y);
    num = (1.0 + yd2.array()).inverse().matrix();
    num.diagonal().setZero();
    const double z = num.sum();

    // dC/dy_i = 4 * sum_j (exag*P_ij - Q_ij) * num_ij * (y_i - y_j).
    // Written matrix-style: with W = (exag*P - Q) .* num and L = diag(W 1) - W,
    // the gradient is 4 * L * y.
    nn::MatD w = (exag * p.array() - num.array() / z).matrix().cwiseProduct(num);
    const nn::VecD row_sums = w.rowwise().sum();
    grad = 4.0 * (row_sums.asDiagonal() * y - w * y);

    // Per-coordinate gains: grow when the gradient keeps direction with the
    // velocity, shrink when it flips (Jacobs' delta-bar-delta heuristic).
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < cfg.out_dim; ++j) {
        const bool same_sign = (grad(i, j) > 0.0) == (vel(i, j) > 0.0);
        gains(i, j) = same_sign ? std::max(gains(i, j) * 0.8, 0.01) : gains(i, j) + 0.2;
      }
    }
    vel = momentum * vel - cfg.learning_rate * gains.cwiseProduct(grad);
    y += vel;
    y.rowwise() -= y.colwise().mean();  // keep the map centered
  }

  // Final objective on the plain (un-exaggerated) P.
  const nn::MatD yd2 = squared_distances(y);
  num = (1.0 + yd2.array()).inverse().matrix();
  num.diagonal().setZero();
  const double z = num.sum();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double q = std::max(num(i, j) / z, kPFloor);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }

  TsneResult res;
  res.coords = std::move(y);
  res.kl = kl;
  res.iterations = cfg.iterations;
  return res;
}

TsneResult tsne(const nn::MatF& x, const TsneConfig& cfg) {
  return tsne(nn::MatD(x.cast<double>()), cfg);
}

}  // namespace mmalign::eval
