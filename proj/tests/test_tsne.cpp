#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <mmalign/eval/tsne.hpp>

#include "test_helpers.hpp"

using namespace mmalign;
using eval::TsneConfig;

namespace {

/// Three tight Gaussian blobs in 10-D, 20 points each, centers far apart.
nn::MatD three_clusters(std::uint64_t seed, std::vector<int>* labels_out = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  const int per = 20, d = 10;
  nn::MatD x(3 * per, d);
  if (labels_out) labels_out->resize(3 * per);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per; ++i) {
      const int row = c * per + i;
      if (labels_out) (*labels_out)[row] = c;
      for (int j = 0; j < d; ++j) x(row, j) = noise(rng) + (j == c ? 5.0 : 0.0);
    }
  return x;
}

/// Fraction of points whose 5 nearest map neighbors share their label.
double knn_purity(const nn::MatD& coords, const std::vector<int>& labels, int k) {
  const int n = static_cast<int>(coords.rows());
  double agree = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> dist;
    dist.reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) dist.push_back({(coords.row(i) - coords.row(j)).squaredNorm(), j});
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    int same = 0;
    for (int nb = 0; nb < k; ++nb)
      if (labels[dist[nb].second] == labels[i]) ++same;
    agree += static_cast<double>(same) / k;
  }
  return agree / n;
}

}  // namespace

TEST_CASE("tsne_affinities: symmetric, zero diagonal, sums to one, perplexity honored") {
  const nn::MatD x = three_clusters(1);
  const double perplexity = 15.0;
  const nn::MatD P = eval::tsne_affinities(x, perplexity);
  REQUIRE(P.rows() == 60);
  REQUIRE(P.cols() == 60);

  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(P.diagonal().cwiseAbs().maxCoeff() == 0.0);
  CHECK(P.minCoeff() >= 0.0);
  CHECK(std::abs(P.sum() - 1.0) < 1e-6);

  // The bandwidth search targets per-row entropy log(perplexity) in the
  // conditional distribution. P = (C + C^T) / 2N, so each row of P sums to
  // roughly 1/N when the search converged (exactly 1/N on symmetric data).
  for (int i = 0; i < 60; ++i)
    CHECK(P.row(i).sum() == doctest::Approx(1.0 / 60).epsilon(0.5));
}

TEST_CASE("tsne: separable clusters stay separable in the map") {
  std::vector<int> labels;
  const nn::MatD x = three_clusters(2, &labels);
  TsneConfig cfg;
  cfg.perplexity = 15.0;  // 60 points >= 3 * 15 + 1
  cfg.iterations = 400;
  cfg.seed = 0;
  const auto result = eval::tsne(x, cfg);
  REQUIRE(result.coords.rows() == 60);
  REQUIRE(result.coords.cols() == 2);
  CHECK(result.iterations == 400);
  CHECK(std::isfinite(result.kl));
  CHECK(result.kl >= 0.0);  // KL divergence is non-negative
  CHECK(knn_purity(result.coords, labels, 5) >= 0.9);
}

TEST_CASE("tsne: deterministic per seed, seed moves the map") {
  const nn::MatD x = three_clusters(3);
  TsneConfig cfg;
  cfg.perplexity = 15.0;
  cfg.iterations = 120;
  cfg.seed = 4;
  const auto a = eval::tsne(x, cfg);
  const auto b = eval::tsne(x, cfg);
  CHECK((a.coords - b.coords).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.kl == b.kl);

  cfg.seed = 5;
  const auto c = eval::tsne(x, cfg);
  CHECK((a.coords - c.coords).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("tsne: more optimization lowers the KL divergence") {
  const nn::MatD x = three_clusters(6);
  TsneConfig cfg;
  cfg.perplexity = 15.0;
  cfg.seed = 1;
  cfg.iterations = 60;
  const double kl_short = eval::tsne(x, cfg).kl;
  cfg.iterations = 600;
  const double kl_long = eval::tsne(x, cfg).kl;
  CHECK(kl_long < kl_short);
}

TEST_CASE("tsne: typed failures") {
  TsneConfig cfg;
  cfg.perplexity = 30.0;
  SUBCASE("too few points for the perplexity") {
    const nn::MatD x = nn::MatD::Random(20, 4);  // needs >= 91
    CHECK(testutil::error_code_of([&] { eval::tsne(x, cfg); }) == "tsne.too_few_points");
  }
  SUBCASE("non-finite input") {
    nn::MatD x = three_clusters(7);
    x(0, 0) = std::nan("");
    cfg.perplexity = 15.0;
    CHECK(testutil::error_code_of([&] { eval::tsne(x, cfg); }) == "tsne.nonfinite_input");
  }
  SUBCASE("config validation") {
    TsneConfig bad;
    bad.perplexity = 0.0;
    CHECK(testutil::error_code_of([&] { bad.validate(); }) == "tsne.config");
    bad = TsneConfig{};
    bad.exaggeration = 0.5;
    CHECK(testutil::error_code_of([&] { bad.validate(); }) == "tsne.config");
  }
}
