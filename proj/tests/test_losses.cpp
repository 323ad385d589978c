#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <mmalign/align/losses.hpp>

#include "test_helpers.hpp"

using namespace mmalign;
using align::LossConfig;

namespace {

nn::MatD random_unit_rows(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  nn::MatD m(n, d);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) m(r, c) = dist(rng);
    m.row(r) /= m.row(r).norm();
  }
  return m;
}

/// Textbook infoNCE, one direction, no numerical tricks. Double precision
/// over well-scaled inputs, so exactness against the production version is a
/// statement about the max-shift being a no-op mathematically.
double naive_nce(const nn::MatD& sim, double tau) {
  const int n = static_cast<int>(sim.rows());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(sim(i, j) / tau);
    acc += -std::log(std::exp(sim(i, i) / tau) / denom);
  }
  return acc / n;
}

}  // namespace

TEST_CASE("info_nce: single pair carries no signal, loss is exactly zero") {
  nn::MatD sim(1, 1);
  sim << 0.73;
  CHECK(align::info_nce_value(sim, 0.07, true) == 0.0);
  CHECK(align::info_nce_value(sim, 0.07, false) == 0.0);
}

TEST_CASE("info_nce: constant similarity gives ln N, the chance plateau") {
  for (const int n : {2, 4, 35}) {
    CAPTURE(n);
    const nn::MatD sim = nn::MatD::Constant(n, n, 0.42);
    for (const double tau : {0.07, 1.0})
      CHECK(align::info_nce_value(sim, tau, true) ==
            doctest::Approx(std::log(n)).epsilon(1e-9));
  }
}

TEST_CASE("info_nce: 2x2 identity at tau 1 hits the closed form ln(1 + e) - 1") {
  // Row loss: -log(e^1 / (e^1 + e^0)) = log(1 + e) - 1; both rows and both
  // directions agree by symmetry.
  const nn::MatD sim = nn::MatD::Identity(2, 2);
  const double expected = std::log(1.0 + std::exp(1.0)) - 1.0;  // 0.31326168...
  CHECK(align::info_nce_value(sim, 1.0, true) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(align::info_nce_value(sim, 1.0, false) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(align::info_nce_value(sim, 1.0, true) == doctest::Approx(0.313262).epsilon(1e-6));
}

TEST_CASE("info_nce: matches a naive double-precision reimplementation") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (const int n : {2, 5, 16}) {
    nn::MatD sim(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) sim(r, c) = dist(rng);
    // Similarities are O(1); /tau keeps exponents small enough that the naive
    // form does not overflow and the comparison is near machine precision.
    for (const double tau : {0.07, 0.5}) {
      CAPTURE(n);
      CAPTURE(tau);
      const double oneway = align::info_nce_value(sim, tau, false);
      CHECK(oneway == doctest::Approx(naive_nce(sim, tau)).epsilon(1e-12));
      const double sym = align::info_nce_value(sim, tau, true);
      const double both = 0.5 * (naive_nce(sim, tau) + naive_nce(sim.transpose(), tau));
      CHECK(sym == doctest::Approx(both).epsilon(1e-12));
    }
  }
}

TEST_CASE("info_nce: max shift keeps extreme logits finite") {
  nn::MatD sim(2, 2);
  sim << 1.0, -1.0, -1.0, 1.0;
  // tau 1e-3 drives raw exponents to e^1000; the shifted form must stay finite
  // and near zero (the positives dominate utterly).
  const double loss = align::info_nce_value(sim, 1e-3, true);
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0);
  CHECK(loss < 1e-6);
}

TEST_CASE("info_nce: perfect alignment beats misalignment") {
  nn::MatD aligned = nn::MatD::Identity(4, 4);
  nn::MatD misaligned = nn::MatD::Zero(4, 4);
  // Positives placed off-diagonal: each row's true partner scores 0 while an
  // impostor scores 1.
  for (int i = 0; i < 4; ++i) misaligned(i, (i + 1) % 4) = 1.0;
  const double good = align::info_nce_value(aligned, 0.07, true);
  const double bad = align::info_nce_value(misaligned, 0.07, true);
  CHECK(good < std::log(4.0));
  CHECK(bad > std::log(4.0));
}

TEST_CASE("cosine_similarity_matrix: oracle by double loop, strict preconditions") {
  const nn::MatD imu = random_unit_rows(6, 8, 1);
  const nn::MatD vis = random_unit_rows(6, 8, 2);
  const nn::MatD sim = align::cosine_similarity_matrix(imu, vis);
  REQUIRE(sim.rows() == 6);
  REQUIRE(sim.cols() == 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      double dot = 0.0;
      for (int c = 0; c < 8; ++c) dot += imu(i, c) * vis(j, c);
      CHECK(sim(i, j) == doctest::Approx(dot).epsilon(1e-12));
      CHECK(std::abs(sim(i, j)) <= 1.0 + 1e-9);
    }

  SUBCASE("rows must be unit length") {
    nn::MatD bad = imu;
    bad.row(2) *= 1.5;
    CHECK(testutil::error_code_of([&] { align::cosine_similarity_matrix(bad, vis); }) ==
          "align.not_normalized");
  }
  SUBCASE("at least two pairs") {
    const nn::MatD one = random_unit_rows(1, 8, 3);
    CHECK(testutil::error_code_of([&] { align::cosine_similarity_matrix(one, one); }) ==
          "align.shape");
  }
  SUBCASE("matching shapes") {
    const nn::MatD narrow = random_unit_rows(6, 4, 4);
    CHECK(testutil::error_code_of([&] { align::cosine_similarity_matrix(imu, narrow); }) ==
          "align.shape");
  }
}

TEST_CASE("cross_entropy: closed form and label guard") {
  // logits [1, 0], label 0: -log(e / (e + 1)) = log(1 + e) - 1.
  nn::MatD logits(1, 2);
  logits << 1.0, 0.0;
  const double expected = std::log(1.0 + std::exp(1.0)) - 1.0;
  CHECK(align::cross_entropy_value(logits, {0}) == doctest::Approx(expected).epsilon(1e-12));
  // Uniform logits: ln(n_classes).
  const nn::MatD flat = nn::MatD::Zero(3, 5);
  CHECK(align::cross_entropy_value(flat, {0, 2, 4}) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(testutil::error_code_of([&] { align::cross_entropy_value(logits, {2}); }) ==
        "loss.label_range");
  CHECK(testutil::error_code_of([&] { align::cross_entropy_value(logits, {0, 1}); }) ==
        "nn.shape");
}

TEST_CASE("total_loss_value: lambda 0 equals info_nce bitwise, lambda scales linearly") {
  const int n = 4, d = 8, classes = 3;
  const nn::MatD imu = random_unit_rows(n, d, 7);
  const nn::MatD vis = random_unit_rows(n, d, 8);
  const nn::MatD sim = align::cosine_similarity_matrix(imu, vis);
  const nn::MatD head_w = random_unit_rows(d, classes, 9);
  const nn::MatD head_b = nn::MatD::Zero(1, classes);
  const std::vector<int> labels = {0, 1, 2, 0};

  LossConfig cfg;
  cfg.tau = 0.07;
  cfg.lambda_sup = 0.0;
  const auto t0 = align::total_loss_value(cfg, sim, imu, head_w, head_b, labels);
  CHECK(t0.total == t0.info_nce);  // exact, not approximate
  CHECK(t0.supervised == 0.0);
  CHECK(t0.info_nce == align::info_nce_value(sim, 0.07, true));

  cfg.lambda_sup = 1.0;
  const auto t1 = align::total_loss_value(cfg, sim, imu, head_w, head_b, labels);
  const double sup = align::supervised_loss_value(imu, head_w, head_b, labels);
  CHECK(t1.supervised == doctest::Approx(sup).epsilon(1e-12));
  CHECK(t1.total == doctest::Approx(t1.info_nce + sup).epsilon(1e-12));

  cfg.lambda_sup = 2.5;
  const auto t2 = align::total_loss_value(cfg, sim, imu, head_w, head_b, labels);
  CHECK(t2.total == doctest::Approx(t2.info_nce + 2.5 * sup).epsilon(1e-12));
  CHECK(t2.info_nce == doctest::Approx(t1.info_nce).epsilon(1e-15));
}

TEST_CASE("total_loss_graph: value agrees with the tape-free computation") {
  const int n = 4, d = 8, classes = 3;
  // Float path: the graph runs in training precision.
  const nn::MatF imu_raw = random_unit_rows(n, d, 21).cast<float>() * 1.7f;  // unnormalized
  const nn::MatF vis = random_unit_rows(n, d, 22).cast<float>();
  const nn::MatF head_w = random_unit_rows(d, classes, 23).cast<float>();
  const nn::MatF head_b = nn::MatF::Zero(1, classes);
  const std::vector<int> labels = {2, 0, 1, 1};

  LossConfig cfg;
  cfg.tau = 0.07;
  cfg.lambda_sup = 0.7;

  nn::Graph<float> g(true);
  nn::Var imu_v = g.leaf(imu_raw);
  nn::Var vis_v = g.leaf(vis);
  nn::Var w_v = g.leaf(head_w);
  nn::Var b_v = g.leaf(head_b);
  nn::Var nce_v, sup_v;
  const nn::Var total =
      align::total_loss_graph(g, cfg, imu_v, vis_v, w_v, b_v, labels, true, &nce_v, &sup_v);

  // Reference: normalize rows, cosine matrix, plain losses, all in double.
  nn::MatD imu_n = imu_raw.cast<double>();
  for (int r = 0; r < n; ++r) imu_n.row(r) /= imu_n.row(r).norm();
  const nn::MatD sim = imu_n * vis.cast<double>().transpose();
  const double nce = align::info_nce_value(sim, 0.07, true);
  const double sup = align::supervised_loss_value(imu_raw.cast<double>().eval(),
                                                  head_w.cast<double>().eval(),
                                                  head_b.cast<double>().eval(), labels);

  CHECK(static_cast<double>(g.value(total)(0, 0)) ==
        doctest::Approx(nce + 0.7 * sup).epsilon(1e-4));
  CHECK(static_cast<double>(g.value(nce_v)(0, 0)) == doctest::Approx(nce).epsilon(1e-4));
  CHECK(static_cast<double>(g.value(sup_v)(0, 0)) == doctest::Approx(sup).epsilon(1e-4));
}

TEST_CASE("loss config: validation") {
  LossConfig cfg;
  cfg.tau = 0.0;
  CHECK(testutil::error_code_of([&] { cfg.validate(); }) == "loss.config");
  cfg.tau = 0.07;
  cfg.lambda_sup = -1.0;
  CHECK(testutil::error_code_of([&] { cfg.validate(); }) == "loss.config");
}
