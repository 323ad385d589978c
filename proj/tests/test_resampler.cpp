#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include <mmalign/common/rng.hpp>
#include <mmalign/resampler/resampler.hpp>

#include "test_helpers.hpp"

using namespace mmalign;
using resampler::ResamplerConfig;

namespace {

ResamplerConfig desk_config() {
  ResamplerConfig cfg;
  cfg.d_model = 64;
  cfg.n_latents = 64;
  cfg.n_blocks = 2;
  cfg.n_heads = 8;
  cfg.ff_mult = 4;
  return cfg;
}

nn::ParamSet<float> desk_params(const ResamplerConfig& cfg, std::uint64_t seed = 0) {
  nn::ParamSet<float> params;
  auto rng = SeedStream(seed).engine("resampler-init");
  resampler::init_resampler(params, cfg, "resampler/", rng);
  return params;
}

nn::MatF tokens_like(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  nn::MatF m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = d(rng);
  return m;
}

}  // namespace

TEST_CASE("resampler: any input length lands on exactly n_latents rows") {
  const ResamplerConfig cfg = desk_config();
  const auto params = desk_params(cfg);
  for (const int L : {1, 16, 50, 256, 300}) {
    CAPTURE(L);
    const nn::MatF seq = tokens_like(L, cfg.d_model, 7 + L);
    const nn::MatF out = resampler::resample_tokens(params, cfg, "resampler/", seq);
    CHECK(out.rows() == cfg.n_latents);
    CHECK(out.cols() == cfg.d_model);
    CHECK(nn::all_finite(out));

    const nn::VecF pooled = resampler::pool(out, true);
    CHECK(pooled.size() == cfg.d_model);
    CHECK(pooled.norm() == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("resampler: every tensor ships frozen") {
  const ResamplerConfig cfg = desk_config();
  const auto params = desk_params(cfg);
  CHECK(params.size() > 0);
  for (const auto& [name, tensor] : params) {
    CAPTURE(name);
    CHECK(!tensor.trainable);
  }
  CHECK(params.size_scalars(true) == 0);
  CHECK(params.size_scalars(false) > 0);
}

TEST_CASE("resampler: deterministic init and forward") {
  const ResamplerConfig cfg = desk_config();
  const auto a = desk_params(cfg, 3);
  const auto b = desk_params(cfg, 3);
  CHECK(a.digest() == b.digest());
  const auto c = desk_params(cfg, 4);
  CHECK(a.digest() != c.digest());

  const nn::MatF seq = tokens_like(50, cfg.d_model, 1);
  const nn::MatF out1 = resampler::resample_tokens(a, cfg, "resampler/", seq);
  const nn::MatF out2 = resampler::resample_tokens(b, cfg, "resampler/", seq);
  CHECK((out1 - out2).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("resampler: pooled output is permutation-invariant in the input tokens") {
  // The latent queries attend over an unordered key set (no positional terms
  // on the input side), so shuffling input rows must not move the pooled
  // embedding beyond float-accumulation noise.
  const ResamplerConfig cfg = desk_config();
  const auto params = desk_params(cfg);
  const nn::MatF seq = tokens_like(40, cfg.d_model, 2);

  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(9);
  std::shuffle(perm.begin(), perm.end(), rng);
  nn::MatF shuffled(40, cfg.d_model);
  for (int r = 0; r < 40; ++r) shuffled.row(r) = seq.row(perm[r]);

  const nn::VecF p1 =
      resampler::pool(resampler::resample_tokens(params, cfg, "resampler/", seq), true);
  const nn::VecF p2 =
      resampler::pool(resampler::resample_tokens(params, cfg, "resampler/", shuffled), true);
  CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("resampler: output responds to the input") {
  // Guards against the failure mode where the pooled embedding is an
  // input-independent constant (latents passing through untouched).
  const ResamplerConfig cfg = desk_config();
  const auto params = desk_params(cfg);
  const nn::MatF a = tokens_like(50, cfg.d_model, 10);
  const nn::MatF b = tokens_like(50, cfg.d_model, 11);
  const nn::VecF pa = resampler::pool(resampler::resample_tokens(params, cfg, "resampler/", a), true);
  const nn::VecF pb = resampler::pool(resampler::resample_tokens(params, cfg, "resampler/", b), true);
  // Unrelated Gaussian inputs must not collapse onto one direction.
  CHECK(pa.dot(pb) < 0.9f);
}

TEST_CASE("pool: closed form and error cases") {
  nn::MatF two(2, 2);
  two << 1.0f, 0.0f, 0.0f, 1.0f;
  const nn::VecF mean_only = resampler::pool(two, false);
  CHECK(mean_only(0) == doctest::Approx(0.5f));
  CHECK(mean_only(1) == doctest::Approx(0.5f));
  const nn::VecF unit = resampler::pool(two, true);
  CHECK(unit(0) == doctest::Approx(0.70710678f).epsilon(1e-6));
  CHECK(unit(1) == doctest::Approx(0.70710678f).epsilon(1e-6));

  CHECK(testutil::error_code_of([] { resampler::pool(nn::MatF(0, 4), true); }) ==
        "resampler.empty");
  CHECK(testutil::error_code_of([] { resampler::pool(nn::MatF::Zero(3, 4), true); }) ==
        "nn.zero_norm");
  // Zero matrix without normalization is fine.
  const nn::VecF z = resampler::pool(nn::MatF::Zero(3, 4), false);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("resampler: config validation") {
  ResamplerConfig bad = desk_config();
  bad.d_model = 30;
  bad.n_heads = 8;  // 30 % 8 != 0
  CHECK(testutil::error_code_of([&] { bad.validate(); }) == "resampler.config");
  bad = desk_config();
  bad.n_latents = 0;
  CHECK(testutil::error_code_of([&] { bad.validate(); }) == "resampler.config");
}
