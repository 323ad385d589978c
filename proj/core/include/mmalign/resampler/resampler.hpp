#pragma once

#include <random>
#include <string>

#include "mmalign/common/error.hpp"
#include "mmalign/encoders/imu_encoder.hpp"
#include "mmalign/nn/graph.hpp"
#include "mmalign/nn/params.hpp"

namespace mmalign::resampler {

/// Perceiver resampler: a fixed set of latent queries cross-attends to the
/// input tokens (keys/values are the input concatenated with the current
/// latents), squeezing any-length sequences to exactly n_latents rows.
/// The stage ships frozen; gradients flow through it to the encoder.
struct ResamplerConfig {
  int d_model = 1024;
  int n_latents = 64;
  int n_blocks = 2;
  int n_heads = 8;
  int ff_mult = 4;

  void validate() const {
    MMA_REQUIRE(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "resampler.config",
                "d_model must be divisible by n_heads");
    MMA_REQUIRE(n_latents >= 1 && n_blocks >= 1 && ff_mult >= 1, "resampler.config",
                "n_latents, n_blocks, ff_mult must be >= 1");
  }
};

/// Registers all resampler tensors under `prefix` (e.g. "resampler/") with
/// trainable=false. Projections use orthogonal init so the frozen stage is
/// well-conditioned out of the box.
template <typename S>
void init_resampler(nn::ParamSet<S>& params, const ResamplerConfig& cfg,
                    const std::string& prefix, std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.d_model;
  constexpr bool kTrainable = false;  // every resampler tensor ships frozen
  // Latent queries start near zero so the residual stream is dominated by what
  // the cross-attention reads from the input rather than by the queries
  // themselves. The scale sits below the layer-norm epsilon floor (1e-5 on the
  // variance), which keeps the latents' own key/value rows from being
  // renormalized back to unit size; at larger scales the pooled output
  // collapses toward an input-independent constant and the normalized
  // embeddings bunch into a narrow cone.
  params.add(prefix + "latents", nn::init_normal<S>(cfg.n_latents, d, 1e-4, rng), kTrainable);
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string bp = prefix + "block" + std::to_string(b) + "/";
    params.add(bp + "ln_q/gamma", nn::Mat<S>::Ones(1, d), kTrainable);
    params.add(bp + "ln_q/beta", nn::Mat<S>::Zero(1, d), kTrainable);
    params.add(bp + "ln_kv/gamma", nn::Mat<S>::Ones(1, d), kTrainable);
    params.add(bp + "ln_kv/beta", nn::Mat<S>::Zero(1, d), kTrainable);
    for (const char* w : {"wq", "wk", "wv", "wo"})
      params.add(bp + "attn/" + w, nn::init_orthogonal<S>(d, d, rng), kTrainable);
    for (const char* bn : {"bq", "bk", "bv", "bo"})
      params.add(bp + "attn/" + bn, nn::Mat<S>::Zero(1, d), kTrainable);
    params.add(bp + "ln2/gamma", nn::Mat<S>::Ones(1, d), kTrainable);
    params.add(bp + "ln2/beta", nn::Mat<S>::Zero(1, d), kTrainable);
    params.add(bp + "ff/w1", nn::init_orthogonal<S>(d, cfg.ff_mult * d, rng), kTrainable);
    params.add(bp + "ff/b1", nn::Mat<S>::Zero(1, cfg.ff_mult * d), kTrainable);
    params.add(bp + "ff/w2", nn::init_orthogonal<S>(cfg.ff_mult * d, d, rng), kTrainable);
    params.add(bp + "ff/b2", nn::Mat<S>::Zero(1, d), kTrainable);
  }
  params.add(prefix + "ln_f/gamma", nn::Mat<S>::Ones(1, d), kTrainable);
  params.add(prefix + "ln_f/beta", nn::Mat<S>::Zero(1, d), kTrainable);
}

/// Graph forward: seq (L x D) -> latents (n_latents x D). Differentiable in
/// seq; the frozen tensors bind as non-grad leaves.
template <typename S>
nn::Var resample_tokens_graph(nn::Graph<S>& g, const nn::ParamSet<S>& params,
                              const ResamplerConfig& cfg, const std::string& prefix,
                              nn::Var seq) {
  cfg.validate();
  MMA_REQUIRE(g.value(seq).cols() == cfg.d_model, "resampler.dim_mismatch",
              "resample_tokens: input dim " + std::to_string(g.value(seq).cols()) +
                  " != configured " + std::to_string(cfg.d_model));
  MMA_REQUIRE(g.value(seq).rows() >= 1, "resampler.empty", "resample_tokens: empty sequence");
  auto bind = [&](const std::string& name) {
    const nn::ParamTensor<S>& t = params.at(prefix + name);
    return g.leaf_ref(&t.value, t.trainable);
  };
  nn::Var lat = bind("latents");
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const std::string bp = prefix + "block" + std::to_string(b) + "/";
    nn::Var q = encoders::detail::layer_norm_p(g, params, bp + "ln_q/", lat);
    nn::Var kv =
        encoders::detail::layer_norm_p(g, params, bp + "ln_kv/", g.concat_rows(seq, lat));
    nn::Var attn =
        encoders::detail::multihead_attention(g, params, bp + "attn/", cfg.n_heads, q, kv, -1);
    lat = g.add(lat, attn);
    nn::Var h = encoders::detail::layer_norm_p(g, params, bp + "ln2/", lat);
    lat = g.add(lat, encoders::detail::feed_forward_p(g, params, bp + "ff/", h));
  }
  return encoders::detail::layer_norm_p(g, params, prefix + "ln_f/", lat);
}

/// Eval-mode forward, no tape.
template <typename S>
nn::Mat<S> resample_tokens(const nn::ParamSet<S>& params, const ResamplerConfig& cfg,
                           const std::string& prefix, const nn::Mat<S>& seq) {
  nn::Graph<S> g(false);
  nn::Var in = g.leaf(seq);
  return g.value(resample_tokens_graph(g, params, cfg, prefix, in));
}

/// Mean over latent rows, optionally L2-normalized. 1 x D.
template <typename S>
nn::Var pool_graph(nn::Graph<S>& g, nn::Var latents, bool normalize) {
  nn::Var pooled = g.mean_rows(latents);
  return normalize ? g.l2_normalize_rows(pooled) : pooled;
}

/// Plain pooled embedding as a vector.
template <typename S>
nn::Vec<S> pool(const nn::Mat<S>& latents, bool normalize) {
  MMA_REQUIRE(latents.rows() >= 1, "resampler.empty", "pool: no latent rows");
  nn::Vec<S> v = latents.colwise().mean().transpose();
  if (normalize) {
    const S n = v.norm();
    MMA_REQUIRE(n > static_cast<S>(0), "nn.zero_norm", "pool: zero vector has no direction");
    v /= n;
  }
  return v;
}

}  // namespace mmalign::resampler
