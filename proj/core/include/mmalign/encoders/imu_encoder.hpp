#pragma once

#include <random>
#include <string>

#include "mmalign/common/error.hpp"
#include "mmalign/data/types.hpp"
#include "mmalign/nn/graph.hpp"
#include "mmalign/nn/params.hpp"

namespace mmalign::encoders {

/// A token sequence is an L x D matrix: rows are tokens.
using TokenSequence = nn::MatF;

struct IMUEncoderConfig {
  int d_model = 1024;
  int conv_kernel = 3;
  int conv_stride = 1;
  int n_layers = 4;
  int n_heads = 8;
  int ff_mult = 4;
  double dropout = 0.0;
  // Fixed by the data pipeline; overridable so gradient checks can run on
  // tiny windows.
  int window_len = data::kWindowLen;
  int in_channels = data::kChannels;

  int n_tokens() const { return (window_len + conv_stride - 1) / conv_stride; }

  void validate() const {
    MMA_REQUIRE(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "encoder.config",
                "d_model must be divisible by n_heads");
    MMA_REQUIRE(conv_kernel >= 1 && conv_stride >= 1, "encoder.config",
                "conv_kernel and conv_stride must be >= 1");
    MMA_REQUIRE(n_layers >= 1 && ff_mult >= 1, "encoder.config",
                "n_layers and ff_mult must be >= 1");
    MMA_REQUIRE(dropout >= 0.0 && dropout < 1.0, "encoder.config", "dropout must be in [0, 1)");
    MMA_REQUIRE(window_len >= 1 && in_channels >= 1, "encoder.config",
                "window_len and in_channels must be >= 1");
  }
};

/// Registers all encoder tensors under `prefix` (e.g. "encoder/").
/// Conv stem + learned positional table + pre-norm transformer blocks +
/// final layer norm.
template <typename S>
void init_imu_encoder(nn::ParamSet<S>& params, const IMUEncoderConfig& cfg,
                      const std::string& prefix, std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.d_model;
  params.add(prefix + "conv/w",
             nn::init_xavier<S>(cfg.conv_kernel * cfg.in_channels, d, rng));
  params.add(prefix + "conv/b", nn::Mat<S>::Zero(1, d));
  params.add(prefix + "pos", nn::init_normal<S>(cfg.n_tokens(), d, 0.02, rng));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + "layer" + std::to_string(l) + "/";
    params.add(lp + "ln1/gamma", nn::Mat<S>::Ones(1, d));
    params.add(lp + "ln1/beta", nn::Mat<S>::Zero(1, d));
    for (const char* w : {"wq", "wk", "wv", "wo"})
      params.add(lp + "attn/" + w, nn::init_xavier<S>(d, d, rng));
    for (const char* b : {"bq", "bk", "bv", "bo"})
      params.add(lp + "attn/" + b, nn::Mat<S>::Zero(1, d));
    params.add(lp + "ln2/gamma", nn::Mat<S>::Ones(1, d));
    params.add(lp + "ln2/beta", nn::Mat<S>::Zero(1, d));
    params.add(lp + "ff/w1", nn::init_xavier<S>(d, cfg.ff_mult * d, rng));
    params.add(lp + "ff/b1", nn::Mat<S>::Zero(1, cfg.ff_mult * d));
    params.add(lp + "ff/w2", nn::init_xavier<S>(cfg.ff_mult * d, d, rng));
    params.add(lp + "ff/b2", nn::Mat<S>::Zero(1, d));
  }
  params.add(prefix + "ln_f/gamma", nn::Mat<S>::Ones(1, d));
  params.add(prefix + "ln_f/beta", nn::Mat<S>::Zero(1, d));
}

namespace detail {

/// Multi-head self/cross attention over `q_in` (queries) and `kv_in`
/// (keys/values); softmax restricted to the first `valid_keys` key rows
/// (< 0 = all).
template <typename S>
nn::Var multihead_attention(nn::Graph<S>& g, const nn::ParamSet<S>& params,
                            const std::string& attn_prefix, int n_heads, nn::Var q_in,
                            nn::Var kv_in, int valid_keys) {
  const int d = static_cast<int>(g.value(q_in).cols());
  const int dh = d / n_heads;
  auto bind = [&](const char* name) {
    const nn::ParamTensor<S>& t = params.at(attn_prefix + name);
    return g.leaf_ref(&t.value, t.trainable);
  };
  nn::Var q = g.add_rowvec(g.matmul(q_in, bind("wq")), bind("bq"));
  nn::Var k = g.add_rowvec(g.matmul(kv_in, bind("wk")), bind("bk"));
  nn::Var v = g.add_rowvec(g.matmul(kv_in, bind("wv")), bind("bv"));
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<nn::Var> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    nn::Var qh = g.cols(q, h * dh, dh);
    nn::Var kh = g.cols(k, h * dh, dh);
    nn::Var vh = g.cols(v, h * dh, dh);
    nn::Var scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
    nn::Var attn = g.softmax_rows(scores, valid_keys);
    heads.push_back(g.matmul(attn, vh));
  }
  return g.add_rowvec(g.matmul(g.concat_cols(heads), bind("wo")), bind("bo"));
}

template <typename S>
nn::Var layer_norm_p(nn::Graph<S>& g, const nn::ParamSet<S>& params, const std::string& ln_prefix,
                     nn::Var x) {
  const nn::ParamTensor<S>& ga = params.at(ln_prefix + "gamma");
  const nn::ParamTensor<S>& be = params.at(ln_prefix + "beta");
  return g.layer_norm(x, g.leaf_ref(&ga.value, ga.trainable), g.leaf_ref(&be.value, be.trainable));
}

template <typename S>
nn::Var feed_forward_p(nn::Graph<S>& g, const nn::ParamSet<S>& params,
                       const std::string& ff_prefix, nn::Var x) {
  auto bind = [&](const char* name) {
    const nn::ParamTensor<S>& t = params.at(ff_prefix + name);
    return g.leaf_ref(&t.value, t.trainable);
  };
  nn::Var h = g.gelu(g.add_rowvec(g.matmul(x, bind("w1")), bind("b1")));
  return g.add_rowvec(g.matmul(h, bind("w2")), bind("b2"));
}

}  // namespace detail

/// Graph forward pass. `window` is the (window_len x in_channels) input —
/// bound as a differentiable leaf so gradient checks can probe d(loss)/d(x).
/// The attention mask hides key positions at and beyond
/// ceil(valid_len / conv_stride) in every layer. Returns tokens
/// (n_tokens x d_model).
template <typename S>
nn::Var imu_encode_graph(nn::Graph<S>& g, const nn::ParamSet<S>& params,
                         const IMUEncoderConfig& cfg, const std::string& prefix,
                         const nn::Mat<S>* window, int valid_len, bool training = false,
                         std::mt19937_64* dropout_rng = nullptr) {
  cfg.validate();
  MMA_REQUIRE(window != nullptr && window->rows() == cfg.window_len &&
                  window->cols() == cfg.in_channels,
              "encoder.input_shape", "imu_encode: window shape mismatch");
  MMA_REQUIRE(nn::all_finite(*window), "encoder.nonfinite_input",
              "imu_encode: non-finite input values");
  MMA_REQUIRE(valid_len >= 1 && valid_len <= cfg.window_len, "encoder.valid_len",
              "imu_encode: valid_len out of range");
  MMA_REQUIRE(!training || cfg.dropout == 0.0 || dropout_rng != nullptr, "encoder.config",
              "imu_encode: training with dropout requires an RNG");
  const int valid_tokens = (valid_len + cfg.conv_stride - 1) / cfg.conv_stride;
  const S drop_p = static_cast<S>(cfg.dropout);
  auto bind = [&](const std::string& name) {
    const nn::ParamTensor<S>& t = params.at(prefix + name);
    return g.leaf_ref(&t.value, t.trainable);
  };
  auto maybe_drop = [&](nn::Var v) {
    if (training && cfg.dropout > 0.0) return g.dropout(v, drop_p, *dropout_rng, true);
    return v;
  };

  nn::Var x = g.leaf_ref(window, true);
  nn::Var tok = g.conv1d_same(x, bind("conv/w"), bind("conv/b"), cfg.conv_kernel, cfg.conv_stride);
  tok = g.add(tok, bind("pos"));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string lp = prefix + "layer" + std::to_string(l) + "/";
    nn::Var h = detail::layer_norm_p(g, params, lp + "ln1/", tok);
    nn::Var attn =
        detail::multihead_attention(g, params, lp + "attn/", cfg.n_heads, h, h, valid_tokens);
    tok = g.add(tok, maybe_drop(attn));
    nn::Var h2 = detail::layer_norm_p(g, params, lp + "ln2/", tok);
    tok = g.add(tok, maybe_drop(detail::feed_forward_p(g, params, lp + "ff/", h2)));
  }
  return detail::layer_norm_p(g, params, prefix + "ln_f/", tok);
}

/// Eval-mode forward: deterministic, no tape.
template <typename S>
nn::Mat<S> imu_encode(const nn::ParamSet<S>& params, const IMUEncoderConfig& cfg,
                      const std::string& prefix, const nn::Mat<S>& window, int valid_len) {
  nn::Graph<S> g(false);
  nn::Var out = imu_encode_graph(g, params, cfg, prefix, &window, valid_len, false, nullptr);
  return g.value(out);
}

inline TokenSequence imu_encode(const nn::ParamSet<float>& params, const IMUEncoderConfig& cfg,
                                const std::string& prefix, const data::IMUWindow& window) {
  return imu_encode<float>(params, cfg, prefix, window.values, window.valid_len);
}

/// Exact count of trainable scalars under `prefix` ("" = whole set).
template <typename S>
std::int64_t count_parameters(const nn::ParamSet<S>& params, const std::string& prefix = "") {
  std::int64_t n = 0;
  for (const auto& [name, t] : params)
    if (t.trainable && name.rfind(prefix, 0) == 0)
      n += static_cast<std::int64_t>(t.value.size());
  return n;
}

}  // namespace mmalign::encoders
