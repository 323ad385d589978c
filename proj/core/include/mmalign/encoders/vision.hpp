#pragma once

#include <random>
#include <string>
#include <variant>

#include "mmalign/common/error.hpp"
#include "mmalign/data/types.hpp"
#include "mmalign/encoders/imu_encoder.hpp"
#include "mmalign/io/cmeb.hpp"
#include "mmalign/nn/params.hpp"

namespace mmalign::encoders {

/// Frozen stand-in for the real vision tower at desk scale: one seeded
/// linear map latent -> n_tokens * d_model followed by tanh, reshaped to
/// (n_tokens x d_model).
struct StubVisionConfig {
  int latent_dim = 8;
  int n_tokens = 16;
  int d_model = 64;

  void validate() const {
    MMA_REQUIRE(latent_dim >= 1 && n_tokens >= 1 && d_model >= 1, "vision.config",
                "stub vision dimensions must be >= 1");
  }
};

/// Registers the frozen stub tensors under `prefix` (e.g. "vision/").
/// The weight scale keeps pre-activations of unit-ish latents inside tanh's
/// responsive range instead of the saturated tails.
inline void init_stub_vision(nn::ParamSet<float>& params, const StubVisionConfig& cfg,
                             const std::string& prefix, std::mt19937_64& rng) {
  cfg.validate();
  const double w_std = 0.5 / std::sqrt(static_cast<double>(cfg.latent_dim));
  params.add(prefix + "w",
             nn::init_normal<float>(cfg.latent_dim, cfg.n_tokens * cfg.d_model, w_std, rng),
             /*trainable=*/false);
  params.add(prefix + "b", nn::init_normal<float>(1, cfg.n_tokens * cfg.d_model, 0.1, rng),
             /*trainable=*/false);
}

inline TokenSequence stub_vision_tokens(const nn::ParamSet<float>& params,
                                        const StubVisionConfig& cfg, const std::string& prefix,
                                        const nn::VecF& latent) {
  cfg.validate();
  MMA_REQUIRE(latent.size() == cfg.latent_dim, "vision.latent_dim",
              "stub vision: latent dimension mismatch");
  const nn::MatF& w = params.get(prefix + "w");
  const nn::MatF& b = params.get(prefix + "b");
  nn::MatF flat = latent.transpose() * w + b;  // 1 x (n_tokens * d_model)
  TokenSequence tokens(cfg.n_tokens, cfg.d_model);
  for (int t = 0; t < cfg.n_tokens; ++t)
    for (int c = 0; c < cfg.d_model; ++c)
      tokens(t, c) = std::tanh(flat(0, t * cfg.d_model + c));
  return tokens;
}

/// Uniform entry point over every vision source. `d_model` is the expected
/// token dimension; mismatches are rejected rather than silently adapted.
struct VisionProvider {
  int d_model = 1024;
  const nn::ParamSet<float>* params = nullptr;  // holds frozen stub tensors
  StubVisionConfig stub;
  std::string prefix = "vision/";

  TokenSequence embed(const data::VisionSource& source) const {
    return std::visit([this](const auto& s) { return embed_one(s); }, source);
  }

 private:
  TokenSequence check_dim(TokenSequence t, const std::string& what) const {
    MMA_REQUIRE(t.cols() == d_model, "vision.dim_mismatch",
                "vision tokens have dim " + std::to_string(t.cols()) + ", expected " +
                    std::to_string(d_model) + ": " + what);
    MMA_REQUIRE(nn::all_finite(t), "vision.nonfinite", "non-finite vision tokens: " + what);
    return t;
  }

  TokenSequence embed_one(const data::VisionFile& f) const {
    return check_dim(io::read_cmeb(f.path), f.path);
  }
  TokenSequence embed_one(const data::VisionTokens& t) const {
    return check_dim(t.tokens, "inline tokens");
  }
  TokenSequence embed_one(const data::VisionLatent& l) const {
    MMA_REQUIRE(params != nullptr, "vision.no_stub",
                "synthetic vision latent given but no stub weights configured");
    return check_dim(stub_vision_tokens(*params, stub, prefix, l.z), "stub tokens");
  }
  TokenSequence embed_one(const data::FrameRef& f) const {
    raise("vision.frames_unsupported",
          "raw frames require an external vision tower; precompute embeddings instead",
          f.frames_dir);
  }
};

}  // namespace mmalign::encoders
