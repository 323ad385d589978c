#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmalign/data/pipeline.hpp"
#include "mmalign/data/types.hpp"
#include "mmalign/encoders/imu_encoder.hpp"
#include "mmalign/encoders/vision.hpp"
#include "mmalign/resampler/resampler.hpp"

namespace mmalign::align {

/// One aligned-model bundle: trainable IMU encoder + class head, frozen
/// vision stub (synthetic mode) and frozen resampler shared by both
/// modalities. Tensor names carry stage prefixes inside one ParamSet.
struct ModelConfig {
  encoders::IMUEncoderConfig encoder;
  resampler::ResamplerConfig resampler;
  encoders::StubVisionConfig stub;
  // "stub" renders synthetic latents; "precomputed" loads CMEB token files.
  std::string vision_mode = "stub";
  int n_classes = data::kNumClasses;
  bool normalize_embeddings = true;
  std::uint64_t init_seed = 0;

  void validate() const;
};

struct Model {
  ModelConfig cfg;
  nn::ParamSet<float> params;
  // Channel statistics from the train split; identity when absent (synthetic
  // windows are already zero-centered by construction).
  std::optional<data::NormStats> norm;

  encoders::VisionProvider vision_provider() const {
    encoders::VisionProvider p;
    p.d_model = cfg.encoder.d_model;
    p.params = &params;
    p.stub = cfg.stub;
    p.prefix = "vision/";
    return p;
  }
};

/// Builds and seeds all stages. Sub-streams: "init" (encoder + head),
/// "resampler-init", "vision-stub".
Model make_model(const ModelConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json norm_stats_to_json(const std::optional<data::NormStats>& norm);
std::optional<data::NormStats> norm_stats_from_json(const nlohmann::json& j);

/// Pooled embeddings for a whole dataset part, in sample order. `imu_raw`
/// is pre-normalization (what the supervised head consumes); `*_norm` rows
/// are unit length. With raw_encoder the resampler is bypassed and tokens
/// are mean-pooled directly (ablation mode).
struct DatasetEmbeddings {
  nn::MatF imu_raw;
  nn::MatF imu_norm;
  nn::MatF vis_raw;
  nn::MatF vis_norm;
  std::vector<int> labels;
};

DatasetEmbeddings embed_dataset(const Model& model, const std::vector<data::PairedSample>& part,
                                bool raw_encoder = false);

/// Single-sample paths (eval mode, tape-free).
nn::VecF imu_embed_raw(const Model& model, const data::IMUWindow& window,
                       bool raw_encoder = false);
nn::VecF vision_embed_raw(const Model& model, const data::VisionSource& source,
                          bool raw_encoder = false);

}  // namespace mmalign::align
