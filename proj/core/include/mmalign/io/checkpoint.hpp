#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mmalign/nn/params.hpp"

namespace mmalign::io {

/// Everything a run needs to resume or evaluate: configs as JSON documents
/// plus every named tensor (trainable and frozen). Tensor names are
/// prefixed by stage ("encoder/", "head/", "resampler/", "vision/").
struct Checkpoint {
  nlohmann::json model_config;
  nlohmann::json norm_stats;
  nlohmann::json train_state;
  nn::ParamSet<float> params;
};

/// Single-file "CMAR" archive: magic, u32 version=1, u32 entry count, then
/// length-prefixed (name, payload) entries. JSON documents are stored as
/// text entries; tensors as CMEB blobs under "tensors/<name>", with an index
/// entry "tensors.json" carrying shapes and frozen flags.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mmalign::io
