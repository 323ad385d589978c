#pragma once

// Writes pooled embeddings for a whole dataset part to a CMEB file with an
// id/label sidecar, so retrieval, combination and t-SNE can run from disk
// artifacts without re-running the model.

#include <string>
#include <vector>

#include "mmalign/align/model.hpp"
#include "mmalign/data/types.hpp"

namespace mmalign::eval {

enum class Modality { imu, vision };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

/// Embeds every sample of `part` (encode → resample → pool, or mean-pooled
/// encoder tokens when raw_encoder is set) and writes the result as CMEB
/// plus a "<path>.json" sidecar {ids, labels}. Row order matches the part's
/// sample order. Returns the written matrix.
nn::MatF export_embeddings(const align::Model& model,
                           const std::vector<data::PairedSample>& part, Modality modality,
                           const std::string& out_path, bool raw_encoder = false);

}  // namespace mmalign::eval
