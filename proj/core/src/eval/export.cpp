#include "mmalign/eval/export.hpp"

#include "mmalign/common/error.hpp"
#include "mmalign/io/cmeb.hpp"

namespace mmalign::eval {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::imu: return "imu";
    case Modality::vision: return "vision";
  }
  raise("eval.modality", "unknown modality value");
}

Modality modality_from_name(const std::string& name) {
  if (name == "imu") return Modality::imu;
  if (name == "vision") return Modality::vision;
  raise("eval.modality", "unknown modality name: " + name + " (expected imu|vision)");
}

nn::MatF export_embeddings(const align::Model& model,
                           const std::vector<data::PairedSample>& part, Modality modality,
                           const std::string& out_path, bool raw_encoder) {
  MMA_REQUIRE(!part.empty(), "eval.empty_part", "export_embeddings: dataset part is empty");

  const align::DatasetEmbeddings emb = align::embed_dataset(model, part, raw_encoder);
  const nn::MatF& mat = modality == Modality::imu ? emb.imu_norm : emb.vis_norm;

  io::CmebSidecar sidecar;
  sidecar.ids.reserve(part.size());
  sidecar.labels.reserve(part.size());
  for (const auto& s : part) {
    sidecar.ids.push_back(s.id);
    sidecar.labels.push_back(s.label);
  }
  io::write_cmeb(out_path, mat, sidecar);
  return mat;
}

}  // namespace mmalign::eval
