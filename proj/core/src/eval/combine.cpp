#include "mmalign/eval/combine.hpp"

namespace mmalign::eval {

nn::VecF combine_embeddings(const nn::VecF& e_vis, const nn::VecF& e_imu,
                            const CombinationWeights& w, bool renormalize) {
  w.validate();
  MMA_REQUIRE(e_vis.size() == e_imu.size(), "combine.shape",
              "combine_embeddings: dimension mismatch");
  if (w.w_imu == 0.0) return e_vis;
  if (w.w_vision == 0.0) return e_imu;
  nn::VecF v = static_cast<float>(w.w_vision) * e_vis + static_cast<float>(w.w_imu) * e_imu;
  if (renormalize) {
    const float n = v.norm();
    MMA_REQUIRE(n > 0.0f, "combine.zero",
                "combine_embeddings: weighted sum is the zero vector (antipodal inputs)");
    v /= n;
  }
  return v;
}

nn::MatF combine_embeddings(const nn::MatF& e_vis, const nn::MatF& e_imu,
                            const CombinationWeights& w, bool renormalize) {
  w.validate();
  MMA_REQUIRE(e_vis.rows() == e_imu.rows() && e_vis.cols() == e_imu.cols(), "combine.shape",
              "combine_embeddings: shape mismatch");
  if (w.w_imu == 0.0) return e_vis;
  if (w.w_vision == 0.0) return e_imu;
  nn::MatF out(e_vis.rows(), e_vis.cols());
  for (Eigen::Index r = 0; r < e_vis.rows(); ++r) {
    const nn::VecF row = combine_embeddings(nn::VecF(e_vis.row(r).transpose()),
                                            nn::VecF(e_imu.row(r).transpose()), w, renormalize);
    out.row(r) = row.transpose();
  }
  return out;
}

nn::MatF combine_latents(const nn::MatF& lat_vis, const nn::MatF& lat_imu,
                         const CombinationWeights& w) {
  w.validate();
  MMA_REQUIRE(lat_vis.rows() == lat_imu.rows() && lat_vis.cols() == lat_imu.cols(),
              "combine.shape", "combine_latents: shape mismatch");
  return static_cast<float>(w.w_vision) * lat_vis + static_cast<float>(w.w_imu) * lat_imu;
}

}  // namespace mmalign::eval
