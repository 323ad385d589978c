#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mmalign/common/digest.hpp"
#include "mmalign/common/error.hpp"
#include "mmalign/nn/matrix.hpp"

namespace mmalign::nn {

/// One named tensor. `trainable == false` marks a frozen stage: the optimizer
/// refuses to touch it, checkpoints record the flag, and graphs bind it as a
/// non-grad leaf.
template <typename S>
struct ParamTensor {
  Mat<S> value;
  bool trainable = true;
};

/// Ordered collection of named tensors for one model. Iteration order is the
/// map's lexicographic key order, which keeps optimizer updates, digests and
/// serialization deterministic.
template <typename S>
class ParamSet {
 public:
  Mat<S>& add(const std::string& name, Mat<S> value, bool trainable = true) {
    auto [it, inserted] = tensors_.emplace(name, ParamTensor<S>{std::move(value), trainable});
    MMA_REQUIRE(inserted, "params.duplicate", "duplicate parameter: " + name);
    return it->second.value;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  ParamTensor<S>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) raise("params.missing", "unknown parameter: " + name);
    return it->second;
  }
  const ParamTensor<S>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) raise("params.missing", "unknown parameter: " + name);
    return it->second;
  }

  Mat<S>& get(const std::string& name) { return at(name).value; }
  const Mat<S>& get(const std::string& name) const { return at(name).value; }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  std::size_t size() const { return tensors_.size(); }

  /// Total scalar count, optionally restricted to trainable tensors.
  std::int64_t size_scalars(bool trainable_only = false) const {
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors_)
      if (!trainable_only || t.trainable) n += static_cast<std::int64_t>(t.value.size());
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, t] : tensors_) out.push_back(name);
    return out;
  }

  /// Order-stable digest over names, shapes, flags and raw bytes.
  std::uint64_t digest() const {
    std::uint64_t h = mmalign::fnv1a64("paramset", 8);
    for (const auto& [name, t] : tensors_) {
      h = mmalign::fnv1a64(name.data(), name.size(), h);
      const std::uint8_t flag = t.trainable ? 1 : 0;
      h = mmalign::fnv1a64(&flag, 1, h);
      h = matrix_digest(t.value, h);
    }
    return h;
  }

  template <typename T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& [name, t] : tensors_) out.add(name, cast_matrix<T>(t.value), t.trainable);
    return out;
  }

 private:
  std::map<std::string, ParamTensor<S>> tensors_;
};

// ---- initializers -----------------------------------------------------------

template <typename S>
Mat<S> init_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<S>(dist(rng));
  return m;
}

/// Xavier/Glorot uniform over [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
template <typename S>
Mat<S> init_xavier(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Mat<S> m(fan_in, fan_out);
  for (Eigen::Index r = 0; r < fan_in; ++r)
    for (Eigen::Index c = 0; c < fan_out; ++c) m(r, c) = static_cast<S>(dist(rng));
  return m;
}

/// Rows (or columns, whichever is shorter) are orthonormal: Gram-Schmidt on
/// a Gaussian draw, with a re-orthogonalization pass for numerical hygiene.
/// Sign convention: first nonzero entry of each basis vector is positive.
template <typename S>
Mat<S> init_orthogonal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const bool wide = cols > rows;
  const Eigen::Index big = wide ? cols : rows;
  const Eigen::Index small = wide ? rows : cols;
  Mat<double> q = init_normal<double>(big, small, 1.0, rng);
  for (Eigen::Index c = 0; c < small; ++c) {
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index p = 0; p < c; ++p) q.col(c) -= q.col(p).dot(q.col(c)) * q.col(p);
    const double n = q.col(c).norm();
    MMA_REQUIRE(n > 1e-12, "params.degenerate", "init_orthogonal: rank-deficient draw");
    q.col(c) /= n;
    if (q(0, c) < 0) q.col(c) = -q.col(c);
  }
  Mat<S> out(rows, cols);
  if (wide)
    out = q.transpose().template cast<S>();
  else
    out = q.template cast<S>();
  return out;
}

}  // namespace mmalign::nn
