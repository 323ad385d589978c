#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "mmalign/common/digest.hpp"

namespace mmalign::nn {

// Rows index tokens / samples, columns index features.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

template <typename S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

template <typename S>
std::uint64_t matrix_digest(const Mat<S>& m, std::uint64_t seed = kFnvOffset) {
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  seed = fnv1a64(dims, sizeof(dims), seed);
  return fnv1a64(m.data(), sizeof(S) * static_cast<std::size_t>(m.size()), seed);
}

template <typename From, typename To>
Mat<To> cast_matrix(const Mat<From>& m) {
  return m.template cast<To>();
}

}  // namespace mmalign::nn
