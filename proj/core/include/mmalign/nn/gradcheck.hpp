#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmalign/common/error.hpp"
#include "mmalign/nn/matrix.hpp"

namespace mmalign::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_tensor;
  int worst_row = -1;
  int worst_col = -1;
  std::int64_t coords_checked = 0;
  bool pass(double tol) const { return max_rel_error < tol; }
};

/// Denominator floor for the relative error. Central differences of an O(1)
/// loss carry ~eps*|loss|/step of roundoff noise (~1e-10 at step 1e-5), so a
/// coordinate whose true gradient is below this floor is judged by absolute
/// error against the floor instead of a meaningless ratio of two noise terms.
constexpr double kGradCheckDenomFloor = 1e-4;

/// Central-difference check of one tensor against an analytic gradient.
///
/// `loss_fn` re-evaluates the scalar loss after the tensor has been perturbed
/// in place (the tensor is restored after each probe). Checks every
/// coordinate when `max_coords <= 0` or the tensor is small enough;
/// otherwise probes a seeded random subset. Double precision throughout:
/// float forward passes lose too many digits for a 1e-4 relative tolerance.
inline GradCheckReport grad_check_tensor(Mat<double>& tensor, const Mat<double>& analytic,
                                         const std::function<double()>& loss_fn,
                                         const std::string& name, double step = 1e-5,
                                         std::int64_t max_coords = 0,
                                         std::uint64_t sample_seed = 0) {
  MMA_REQUIRE(analytic.rows() == tensor.rows() && analytic.cols() == tensor.cols(),
              "gradcheck.shape", "analytic gradient shape mismatch for " + name);
  GradCheckReport rep;
  const std::int64_t total = static_cast<std::int64_t>(tensor.size());
  std::vector<std::int64_t> coords;
  if (max_coords > 0 && total > max_coords) {
    std::mt19937_64 rng(sample_seed);
    std::vector<std::int64_t> all(total);
    for (std::int64_t i = 0; i < total; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    coords.assign(all.begin(), all.begin() + max_coords);
    std::sort(coords.begin(), coords.end());
  } else {
    coords.resize(total);
    for (std::int64_t i = 0; i < total; ++i) coords[i] = i;
  }

  for (std::int64_t flat : coords) {
    const Eigen::Index r = flat / tensor.cols();
    const Eigen::Index c = flat % tensor.cols();
    const double orig = tensor(r, c);
    tensor(r, c) = orig + step;
    const double up = loss_fn();
    tensor(r, c) = orig - step;
    const double down = loss_fn();
    tensor(r, c) = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double exact = analytic(r, c);
    const double abs_err = std::abs(numeric - exact);
    const double rel =
        abs_err / std::max({std::abs(numeric), std::abs(exact), kGradCheckDenomFloor});
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_tensor = name;
      rep.worst_row = static_cast<int>(r);
      rep.worst_col = static_cast<int>(c);
    }
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    ++rep.coords_checked;
  }
  return rep;
}

inline GradCheckReport merge(const GradCheckReport& a, const GradCheckReport& b) {
  GradCheckReport out = a.max_rel_error >= b.max_rel_error ? a : b;
  out.max_abs_error = std::max(a.max_abs_error, b.max_abs_error);
  out.coords_checked = a.coords_checked + b.coords_checked;
  return out;
}

}  // namespace mmalign::nn
