#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mmalign/common/error.hpp"
#include "mmalign/nn/matrix.hpp"
#include "mmalign/nn/params.hpp"

namespace mmalign::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay: decay is applied directly to the
/// weights, never mixed into the moment estimates.
template <typename S>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {
    MMA_REQUIRE(cfg.lr >= 0 && cfg.eps > 0, "optim.config", "adamw: lr >= 0 and eps > 0 required");
    MMA_REQUIRE(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1, "optim.config",
                "adamw: betas must lie in [0, 1)");
  }

  const AdamWConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const noexcept { return cfg_.lr; }
  std::int64_t step_count() const noexcept { return t_; }

  /// One update for a single named tensor. Throws on frozen tensors rather
  /// than silently skipping them: a frozen tensor reaching the optimizer is
  /// a wiring bug.
  void step_one(const std::string& name, ParamTensor<S>& p, const Mat<S>& grad) {
    MMA_REQUIRE(p.trainable, "optim.frozen", "adamw: refusing to update frozen tensor " + name);
    MMA_REQUIRE(grad.rows() == p.value.rows() && grad.cols() == p.value.cols(), "optim.shape",
                "adamw: gradient shape mismatch for " + name);
    State& s = states_[name];
    if (s.m.size() == 0) {
      s.m = Mat<S>::Zero(p.value.rows(), p.value.cols());
      s.v = Mat<S>::Zero(p.value.rows(), p.value.cols());
    }
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    s.m = b1 * s.m + (static_cast<S>(1) - b1) * grad;
    s.v = (b2 * s.v.array() + (static_cast<S>(1) - b2) * grad.array().square()).matrix();
    const double correct1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_ + 1));
    const double correct2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_ + 1));
    const S step_size = static_cast<S>(cfg_.lr / correct1);
    const S denom_scale = static_cast<S>(1.0 / std::sqrt(correct2));
    p.value.array() -= step_size * s.m.array() /
                       ((s.v.array().sqrt() * denom_scale) + static_cast<S>(cfg_.eps));
    if (cfg_.weight_decay > 0)
      p.value *= static_cast<S>(1.0 - cfg_.lr * cfg_.weight_decay);
  }

  /// One update over every trainable tensor with a gradient present.
  /// `grads` keyed by tensor name; missing trainable tensors are skipped
  /// (they simply received no gradient this step).
  void step(ParamSet<S>& params, const std::map<std::string, Mat<S>>& grads) {
    for (auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      step_one(name, p, it->second);
    }
    ++t_;
  }

 private:
  struct State {
    Mat<S> m;
    Mat<S> v;
  };
  AdamWConfig cfg_;
  std::map<std::string, State> states_;
  std::int64_t t_ = 0;
};

/// Cosine decay from `base_lr` to `min_lr` over `total_steps`; step 0 gives
/// base_lr, the final step gives min_lr.
inline double cosine_lr(double base_lr, double min_lr, std::int64_t step,
                        std::int64_t total_steps) {
  MMA_REQUIRE(total_steps >= 1, "optim.config", "cosine_lr: total_steps must be >= 1");
  if (step >= total_steps - 1 || total_steps == 1) return min_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(frac * 3.14159265358979323846));
}

}  // namespace mmalign::nn
