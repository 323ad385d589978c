#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mmalign/align/losses.hpp"
#include "mmalign/align/model.hpp"
#include "mmalign/io/checkpoint.hpp"

namespace mmalign::align {

struct TrainConfig {
  int batch_size = 512;
  int max_epochs = 100;
  int patience = 10;
  double lr = 1e-4;
  double min_lr = 0.0;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  int eval_every = 1;  // validate every k-th epoch
  bool raw_encoder = false;

  void validate() const {
    MMA_REQUIRE(batch_size >= 2, "train.config", "batch_size must be >= 2");
    MMA_REQUIRE(max_epochs >= 1 && patience >= 1, "train.config",
                "max_epochs and patience must be >= 1");
    MMA_REQUIRE(lr > 0 && min_lr >= 0 && weight_decay >= 0, "train.config",
                "lr > 0, min_lr >= 0, weight_decay >= 0 required");
    MMA_REQUIRE(eval_every >= 1, "train.config", "eval_every must be >= 1");
  }
};

/// Tracks the running argmin of validation loss and halts `patience`
/// observations after the minimum.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    MMA_REQUIRE(patience >= 1, "train.config", "patience must be >= 1");
  }

  /// Returns true when `value` is a new best (strict improvement).
  bool observe(int epoch, double value) {
    if (!has_best_ || value < best_value_) {
      has_best_ = true;
      best_value_ = value;
      best_epoch_ = epoch;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_value() const { return best_value_; }

 private:
  int patience_;
  bool has_best_ = false;
  double best_value_ = 0.0;
  int best_epoch_ = -1;
  int since_best_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_info_nce = 0.0;
  double train_sup = 0.0;
  double val_info_nce = 0.0;
  double val_sup = 0.0;
  double val_total = 0.0;
  double lr = 0.0;
  double wall_s = 0.0;
};

struct TrainResult {
  io::Checkpoint checkpoint;  // weights at the argmin-validation epoch
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val = 0.0;
  int epochs_run = 0;
};

/// Full training loop: per batch, embed both modalities (vision embeddings
/// are precomputed once — the whole vision path is frozen), build the batch
/// loss graph over pooled embeddings, then re-run per-sample encoder
/// forwards with the tape to pull gradients back through the frozen
/// resampler into the encoder. AdamW with decoupled weight decay and cosine
/// LR decay; early stopping on validation loss. `model` holds the final
/// (not best) weights on return; the returned checkpoint holds the best.
/// `on_epoch` (optional) fires after each epoch with the fresh log entry.
TrainResult train(Model& model, const data::DatasetSplit& split, const TrainConfig& cfg,
                  const LossConfig& loss_cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Finite-difference verification of every gradient path, in 64-bit
/// precision on tiny configurations.
struct GradSuiteReport {
  double info_nce = 0.0;    // graph info_nce vs central differences (3x3)
  double supervised = 0.0;  // cross-entropy head path
  double encoder = 0.0;     // d(loss)/d(encoder params), tiny encoder
  double resampler = 0.0;   // d(pooled)/d(input tokens) through frozen stage
  double full_path = 0.0;   // window -> encode -> resample -> pool -> loss
  double wall_s = 0.0;

  double max() const;
  bool pass(double tol = 1e-4) const { return max() < tol; }
};

GradSuiteReport run_grad_suite(std::uint64_t seed);

}  // namespace mmalign::align
