#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmalign/nn/matrix.hpp"

namespace mmalign::eval {

struct ProbeConfig {
  int epochs = 200;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct ProbeReport {
  std::string modality;  // "video", "imu", "combined"
  double train_loss = 0.0;
  double test_loss = 0.0;
  double train_acc = 0.0;  // percentage
  double test_acc = 0.0;   // percentage
  int n_classes = 0;
  int feature_dim = 0;
};

/// Trains a fresh linear map F -> n_classes with full-batch cross-entropy
/// (adaptive optimizer, no weight decay) on the train split only; test data
/// never influences the weights. Deterministic per seed.
ProbeReport linear_probe(const nn::MatF& train_x, const std::vector<int>& train_y,
                         const nn::MatF& test_x, const std::vector<int>& test_y, int n_classes,
                         const ProbeConfig& cfg, const std::string& modality);

}  // namespace mmalign::eval
