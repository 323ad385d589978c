#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "mmalign/nn/matrix.hpp"

namespace mmalign::data {

constexpr int kWindowLen = 256;
constexpr int kChannels = 12;
constexpr double kTargetHz = 50.0;
constexpr int kNumClasses = 35;

enum class SensorKind { acc_body, acc_wrist, gyro, magnetometer };

const char* sensor_kind_name(SensorKind k);
SensorKind sensor_kind_from_name(const std::string& name);

/// Raw sensor stream, one kind, uniformly sampled. T x 3 (x, y, z).
struct RawSignal {
  nn::MatD channels;
  double rate_hz = 0.0;
  SensorKind kind = SensorKind::acc_body;
};

/// Fixed-size model input. Rows at and beyond valid_len are exactly zero.
struct IMUWindow {
  nn::MatF values;  // kWindowLen x kChannels
  int valid_len = 0;
  double start_time_s = 0.0;
};

/// A concrete frame inside a pre-extracted frame directory.
struct FrameRef {
  std::string frames_dir;
  std::int64_t index = 0;
  double t_s = 0.0;
};

/// Vision side of a pair, in decreasing order of "how real":
/// an on-disk token file, a frame to be embedded, inline tokens, or a
/// synthetic feature vector awaiting the stub provider.
struct VisionFile {
  std::string path;
};
struct VisionTokens {
  nn::MatF tokens;  // L_v x D
};
struct VisionLatent {
  nn::VecF z;
};
using VisionSource = std::variant<VisionFile, FrameRef, VisionTokens, VisionLatent>;

struct PairedSample {
  std::int64_t id = 0;
  IMUWindow imu;
  VisionSource vision;
  int label = 0;
  int subject_id = 0;
  int scene_id = 0;
  int session_id = 0;
};

enum class SplitPolicy { by_subject, by_session, random };

const char* split_policy_name(SplitPolicy p);
SplitPolicy split_policy_from_name(const std::string& name);

struct DatasetSplit {
  std::vector<PairedSample> train;
  std::vector<PairedSample> val;
  std::vector<PairedSample> test;
  std::uint64_t seed = 0;
  SplitPolicy policy = SplitPolicy::by_subject;
};

/// Per-channel z-score statistics, estimated on the train split only.
struct NormStats {
  nn::VecD mean;  // kChannels
  nn::VecD std;   // kChannels
};

}  // namespace mmalign::data
