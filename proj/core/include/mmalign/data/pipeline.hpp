#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mmalign/data/types.hpp"

namespace mmalign::data {

/// Linear-interpolation downsampling to target_hz. Output length is
/// floor(T * target_hz / rate_hz); upsampling is rejected.
RawSignal resample_signal(const RawSignal& signal, double target_hz);

/// Concatenates exactly one signal per sensor kind into a T_min x 12 matrix,
/// columns ordered [acc_body, acc_wrist, gyro, magnetometer] x (x, y, z),
/// rows truncated to the shortest signal. All rates must match.
nn::MatF assemble_channels(const std::vector<RawSignal>& signals);

/// Copies min(kWindowLen, T - start) rows from `assembled` starting at
/// `start`; the remainder is zero. start_time_s = t0_s + start / rate_hz.
IMUWindow extract_window(const nn::MatF& assembled, int start, double t0_s = 0.0,
                         double rate_hz = kTargetHz);

/// Everything sample_frame needs to know about one (window, video) pair.
struct FrameSampleMeta {
  double window_start_s = 0.0;
  double window_end_s = 0.0;
  double fps = 30.0;
  std::int64_t n_frames = 0;
  double video_t0_s = 0.0;
};

/// Uniformly samples a frame whose timestamp lies inside the window span.
/// Pure function of the seed.
FrameRef sample_frame(const FrameSampleMeta& meta, std::uint64_t seed);

/// Deterministic split by the given policy. Ratios must be positive and sum
/// to 1 within 1e-9. Grouping policies keep each subject/session whole.
DatasetSplit split_dataset(const std::vector<PairedSample>& samples,
                           const std::array<double, 3>& ratios, SplitPolicy policy,
                           std::uint64_t seed);

/// Per-channel mean/std over valid (non-padded) rows of the given samples.
NormStats compute_norm_stats(const std::vector<PairedSample>& samples);

/// Z-scores the valid rows of a window in place; padded rows stay zero.
void apply_norm(IMUWindow& window, const NormStats& stats);

}  // namespace mmalign::data
