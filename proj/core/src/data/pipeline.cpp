#include "mmalign/data/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "mmalign/common/error.hpp"
#include "mmalign/common/rng.hpp"

namespace mmalign::data {

const char* sensor_kind_name(SensorKind k) {
  switch (k) {
    case SensorKind::acc_body: return "acc_body";
    case SensorKind::acc_wrist: return "acc_wrist";
    case SensorKind::gyro: return "gyro";
    case SensorKind::magnetometer: return "magnetometer";
  }
  return "?";
}

SensorKind sensor_kind_from_name(const std::string& name) {
  if (name == "acc_body") return SensorKind::acc_body;
  if (name == "acc_wrist") return SensorKind::acc_wrist;
  if (name == "gyro") return SensorKind::gyro;
  if (name == "magnetometer") return SensorKind::magnetometer;
  raise("data.sensor_kind", "unknown sensor kind: " + name);
}

const char* split_policy_name(SplitPolicy p) {
  switch (p) {
    case SplitPolicy::by_subject: return "by_subject";
    case SplitPolicy::by_session: return "by_session";
    case SplitPolicy::random: return "random";
  }
  return "?";
}

SplitPolicy split_policy_from_name(const std::string& name) {
  if (name == "by_subject") return SplitPolicy::by_subject;
  if (name == "by_session") return SplitPolicy::by_session;
  if (name == "random") return SplitPolicy::random;
  raise("data.split_policy", "unknown split policy: " + name);
}

RawSignal resample_signal(const RawSignal& signal, double target_hz) {
  const auto T = signal.channels.rows();
  MMA_REQUIRE(T >= 1 && signal.channels.cols() == 3, "data.signal_shape",
              "resample_signal: signal must be T x 3 with T >= 1");
  MMA_REQUIRE(target_hz > 0, "data.rate", "resample_signal: target_hz must be > 0");
  MMA_REQUIRE(signal.rate_hz >= target_hz, "data.upsample",
              "resample_signal: upsampling not supported (rate " +
                  std::to_string(signal.rate_hz) + " Hz < target " + std::to_string(target_hz) +
                  " Hz)");
  RawSignal out;
  out.rate_hz = target_hz;
  out.kind = signal.kind;
  if (signal.rate_hz == target_hz) {
    out.channels = signal.channels;
    return out;
  }
  const auto L = static_cast<Eigen::Index>(
      std::floor(static_cast<double>(T) * target_hz / signal.rate_hz));
  out.channels.resize(L, 3);
  const double step = signal.rate_hz / target_hz;
  for (Eigen::Index k = 0; k < L; ++k) {
    const double pos = static_cast<double>(k) * step;
    const auto lo = std::min(static_cast<Eigen::Index>(pos), T - 1);
    const auto hi = std::min(lo + 1, T - 1);
    const double frac = pos - static_cast<double>(lo);
    out.channels.row(k) = signal.channels.row(lo) * (1.0 - frac) + signal.channels.row(hi) * frac;
  }
  return out;
}

nn::MatF assemble_channels(const std::vector<RawSignal>& signals) {
  MMA_REQUIRE(signals.size() == 4, "data.sensor_count",
              "assemble_channels: expected 4 signals, got " + std::to_string(signals.size()));
  const SensorKind order[4] = {SensorKind::acc_body, SensorKind::acc_wrist, SensorKind::gyro,
                               SensorKind::magnetometer};
  const RawSignal* by_kind[4] = {nullptr, nullptr, nullptr, nullptr};
  for (const RawSignal& s : signals) {
    MMA_REQUIRE(s.channels.rows() >= 1 && s.channels.cols() == 3, "data.signal_shape",
                "assemble_channels: signal must be T x 3 with T >= 1");
    const int slot = static_cast<int>(s.kind);
    if (by_kind[slot] != nullptr)
      raise("data.sensor_duplicate",
            std::string("assemble_channels: duplicate sensor kind ") + sensor_kind_name(s.kind));
    by_kind[slot] = &s;
  }
  for (int i = 0; i < 4; ++i)
    if (by_kind[static_cast<int>(order[i])] == nullptr)
      raise("data.sensor_missing",
            std::string("assemble_channels: missing sensor kind ") + sensor_kind_name(order[i]));
  const double rate = by_kind[0]->rate_hz;
  Eigen::Index t_min = by_kind[0]->channels.rows();
  for (int i = 0; i < 4; ++i) {
    MMA_REQUIRE(by_kind[i]->rate_hz == rate, "data.rate_mismatch",
                "assemble_channels: all signals must share one sampling rate");
    t_min = std::min(t_min, by_kind[i]->channels.rows());
  }
  nn::MatF out(t_min, kChannels);
  for (int i = 0; i < 4; ++i)
    out.middleCols(3 * i, 3) = by_kind[static_cast<int>(order[i])]
                                   ->channels.topRows(t_min)
                                   .cast<float>();
  return out;
}

IMUWindow extract_window(const nn::MatF& assembled, int start, double t0_s, double rate_hz) {
  const auto T = assembled.rows();
  MMA_REQUIRE(assembled.cols() == kChannels, "data.signal_shape",
              "extract_window: expected 12 channels");
  MMA_REQUIRE(start >= 0 && start < T, "data.window_start",
              "extract_window: start " + std::to_string(start) + " outside [0, " +
                  std::to_string(T) + ")");
  IMUWindow w;
  w.valid_len = static_cast<int>(std::min<Eigen::Index>(kWindowLen, T - start));
  w.start_time_s = t0_s + static_cast<double>(start) / rate_hz;
  w.values = nn::MatF::Zero(kWindowLen, kChannels);
  w.values.topRows(w.valid_len) = assembled.middleRows(start, w.valid_len);
  return w;
}

FrameRef sample_frame(const FrameSampleMeta& meta, std::uint64_t seed) {
  MMA_REQUIRE(meta.fps > 0 && meta.n_frames >= 1, "data.video_meta",
              "sample_frame: fps > 0 and n_frames >= 1 required");
  MMA_REQUIRE(meta.window_end_s >= meta.window_start_s, "data.video_meta",
              "sample_frame: window span reversed");
  // Frame k sits at video_t0_s + k / fps. The 1e-9 guards keep exact span
  // endpoints inside the candidate set despite floating-point rounding.
  const double lo_f = (meta.window_start_s - meta.video_t0_s) * meta.fps;
  const double hi_f = (meta.window_end_s - meta.video_t0_s) * meta.fps;
  std::int64_t lo = static_cast<std::int64_t>(std::ceil(lo_f - 1e-9));
  std::int64_t hi = static_cast<std::int64_t>(std::floor(hi_f + 1e-9));
  lo = std::max<std::int64_t>(lo, 0);
  hi = std::min<std::int64_t>(hi, meta.n_frames - 1);
  if (lo > hi)
    raise("data.no_overlap", "sample_frame: video span does not overlap the IMU window",
          "window [" + std::to_string(meta.window_start_s) + ", " +
              std::to_string(meta.window_end_s) + "] s");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(lo, hi);
  FrameRef ref;
  ref.index = pick(rng);
  ref.t_s = meta.video_t0_s + static_cast<double>(ref.index) / meta.fps;
  return ref;
}

namespace {

// Walks shuffled group keys into three buckets against cumulative sample
// targets, forcing one group per remaining bucket so no split ends up empty.
std::map<int, int> assign_groups(const std::vector<int>& keys,
                                 const std::vector<std::size_t>& group_sizes, std::size_t total,
                                 const std::array<double, 3>& ratios) {
  std::map<int, int> bucket_of;
  const double t1 = static_cast<double>(total) * ratios[0];
  const double t2 = static_cast<double>(total) * (ratios[0] + ratios[1]);
  int bucket = 0;
  std::size_t cum = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    bucket_of[keys[i]] = bucket;
    cum += group_sizes[i];
    const std::size_t groups_left = keys.size() - i - 1;
    const std::size_t buckets_left = static_cast<std::size_t>(2 - bucket);
    if (bucket == 0 && (static_cast<double>(cum) >= t1 || groups_left <= buckets_left))
      bucket = 1;
    else if (bucket == 1 && (static_cast<double>(cum) >= t2 || groups_left <= buckets_left))
      bucket = 2;
  }
  return bucket_of;
}

}  // namespace

DatasetSplit split_dataset(const std::vector<PairedSample>& samples,
                           const std::array<double, 3>& ratios, SplitPolicy policy,
                           std::uint64_t seed) {
  MMA_REQUIRE(!samples.empty(), "data.empty", "split_dataset: no samples");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  MMA_REQUIRE(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0 && std::abs(sum - 1.0) < 1e-9,
              "data.ratios", "split_dataset: ratios must be positive and sum to 1");

  DatasetSplit split;
  split.seed = seed;
  split.policy = policy;
  auto rng = SeedStream(seed).engine("data-split");
  const std::size_t n = samples.size();

  if (policy == SplitPolicy::random) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto c1 = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[0]));
    const auto c2 = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * (ratios[0] + ratios[1])));
    for (std::size_t i = 0; i < n; ++i) {
      const PairedSample& s = samples[idx[i]];
      (i < c1 ? split.train : i < c2 ? split.val : split.test).push_back(s);
    }
    return split;
  }

  auto key_of = [&](const PairedSample& s) {
    return policy == SplitPolicy::by_subject ? s.subject_id : s.session_id;
  };
  std::map<int, std::size_t> counts;
  for (const PairedSample& s : samples) ++counts[key_of(s)];
  if (counts.size() < 3)
    raise("data.too_few_groups",
          std::string("split_dataset: ") +
              (policy == SplitPolicy::by_subject ? "subjects" : "sessions") +
              " fewer than splits (" + std::to_string(counts.size()) + " < 3)");
  std::vector<int> keys;
  for (const auto& [k, c] : counts) keys.push_back(k);
  std::shuffle(keys.begin(), keys.end(), rng);
  std::vector<std::size_t> sizes;
  sizes.reserve(keys.size());
  for (int k : keys) sizes.push_back(counts[k]);
  const auto bucket_of = assign_groups(keys, sizes, n, ratios);
  for (const PairedSample& s : samples) {
    switch (bucket_of.at(key_of(s))) {
      case 0: split.train.push_back(s); break;
      case 1: split.val.push_back(s); break;
      default: split.test.push_back(s); break;
    }
  }
  return split;
}

NormStats compute_norm_stats(const std::vector<PairedSample>& samples) {
  MMA_REQUIRE(!samples.empty(), "data.empty", "compute_norm_stats: no samples");
  nn::VecD sum = nn::VecD::Zero(kChannels);
  nn::VecD sumsq = nn::VecD::Zero(kChannels);
  std::int64_t rows = 0;
  for (const PairedSample& s : samples) {
    for (int r = 0; r < s.imu.valid_len; ++r) {
      const auto row = s.imu.values.row(r).cast<double>();
      sum += row.transpose();
      sumsq += row.array().square().matrix().transpose();
      ++rows;
    }
  }
  MMA_REQUIRE(rows > 0, "data.empty", "compute_norm_stats: no valid rows");
  NormStats st;
  st.mean = sum / static_cast<double>(rows);
  const nn::VecD var =
      (sumsq / static_cast<double>(rows) - st.mean.array().square().matrix()).cwiseMax(0.0);
  st.std = var.array().sqrt().max(1e-8).matrix();
  return st;
}

void apply_norm(IMUWindow& window, const NormStats& stats) {
  MMA_REQUIRE(stats.mean.size() == kChannels && stats.std.size() == kChannels, "data.norm_shape",
              "apply_norm: statistics must cover 12 channels");
  for (int r = 0; r < window.valid_len; ++r)
    for (int c = 0; c < kChannels; ++c)
      window.values(r, c) = static_cast<float>(
          (static_cast<double>(window.values(r, c)) - stats.mean(c)) / stats.std(c));
}

}  // namespace mmalign::data
