#pragma once

// On-disk ingestion: newline-delimited JSON manifests, `t,x,y,z` sensor CSV
// files, and a preprocessed window cache that downstream commands load
// without touching the raw files again.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmalign/data/pipeline.hpp"
#include "mmalign/data/types.hpp"

namespace mmalign::data {

/// One manifest record: metadata plus file paths, nothing loaded yet.
/// The vision side is either a frame directory (with fps) or a precomputed
/// embedding file — exactly one of the two.
struct ManifestRecord {
  std::int64_t id = 0;
  int subject_id = 0;
  int scene_id = 0;
  int session_id = 0;
  int label = 0;
  std::string label_name;
  std::map<SensorKind, std::string> imu_paths;
  std::string frames_dir;
  double fps = 0.0;
  std::string embedding_path;
  double t0_s = 0.0;

  bool has_frames() const { return !frames_dir.empty(); }
};

/// Parses a newline-delimited JSON manifest. Every malformed record is
/// collected; if any exist the call fails once with all offending line
/// numbers and reasons in the error context.
std::vector<ManifestRecord> load_manifest(const std::string& path);

/// Reads one sensor CSV (header `t,x,y,z`, strictly increasing timestamps,
/// at least two rows). The sampling rate is (n-1) / (t_last - t_first).
RawSignal load_sensor_csv(const std::string& path, SensorKind kind);

/// Loads a record's four sensor files, resamples each to 50 Hz, assembles
/// the 12-channel matrix and extracts the window starting at row `start`.
IMUWindow load_record_window(const ManifestRecord& rec, int start = 0);

/// Result of preprocess_manifest, also serialized as summary.json.
struct PreprocessSummary {
  int n_samples = 0;
  std::map<int, int> per_class;
  std::map<int, int> per_subject;
};

/// Windows every manifest record into `out_dir`: one CMEB file per sample
/// under windows/, an index.jsonl with metadata + vision references, and a
/// summary.json with per-class/per-subject counts. Frame indices are drawn
/// deterministically from `seed` per record id. Deterministic: rerunning on
/// unchanged input rewrites byte-identical files.
PreprocessSummary preprocess_manifest(const std::string& manifest_path,
                                      const std::string& out_dir, std::uint64_t seed);

/// Loads a preprocessed cache back into memory, in index order.
std::vector<PairedSample> load_cache(const std::string& cache_dir);

}  // namespace mmalign::data
