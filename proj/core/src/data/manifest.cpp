#include "mmalign/data/manifest.hpp"

#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmalign/common/error.hpp"
#include "mmalign/common/rng.hpp"
#include "mmalign/io/cmeb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmalign::data {

namespace {

constexpr const char* kSensorNames[] = {"acc_body", "acc_wrist", "gyro", "magnetometer"};

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

// Parses and validates one manifest line; throws std::runtime_error with a
// human-readable reason (the caller prefixes the line number).
ManifestRecord parse_record(const std::string& line) {
  const json j = json::parse(line);
  if (!j.is_object()) throw std::runtime_error("record is not a JSON object");

  ManifestRecord rec;
  if (!j.contains("id") || !j["id"].is_number_integer())
    throw std::runtime_error("missing integer field 'id'");
  rec.id = j["id"].get<std::int64_t>();
  const std::string who = "record id " + std::to_string(rec.id);

  auto get_int = [&](const char* key, bool required, int fallback) {
    if (!j.contains(key)) {
      if (required) throw std::runtime_error(who + ": missing integer field '" + key + "'");
      return fallback;
    }
    if (!j[key].is_number_integer())
      throw std::runtime_error(who + ": field '" + key + "' is not an integer");
    return j[key].get<int>();
  };
  rec.subject_id = get_int("subject_id", true, 0);
  rec.scene_id = get_int("scene_id", false, 0);
  rec.session_id = get_int("session_id", false, 0);
  rec.label = get_int("label", true, 0);
  if (rec.label < 0 || rec.label >= kNumClasses)
    throw std::runtime_error(who + ": label " + std::to_string(rec.label) +
                             " outside [0, " + std::to_string(kNumClasses) + ")");
  if (j.contains("label_name")) rec.label_name = j["label_name"].get<std::string>();
  if (j.contains("t0_s")) rec.t0_s = j["t0_s"].get<double>();

  if (!j.contains("imu") || !j["imu"].is_object())
    throw std::runtime_error(who + ": missing 'imu' object");
  for (const char* name : kSensorNames) {
    const auto& imu = j["imu"];
    if (!imu.contains(name) || !imu[name].is_string() || imu[name].get<std::string>().empty())
      throw std::runtime_error(who + ": missing " + name + " path");
    rec.imu_paths[sensor_kind_from_name(name)] = imu[name].get<std::string>();
  }

  if (!j.contains("vision") || !j["vision"].is_object())
    throw std::runtime_error(who + ": missing 'vision' object");
  const auto& vis = j["vision"];
  const bool frames = vis.contains("frames_dir");
  const bool emb = vis.contains("embedding_path");
  if (frames == emb)
    throw std::runtime_error(who + ": vision needs exactly one of frames_dir/embedding_path");
  if (frames) {
    rec.frames_dir = vis["frames_dir"].get<std::string>();
    if (!vis.contains("fps")) throw std::runtime_error(who + ": frames_dir without fps");
    rec.fps = vis["fps"].get<double>();
    if (!(rec.fps > 0.0)) throw std::runtime_error(who + ": fps must be positive");
  } else {
    rec.embedding_path = vis["embedding_path"].get<std::string>();
  }
  return rec;
}

std::int64_t count_frames(const std::string& frames_dir, std::int64_t record_id) {
  std::error_code ec;
  std::int64_t n = 0;
  for (const auto& entry : fs::directory_iterator(frames_dir, ec))
    if (entry.is_regular_file()) ++n;
  if (ec || n == 0)
    raise("data.frames_dir", "frame directory missing or empty",
          frames_dir + " (record id " + std::to_string(record_id) + ")");
  return n;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  MMA_REQUIRE(out.good(), "io.open", "cannot open for writing: " + path.string());
  out << text;
  MMA_REQUIRE(out.good(), "io.write", "write failed: " + path.string());
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  MMA_REQUIRE(in.good(), "io.open", "cannot open manifest: " + path);

  std::vector<ManifestRecord> records;
  std::vector<std::string> problems;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    line = strip_cr(line);
    if (line.empty()) continue;
    try {
      records.push_back(parse_record(line));
    } catch (const std::exception& e) {
      problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string ctx;
    for (std::size_t i = 0; i < problems.size(); ++i) {
      if (i) ctx += "; ";
      ctx += problems[i];
    }
    raise("data.manifest",
          "manifest has " + std::to_string(problems.size()) + " malformed record(s)", ctx);
  }
  MMA_REQUIRE(!records.empty(), "data.manifest", "manifest is empty: " + path);
  return records;
}

RawSignal load_sensor_csv(const std::string& path, SensorKind kind) {
  std::ifstream in(path, std::ios::binary);
  MMA_REQUIRE(in.good(), "io.open", "cannot open sensor file: " + path);

  std::string line;
  MMA_REQUIRE(static_cast<bool>(std::getline(in, line)), "data.csv", "empty sensor file: " + path);
  if (strip_cr(line) != "t,x,y,z")
    raise("data.csv", "expected header 't,x,y,z'", path + " line 1: " + line);

  std::vector<std::array<double, 4>> rows;
  for (int line_no = 2; std::getline(in, line); ++line_no) {
    line = strip_cr(line);
    if (line.empty()) continue;
    std::array<double, 4> vals{};
    const char* p = line.c_str();
    for (int f = 0; f < 4; ++f) {
      char* end = nullptr;
      vals[f] = std::strtod(p, &end);
      const bool last = f == 3;
      if (end == p || (!last && *end != ',') || (last && *end != '\0'))
        raise("data.csv", "malformed row (need 4 comma-separated numbers)",
              path + " line " + std::to_string(line_no) + ": " + line);
      p = last ? end : end + 1;
    }
    if (!rows.empty() && vals[0] <= rows.back()[0])
      raise("data.csv", "timestamps must be strictly increasing",
            path + " line " + std::to_string(line_no));
    rows.push_back(vals);
  }
  MMA_REQUIRE(rows.size() >= 2, "data.csv", "need at least 2 samples: " + path);

  RawSignal sig;
  sig.kind = kind;
  sig.channels.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < 3; ++c) sig.channels(static_cast<Eigen::Index>(r), c) = rows[r][c + 1];
  const double span_s = rows.back()[0] - rows.front()[0];
  sig.rate_hz = static_cast<double>(rows.size() - 1) / span_s;
  return sig;
}

IMUWindow load_record_window(const ManifestRecord& rec, int start) {
  std::vector<RawSignal> signals;
  signals.reserve(4);
  for (const auto& [kind, path] : rec.imu_paths) {
    RawSignal sig = load_sensor_csv(path, kind);
    // CSV rates come from timestamp arithmetic; snap near-target rates so the
    // resampler's equality fast path (and its downsample-only precondition)
    // sees exactly 50 Hz when the file nominally is 50 Hz.
    if (std::abs(sig.rate_hz - kTargetHz) < 1e-6) sig.rate_hz = kTargetHz;
    signals.push_back(resample_signal(sig, kTargetHz));
  }
  const nn::MatF assembled = assemble_channels(signals);
  return extract_window(assembled, start, rec.t0_s);
}

PreprocessSummary preprocess_manifest(const std::string& manifest_path,
                                      const std::string& out_dir, std::uint64_t seed) {
  const std::vector<ManifestRecord> records = load_manifest(manifest_path);
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "windows", ec);
  MMA_REQUIRE(!ec, "io.mkdir", "cannot create cache directory: " + (root / "windows").string());

  const SeedStream stream(seed);
  PreprocessSummary summary;
  std::ostringstream index;
  for (const ManifestRecord& rec : records) {
    const IMUWindow window = load_record_window(rec, 0);
    const std::string rel = "windows/" + std::to_string(rec.id) + ".cmeb";
    io::write_cmeb((root / rel).string(), window.values);

    json entry{{"id", rec.id},
               {"subject_id", rec.subject_id},
               {"scene_id", rec.scene_id},
               {"session_id", rec.session_id},
               {"label", rec.label},
               {"label_name", rec.label_name},
               {"window", rel},
               {"valid_len", window.valid_len},
               {"start_time_s", window.start_time_s}};
    if (rec.has_frames()) {
      FrameSampleMeta meta;
      meta.window_start_s = window.start_time_s;
      meta.window_end_s = window.start_time_s + window.valid_len / kTargetHz;
      meta.fps = rec.fps;
      meta.n_frames = count_frames(rec.frames_dir, rec.id);
      meta.video_t0_s = rec.t0_s;
      FrameRef frame = sample_frame(meta, stream.derive("frame-sample", rec.id));
      frame.frames_dir = rec.frames_dir;
      entry["vision"] = json{{"frames_dir", frame.frames_dir},
                             {"frame_index", frame.index},
                             {"frame_t_s", frame.t_s},
                             {"fps", rec.fps}};
    } else {
      entry["vision"] = json{{"embedding_path", rec.embedding_path}};
    }
    index << entry.dump() << '\n';

    ++summary.n_samples;
    ++summary.per_class[rec.label];
    ++summary.per_subject[rec.subject_id];
  }
  write_text(root / "index.jsonl", index.str());

  json counts_class = json::object();
  for (const auto& [k, v] : summary.per_class) counts_class[std::to_string(k)] = v;
  json counts_subject = json::object();
  for (const auto& [k, v] : summary.per_subject) counts_subject[std::to_string(k)] = v;
  const json sj{{"n_samples", summary.n_samples},
                {"per_class", counts_class},
                {"per_subject", counts_subject}};
  write_text(root / "summary.json", sj.dump(2) + "\n");
  return summary;
}

std::vector<PairedSample> load_cache(const std::string& cache_dir) {
  const fs::path root(cache_dir);
  std::ifstream in(root / "index.jsonl", std::ios::binary);
  MMA_REQUIRE(in.good(), "io.open", "cannot open cache index: " + (root / "index.jsonl").string());

  std::vector<PairedSample> samples;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    line = strip_cr(line);
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      PairedSample s;
      s.id = j.at("id").get<std::int64_t>();
      s.subject_id = j.at("subject_id").get<int>();
      s.scene_id = j.at("scene_id").get<int>();
      s.session_id = j.at("session_id").get<int>();
      s.label = j.at("label").get<int>();
      s.imu.values = io::read_cmeb((root / j.at("window").get<std::string>()).string());
      s.imu.valid_len = j.at("valid_len").get<int>();
      s.imu.start_time_s = j.at("start_time_s").get<double>();
      const auto& vis = j.at("vision");
      if (vis.contains("frames_dir")) {
        FrameRef frame;
        frame.frames_dir = vis.at("frames_dir").get<std::string>();
        frame.index = vis.at("frame_index").get<std::int64_t>();
        frame.t_s = vis.at("frame_t_s").get<double>();
        s.vision = frame;
      } else {
        s.vision = VisionFile{vis.at("embedding_path").get<std::string>()};
      }
      samples.push_back(std::move(s));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      raise("data.cache", "malformed cache index entry",
            "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  MMA_REQUIRE(!samples.empty(), "data.cache", "cache index is empty: " + cache_dir);
  return samples;
}

}  // namespace mmalign::data
