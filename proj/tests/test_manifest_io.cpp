#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <mmalign/common/digest.hpp>
#include <mmalign/data/manifest.hpp>
#include <mmalign/io/checkpoint.hpp>
#include <mmalign/io/cmeb.hpp>
#include <nlohmann/json.hpp>

#include "test_helpers.hpp"

using namespace mmalign;
using nlohmann::json;
using testutil::TempDir;

namespace {

/// 50 Hz sensor CSV: timestamps k * 0.02, values base + k (x), base (y, z).
std::string sensor_csv(int rows, double base) {
  std::string out = "t,x,y,z\n";
  for (int k = 0; k < rows; ++k) {
    out += std::to_string(k * 0.02) + "," + std::to_string(base + k) + "," +
           std::to_string(base) + "," + std::to_string(base) + "\n";
  }
  return out;
}

/// Writes the four sensor CSVs for one record and returns the imu JSON block.
json write_sensors(const TempDir& dir, const std::string& stem, int rows) {
  json imu;
  double base = 0.0;
  for (const char* name : {"acc_body", "acc_wrist", "gyro", "magnetometer"}) {
    const auto p = dir / (stem + "_" + name + ".csv");
    testutil::write_file(p, sensor_csv(rows, base));
    imu[name] = p.string();
    base += 100.0;
  }
  return imu;
}

nn::MatF random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  nn::MatF m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = d(rng);
  return m;
}

}  // namespace

TEST_CASE("load_sensor_csv: rate from timestamps, values in column order") {
  TempDir dir;
  const auto p = dir / "acc.csv";
  testutil::write_file(p, sensor_csv(11, 5.0));
  const data::RawSignal s = data::load_sensor_csv(p.string(), data::SensorKind::acc_body);
  REQUIRE(s.channels.rows() == 11);
  // 10 intervals over 0.2 s -> 50 Hz.
  CHECK(s.rate_hz == doctest::Approx(50.0).epsilon(1e-9));
  CHECK(s.kind == data::SensorKind::acc_body);
  CHECK(s.channels(0, 0) == doctest::Approx(5.0));
  CHECK(s.channels(10, 0) == doctest::Approx(15.0));
  CHECK(s.channels(3, 1) == doctest::Approx(5.0));
}

TEST_CASE("load_sensor_csv: typed failures") {
  TempDir dir;
  auto write_and_code = [&](const std::string& body) {
    const auto p = dir / "bad.csv";
    testutil::write_file(p, body);
    return testutil::error_code_of(
        [&] { data::load_sensor_csv(p.string(), data::SensorKind::gyro); });
  };
  CHECK(write_and_code("time,x,y,z\n0,1,2,3\n0.02,1,2,3\n") == "data.csv");      // header
  CHECK(write_and_code("t,x,y,z\n0,1,2,3\n0,1,2,3\n") == "data.csv");            // not increasing
  CHECK(write_and_code("t,x,y,z\n0,1,2\n0.02,1,2,3\n") == "data.csv");           // short row
  CHECK(write_and_code("t,x,y,z\n0,1,2,3\n") == "data.csv");                     // one sample
  CHECK(testutil::error_code_of([&] {
          data::load_sensor_csv((dir / "absent.csv").string(), data::SensorKind::gyro);
        }) == "io.open");
}

TEST_CASE("load_manifest: parses both vision flavors") {
  TempDir dir;
  json rec0{{"id", 7},       {"subject_id", 1}, {"session_id", 2},
            {"scene_id", 3}, {"label", 4},      {"label_name", "walk"},
            {"t0_s", 1.5},   {"imu", write_sensors(dir, "r0", 20)},
            {"vision", {{"frames_dir", (dir / "frames").string()}, {"fps", 30.0}}}};
  json rec1{{"id", 8},
            {"subject_id", 2},
            {"label", 0},
            {"imu", write_sensors(dir, "r1", 20)},
            {"vision", {{"embedding_path", (dir / "emb.cmeb").string()}}}};
  const auto mp = dir / "manifest.jsonl";
  testutil::write_file(mp, rec0.dump() + "\n\n" + rec1.dump() + "\n");

  const auto records = data::load_manifest(mp.string());
  REQUIRE(records.size() == 2);
  CHECK(records[0].id == 7);
  CHECK(records[0].subject_id == 1);
  CHECK(records[0].session_id == 2);
  CHECK(records[0].scene_id == 3);
  CHECK(records[0].label == 4);
  CHECK(records[0].label_name == "walk");
  CHECK(records[0].t0_s == doctest::Approx(1.5));
  CHECK(records[0].has_frames());
  CHECK(records[0].fps == doctest::Approx(30.0));
  CHECK(records[0].imu_paths.size() == 4);
  CHECK(!records[1].has_frames());
  CHECK(records[1].embedding_path == (dir / "emb.cmeb").string());
  CHECK(records[1].session_id == 0);  // optional field defaults
}

TEST_CASE("load_manifest: all malformed records reported at once with line numbers") {
  TempDir dir;
  const json imu = write_sensors(dir, "m", 20);
  json good{{"id", 1}, {"subject_id", 0}, {"label", 0}, {"imu", imu},
            {"vision", {{"embedding_path", "x.cmeb"}}}};
  json no_subject{{"id", 2}, {"label", 0}, {"imu", imu},
                  {"vision", {{"embedding_path", "x.cmeb"}}}};
  json both_vision{{"id", 3},  {"subject_id", 0}, {"label", 0}, {"imu", imu},
                   {"vision", {{"embedding_path", "x.cmeb"}, {"frames_dir", "f"}, {"fps", 30.0}}}};
  json bad_label{{"id", 4}, {"subject_id", 0}, {"label", data::kNumClasses}, {"imu", imu},
                 {"vision", {{"embedding_path", "x.cmeb"}}}};
  const auto mp = dir / "manifest.jsonl";
  testutil::write_file(mp, good.dump() + "\n" + no_subject.dump() + "\n" + both_vision.dump() +
                               "\n" + bad_label.dump() + "\n");
  try {
    data::load_manifest(mp.string());
    FAIL("expected data.manifest error");
  } catch (const Error& e) {
    CHECK(std::string(e.code()) == "data.manifest");
    const std::string ctx = e.context();
    CHECK(ctx.find("line 2") != std::string::npos);
    CHECK(ctx.find("line 3") != std::string::npos);
    CHECK(ctx.find("line 4") != std::string::npos);
    CHECK(ctx.find("line 1") == std::string::npos);  // the good record is not flagged
  }
}

TEST_CASE("preprocess_manifest + load_cache: end-to-end, deterministic bytes") {
  TempDir dir;
  // Record 0: frame-backed vision, 300-row sensors (window fully valid).
  // Record 1: embedding-backed vision, 40-row sensors (padded window).
  std::filesystem::create_directory(dir / "frames");
  for (int i = 0; i < 120; ++i) testutil::write_file(dir / ("frames/f" + std::to_string(i)), "x");
  json rec0{{"id", 10},     {"subject_id", 1}, {"label", 2},
            {"t0_s", 0.0},  {"imu", write_sensors(dir, "a", 300)},
            {"vision", {{"frames_dir", (dir / "frames").string()}, {"fps", 30.0}}}};
  json rec1{{"id", 11},
            {"subject_id", 2},
            {"label", 2},
            {"imu", write_sensors(dir, "b", 40)},
            {"vision", {{"embedding_path", (dir / "emb.cmeb").string()}}}};
  const auto mp = dir / "manifest.jsonl";
  testutil::write_file(mp, rec0.dump() + "\n" + rec1.dump() + "\n");

  const auto cache1 = (dir / "cache1").string();
  const auto summary = data::preprocess_manifest(mp.string(), cache1, 5);
  CHECK(summary.n_samples == 2);
  CHECK(summary.per_class.at(2) == 2);
  CHECK(summary.per_subject.at(1) == 1);
  CHECK(summary.per_subject.at(2) == 1);
  CHECK(std::filesystem::exists(dir / "cache1/windows/10.cmeb"));
  CHECK(std::filesystem::exists(dir / "cache1/summary.json"));

  const auto samples = data::load_cache(cache1);
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].id == 10);
  CHECK(samples[0].imu.valid_len == data::kWindowLen);
  CHECK(samples[1].imu.valid_len == 40);
  CHECK(samples[1].imu.values.bottomRows(data::kWindowLen - 40).cwiseAbs().maxCoeff() == 0.0f);
  // The cached window must equal a direct load of the record.
  const auto records = data::load_manifest(mp.string());
  const data::IMUWindow direct = data::load_record_window(records[0], 0);
  CHECK((samples[0].imu.values - direct.values).cwiseAbs().maxCoeff() == 0.0f);
  // Vision flavors survive the round trip; the frame stays inside the video.
  REQUIRE(std::holds_alternative<data::FrameRef>(samples[0].vision));
  const auto& frame = std::get<data::FrameRef>(samples[0].vision);
  CHECK(frame.index >= 0);
  CHECK(frame.index < 120);
  REQUIRE(std::holds_alternative<data::VisionFile>(samples[1].vision));

  // Rerunning the preprocessor writes byte-identical artifacts.
  const auto cache2 = (dir / "cache2").string();
  data::preprocess_manifest(mp.string(), cache2, 5);
  CHECK(testutil::read_file(dir / "cache1/index.jsonl") ==
        testutil::read_file(dir / "cache2/index.jsonl"));
  CHECK(testutil::read_file(dir / "cache1/windows/10.cmeb") ==
        testutil::read_file(dir / "cache2/windows/10.cmeb"));
  CHECK(testutil::read_file(dir / "cache1/windows/11.cmeb") ==
        testutil::read_file(dir / "cache2/windows/11.cmeb"));
}

TEST_CASE("CMEB: bitwise round trip on disk and in memory") {
  TempDir dir;
  const nn::MatF m = random_matrix(7, 5, 99);
  const auto p = (dir / "m.cmeb").string();
  io::write_cmeb(p, m);
  const nn::MatF back = io::read_cmeb(p);
  REQUIRE(back.rows() == 7);
  REQUIRE(back.cols() == 5);
  CHECK(std::memcmp(back.data(), m.data(), sizeof(float) * 35) == 0);

  const std::string bytes = io::cmeb_to_bytes(m);
  CHECK(bytes.size() == 16 + 4 * 35);
  const nn::MatF back2 = io::cmeb_from_bytes(bytes, "unit");
  CHECK(std::memcmp(back2.data(), m.data(), sizeof(float) * 35) == 0);

  // Zero-row matrices are representable.
  const nn::MatF empty(0, 4);
  const nn::MatF back3 = io::cmeb_from_bytes(io::cmeb_to_bytes(empty), "unit");
  CHECK(back3.rows() == 0);
  CHECK(back3.cols() == 4);
}

TEST_CASE("CMEB: sidecar round trip") {
  TempDir dir;
  const auto p = (dir / "emb.cmeb").string();
  io::CmebSidecar side;
  side.ids = {5, 9, 12};
  side.labels = {0, 3, 1};
  io::write_cmeb(p, random_matrix(3, 4, 1), side);
  CHECK(io::cmeb_sidecar_exists(p));
  const io::CmebSidecar back = io::read_cmeb_sidecar(p);
  CHECK(back.ids == side.ids);
  CHECK(back.labels == side.labels);
  CHECK(!io::cmeb_sidecar_exists((dir / "other.cmeb").string()));
}

TEST_CASE("CMEB: corrupt inputs fail with typed codes") {
  const nn::MatF m = random_matrix(3, 4, 2);
  std::string good = io::cmeb_to_bytes(m);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(testutil::error_code_of([&] { io::cmeb_from_bytes(bad_magic, "t"); }) == "io.cmeb_magic");

  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK(testutil::error_code_of([&] { io::cmeb_from_bytes(bad_version, "t"); }) ==
        "io.cmeb_version");

  CHECK(testutil::error_code_of([&] { io::cmeb_from_bytes(good.substr(0, 10), "t"); }) ==
        "io.cmeb_truncated");
  CHECK(testutil::error_code_of([&] { io::cmeb_from_bytes(good.substr(0, good.size() - 4), "t"); }) ==
        "io.cmeb_truncated");
  CHECK(testutil::error_code_of([&] { io::cmeb_from_bytes(good + "zz", "t"); }) ==
        "io.cmeb_truncated");

  TempDir dir;
  const auto p = dir / "bad.cmeb";
  testutil::write_file(p, good.substr(0, good.size() - 1));
  CHECK(testutil::error_code_of([&] { io::read_cmeb(p.string()); }) == "io.cmeb_truncated");
}

TEST_CASE("checkpoint archive: digests, flags and documents survive a round trip") {
  TempDir dir;
  io::Checkpoint ck;
  ck.model_config = json{{"d_model", 64}, {"n_layers", 2}};
  ck.norm_stats = json{{"mean", {0.0, 1.0}}, {"std", {1.0, 2.0}}};
  ck.train_state = json{{"epoch", 3}, {"seed", 42}};
  ck.params.add("encoder/conv/w", random_matrix(6, 4, 11), true);
  ck.params.add("encoder/conv/b", random_matrix(1, 4, 12), true);
  ck.params.add("resampler/latents", random_matrix(8, 4, 13), false);
  ck.params.add("vision/stub/w", random_matrix(2, 4, 14), false);

  const auto p = (dir / "ck.cmar").string();
  io::save_checkpoint(p, ck);
  const io::Checkpoint back = io::load_checkpoint(p);

  CHECK(back.model_config == ck.model_config);
  CHECK(back.norm_stats == ck.norm_stats);
  CHECK(back.train_state == ck.train_state);
  CHECK(back.params.size() == 4);
  CHECK(back.params.digest() == ck.params.digest());  // covers bytes, names, flags
  CHECK(back.params.at("encoder/conv/w").trainable);
  CHECK(!back.params.at("resampler/latents").trainable);
  CHECK(!back.params.at("vision/stub/w").trainable);
  CHECK(back.params.size_scalars(true) == 6 * 4 + 4);

  // Saving the loaded checkpoint again reproduces the file byte for byte.
  const auto p2 = (dir / "ck2.cmar").string();
  io::save_checkpoint(p2, back);
  CHECK(testutil::read_file(p) == testutil::read_file(p2));
}

TEST_CASE("checkpoint archive: corrupt files fail with typed codes") {
  TempDir dir;
  io::Checkpoint ck;
  ck.model_config = json::object();
  ck.norm_stats = json::object();
  ck.train_state = json::object();
  ck.params.add("w", random_matrix(2, 2, 3), true);
  const auto p = (dir / "ck.cmar").string();
  io::save_checkpoint(p, ck);
  const std::string good = testutil::read_file(p);

  const auto code_for = [&](const std::string& bytes) {
    const auto bad = dir / "bad.cmar";
    testutil::write_file(bad, bytes);
    return testutil::error_code_of([&] { io::load_checkpoint(bad.string()); });
  };
  std::string bad_magic = good;
  bad_magic[0] = 'Z';
  CHECK(code_for(bad_magic) == "io.archive_magic");
  std::string bad_version = good;
  bad_version[4] = 7;
  CHECK(code_for(bad_version) == "io.archive_version");
  CHECK(code_for(good.substr(0, good.size() / 2)) == "io.archive_truncated");
  CHECK(code_for(good + "tail") == "io.archive_trailing");
  CHECK(testutil::error_code_of([&] { io::load_checkpoint((dir / "nope.cmar").string()); }) ==
        "io.open");
}
