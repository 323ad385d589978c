#include "mmalign/io/cmeb.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmalign/common/error.hpp"

namespace mmalign::io {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'E', 'B'};
constexpr std::uint32_t kVersion = 1;

// All fields are little-endian; this codebase targets little-endian hosts
// (x86-64), so raw byte copies are the on-disk layout.
static_assert(sizeof(float) == 4, "CMEB stores 32-bit floats");

void append_u32(std::string& s, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

std::uint32_t take_u32(const std::string& s, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, s.data() + at, 4);
  return v;
}

}  // namespace

std::string cmeb_to_bytes(const nn::MatF& m) {
  std::string out;
  out.reserve(12 + 4 * static_cast<std::size_t>(m.size()));
  out.append(kMagic, 4);
  append_u32(out, kVersion);
  append_u32(out, static_cast<std::uint32_t>(m.rows()));
  append_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.append(reinterpret_cast<const char*>(m.data()), 4 * static_cast<std::size_t>(m.size()));
  return out;
}

nn::MatF cmeb_from_bytes(const std::string& bytes, const std::string& what) {
  MMA_REQUIRE(bytes.size() >= 16, "io.cmeb_truncated", "CMEB too short: " + what);
  MMA_REQUIRE(std::memcmp(bytes.data(), kMagic, 4) == 0, "io.cmeb_magic",
              "not a CMEB file: " + what);
  const std::uint32_t version = take_u32(bytes, 4);
  MMA_REQUIRE(version == kVersion, "io.cmeb_version",
              "unsupported CMEB version " + std::to_string(version) + ": " + what);
  const std::uint32_t rows = take_u32(bytes, 8);
  const std::uint32_t dim = take_u32(bytes, 12);
  const std::size_t need = 16 + 4ull * rows * dim;
  MMA_REQUIRE(bytes.size() == need, "io.cmeb_truncated",
              "CMEB payload size mismatch (" + std::to_string(bytes.size()) + " vs " +
                  std::to_string(need) + " bytes): " + what);
  nn::MatF m(rows, dim);
  std::memcpy(m.data(), bytes.data() + 16, need - 16);
  return m;
}

void write_cmeb(const std::string& path, const nn::MatF& m) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  MMA_REQUIRE(f.good(), "io.open", "cannot open for writing: " + path);
  const std::string bytes = cmeb_to_bytes(m);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  MMA_REQUIRE(f.good(), "io.write", "write failed: " + path);
}

void write_cmeb(const std::string& path, const nn::MatF& m, const CmebSidecar& sidecar) {
  write_cmeb(path, m);
  nlohmann::json j;
  j["ids"] = sidecar.ids;
  j["labels"] = sidecar.labels;
  std::ofstream f(path + ".json", std::ios::trunc);
  MMA_REQUIRE(f.good(), "io.open", "cannot open for writing: " + path + ".json");
  f << j.dump() << "\n";
  MMA_REQUIRE(f.good(), "io.write", "write failed: " + path + ".json");
}

nn::MatF read_cmeb(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MMA_REQUIRE(f.good(), "io.open", "cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return cmeb_from_bytes(bytes, path);
}

bool cmeb_sidecar_exists(const std::string& path) {
  return std::filesystem::exists(path + ".json");
}

CmebSidecar read_cmeb_sidecar(const std::string& path) {
  std::ifstream f(path + ".json");
  MMA_REQUIRE(f.good(), "io.open", "cannot open: " + path + ".json");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    raise("io.sidecar_parse", std::string("bad sidecar JSON: ") + e.what(), path + ".json");
  }
  CmebSidecar s;
  if (j.contains("ids")) s.ids = j["ids"].get<std::vector<std::int64_t>>();
  if (j.contains("labels")) s.labels = j["labels"].get<std::vector<int>>();
  return s;
}

}  // namespace mmalign::io
