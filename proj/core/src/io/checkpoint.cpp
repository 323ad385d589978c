#include "mmalign/io/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "mmalign/common/error.hpp"
#include "mmalign/io/cmeb.hpp"

namespace mmalign::io {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::string name;
  std::string payload;
};

void append_u32(std::string& s, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

void append_u64(std::string& s, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  s.append(b, 8);
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + at_, 4);
    at_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + at_, 8);
    at_ += 8;
    return v;
  }
  std::string str(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(at_, len);
    at_ += len;
    return s;
  }
  bool done() const { return at_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    MMA_REQUIRE(at_ + n <= bytes_.size(), "io.archive_truncated", "archive truncated: " + path_);
  }
  std::string bytes_;
  std::string path_;
  std::size_t at_ = 0;
};

void write_archive(const std::string& path, const std::vector<Entry>& entries) {
  std::string out;
  out.append(kMagic, 4);
  append_u32(out, kVersion);
  append_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const Entry& e : entries) {
    append_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.append(e.name);
    append_u64(out, e.payload.size());
    out.append(e.payload);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  MMA_REQUIRE(f.good(), "io.open", "cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  MMA_REQUIRE(f.good(), "io.write", "write failed: " + path);
}

std::map<std::string, std::string> read_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MMA_REQUIRE(f.good(), "io.open", "cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  MMA_REQUIRE(bytes.size() >= 12 && std::memcmp(bytes.data(), kMagic, 4) == 0, "io.archive_magic",
              "not a checkpoint archive: " + path);
  Reader r(std::move(bytes), path);
  r.str(4);  // magic, checked above
  const std::uint32_t version = r.u32();
  MMA_REQUIRE(version == kVersion, "io.archive_version",
              "unsupported archive version " + std::to_string(version) + ": " + path);
  const std::uint32_t count = r.u32();
  std::map<std::string, std::string> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint64_t size = r.u64();
    entries[name] = r.str(size);
  }
  MMA_REQUIRE(r.done(), "io.archive_trailing", "trailing bytes in archive: " + path);
  return entries;
}

nlohmann::json parse_entry(const std::map<std::string, std::string>& entries,
                           const std::string& name, const std::string& path) {
  auto it = entries.find(name);
  if (it == entries.end())
    raise("io.archive_missing", "archive entry missing: " + name, path);
  try {
    return nlohmann::json::parse(it->second);
  } catch (const nlohmann::json::exception& e) {
    raise("io.archive_parse", "bad JSON in archive entry " + name + ": " + e.what(), path);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<Entry> entries;
  entries.push_back({"model_config.json", ckpt.model_config.dump()});
  entries.push_back({"norm_stats.json", ckpt.norm_stats.dump()});
  entries.push_back({"train_state.json", ckpt.train_state.dump()});
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params) {
    index.push_back({{"name", name},
                     {"rows", t.value.rows()},
                     {"cols", t.value.cols()},
                     {"frozen", !t.trainable}});
  }
  entries.push_back({"tensors.json", nlohmann::json{{"tensors", index}}.dump()});
  for (const auto& [name, t] : ckpt.params)
    entries.push_back({"tensors/" + name, cmeb_to_bytes(t.value)});
  write_archive(path, entries);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto entries = read_archive(path);
  Checkpoint ckpt;
  ckpt.model_config = parse_entry(entries, "model_config.json", path);
  ckpt.norm_stats = parse_entry(entries, "norm_stats.json", path);
  ckpt.train_state = parse_entry(entries, "train_state.json", path);
  const nlohmann::json index = parse_entry(entries, "tensors.json", path);
  MMA_REQUIRE(index.contains("tensors"), "io.archive_parse", "tensors.json lacks index: " + path);
  for (const auto& rec : index["tensors"]) {
    const std::string name = rec.at("name").get<std::string>();
    auto it = entries.find("tensors/" + name);
    if (it == entries.end())
      raise("io.archive_missing", "archive entry missing: tensors/" + name, path);
    nn::MatF m = cmeb_from_bytes(it->second, path + "!tensors/" + name);
    MMA_REQUIRE(m.rows() == rec.at("rows").get<Eigen::Index>() &&
                    m.cols() == rec.at("cols").get<Eigen::Index>(),
                "io.archive_shape", "tensor shape disagrees with index: " + name);
    ckpt.params.add(name, std::move(m), !rec.at("frozen").get<bool>());
  }
  return ckpt;
}

}  // namespace mmalign::io
