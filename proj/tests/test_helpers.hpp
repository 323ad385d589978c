#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <mmalign/common/error.hpp>

namespace testutil {

/// Unique scratch directory, removed on destruction. Each test that touches
/// the filesystem gets its own so parallel doctest runs cannot collide.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / ("mmalign_test_" + std::to_string(::rand()) + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("TempDir: could not create scratch directory");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
  if (!out) throw std::runtime_error("write_file failed: " + p.string());
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Error-code extractor for CHECK-style assertions on typed failures.
template <typename Fn>
std::string error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const mmalign::Error& e) {
    return e.code();
  } catch (...) {
    return "<non-mmalign-exception>";
  }
  return "<no-error>";
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs the CLI binary with stdout/stderr captured to files in `dir`.
inline CommandResult run_command(const std::filesystem::path& dir, const std::string& cmd) {
  const auto out_path = dir / "cmd_stdout.txt";
  const auto err_path = dir / "cmd_stderr.txt";
  const std::string full = cmd + " > " + out_path.string() + " 2> " + err_path.string();
  const int status = std::system(full.c_str());
  CommandResult r;
  r.exit_code = (status == -1) ? -1 : WEXITSTATUS(status);
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  return r;
}

}  // namespace testutil
