#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmalign/nn/matrix.hpp"

namespace mmalign::io {

/// Optional sidecar carried next to an embedding file ("<path>.json").
struct CmebSidecar {
  std::vector<std::int64_t> ids;
  std::vector<int> labels;
};

/// "CMEB" container: magic, u32 version=1, u32 rows, u32 dim, then
/// rows*dim little-endian float32 in row-major order.
void write_cmeb(const std::string& path, const nn::MatF& m);
void write_cmeb(const std::string& path, const nn::MatF& m, const CmebSidecar& sidecar);
nn::MatF read_cmeb(const std::string& path);
CmebSidecar read_cmeb_sidecar(const std::string& path);
bool cmeb_sidecar_exists(const std::string& path);

/// In-memory variants used by the checkpoint archive.
std::string cmeb_to_bytes(const nn::MatF& m);
nn::MatF cmeb_from_bytes(const std::string& bytes, const std::string& what);

}  // namespace mmalign::io
