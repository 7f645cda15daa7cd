#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "avsep/matrix.hpp"

namespace avsep::train {

constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Mat value;
};

// Container layout, all integers little-endian:
//   "CSEP"  u32 format_version  u32 tensor_count
//   per tensor: u32 name_len, name bytes (UTF-8), u8 dtype (1 = f64,
//     2 = f32), u8 ndim (2), u64 rows, u64 cols, row-major payload
//   u64 metadata_len, metadata (JSON text)
//   "CEND"  u64 FNV-1a of every preceding byte
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Mat* find(const std::string& name) const;
  const Mat& at(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& c);
// Throws IntegrityError on damage, VersionMismatch on a foreign version.
Checkpoint decode_checkpoint(std::string_view bytes);

// Written to a sibling temporary file and renamed into place.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a_bytes(std::string_view bytes);
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace avsep::train
