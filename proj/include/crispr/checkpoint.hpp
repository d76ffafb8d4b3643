#pragma once

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "CRSP"
//   4       4     u32 format version (currently 1)
//   8       8     u64 metadata length L in bytes
//   16      L     UTF-8 JSON metadata
//   16+L    ...   tensor payloads, row-major, in the order given by the
//                 tensor table offsets (no padding between tensors)
//
// Metadata is a JSON object serialized compactly with sorted keys:
//
//   {"config": {...ModelConfig...},
//    "tensors": {"<name>": {"dtype": "f32"|"f64", "offset": <bytes from payload start>,
//                           "shape": [..]}, ...},
//    "base_fingerprint": "<hex>"        (only for edited models)}
//
// Payload values are IEEE-754 binary32 or binary64 per the config dtype.
// Writing is canonical, so save(load(bytes)) == bytes for any file this
// module produced.

#include <filesystem>
#include <string>
#include <string_view>

#include "crispr/model.hpp"

namespace crispr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(std::string_view bytes);

Model load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const Model& model, const std::filesystem::path& path);

// Hex SHA-256 of the canonical serialization with base_fingerprint omitted.
std::string checkpoint_fingerprint(const Model& model);

// File helpers shared by the JSON artifact writers.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace crispr
