#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vla/tensor.hpp"

namespace vla {

/// VLT tensor file: magic "VLT1", u32 LE rank, rank x u32 LE dims, then
/// row-major float32 LE payload. Bit-exact round trip by construction.
void write_vlt(const std::filesystem::path& path, const Tensor& t);
Tensor read_vlt(const std::filesystem::path& path);

/// Snap every value to the nearest float32 (what a write/read cycle would do).
Tensor quantize_f32(const Tensor& t);

/// Binary PGM (P5) export with maxval 65535; pixel = round(value * 65535),
/// clamped to [0, 65535]. Values are expected in [0, 1].
void write_pgm16(const std::filesystem::path& path, const Tensor& map);

/// Line-oriented `key = value` manifest. Order preserved; '#' starts a comment.
using Manifest = std::vector<std::pair<std::string, std::string>>;
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& entries);
/// Lookup helper; throws if the key is missing.
const std::string& manifest_get(const Manifest& m, const std::string& key);
bool manifest_has(const Manifest& m, const std::string& key);

/// Whole-file readers used by round-trip checks and report writing.
std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace vla
