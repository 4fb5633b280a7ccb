#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seufi/model.hpp"

// Binary model files. Layout (all integers little-endian, floats as IEEE-754 bits):
//
//   magic "SEUFIMDL" | u32 version | u8 dtype_mode | u8 activation | u16 0
//   u32 n_classes | u32 n_input_channels | u32 node_count
//   node_count x node record
//   32-byte SHA-256 of every preceding byte
//
// See docs/model_format.md for the node and tensor records.

namespace seufi {

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::byte> serialize_model(const ModelGraph& model);
ModelGraph deserialize_model(std::span<const std::byte> bytes);

void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

/// Stand-alone tensor file ("SEUFITNS" magic, same tensor record and trailer).
std::vector<std::byte> serialize_tensor(const Tensor& tensor);
Tensor deserialize_tensor(std::span<const std::byte> bytes);
void save_tensor(const Tensor& tensor, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);
std::string file_sha256(const std::filesystem::path& path);
/// Digest of the canonical serialization; identifies a model in caches and manifests.
std::string model_digest(const ModelGraph& model);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace seufi
