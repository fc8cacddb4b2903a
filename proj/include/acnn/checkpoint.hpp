#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "acnn/model.hpp"

namespace acnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian layout:
//   "ACNK" | u32 version | str arch_id | u32 in_channels, in_height, in_width
//   | u32 layer_count | layer_count x { u8 kind, u8 activation, u16 0, u32 out_channels, kernel,
//     stride, padding, f64 slope, rate, p }
//   | for each conv layer in order: u32 n, n x f32 weights, u32 m, m x f32 bias
//   | u32 crc32 of every preceding byte
// where str is a u32 length followed by the bytes.
std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
// Checks, in order: magic (BadMagic), checksum (ChecksumMismatch), version (VersionMismatch).
Model parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace acnn
