#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "acnn/feature_map.hpp"

namespace acnn {

// 8-bit raster in interleaved row-major order (RGB triples when channels == 3).
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

// Quantizes one sample of a 1- or 3-channel map. With `normalize`, [min, max] of the sample
// maps to [0, 255] (a constant sample renders 128); otherwise values are clamped to [0, 1].
Raster to_raster(const FeatureMap& map, std::size_t sample, bool normalize);

// Tiles rasters left to right, `columns` per row, separated by 2-pixel black borders. Every
// cell has the size of the largest tile; grey tiles are promoted to RGB when any tile is RGB.
Raster tile_grid(std::span<const Raster> tiles, std::size_t columns);

// P5 for one channel, P6 for three; header "P5\n<w> <h>\n255\n".
std::vector<std::uint8_t> encode_pnm(const Raster& raster);
Raster decode_pnm(std::span<const std::uint8_t> bytes);

void write_image(const FeatureMap& map, std::size_t sample, const std::filesystem::path& path, bool normalize);
void write_grid(std::span<const FeatureMap> tiles, std::size_t columns, const std::filesystem::path& path,
                bool normalize);

}  // namespace acnn
