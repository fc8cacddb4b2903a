#include "acnn/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "acnn/binary_io.hpp"

namespace acnn {

namespace {

constexpr std::size_t kSeparator = 2;

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Raster to_rgb(const Raster& r) {
  if (r.channels == 3) return r;
  Raster out{r.width, r.height, 3, std::vector<std::uint8_t>(r.pixels.size() * 3)};
  for (std::size_t i = 0; i < r.pixels.size(); ++i) std::fill_n(out.pixels.begin() + 3 * i, 3, r.pixels[i]);
  return out;
}

}  // namespace

Raster to_raster(const FeatureMap& map, std::size_t sample, bool normalize) {
  const Dims d = map.dims();
  if (d.channels != 1 && d.channels != 3) {
    throw Error(ErrorCode::ShapeMismatch, "images need 1 or 3 channels, got " + std::to_string(d.channels));
  }
  if (sample >= d.batch) throw Error(ErrorCode::ShapeMismatch, "sample index out of range");
  const float* src = map.sample_data(sample);
  const std::size_t n = d.sample();
  double lo = 0.0, scale = 1.0;
  bool flat = false;
  if (normalize) {
    const auto [mn, mx] = std::minmax_element(src, src + n);
    lo = *mn;
    flat = !(*mx > *mn);
    scale = flat ? 0.0 : 1.0 / (static_cast<double>(*mx) - lo);
  }
  Raster r{d.width, d.height, d.channels, std::vector<std::uint8_t>(n)};
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (std::size_t p = 0; p < d.plane(); ++p) {
      const double v = src[c * d.plane() + p];
      r.pixels[p * d.channels + c] = flat ? std::uint8_t{128} : quantize((v - lo) * scale);
    }
  }
  return r;
}

Raster tile_grid(std::span<const Raster> tiles, std::size_t columns) {
  if (tiles.empty()) throw Error(ErrorCode::EmptyOutput, "no tiles to render");
  if (columns == 0) throw Error(ErrorCode::BadConfig, "grid needs at least one column");
  std::size_t cw = 0, ch = 0, channels = 1;
  for (const Raster& t : tiles) {
    cw = std::max(cw, t.width);
    ch = std::max(ch, t.height);
    channels = std::max(channels, t.channels);
  }
  const std::size_t cols = std::min(columns, tiles.size());
  const std::size_t rows = (tiles.size() + cols - 1) / cols;
  Raster out;
  out.width = cols * cw + (cols - 1) * kSeparator;
  out.height = rows * ch + (rows - 1) * kSeparator;
  out.channels = channels;
  out.pixels.assign(out.width * out.height * channels, 0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Raster t = channels == 3 ? to_rgb(tiles[i]) : tiles[i];
    const std::size_t x0 = (i % cols) * (cw + kSeparator);
    const std::size_t y0 = (i / cols) * (ch + kSeparator);
    for (std::size_t y = 0; y < t.height; ++y) {
      std::copy_n(t.pixels.begin() + y * t.width * channels, t.width * channels,
                  out.pixels.begin() + ((y0 + y) * out.width + x0) * channels);
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_pnm(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw Error(ErrorCode::ShapeMismatch, "PNM needs 1 or 3 channels");
  const std::string header = std::string(r.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(r.width) + " " +
                             std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  return out;
}

Raster decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw Error(ErrorCode::IoError, "truncated PNM header");
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw Error(ErrorCode::BadMagic, "not a binary PGM/PPM file");
  Raster r;
  r.channels = magic == "P5" ? 1 : 3;
  try {
    r.width = std::stoul(token());
    r.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw Error(ErrorCode::IoError, "only 8-bit PNM is supported");
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::IoError, "malformed PNM header");
  }
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = r.width * r.height * r.channels;
  if (pos > bytes.size() || bytes.size() - pos != n) throw Error(ErrorCode::IoError, "PNM raster size mismatch");
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return r;
}

void write_image(const FeatureMap& map, std::size_t sample, const std::filesystem::path& path, bool normalize) {
  write_file_atomic(path, encode_pnm(to_raster(map, sample, normalize)));
}

void write_grid(std::span<const FeatureMap> tiles, std::size_t columns, const std::filesystem::path& path,
                bool normalize) {
  std::vector<Raster> rasters;
  rasters.reserve(tiles.size());
  for (const FeatureMap& t : tiles) rasters.push_back(to_raster(t, 0, normalize));
  write_file_atomic(path, encode_pnm(tile_grid(rasters, columns)));
}

}  // namespace acnn
