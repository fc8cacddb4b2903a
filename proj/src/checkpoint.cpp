#include "acnn/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "acnn/binary_io.hpp"

namespace acnn {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const std::uint8_t* p = bytes.data();
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, n);
    p += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed for " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot rename onto " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

constexpr char kMagic[4] = {'A', 'C', 'N', 'K'};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(model.arch_id());
  w.u32(static_cast<std::uint32_t>(model.input_dims().channels));
  w.u32(static_cast<std::uint32_t>(model.input_dims().height));
  w.u32(static_cast<std::uint32_t>(model.input_dims().width));
  w.u32(static_cast<std::uint32_t>(model.layer_count()));
  for (const LayerSpec& s : model.layers()) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u8(static_cast<std::uint8_t>(s.activation.kind));
    w.u8(0);
    w.u8(0);
    w.u32(static_cast<std::uint32_t>(s.out_channels));
    w.u32(static_cast<std::uint32_t>(s.kernel));
    w.u32(static_cast<std::uint32_t>(s.stride));
    w.u32(static_cast<std::uint32_t>(s.padding));
    w.f64(s.activation.slope);
    w.f64(s.rate);
    w.f64(s.p);
  }
  for (std::size_t i : model.conv_layers()) {
    const auto& p = model.conv(i);
    w.u32(static_cast<std::uint32_t>(p.weights.size()));
    for (float v : p.weights) w.f32(v);
    w.u32(static_cast<std::uint32_t>(p.bias.size()));
    for (float v : p.bias) w.f32(v);
  }
  const std::uint32_t crc = crc32(w.bytes());
  w.u32(crc);
  return w.take();
}

Model parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "not an ACNK checkpoint");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::ChecksumMismatch, "checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  if (crc32(body) != tail.u32()) throw Error(ErrorCode::ChecksumMismatch, "checkpoint CRC does not match");

  ByteReader r(body);
  r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::string arch = r.str();
  const std::size_t in_c = r.u32(), in_h = r.u32(), in_w = r.u32();
  const std::uint32_t count = r.u32();
  std::vector<LayerSpec> layers(count);
  for (auto& s : layers) {
    const std::uint8_t kind = r.u8();
    const std::uint8_t act = r.u8();
    r.u8();
    r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::SoftmaxCE) || act > static_cast<std::uint8_t>(ActivationKind::LeakyReLU)) {
      throw Error(ErrorCode::IoError, "checkpoint layer table holds an unknown layer kind");
    }
    s.kind = static_cast<LayerKind>(kind);
    s.activation.kind = static_cast<ActivationKind>(act);
    s.out_channels = r.u32();
    s.kernel = r.u32();
    s.stride = r.u32();
    s.padding = r.u32();
    s.activation.slope = r.f64();
    s.rate = r.f64();
    s.p = r.f64();
  }
  Model model(arch, in_c, in_h, in_w, std::move(layers));
  for (std::size_t i : model.conv_layers()) {
    auto& p = model.conv(i);
    if (r.u32() != p.weights.size()) throw Error(ErrorCode::IoError, "checkpoint weight blob size mismatch");
    for (float& v : p.weights) v = r.f32();
    if (r.u32() != p.bias.size()) throw Error(ErrorCode::IoError, "checkpoint bias blob size mismatch");
    for (float& v : p.bias) v = r.f32();
  }
  if (r.remaining() != 0) throw Error(ErrorCode::IoError, "trailing bytes in checkpoint payload");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace acnn
