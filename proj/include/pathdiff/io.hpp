#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pathdiff/conditioning.hpp"
#include "pathdiff/core.hpp"

namespace pathdiff::io {

namespace fs = std::filesystem;

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_bytes(const fs::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw ValidationError("short write to " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, Bytes(text.begin(), text.end()));
}

inline std::string read_text(const fs::path& path) {
  auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

inline std::string crc32_hex(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  while (size > 0) {
    uInt chunk = uInt(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << (crc & 0xffffffffu);
  return os.str();
}

inline std::string crc32_hex(const Bytes& bytes) { return crc32_hex(bytes.data(), bytes.size()); }

inline void append_f32_le(Bytes& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(bits >> (8 * i)));
}

inline float read_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

/// Raw image blob: H*W*C little-endian float32, row-major, channel-last.
template <typename Real>
Bytes encode_f32_hwc(const Image<Real>& image) {
  Bytes out;
  out.reserve(image.size() * 4);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < image.channels(); ++c) append_f32_le(out, static_cast<float>(image.at(c, y, x)));
  return out;
}

inline Image<float> decode_f32_hwc(const Bytes& bytes, Shape shape, const std::string& name) {
  if (bytes.size() != shape.size() * 4)
    throw ValidationError(name + ": expected " + std::to_string(shape.size() * 4) + " bytes, found " +
                          std::to_string(bytes.size()));
  Image<float> image(shape);
  const std::uint8_t* p = bytes.data();
  for (int y = 0; y < shape.height; ++y)
    for (int x = 0; x < shape.width; ++x)
      for (int c = 0; c < shape.channels; ++c, p += 4) image.at(c, y, x) = read_f32_le(p);
  return image;
}

/// 8-bit binary PGM; pixel value = label.
inline Bytes encode_pgm(const MaskCondition& mask) {
  std::string header = "P5\n" + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), mask.labels().begin(), mask.labels().end());
  return out;
}

inline MaskCondition decode_pgm(const Bytes& bytes, int num_classes, const std::string& name) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(char(bytes[pos++]));
    return tok;
  };
  if (next_token() != "P5") throw ValidationError(name + ": not a binary PGM");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token());
    height = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw ValidationError(name + ": malformed PGM header");
  }
  if (width < 1 || height < 1 || maxval < 1 || maxval > 255) throw ValidationError(name + ": unsupported PGM header");
  ++pos;  // single whitespace after maxval
  std::size_t n = std::size_t(width) * std::size_t(height);
  if (bytes.size() < pos || bytes.size() - pos != n) throw ValidationError(name + ": PGM payload size mismatch");
  try {
    return MaskCondition(height, width, num_classes, Bytes(bytes.begin() + std::ptrdiff_t(pos), bytes.end()));
  } catch (const ValidationError& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

/// Binary PPM of a 3-channel image in [-1, 1]. Other channel counts are
/// rendered as grey (first channel).
template <typename Real>
Bytes encode_ppm(const Image<Real>& image) {
  std::string header = "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  Bytes out(header.begin(), header.end());
  auto to_byte = [](double v) {
    v = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
    return std::uint8_t(std::lround(v * 255.0));
  };
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      for (int c = 0; c < 3; ++c) out.push_back(to_byte(image.at(image.channels() >= 3 ? c : 0, y, x)));
  return out;
}

/// Tiles equally shaped images into a grid with `columns` cells per row.
template <typename Real>
Image<Real> tile(const std::vector<Image<Real>>& images, int columns, int pad = 1) {
  require(!images.empty() && columns >= 1, "tile needs images");
  const Shape s = images.front().shape();
  const int rows = int((images.size() + columns - 1) / columns);
  Image<Real> grid(Shape{s.channels, rows * (s.height + pad) + pad, columns * (s.width + pad) + pad}, Real(-1));
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(images[i].shape() == s, "tile needs equal shapes");
    int oy = pad + int(i / columns) * (s.height + pad), ox = pad + int(i % columns) * (s.width + pad);
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) grid.at(c, oy + y, ox + x) = images[i].at(c, y, x);
  }
  return grid;
}

}  // namespace pathdiff::io
