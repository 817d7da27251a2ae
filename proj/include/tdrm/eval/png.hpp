#ifndef TDRM_EVAL_PNG_HPP_
#define TDRM_EVAL_PNG_HPP_

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "tdrm/core/common.hpp"

namespace tdrm {

// Plain interleaved 8-bit RGB raster, row-major.
struct RgbImage {
  int64_t w = 0;
  int64_t h = 0;
  std::vector<uint8_t> rgb;  // w*h*3
};

namespace detail {

inline std::array<uint8_t, 4> be32(uint32_t v) {
  return {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
          static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
}

inline void png_chunk(std::ofstream& f, const char* type, const std::vector<uint8_t>& data) {
  auto len = be32(static_cast<uint32_t>(data.size()));
  f.write(reinterpret_cast<const char*>(len.data()), 4);
  f.write(type, 4);
  if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), data.size());
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) c = crc32(c, data.data(), static_cast<uInt>(data.size()));
  auto cb = be32(static_cast<uint32_t>(c));
  f.write(reinterpret_cast<const char*>(cb.data()), 4);
}

}  // namespace detail

// Writes an 8-bit truecolor PNG (one zlib-compressed IDAT, filter 0 rows).
inline void write_png(const std::string& path, const RgbImage& img) {
  TDRM_CHECK(img.w > 0 && img.h > 0, "empty image");
  TDRM_CHECK(img.rgb.size() == static_cast<size_t>(img.w * img.h * 3),
             "image buffer does not match its dimensions");
  const size_t stride = static_cast<size_t>(img.w) * 3;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<size_t>(img.h));
  for (int64_t y = 0; y < img.h; ++y) {
    raw.push_back(0);  // per-row filter byte
    const uint8_t* row = img.rgb.data() + static_cast<size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> z(zlen);
  TDRM_CHECK(compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) == Z_OK,
             "png compression failed");
  z.resize(zlen);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  TDRM_CHECK(f.good(), "cannot open " + path + " for writing");
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  f.write(reinterpret_cast<const char*>(sig), 8);
  std::vector<uint8_t> ihdr;
  auto push32 = [&](uint32_t v) {
    auto b = detail::be32(v);
    ihdr.insert(ihdr.end(), b.begin(), b.end());
  };
  push32(static_cast<uint32_t>(img.w));
  push32(static_cast<uint32_t>(img.h));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // bit depth, truecolor, defaults
  detail::png_chunk(f, "IHDR", ihdr);
  detail::png_chunk(f, "IDAT", z);
  detail::png_chunk(f, "IEND", {});
  TDRM_CHECK(f.good(), "failed writing " + path);
}

}  // namespace tdrm

#endif  // TDRM_EVAL_PNG_HPP_
