// Copyright (c) 2026 The Bokeh Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bokeh/tensor.hpp"

namespace bokeh {

/// Malformed or unsupported image data. `offset()` is the byte position at
/// which decoding stopped, or npos when not tied to a position.
class ImageError : public std::runtime_error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit ImageError(const std::string& what, std::size_t offset = npos)
      : std::runtime_error(offset == npos ? what : what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  /// Same error with a context prefix (e.g. the file name).
  ImageError(const std::string& prefix, const ImageError& inner)
      : std::runtime_error(prefix + inner.what()), offset_(inner.offset_) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

enum class BitDepth : int { k8 = 8, k16 = 16 };

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("write failed for '" + path.string() + "'");
}

// C x H x W or 1 x C x H x W with C in {1, 3}.
inline void image_dims(const Tensor<float>& img, std::size_t& c, std::size_t& h, std::size_t& w) {
  if (img.rank() == 3) {
    c = img.dim(0);
    h = img.dim(1);
    w = img.dim(2);
  } else if (img.rank() == 4 && img.dim(0) == 1) {
    c = img.dim(1);
    h = img.dim(2);
    w = img.dim(3);
  } else {
    throw ShapeError("image: expected C x H x W, got " + to_string(img.shape()));
  }
  if (c != 1 && c != 3) throw ShapeError("image: need 1 or 3 channels, got " + to_string(img.shape()));
}

inline std::uint32_t quantize(float v, std::uint32_t maxval) {
  const double x = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint32_t>(std::lround(x * maxval));
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::uint32_t get_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Portable pixmaps (binary P5 / P6, maxval 255 or 65535)

inline std::vector<std::uint8_t> encode_pnm(const Tensor<float>& img, BitDepth depth) {
  std::size_t c, h, w;
  detail::image_dims(img, c, h, w);
  const std::uint32_t maxval = depth == BitDepth::k8 ? 255 : 65535;
  const std::string header =
      std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
      std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t hw = h * w;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::uint32_t q = detail::quantize(img.raw()[ch * hw + p], maxval);
      if (depth == BitDepth::k16) out.push_back(static_cast<std::uint8_t>(q >> 8));
      out.push_back(static_cast<std::uint8_t>(q & 0xFF));
    }
  return out;
}

inline Tensor<float> decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ImageError("pnm: expected P5 or P6 magic", 0);
  const std::size_t c = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  auto next_uint = [&]() -> std::uint32_t {
    for (;;) {
      if (pos >= bytes.size()) throw ImageError("pnm: truncated header", pos);
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (!std::isdigit(bytes[pos])) throw ImageError("pnm: expected a number", pos);
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 0xFFFFFFu) throw ImageError("pnm: header value too large", pos);
      ++pos;
    }
    return static_cast<std::uint32_t>(v);
  };
  const std::size_t w = next_uint(), h = next_uint();
  const std::uint32_t maxval = next_uint();
  if (w == 0 || h == 0) throw ImageError("pnm: zero dimension", pos);
  if (maxval == 0 || maxval > 65535) throw ImageError("pnm: maxval out of range", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ImageError("pnm: missing header terminator", pos);
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = w * h * c * bps;
  if (bytes.size() - pos < need) throw ImageError("pnm: truncated pixel data", bytes.size());
  Tensor<float> img = Tensor<float>::zeros({c, h, w});
  const std::size_t hw = h * w;
  const auto scale = static_cast<float>(maxval);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::uint32_t v = bytes[pos++];
      if (bps == 2) v = (v << 8) | bytes[pos++];
      if (v > maxval) throw ImageError("pnm: sample exceeds maxval", pos - bps);
      img.raw()[ch * hw + p] = static_cast<float>(v) / scale;
    }
  return img;
}

// ---------------------------------------------------------------------------
// PNG. Non-interlaced gray, gray+alpha, RGB and RGBA at 8 or 16 bits; alpha
// is dropped on read. Deflate and CRC come from zlib.

namespace detail {

inline constexpr std::array<std::uint8_t, 8> kPngSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

inline void png_chunk(std::vector<std::uint8_t>& out, const char* type, std::span<const std::uint8_t> data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Tensor<float>& img, BitDepth depth) {
  std::size_t c, h, w;
  detail::image_dims(img, c, h, w);
  const std::size_t bps = depth == BitDepth::k8 ? 1 : 2;
  const std::uint32_t maxval = depth == BitDepth::k8 ? 255 : 65535;
  const std::size_t stride = w * c * bps;
  const std::size_t hw = h * w;
  std::vector<std::uint8_t> raw;
  raw.reserve(h * (stride + 1));
  for (std::size_t y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::uint32_t q = detail::quantize(img.raw()[ch * hw + y * w + x], maxval);
        if (bps == 2) raw.push_back(static_cast<std::uint8_t>(q >> 8));
        raw.push_back(static_cast<std::uint8_t>(q & 0xFF));
      }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), Z_DEFAULT_COMPRESSION) != Z_OK)
    throw ImageError("png: deflate failed");
  z.resize(zlen);

  std::vector<std::uint8_t> out(detail::kPngSignature.begin(), detail::kPngSignature.end());
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(w));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(static_cast<std::uint8_t>(bps * 8));
  ihdr.push_back(c == 1 ? 0 : 2);
  ihdr.insert(ihdr.end(), {0, 0, 0});
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline Tensor<float> decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(detail::kPngSignature.begin(), detail::kPngSignature.end(), bytes.begin()))
    throw ImageError("png: bad signature", 0);
  std::size_t pos = 8;
  std::uint32_t w = 0, h = 0;
  int bit_depth = 0, color = -1;
  std::vector<std::uint8_t> idat;
  bool seen_end = false;
  while (!seen_end) {
    if (bytes.size() - pos < 12) throw ImageError("png: truncated chunk header", pos);
    const std::uint32_t len = detail::get_be32(bytes, pos);
    const std::size_t type_at = pos + 4;
    if (len > bytes.size() - pos - 12) throw ImageError("png: chunk length exceeds file", pos);
    const std::string type(reinterpret_cast<const char*>(bytes.data() + type_at), 4);
    const std::size_t data_at = type_at + 4;
    const std::uint32_t stored = detail::get_be32(bytes, data_at + len);
    const uLong crc = crc32(0L, bytes.data() + type_at, static_cast<uInt>(len + 4));
    if (static_cast<std::uint32_t>(crc) != stored) throw ImageError("png: CRC mismatch in " + type, data_at + len);
    auto data = bytes.subspan(data_at, len);
    if (type == "IHDR") {
      if (len != 13) throw ImageError("png: IHDR must be 13 bytes", pos);
      w = detail::get_be32(data, 0);
      h = detail::get_be32(data, 4);
      bit_depth = data[8];
      color = data[9];
      if (w == 0 || h == 0) throw ImageError("png: zero dimension", data_at);
      if (bit_depth != 8 && bit_depth != 16) throw ImageError("png: unsupported bit depth", data_at + 8);
      if (color != 0 && color != 2 && color != 4 && color != 6)
        throw ImageError("png: unsupported color type", data_at + 9);
      if (data[10] != 0 || data[11] != 0) throw ImageError("png: unknown compression or filter method", data_at + 10);
      if (data[12] != 0) throw ImageError("png: interlaced images are not supported", data_at + 12);
    } else if (type == "IDAT") {
      if (color < 0) throw ImageError("png: IDAT before IHDR", pos);
      idat.insert(idat.end(), data.begin(), data.end());
    } else if (type == "IEND") {
      seen_end = true;
    } else if (!(type[0] & 0x20)) {
      throw ImageError("png: unknown critical chunk " + type, pos);
    }
    pos = data_at + len + 4;
  }
  if (color < 0) throw ImageError("png: missing IHDR", 8);
  if (idat.empty()) throw ImageError("png: missing IDAT", pos);

  const std::size_t channels = color == 0 ? 1 : color == 2 ? 3 : color == 4 ? 2 : 4;
  const std::size_t bps = static_cast<std::size_t>(bit_depth) / 8;
  const std::size_t bpp = channels * bps;
  const std::size_t stride = static_cast<std::size_t>(w) * bpp;
  std::vector<std::uint8_t> raw(h * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int zr = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zr != Z_OK) throw ImageError("png: inflate failed (zlib code " + std::to_string(zr) + ")");
  if (raw_len != raw.size()) throw ImageError("png: decompressed size mismatch");

  std::vector<std::uint8_t> prev(stride, 0), cur(stride);
  const std::size_t out_c = channels >= 3 ? 3 : 1;
  Tensor<float> img = Tensor<float>::zeros({out_c, h, w});
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const float scale = bps == 1 ? 255.0F : 65535.0F;
  for (std::size_t y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* line = raw.data() + y * (stride + 1) + 1;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= bpp ? prev[i - bpp] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = detail::paeth(a, b, c); break;
        default: throw ImageError("png: bad filter type " + std::to_string(filter) + " on row " + std::to_string(y));
      }
      cur[i] = static_cast<std::uint8_t>(line[i] + pred);
    }
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < out_c; ++ch) {
        const std::size_t at = x * bpp + ch * bps;
        const std::uint32_t v = bps == 1 ? cur[at] : (std::uint32_t{cur[at]} << 8) | cur[at + 1];
        img.raw()[ch * hw + y * w + x] = static_cast<float>(v) / scale;
      }
    std::swap(prev, cur);
  }
  return img;
}

// ---------------------------------------------------------------------------
// File-level entry points. Format is chosen by extension on write and by
// magic bytes on read.

inline Tensor<float> decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P') return decode_pnm(bytes);
  if (bytes.size() >= 1 && bytes[0] == 0x89) return decode_png(bytes);
  throw ImageError("unrecognised image format", 0);
}

inline Tensor<float> read_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_image(bytes);
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": ", e);
  }
}

inline void write_image(const std::filesystem::path& path, const Tensor<float>& img, BitDepth depth = BitDepth::k8) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (ext == ".png") {
    detail::write_file(path, encode_png(img, depth));
  } else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
    detail::write_file(path, encode_pnm(img, depth));
  } else {
    throw ImageError("unsupported image extension '" + ext + "'");
  }
}

}  // namespace bokeh
