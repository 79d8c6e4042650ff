#pragma once

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "ffdnet/error.hpp"
#include "ffdnet/pixel.hpp"
#include "ffdnet/tensor.hpp"

namespace ffdnet {

using Bytes = std::vector<std::uint8_t>;

/// 8-bit image with interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image8&, const Image8&) = default;
};

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const Bytes& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) / PPM (P6), maxval <= 255.

namespace detail {

inline std::size_t pnm_skip(const Bytes& b, std::size_t pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  return pos;
}

inline std::size_t pnm_int(const Bytes& b, std::size_t& pos) {
  pos = pnm_skip(b, pos);
  if (pos >= b.size() || !std::isdigit(b[pos])) throw DataError("malformed PNM header");
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    if (v > (1u << 28)) throw DataError("PNM header value too large");
  }
  return v;
}

inline void put_u32be(Bytes& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline std::uint32_t get_u32be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline void png_chunk(Bytes& out, const char* type, const Bytes& data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return std::uint8_t(a);
  if (pb <= pc) return std::uint8_t(b);
  return std::uint8_t(c);
}

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace detail

inline Image8 decode_pnm(const Bytes& b) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6'))
    throw DataError("not a binary PGM/PPM file");
  Image8 img;
  img.channels = b[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  img.width = detail::pnm_int(b, pos);
  img.height = detail::pnm_int(b, pos);
  const std::size_t maxval = detail::pnm_int(b, pos);
  if (maxval == 0 || maxval > 255) throw DataError("PNM maxval must be in [1, 255]");
  if (pos >= b.size() || !std::isspace(b[pos])) throw DataError("malformed PNM header");
  ++pos;
  const std::size_t n = img.width * img.height * img.channels;
  if (b.size() - pos < n) throw DataError("truncated PNM pixel data");
  img.pixels.assign(b.begin() + pos, b.begin() + pos + n);
  if (maxval != 255)
    for (auto& p : img.pixels) p = std::uint8_t((p * 255u + maxval / 2) / maxval);
  return img;
}

inline Bytes encode_pnm(const Image8& img) {
  require(img.channels == 1 || img.channels == 3, "encode_pnm: 1 or 3 channels required");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) +
                             "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

// ---------------------------------------------------------------------------
// PNG: 8-bit, non-interlaced, grayscale (type 0) or RGB (type 2).

inline Image8 decode_png(const Bytes& b) {
  if (b.size() < 8 || !std::equal(b.begin(), b.begin() + 8, detail::kPngSignature))
    throw DataError("not a PNG file");
  Image8 img;
  Bytes idat;
  bool have_header = false, have_end = false;
  std::size_t pos = 8;
  while (pos + 12 <= b.size() && !have_end) {
    const std::uint32_t len = detail::get_u32be(&b[pos]);
    if (len > b.size() - pos - 12) throw DataError("truncated PNG chunk");
    const std::string type(reinterpret_cast<const char*>(&b[pos + 4]), 4);
    const std::uint8_t* data = &b[pos + 8];
    const uLong crc = crc32(0L, &b[pos + 4], len + 4);
    if (crc != detail::get_u32be(&b[pos + 8 + len])) throw DataError("PNG CRC mismatch in " + type);
    if (type == "IHDR") {
      if (len != 13) throw DataError("bad PNG IHDR");
      img.width = detail::get_u32be(data);
      img.height = detail::get_u32be(data + 4);
      const int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8) throw DataError("unsupported PNG bit depth " + std::to_string(depth));
      if (color != 0 && color != 2)
        throw DataError("unsupported PNG color type " + std::to_string(color) +
                        " (only 8-bit gray or RGB)");
      if (data[10] != 0 || data[11] != 0) throw DataError("unsupported PNG compression/filter");
      if (interlace != 0) throw DataError("interlaced PNG not supported");
      img.channels = color == 0 ? 1 : 3;
      if (img.width == 0 || img.height == 0 || img.width > (1u << 16) || img.height > (1u << 16))
        throw DataError("PNG dimensions out of range");
      have_header = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      have_end = true;
    } else if (!(type[0] & 0x20)) {
      throw DataError("unknown critical PNG chunk " + type);
    }
    pos += 12 + len;
  }
  if (!have_header || !have_end) throw DataError("incomplete PNG stream");

  const std::size_t stride = img.width * img.channels;
  Bytes raw(img.height * (stride + 1));
  uLongf raw_len = raw.size();
  if (uncompress(raw.data(), &raw_len, idat.data(), idat.size()) != Z_OK || raw_len != raw.size())
    throw DataError("corrupt PNG image data");

  img.pixels.assign(img.height * stride, 0);
  const std::size_t bpp = img.channels;
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* in = &raw[y * (stride + 1) + 1];
    std::uint8_t* cur = &img.pixels[y * stride];
    const std::uint8_t* prev = y > 0 ? &img.pixels[(y - 1) * stride] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? cur[i - bpp] : 0;
      const int up = prev ? prev[i] : 0;
      const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
      int v = in[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += up; break;
        case 3: v += (a + up) / 2; break;
        case 4: v += detail::paeth(a, up, c); break;
        default: throw DataError("bad PNG filter type " + std::to_string(filter));
      }
      cur[i] = std::uint8_t(v & 0xff);
    }
  }
  return img;
}

inline Bytes encode_png(const Image8& img) {
  require(img.channels == 1 || img.channels == 3, "encode_png: 1 or 3 channels required");
  require(img.pixels.size() == img.width * img.height * img.channels, "encode_png: size mismatch");
  Bytes out(detail::kPngSignature, detail::kPngSignature + 8);
  Bytes ihdr;
  detail::put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, std::uint8_t(img.channels == 1 ? 0 : 2), 0, 0, 0});
  detail::png_chunk(out, "IHDR", ihdr);

  const std::size_t stride = img.width * img.channels;
  Bytes raw;
  raw.reserve(img.height * (stride + 1));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.pixels.begin() + y * stride, img.pixels.begin() + (y + 1) * stride);
  }
  uLongf zlen = compressBound(raw.size());
  Bytes z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), raw.size(), 6) != Z_OK)
    throw DataError("PNG compression failed");
  z.resize(zlen);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", {});
  return out;
}

// ---------------------------------------------------------------------------
// Format dispatch and tensor conversion.

inline bool is_png(const Bytes& b) {
  return b.size() >= 8 && std::equal(b.begin(), b.begin() + 8, detail::kPngSignature);
}

inline Image8 decode_image(const Bytes& b) {
  if (is_png(b)) return decode_png(b);
  if (b.size() >= 2 && b[0] == 'P' && (b[1] == '5' || b[1] == '6')) return decode_pnm(b);
  throw DataError("unsupported image format (expected PNG, binary PGM or PPM)");
}

inline Image8 read_image8(const std::string& path) {
  try {
    return decode_image(read_file(path));
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.find(path) != std::string::npos) throw;
    throw DataError(path + ": " + msg);
  }
}

inline std::string lower_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

inline void write_image8(const std::string& path, const Image8& img) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    write_file(path, encode_png(img));
  } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    if ((ext == ".pgm" && img.channels != 1) || (ext == ".ppm" && img.channels != 3))
      throw DataError(path + ": channel count does not match extension");
    write_file(path, encode_pnm(img));
  } else {
    throw DataError(path + ": unsupported output extension '" + ext + "'");
  }
}

/// (1, C, H, W) tensor with values in [0, 1].
template <typename T>
Tensor4<T> image_to_tensor(const Image8& img) {
  Tensor4<T> t(1, img.channels, img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        t(0, c, y, x) = static_cast<T>(from_u8(img.pixels[(y * img.width + x) * img.channels + c]));
  return t;
}

template <typename T>
Image8 tensor_to_image(const Tensor4<T>& t, std::size_t sample = 0) {
  require(t.channels() == 1 || t.channels() == 3, "tensor_to_image: 1 or 3 channels required");
  require(sample < t.batch(), "tensor_to_image: sample out of range");
  Image8 img{t.width(), t.height(), t.channels(), {}};
  img.pixels.resize(img.width * img.height * img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        img.pixels[(y * img.width + x) * img.channels + c] = to_u8(double(t(sample, c, y, x)));
  return img;
}

template <typename T = Real>
Tensor4<T> load_image(const std::string& path) {
  return image_to_tensor<T>(read_image8(path));
}

template <typename T>
void save_image(const std::string& path, const Tensor4<T>& t) {
  write_image8(path, tensor_to_image(t));
}

// BT.601 luma; identity on single-channel input.
template <typename T>
Tensor4<T> to_grayscale(const Tensor4<T>& t) {
  if (t.channels() == 1) return t;
  require(t.channels() == 3, "to_grayscale: expected 3 channels");
  Tensor4<T> g(t.batch(), 1, t.height(), t.width());
  for (std::size_t b = 0; b < t.batch(); ++b)
    for (std::size_t y = 0; y < t.height(); ++y)
      for (std::size_t x = 0; x < t.width(); ++x)
        g(b, 0, y, x) = T(0.299) * t(b, 0, y, x) + T(0.587) * t(b, 1, y, x) + T(0.114) * t(b, 2, y, x);
  return g;
}

template <typename T>
Tensor4<T> to_color(const Tensor4<T>& t) {
  if (t.channels() == 3) return t;
  require(t.channels() == 1, "to_color: expected 1 channel");
  Tensor4<T> c(t.batch(), 3, t.height(), t.width());
  for (std::size_t b = 0; b < t.batch(); ++b)
    for (std::size_t k = 0; k < 3; ++k) {
      auto dst = c.plane(b, k);
      const auto src = t.plane(b, 0);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  return c;
}

}  // namespace ffdnet
