#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ffdnet/error.hpp"
#include "ffdnet/image_io.hpp"
#include "ffdnet/tensor.hpp"

namespace ffdnet {

enum class ChannelMode { gray, color };

struct ManifestEntry {
  std::string path;
  ChannelMode mode = ChannelMode::gray;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::size_t patch_size = 70;
  bool clipped = false;
  bool augment = true;

  void validate() const {
    if (entries.empty()) throw DataError("dataset manifest lists no images");
    require(patch_size >= 2 && patch_size % 2 == 0, "DatasetManifest: patch_size must be even and >= 2");
    for (const auto& e : entries)
      if (!std::filesystem::exists(e.path)) throw DataError("manifest image '" + e.path + "' does not exist");
  }
};

/// Parses "path [gray|color]" lines; '#' starts a comment. Relative paths are
/// resolved against the manifest's directory.
inline DatasetManifest parse_manifest(const std::string& text, const std::string& base_dir = "") {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string path, mode, extra;
    if (!(ls >> path)) continue;
    ls >> mode;
    if (ls >> extra) throw DataError("manifest line " + std::to_string(lineno) + ": too many fields");
    ManifestEntry e;
    if (mode.empty() || mode == "gray") e.mode = ChannelMode::gray;
    else if (mode == "color") e.mode = ChannelMode::color;
    else throw DataError("manifest line " + std::to_string(lineno) + ": unknown channel mode '" + mode + "'");
    std::filesystem::path p(path);
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    e.path = p.lexically_normal().string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), std::filesystem::path(path).parent_path().string());
}

/// Loads every manifest image as a (1, C, H, W) tensor, converted to the
/// entry's channel mode.
template <typename T>
std::vector<Tensor4<T>> load_dataset(const DatasetManifest& m) {
  m.validate();
  std::vector<Tensor4<T>> images;
  images.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    Tensor4<T> t = load_image<T>(e.path);
    images.push_back(e.mode == ChannelMode::gray ? to_grayscale(t) : to_color(t));
  }
  return images;
}

template <typename T>
Tensor4<T> extract_patch(const Tensor4<T>& image, std::size_t top, std::size_t left, std::size_t size) {
  require(top + size <= image.height() && left + size <= image.width(),
          "extract_patch: " + std::to_string(size) + "x" + std::to_string(size) + " patch at (" +
              std::to_string(top) + "," + std::to_string(left) + ") leaves the image");
  Tensor4<T> out(image.batch(), image.channels(), size, size);
  for (std::size_t b = 0; b < image.batch(); ++b)
    for (std::size_t c = 0; c < image.channels(); ++c)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) out(b, c, y, x) = image(b, c, top + y, left + x);
  return out;
}

/// One of the 8 dihedral transforms: k / 4 selects a horizontal flip, applied
/// first, and k % 4 the number of 90 degree counter-clockwise rotations.
template <typename T>
Tensor4<T> augment8(const Tensor4<T>& patch, int k) {
  require(k >= 0 && k < 8, "augment8: k must be in [0, 8)");
  const std::size_t H = patch.height(), W = patch.width();
  const int rot = k % 4;
  const bool flip = k >= 4;
  const bool swap = rot % 2 == 1;
  Tensor4<T> out(patch.batch(), patch.channels(), swap ? W : H, swap ? H : W);
  for (std::size_t b = 0; b < patch.batch(); ++b)
    for (std::size_t c = 0; c < patch.channels(); ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t fx = flip ? W - 1 - x : x;
          std::size_t oy = y, ox = fx;
          switch (rot) {
            case 1: oy = W - 1 - fx; ox = y; break;
            case 2: oy = H - 1 - y; ox = W - 1 - fx; break;
            case 3: oy = fx; ox = H - 1 - y; break;
            default: break;
          }
          out(b, c, oy, ox) = patch(b, c, y, x);
        }
  return out;
}

// Index of the transform undoing augment8(., k).
inline int augment8_inverse(int k) {
  require(k >= 0 && k < 8, "augment8_inverse: k must be in [0, 8)");
  return k >= 4 ? k : (4 - k) % 4;
}

}  // namespace ffdnet
