#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>

#include "ffdnet/bytes.hpp"
#include "ffdnet/image_io.hpp"
#include "ffdnet/model.hpp"

namespace ffdnet {

// Model file layout (see docs/formats.md):
//
//   FFDNET-MODEL 1\n
//   key=value\n ...          precision, num_layers, num_channels, in_channels,
//                            downsample_factor, noise_map_channels, bn_merged
//   \n                       blank line ends the header
//   payload                  per layer: conv weights (out*in*3*3), conv bias
//                            (out); when BN is present: gamma, beta,
//                            running_mean, running_var (out each), epsilon,
//                            momentum. All values little-endian f64 or f32.

inline constexpr const char* kModelMagic = "FFDNET-MODEL 1";

template <typename T>
constexpr const char* precision_tag() {
  if constexpr (std::is_same_v<T, double>) return "f64";
  else return "f32";
}

template <typename T>
Bytes encode_model(const ParameterSet<T>& p) {
  p.validate();
  std::ostringstream h;
  h << kModelMagic << "\n"
    << "precision=" << precision_tag<T>() << "\n"
    << "num_layers=" << p.config.num_layers << "\n"
    << "num_channels=" << p.config.num_channels << "\n"
    << "in_channels=" << p.config.in_channels << "\n"
    << "downsample_factor=" << p.config.downsample_factor << "\n"
    << "noise_map_channels=" << p.config.noise_map_channels << "\n"
    << "bn_merged=" << (p.bn_merged ? 1 : 0) << "\n\n";
  const std::string header = h.str();
  Bytes out(header.begin(), header.end());
  auto put_all = [&](std::span<const T> v) {
    for (T x : v) put_le<T>(out, x);
  };
  for (const auto& L : p.layers) {
    put_all(L.conv.weights.values());
    put_all(L.conv.bias);
    if (L.bn) {
      put_all(L.bn->gamma);
      put_all(L.bn->beta);
      put_all(L.bn->running_mean);
      put_all(L.bn->running_var);
      put_le<T>(out, L.bn->epsilon);
      put_le<T>(out, L.bn->momentum);
    }
  }
  return out;
}

template <typename T>
ParameterSet<T> decode_model(const Bytes& b) {
  std::size_t pos = 0;
  auto line = [&]() {
    const std::size_t start = pos;
    while (pos < b.size() && b[pos] != '\n') ++pos;
    if (pos >= b.size()) throw DataError("truncated model header");
    return std::string(b.begin() + start, b.begin() + pos++);
  };
  if (line() != kModelMagic) throw DataError("not an FFDNet model file");
  std::map<std::string, std::string> kv;
  for (std::string l = line(); !l.empty(); l = line()) {
    const auto eq = l.find('=');
    if (eq == std::string::npos) throw DataError("malformed model header line '" + l + "'");
    kv[l.substr(0, eq)] = l.substr(eq + 1);
  }
  auto num = [&](const std::string& key) -> std::size_t {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError("model header is missing '" + key + "'");
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw DataError("model header value for '" + key + "' is not a number");
    }
  };
  const std::string prec = kv.count("precision") ? kv["precision"] : "";
  if (prec != "f64" && prec != "f32") throw DataError("model precision must be f64 or f32");
  const std::size_t width = prec == "f64" ? 8 : 4;

  ModelConfig cfg{num("num_layers"), num("num_channels"), num("in_channels"),
                  num("downsample_factor"), num("noise_map_channels")};
  try {
    cfg.validate();
  } catch (const ContractViolation& e) {
    throw DataError(std::string("invalid model configuration: ") + e.what());
  }
  ParameterSet<T> p = make_parameters<T>(cfg);
  p.bn_merged = num("bn_merged") != 0;

  auto get = [&]() -> T {
    if (b.size() - pos < width) throw DataError("truncated model payload");
    const T v = width == 8 ? static_cast<T>(get_le<double>(&b[pos]))
                           : static_cast<T>(get_le<float>(&b[pos]));
    pos += width;
    return v;
  };
  auto get_all = [&](std::span<T> v) {
    for (T& x : v) x = get();
  };
  for (auto& L : p.layers) {
    if (p.bn_merged) L.bn.reset();
    get_all(L.conv.weights.values());
    get_all(L.conv.bias);
    if (L.bn) {
      get_all(L.bn->gamma);
      get_all(L.bn->beta);
      get_all(L.bn->running_mean);
      get_all(L.bn->running_var);
      L.bn->epsilon = get();
      L.bn->momentum = get();
    }
  }
  if (pos != b.size()) throw DataError("trailing bytes after model payload");
  return p;
}

template <typename T>
void save_model(const std::string& path, const ParameterSet<T>& p) {
  write_file(path, encode_model(p));
}

template <typename T = Real>
ParameterSet<T> load_model(const std::string& path) {
  try {
    return decode_model<T>(read_file(path));
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.find(path) != std::string::npos) throw;
    throw DataError(path + ": " + msg);
  }
}

}  // namespace ffdnet
