#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "ffdnet/bytes.hpp"
#include "ffdnet/error.hpp"
#include "ffdnet/image_io.hpp"
#include "ffdnet/model.hpp"
#include "ffdnet/noise.hpp"

namespace ffdnet::service {

using json = nlohmann::json;

// Client-side problem with a request; becomes a 4xx response.
class HttpError : public std::runtime_error {
public:
  HttpError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
  int status;
};

struct Request {
  std::string method;
  std::string path;
  std::string content_type;
  std::string body;
  std::map<std::string, std::string> parts;  // multipart fields by name
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct Options {
  std::size_t max_pixels = 4'000'000;
};

namespace detail {

inline double sigma_field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) throw HttpError(400, std::string("map spec needs numeric '") + key + "'");
  const double s = it->get<double>();
  if (!std::isfinite(s) || s < 0.0 || s > kMaxSigma)
    throw HttpError(400, std::string("'") + key + "' must be in [0, 75]");
  return s;
}

inline std::size_t index_field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_unsigned())
    throw HttpError(400, std::string("map spec needs a non-negative integer '") + key + "'");
  return it->get<std::size_t>();
}

inline std::string error_body(const std::string& msg) {
  return json{{"error", msg}}.dump(-1, ' ', false, json::error_handler_t::replace);
}

inline std::string new_error_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = (std::uint64_t(std::random_device{}()) << 32) ^ std::random_device{}();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(CounterRng::derive(salt, counter++).next_u64()));
  return buf;
}

// Width and height from the IHDR chunk, read before any decompression.
inline std::pair<std::size_t, std::size_t> png_dimensions(const Bytes& b) {
  if (!is_png(b)) throw HttpError(400, "image must be a PNG");
  if (b.size() < 24) throw HttpError(400, "truncated PNG");
  return {ffdnet::detail::get_u32be(&b[16]), ffdnet::detail::get_u32be(&b[20])};
}

}  // namespace detail

/// Resolves a map spec (JSON) to a full-resolution map for an image of the
/// given size. Schema, sigma in 8-bit units [0, 75]:
///   {"kind":"uniform","sigma":25}
///   {"kind":"anchors","points":[{"r":0,"c":0,"sigma":25}, ...]}
///   {"kind":"raw","encoding":"f32le","width":W,"height":H,"data":"<base64>"}
inline NoiseLevelMap parse_map_spec(const json& spec, std::size_t height, std::size_t width) {
  if (!spec.is_object()) throw HttpError(400, "map spec must be a JSON object");
  const auto kind = spec.find("kind");
  if (kind == spec.end() || !kind->is_string()) throw HttpError(400, "map spec needs a string 'kind'");
  const std::string k = kind->get<std::string>();
  if (k == "uniform") return uniform_map(height, width, detail::sigma_field(spec, "sigma"));
  if (k == "anchors") {
    const auto pts = spec.find("points");
    if (pts == spec.end() || !pts->is_array() || pts->empty())
      throw HttpError(400, "anchors spec needs a non-empty 'points' array");
    std::vector<RegionAnchor> anchors;
    for (const auto& p : *pts) {
      if (!p.is_object()) throw HttpError(400, "anchor points must be objects");
      RegionAnchor a{detail::index_field(p, "r"), detail::index_field(p, "c"), detail::sigma_field(p, "sigma")};
      if (a.row >= height || a.col >= width)
        throw HttpError(400, "anchor (" + std::to_string(a.row) + "," + std::to_string(a.col) + ") outside the image");
      anchors.push_back(a);
    }
    return anchored_map(height, width, anchors);
  }
  if (k == "raw") {
    const auto enc = spec.find("encoding");
    if (enc == spec.end() || *enc != "f32le") throw HttpError(400, "raw map encoding must be \"f32le\"");
    if (detail::index_field(spec, "width") != width || detail::index_field(spec, "height") != height)
      throw HttpError(400, "raw map size does not match the image (" + std::to_string(width) + "x" +
                               std::to_string(height) + ")");
    const auto data = spec.find("data");
    if (data == spec.end() || !data->is_string()) throw HttpError(400, "raw map needs base64 'data'");
    Bytes raw;
    try {
      raw = base64_decode(data->get<std::string>());
    } catch (const DataError& e) {
      throw HttpError(400, std::string("raw map data: ") + e.what());
    }
    if (raw.size() != 4 * width * height) throw HttpError(400, "raw map data has the wrong length");
    NoiseLevelMap m(height, width);
    m.kind = MapKind::custom;
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      const double s = get_le<float>(&raw[4 * i]);
      if (!std::isfinite(s) || s < 0.0 || s > kMaxSigma) throw HttpError(400, "raw map values must be in [0, 75]");
      m.values[i] = s / kSigmaScale;
    }
    return m;
  }
  throw HttpError(400, "unknown map kind '" + k + "'");
}

/// Canonical text of an anchors spec: keys in schema order, integral sigma
/// values written without a fraction.
inline std::string anchors_spec(const std::vector<RegionAnchor>& anchors) {
  nlohmann::ordered_json points = nlohmann::ordered_json::array();
  for (const auto& a : anchors) {
    nlohmann::ordered_json p;
    p["r"] = a.row;
    p["c"] = a.col;
    if (a.sigma == std::floor(a.sigma)) p["sigma"] = static_cast<std::int64_t>(a.sigma);
    else p["sigma"] = a.sigma;
    points.push_back(std::move(p));
  }
  nlohmann::ordered_json spec;
  spec["kind"] = "anchors";
  spec["points"] = std::move(points);
  return spec.dump();
}

/// Raw map spec of `map` (sigma units); parse_map_spec reads it back.
inline json raw_map_spec(const NoiseLevelMap& map) {
  Bytes raw;
  raw.reserve(4 * map.values.size());
  for (double v : map.values) put_le<float>(raw, static_cast<float>(v * kSigmaScale));
  return {{"kind", "raw"}, {"encoding", "f32le"}, {"width", map.width}, {"height", map.height},
          {"data", base64_encode(raw)}};
}

inline json model_info(const ParameterSet<Real>& p) {
  const auto& c = p.config;
  return {{"layers", c.num_layers},
          {"channels", c.num_channels},
          {"in_channels", c.in_channels},
          {"color", c.in_channels == 3},
          {"downsample_factor", c.downsample_factor},
          {"noise_range", {0, static_cast<int>(kMaxSigma)}},
          {"receptive_field", receptive_field(c)},
          {"bn_merged", p.bn_merged}};
}

/// Stateless request handler around an immutable parameter set; safe to call
/// from several threads at once.
class Service {
public:
  explicit Service(ParameterSet<Real> params, Options opt = {}, std::ostream* errors = nullptr)
      : params_(std::move(params)), opt_(opt), errors_(errors) {
    params_.validate();
  }

  const ParameterSet<Real>& params() const { return params_; }

  Response handle(const Request& req) const {
    try {
      if (req.path == "/api/model") {
        if (req.method != "GET") throw HttpError(405, "use GET");
        return {200, "application/json", model_info(params_).dump()};
      }
      if (req.path == "/api/denoise") {
        if (req.method != "POST") throw HttpError(405, "use POST");
        return denoise(req);
      }
      throw HttpError(404, "no route " + req.path);
    } catch (const HttpError& e) {
      return {e.status, "application/json", detail::error_body(e.what())};
    } catch (const std::exception& e) {
      const std::string id = detail::new_error_id();
      if (errors_) {
        std::lock_guard lock(log_mutex());
        *errors_ << "error id=" << id << " what=" << e.what() << "\n" << std::flush;
      }
      return {500, "application/json", json{{"error", "internal error"}, {"id", id}}.dump()};
    }
  }

private:
  Response denoise(const Request& req) const {
    std::string png, map_text;
    json map_spec;
    if (req.content_type.rfind("multipart/form-data", 0) == 0) {
      const auto img = req.parts.find("image"), map = req.parts.find("map");
      if (img == req.parts.end() || map == req.parts.end())
        throw HttpError(400, "multipart body needs 'image' and 'map' parts");
      png = img->second;
      map_spec = json::parse(map->second, nullptr, false);
      if (map_spec.is_discarded()) throw HttpError(400, "map part is not valid JSON");
    } else {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) throw HttpError(400, "body is not a JSON object");
      if (!body.contains("image") || !body["image"].is_string() || !body.contains("map"))
        throw HttpError(400, "JSON body needs base64 'image' and a 'map' spec");
      try {
        const Bytes b = base64_decode(body["image"].get<std::string>());
        png.assign(b.begin(), b.end());
      } catch (const DataError& e) {
        throw HttpError(400, std::string("image: ") + e.what());
      }
      map_spec = body["map"];
    }

    const Bytes bytes(png.begin(), png.end());
    const auto [w, h] = detail::png_dimensions(bytes);
    if (w * h > opt_.max_pixels)
      throw HttpError(413, std::to_string(w) + "x" + std::to_string(h) + " exceeds the limit of " +
                               std::to_string(opt_.max_pixels) + " pixels");
    Image8 img;
    try {
      img = decode_png(bytes);
    } catch (const DataError& e) {
      throw HttpError(400, std::string("image: ") + e.what());
    }
    const NoiseLevelMap map = parse_map_spec(map_spec, img.height, img.width);

    Tensor4<Real> x = image_to_tensor<Real>(img);
    x = params_.config.in_channels == 1 ? to_grayscale(x) : to_color(x);
    const Tensor4<Real> y = ffdnet::denoise(params_, x, map);
    const Image8 out = tensor_to_image(y);
    const json resp{{"width", out.width},
                    {"height", out.height},
                    {"channels", out.channels},
                    {"image", base64_encode(encode_png(out))},
                    {"map", raw_map_spec(map)}};
    return {200, "application/json", resp.dump()};
  }

  static std::mutex& log_mutex() {
    static std::mutex m;
    return m;
  }

  ParameterSet<Real> params_;
  Options opt_;
  std::ostream* errors_;
};

inline std::string access_log_line(const Request& req, const Response& resp, double millis) {
  std::size_t bytes_in = req.body.size();
  for (const auto& [name, part] : req.parts) bytes_in += part.size();
  char buf[512];
  std::snprintf(buf, sizeof buf, "access method=%s path=%s status=%d bytes_in=%zu bytes_out=%zu ms=%.1f",
                req.method.c_str(), req.path.c_str(), resp.status, bytes_in, resp.body.size(), millis);
  return buf;
}

/// Routes every request on `server` through `service`, writing one access log
/// line per request to `log`.
inline void mount(httplib::Server& server, const Service& service, std::ostream& log) {
  static std::mutex log_mutex;
  auto handler = [&service, &log](const httplib::Request& hreq, httplib::Response& hres) {
    const auto t0 = std::chrono::steady_clock::now();
    Request req;
    req.method = hreq.method;
    req.path = hreq.path;
    req.content_type = hreq.get_header_value("Content-Type");
    req.body = hreq.body;
    for (const auto& [name, part] : hreq.files) req.parts[name] = part.content;
    const Response resp = service.handle(req);
    hres.status = resp.status;
    hres.set_content(resp.body, resp.content_type);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::lock_guard lock(log_mutex);
    log << access_log_line(req, resp, ms) << "\n" << std::flush;
  };
  const std::string any = R"(/.*)";
  server.Get(any, handler);
  server.Post(any, handler);
  server.Put(any, handler);
  server.Delete(any, handler);
  server.set_payload_max_length(256u << 20);
}

}  // namespace ffdnet::service
