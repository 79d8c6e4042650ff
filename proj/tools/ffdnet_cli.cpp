// ffdnet: train, denoise, synthesize noise, evaluate and serve.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ffdnet/data.hpp"
#include "ffdnet/eval.hpp"
#include "ffdnet/map_io.hpp"
#include "ffdnet/model.hpp"
#include "ffdnet/model_io.hpp"
#include "ffdnet/noise.hpp"
#include "ffdnet/optim.hpp"
#include "ffdnet/service.hpp"

using namespace ffdnet;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exactly one of --sigma, --map, --anchors.
struct MapFlags {
  std::optional<double> sigma;
  std::string map_file;
  std::string anchors;

  void add(CLI::App* cmd) {
    cmd->add_option("--sigma", sigma, "Uniform noise level, 8-bit units")->check(CLI::Range(0.0, kMaxSigma));
    cmd->add_option("--map", map_file, "Noise level map file (NLM1 raw or PNG visualization)");
    cmd->add_option("--anchors", anchors, "Region anchors \"r,c,sigma;r,c,sigma;...\" interpolated over the image");
  }

  void check() const {
    const int given = sigma.has_value() + !map_file.empty() + !anchors.empty();
    if (given != 1) throw UsageError("give exactly one of --sigma, --map, --anchors");
    if (!anchors.empty()) parse_anchors(anchors);
  }

  NoiseLevelMap resolve(std::size_t height, std::size_t width) const {
    check();
    if (sigma) return uniform_map(height, width, *sigma);
    if (!anchors.empty()) return anchored_map(height, width, parse_anchors(anchors));
    NoiseLevelMap m = load_map(map_file);
    if (m.height != height || m.width != width)
      throw DataError(map_file + ": map is " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                      ", image is " + std::to_string(width) + "x" + std::to_string(height));
    return m;
  }

  static std::vector<RegionAnchor> parse_anchors(const std::string& text) {
    std::vector<RegionAnchor> out;
    std::stringstream all(text);
    std::string item;
    while (std::getline(all, item, ';')) {
      if (item.find_first_not_of(" \t") == std::string::npos) continue;
      RegionAnchor a{};
      char c1 = 0, c2 = 0, extra = 0;
      long r = -1, c = -1;
      std::istringstream in(item);
      if (!(in >> r >> c1 >> c >> c2 >> a.sigma) || c1 != ',' || c2 != ',' || (in >> extra) || r < 0 || c < 0)
        throw UsageError("bad anchor '" + item + "', expected r,c,sigma");
      if (a.sigma < 0 || a.sigma > kMaxSigma) throw UsageError("anchor sigma must be in [0, 75]");
      a.row = std::size_t(r);
      a.col = std::size_t(c);
      out.push_back(a);
    }
    if (out.empty()) throw UsageError("--anchors lists no anchors");
    return out;
  }
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad number '" + item + "' in list");
    }
    if (out.back() < 0 || out.back() > kMaxSigma) throw UsageError("sigma values must be in [0, 75]");
  }
  if (out.empty()) throw UsageError("empty sigma list");
  return out;
}

Tensor4<Real> load_for_model(const std::string& path, const ModelConfig& cfg) {
  const auto img = load_image<Real>(path);
  return cfg.in_channels == 1 ? to_grayscale(img) : to_color(img);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, out, log;
  std::size_t layers = 3, channels = 16, epochs = 5, finetune_epochs = 0, patch_size = 32, batch_size = 16,
              patches = 512, plateau = 5;
  double sigma_min = 0, sigma_max = 75, lr1 = 1e-3, lr2 = 1e-4, lr_finetune = 1e-6;
  std::uint64_t seed = 0;
  bool color = false, clipped = false, no_augment = false;
};

int run_train(const TrainArgs& a) {
  DatasetManifest manifest = load_manifest(a.manifest);
  manifest.patch_size = a.patch_size;
  manifest.clipped = a.clipped;
  manifest.augment = !a.no_augment;
  const auto data = Dataset<Real>::load(manifest);

  const ModelConfig cfg{a.layers, a.channels, std::size_t(a.color ? 3 : 1), 2, 1};
  TrainPlan plan;
  plan.lr_stage1 = a.lr1;
  plan.lr_stage2 = a.lr2;
  plan.lr_finetune = a.lr_finetune;
  plan.max_epochs = a.epochs;
  plan.finetune_epochs = a.finetune_epochs;
  plan.plateau_epochs = a.plateau;
  plan.batch_size = a.batch_size;
  plan.patches_per_epoch = a.patches;
  plan.sigma_min = a.sigma_min;
  plan.sigma_max = a.sigma_max;
  plan.clipped = a.clipped;
  plan.augment = !a.no_augment;

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log, std::ios::trunc);
    if (!log) throw DataError("cannot write '" + a.log + "'");
  }
  const auto result = train(plan, data, cfg, a.seed, [&](const EpochRecord& r) {
    const std::string line = format_epoch(r);
    std::cout << line << "\n" << std::flush;
    if (log) log << line << "\n" << std::flush;
  });
  save_model(a.out, result.params);
  return 0;
}

struct DenoiseArgs {
  std::string model, input, output;
  MapFlags map;
};

int run_denoise(const DenoiseArgs& a) {
  a.map.check();
  const auto params = load_model<Real>(a.model);
  const auto img = load_for_model(a.input, params.config);
  const auto map = a.map.resolve(img.height(), img.width());
  save_image(a.output, denoise(params, img, map));
  return 0;
}

struct NoiseArgs {
  std::string input, output;
  MapFlags map;
  bool clipped = false;
  std::uint64_t seed = 0;
};

int run_noise(const NoiseArgs& a) {
  a.map.check();
  const auto img = load_image<Real>(a.input);
  const auto map = a.map.resolve(img.height(), img.width());
  save_image(a.output, add_awgn(img, NoiseSpec{map, a.clipped, a.seed}));
  return 0;
}

struct EvalArgs {
  std::string a, b, model, image, inputs, trues, out, map_file, gradient = "5,50";
  std::optional<double> true_sigma, input_sigma;
  std::uint64_t seed = 0;
  bool quantize = false, clipped = false, table = false;
};

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f || !(f << text)) throw DataError("cannot write '" + out + "'");
}

int run_eval_psnr(const EvalArgs& a) {
  const auto x = load_image<Real>(a.a), y = load_image<Real>(a.b);
  if (x.shape() != y.shape()) throw DataError(a.a + " and " + a.b + " differ in size or channels");
  std::cout << format_db(psnr(x, y, a.quantize)) << "\n";
  return 0;
}

int run_eval_sweep(const EvalArgs& a) {
  if (a.true_sigma.has_value() == a.input_sigma.has_value())
    throw UsageError("give either --true-sigma with --inputs, or --input-sigma with --trues");
  if (a.true_sigma && a.inputs.empty()) throw UsageError("--true-sigma needs --inputs");
  if (a.input_sigma && a.trues.empty()) throw UsageError("--input-sigma needs --trues");
  const auto params = load_model<Real>(a.model);
  const auto clean = load_for_model(a.image, params.config);
  const EvalOptions opt{a.seed, a.clipped, a.quantize};
  std::vector<SweepPoint> pts;
  std::string column;
  if (a.true_sigma) {
    pts = sensitivity_sweep(params, clean, *a.true_sigma, parse_list(a.inputs), opt);
    column = "input_sigma";
  } else {
    pts = true_sigma_sweep(params, clean, *a.input_sigma, parse_list(a.trues), opt);
    column = "true_sigma";
  }
  emit(a.table ? sweep_table(pts, column) : sweep_csv(pts, column), a.out);
  return 0;
}

int run_eval_variant(const EvalArgs& a) {
  const auto params = load_model<Real>(a.model);
  const auto clean = load_for_model(a.image, params.config);
  NoiseLevelMap map;
  if (!a.map_file.empty()) {
    map = load_map(a.map_file);
    if (map.height != clean.height() || map.width != clean.width())
      throw DataError(a.map_file + ": map size does not match the image");
  } else {
    const auto ends = parse_list(a.gradient);
    if (ends.size() != 2 || ends[0] > ends[1]) throw UsageError("--gradient expects \"lo,hi\" with lo <= hi");
    map = gradient_map(clean.height(), clean.width(), ends[0], ends[1]);
  }
  const auto r = variant_noise_report(params, clean, map, EvalOptions{a.seed, a.clipped, a.quantize});
  std::ostringstream s;
  s << "noisy " << format_db(r.psnr_noisy) << "\n"
    << "matched " << format_db(r.psnr_matched) << "\n"
    << "uniform_mean " << format_db(r.psnr_uniform_mean) << "\n";
  emit(s.str(), a.out);
  return 0;
}

struct ServeArgs {
  std::string model, host = "127.0.0.1";
  int port = 8080;
  std::size_t max_pixels = 4'000'000;
};

int run_serve(const ServeArgs& a) {
  service::Service svc(load_model<Real>(a.model), service::Options{a.max_pixels}, &std::cerr);
  httplib::Server server;
  service::mount(server, svc, std::cerr);
  std::cerr << "serving " << a.model << " on http://" << a.host << ":" << a.port << "\n" << std::flush;
  if (!server.listen(a.host, a.port)) throw std::runtime_error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FFDNet denoiser: train, denoise, add noise, evaluate, serve"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a manifest of images");
  train_cmd->add_option("--manifest", ta.manifest, "Manifest: one \"path [gray|color]\" per line")->required();
  train_cmd->add_option("--out", ta.out, "Output model file")->required();
  train_cmd->add_option("--log", ta.log, "Also write epoch lines to this file");
  train_cmd->add_option("--layers", ta.layers, "Convolution layers (>= 2)")->capture_default_str();
  train_cmd->add_option("--channels", ta.channels, "Feature channels")->capture_default_str();
  train_cmd->add_flag("--color", ta.color, "Train a 3-channel model");
  train_cmd->add_option("--epochs", ta.epochs, "Cap on stage-1 + stage-2 epochs")->capture_default_str();
  train_cmd->add_option("--finetune-epochs", ta.finetune_epochs, "Epochs after BN merging")->capture_default_str();
  train_cmd->add_option("--plateau-epochs", ta.plateau, "Stalled epochs before a stage change")->capture_default_str();
  train_cmd->add_option("--patch-size", ta.patch_size, "Training patch size (even)")->capture_default_str();
  train_cmd->add_option("--batch-size", ta.batch_size, "Patches per batch")->capture_default_str();
  train_cmd->add_option("--patches", ta.patches, "Patches per epoch")->capture_default_str();
  train_cmd->add_option("--sigma-min", ta.sigma_min, "Lowest training noise level")->check(CLI::Range(0.0, kMaxSigma))->capture_default_str();
  train_cmd->add_option("--sigma-max", ta.sigma_max, "Highest training noise level")->check(CLI::Range(0.0, kMaxSigma))->capture_default_str();
  train_cmd->add_option("--lr", ta.lr1, "Stage-1 learning rate")->capture_default_str();
  train_cmd->add_option("--lr-stage2", ta.lr2, "Stage-2 learning rate")->capture_default_str();
  train_cmd->add_option("--lr-finetune", ta.lr_finetune, "Fine-tuning learning rate")->capture_default_str();
  train_cmd->add_option("--seed", ta.seed, "Seed for initialization and sampling")->capture_default_str();
  train_cmd->add_flag("--clipped", ta.clipped, "Clip and quantize noisy training patches");
  train_cmd->add_flag("--no-augment", ta.no_augment, "Disable rotation/flip augmentation");

  DenoiseArgs da;
  auto* denoise_cmd = app.add_subcommand("denoise", "Denoise an image");
  denoise_cmd->add_option("--model", da.model, "Model file")->required();
  denoise_cmd->add_option("--input", da.input, "Noisy image (PNG, PGM, PPM)")->required();
  denoise_cmd->add_option("--output", da.output, "Output image (.png, .pgm, .ppm)")->required();
  da.map.add(denoise_cmd);

  NoiseArgs na;
  auto* noise_cmd = app.add_subcommand("noise", "Add Gaussian noise to an image");
  noise_cmd->add_option("--input", na.input, "Clean image")->required();
  noise_cmd->add_option("--output", na.output, "Noisy image (8-bit)")->required();
  noise_cmd->add_flag("--clipped", na.clipped, "Clip to [0,1] and quantize before writing");
  noise_cmd->add_option("--seed", na.seed, "Noise seed")->capture_default_str();
  na.map.add(noise_cmd);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate images and models");
  eval_cmd->require_subcommand(1);
  auto* psnr_cmd = eval_cmd->add_subcommand("psnr", "PSNR of two images in dB (\"inf\" when equal)");
  psnr_cmd->add_option("reference", ea.a, "Reference image")->required();
  psnr_cmd->add_option("test", ea.b, "Test image")->required();
  psnr_cmd->add_flag("--quantize", ea.quantize, "Round both to 8-bit levels first");

  auto* sweep_cmd = eval_cmd->add_subcommand("sweep", "Noise-level sensitivity sweep, CSV output");
  sweep_cmd->add_option("--model", ea.model, "Model file")->required();
  sweep_cmd->add_option("--image", ea.image, "Clean image")->required();
  sweep_cmd->add_option("--true-sigma", ea.true_sigma, "True noise level (sweep the input level)")->check(CLI::Range(0.0, kMaxSigma));
  sweep_cmd->add_option("--inputs", ea.inputs, "Comma-separated input levels");
  sweep_cmd->add_option("--input-sigma", ea.input_sigma, "Input level (sweep the true level)")->check(CLI::Range(0.0, kMaxSigma));
  sweep_cmd->add_option("--trues", ea.trues, "Comma-separated true levels");
  sweep_cmd->add_option("--seed", ea.seed, "Noise seed")->capture_default_str();
  sweep_cmd->add_flag("--clipped", ea.clipped, "Clipped noise");
  sweep_cmd->add_flag("--quantize", ea.quantize, "PSNR on 8-bit quantized outputs");
  sweep_cmd->add_flag("--table", ea.table, "Markdown table instead of CSV");
  sweep_cmd->add_option("--out", ea.out, "Write to file instead of stdout");

  auto* variant_cmd = eval_cmd->add_subcommand("variant", "Spatially variant noise: matched vs mean-uniform map");
  variant_cmd->add_option("--model", ea.model, "Model file")->required();
  variant_cmd->add_option("--image", ea.image, "Clean image")->required();
  variant_cmd->add_option("--map", ea.map_file, "True noise map file (default: horizontal gradient)");
  variant_cmd->add_option("--gradient", ea.gradient, "Gradient ends \"lo,hi\" left to right")->capture_default_str();
  variant_cmd->add_option("--seed", ea.seed, "Noise seed")->capture_default_str();
  variant_cmd->add_flag("--clipped", ea.clipped, "Clipped noise");
  variant_cmd->add_flag("--quantize", ea.quantize, "PSNR on 8-bit quantized outputs");
  variant_cmd->add_option("--out", ea.out, "Write to file instead of stdout");

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP denoising service");
  serve_cmd->add_option("--model", sa.model, "Model file")->required();
  serve_cmd->add_option("--port", sa.port, "TCP port")->check(CLI::Range(1, 65535))->capture_default_str();
  serve_cmd->add_option("--host", sa.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--max-pixels", sa.max_pixels, "Largest accepted image (pixels)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*denoise_cmd) return run_denoise(da);
    if (*noise_cmd) return run_noise(na);
    if (*psnr_cmd) return run_eval_psnr(ea);
    if (*sweep_cmd) return run_eval_sweep(ea);
    if (*variant_cmd) return run_eval_variant(ea);
    if (*serve_cmd) return run_serve(sa);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
