#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ffdnet/data.hpp"
#include "ffdnet/error.hpp"
#include "ffdnet/model.hpp"
#include "ffdnet/noise.hpp"
#include "ffdnet/rng.hpp"

namespace ffdnet {

// ---------------------------------------------------------------------------
// ADAM

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  ParameterSet<T> m;  // first moments, same layout as the parameters
  ParameterSet<T> v;  // second moments
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  T lr = T(1e-3);
};

template <typename T>
AdamState<T> make_adam(const ParameterSet<T>& params, T lr) {
  AdamState<T> s;
  s.m = zeros_like(params);
  s.v = zeros_like(params);
  s.lr = lr;
  return s;
}

/// One bias-corrected ADAM update of every trainable block, in place.
template <typename T>
void adam_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& state) {
  auto pb = trainable_blocks(params);
  const auto gb = trainable_blocks(grads);
  auto mb = trainable_blocks(state.m);
  auto vb = trainable_blocks(state.v);
  require(gb.size() == pb.size() && mb.size() == pb.size() && vb.size() == pb.size(),
          "adam_step: gradient/moment layout does not match parameters");
  for (std::size_t i = 0; i < pb.size(); ++i) {
    require(gb[i].values.size() == pb[i].values.size() && mb[i].values.size() == pb[i].values.size() &&
                vb[i].values.size() == pb[i].values.size(),
            "adam_step: size mismatch in " + pb[i].name);
    for (T g : gb[i].values)
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in " + gb[i].name);
  }
  ++state.step;
  const T c1 = T(1) - std::pow(state.beta1, T(state.step));
  const T c2 = T(1) - std::pow(state.beta2, T(state.step));
  for (std::size_t i = 0; i < pb.size(); ++i) {
    auto p = pb[i].values;
    const auto g = gb[i].values;
    auto m = mb[i].values;
    auto v = vb[i].values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training plan and batch sampling.

/// Defaults are the full-scale schedule; desk-scale runs shrink
/// patches_per_epoch, batch_size and max_epochs.
struct TrainPlan {
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-4;
  double lr_finetune = 1e-6;
  std::size_t finetune_epochs = 50;
  std::size_t plateau_epochs = 5;
  double stage1_threshold = 1e-3;   // relative epoch-loss improvement below which stage 1 stalls
  double plateau_threshold = 1e-4;  // same, for the end of stage 2
  std::size_t max_epochs = 100;     // cap on stage 1 + stage 2 epochs
  std::size_t batch_size = 128;
  std::size_t patches_per_epoch = 128 * 8000;
  double sigma_min = 0.0;   // 8-bit units
  double sigma_max = 75.0;
  bool augment = true;
  bool clipped = false;

  void validate() const {
    require(lr_stage1 > lr_stage2 && lr_stage2 > lr_finetune && lr_finetune > 0.0,
            "TrainPlan: learning rates must satisfy stage1 > stage2 > finetune > 0");
    require(batch_size >= 1 && patches_per_epoch >= 1, "TrainPlan: empty batches");
    require(plateau_epochs >= 1, "TrainPlan: plateau_epochs must be >= 1");
    require(0.0 <= sigma_min && sigma_min <= sigma_max, "TrainPlan: bad noise range");
  }
};

template <typename T>
struct Dataset {
  DatasetManifest manifest;
  std::vector<Tensor4<T>> images;

  static Dataset load(const DatasetManifest& m) { return {m, load_dataset<T>(m)}; }
};

template <typename T>
struct Batch {
  Tensor4<T> noisy;
  Tensor4<T> maps;  // (N, 1, P, P) uniform per patch, normalized
  Tensor4<T> clean;
  std::vector<double> sigmas;  // 8-bit units
};

/// Random crops with a uniform noise level per patch drawn from the plan's
/// range, optional dihedral augmentation, and un-clipped AWGN unless the plan
/// asks for clipping.
template <typename T>
Batch<T> sample_batch(const Dataset<T>& data, std::size_t patch_size, const TrainPlan& plan,
                      std::size_t count, CounterRng& rng) {
  if (data.images.empty()) throw DataError("dataset is empty");
  const std::size_t C = data.images.front().channels(), P = patch_size;
  Batch<T> b{Tensor4<T>(count, C, P, P), Tensor4<T>(count, 1, P, P), Tensor4<T>(count, C, P, P), {}};
  b.sigmas.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = rng.below(data.images.size());
    const auto& img = data.images[idx];
    if (img.channels() != C) throw DataError("dataset mixes channel counts");
    if (img.height() < P || img.width() < P)
      throw DataError("patch size " + std::to_string(P) + " exceeds image '" +
                      (idx < data.manifest.entries.size() ? data.manifest.entries[idx].path : "?") + "'");
    const std::size_t top = rng.below(img.height() - P + 1);
    const std::size_t left = rng.below(img.width() - P + 1);
    const int k = plan.augment ? int(rng.below(8)) : 0;
    const double sigma = rng.uniform(plan.sigma_min, plan.sigma_max);
    const std::uint64_t noise_seed = rng.next_u64();

    Tensor4<T> clean = extract_patch(img, top, left, P);
    if (k != 0) clean = augment8(clean, k);
    const Tensor4<T> noisy = add_awgn(clean, NoiseSpec{uniform_map(P, P, sigma), plan.clipped, noise_seed});
    const std::size_t per = C * P * P;
    std::copy(clean.values().begin(), clean.values().end(), b.clean.data() + i * per);
    std::copy(noisy.values().begin(), noisy.values().end(), b.noisy.data() + i * per);
    auto m = b.maps.plane(i, 0);
    std::fill(m.begin(), m.end(), static_cast<T>(sigma / kSigmaScale));
    b.sigmas.push_back(sigma);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training driver.

enum class Phase { stage1, stage2, finetune };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::stage1: return "stage1";
    case Phase::stage2: return "stage2";
    case Phase::finetune: return "finetune";
  }
  return "?";
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, continuous across phases
  double loss = 0.0;      // mean batch loss
  double lr = 0.0;
  Phase phase = Phase::stage1;
};

// "epoch <n> loss <float> lr <float> phase <stage1|stage2|finetune>"
inline std::string format_epoch(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %zu loss %.9g lr %.9g phase %s", r.epoch, r.loss, r.lr,
                to_string(r.phase));
  return buf;
}

template <typename T>
struct TrainResult {
  ParameterSet<T> params;  // BN merged
  std::vector<EpochRecord> log;
};

/// Tracks consecutive epochs whose relative loss improvement is below a
/// threshold.
class PlateauDetector {
public:
  PlateauDetector(double threshold, std::size_t patience) : threshold_(threshold), patience_(patience) {}

  bool update(double loss) {
    if (has_prev_) {
      const double rel = prev_ > 0.0 ? (prev_ - loss) / prev_ : 0.0;
      stalled_ = rel < threshold_ ? stalled_ + 1 : 0;
    }
    prev_ = loss;
    has_prev_ = true;
    return stalled_ >= patience_;
  }

  void reset() {
    has_prev_ = false;
    stalled_ = 0;
  }

private:
  double threshold_;
  std::size_t patience_;
  double prev_ = 0.0;
  bool has_prev_ = false;
  std::size_t stalled_ = 0;
};

/// Stage 1 at lr_stage1 until the loss stalls, stage 2 at lr_stage2 until it
/// stalls again (or max_epochs total), then BN merging and finetune_epochs at
/// lr_finetune. Sampling uses stream 1 of the seed; initialization uses seed.
template <typename T>
TrainResult<T> train(const TrainPlan& plan, const Dataset<T>& data, const ModelConfig& config,
                     std::uint64_t seed, const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  plan.validate();
  config.validate();
  for (const auto& img : data.images)
    if (img.channels() != config.in_channels)
      throw DataError("dataset channel count does not match the model (" +
                      std::to_string(config.in_channels) + ")");
  const std::size_t P = data.manifest.patch_size;
  require(P % config.downsample_factor == 0, "train: patch size must be a multiple of the downsampling factor");

  TrainResult<T> result;
  ParameterSet<T> params = default_init<T>(config, seed);
  CounterRng rng = CounterRng::derive(seed, 1);
  std::size_t epoch = 0;

  auto run_epoch = [&](AdamState<T>& adam, Phase phase) {
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t done = 0; done < plan.patches_per_epoch; done += plan.batch_size) {
      const std::size_t n = std::min(plan.batch_size, plan.patches_per_epoch - done);
      Batch<T> batch = sample_batch(data, P, plan, n, rng);
      auto r = backward(params, batch.noisy, batch.maps, batch.clean, Mode::train);
      apply_running_updates(params, r);
      adam_step(params, r.grads, adam);
      sum += double(r.loss);
      ++batches;
    }
    EpochRecord rec{++epoch, sum / double(batches), double(adam.lr), phase};
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    return rec.loss;
  };

  AdamState<T> adam = make_adam(params, T(plan.lr_stage1));
  Phase phase = Phase::stage1;
  PlateauDetector stall1(plan.stage1_threshold, plan.plateau_epochs);
  PlateauDetector stall2(plan.plateau_threshold, plan.plateau_epochs);
  while (epoch < plan.max_epochs) {
    const double loss = run_epoch(adam, phase);
    if (phase == Phase::stage1 && stall1.update(loss)) {
      phase = Phase::stage2;
      adam.lr = T(plan.lr_stage2);
    } else if (phase == Phase::stage2 && stall2.update(loss)) {
      break;
    }
  }

  params = merge_batchnorm(params);
  AdamState<T> fine = make_adam(params, T(plan.lr_finetune));
  for (std::size_t i = 0; i < plan.finetune_epochs; ++i) run_epoch(fine, Phase::finetune);
  result.params = std::move(params);
  return result;
}

}  // namespace ffdnet
