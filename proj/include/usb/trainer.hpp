#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "usb/conv_denoiser.hpp"
#include "usb/paired.hpp"
#include "usb/phantom.hpp"
#include "usb/rng.hpp"
#include "usb/schedule.hpp"

namespace usb {

struct TrainConfig {
  int steps = 3000;
  int batch = 16;
  double lr = 2e-3;
  std::uint64_t seed = 1;
  int schedule_steps = 1024;
  double beta1 = 1e-4;
  double betaT = 0.02;
  // Rows written to the loss log every this many steps.
  int log_interval = 10;
  // 0 disables intermediate checkpoints.
  int checkpoint_interval = 1000;
  std::filesystem::path dataset = "data";
  std::filesystem::path output = "run";
  Precision precision = Precision::Float32;

  void validate() const;
};

std::string to_string(Precision p);
Precision precision_from_string(const std::string& name);

// Everything needed to continue training bit-exactly.
struct TrainState {
  NoiseSchedule schedule;
  ConvDenoiserParams lesion;
  ConvDenoiserParams brain;
  AdamState adam_lesion;
  AdamState adam_brain;
  // Stream the next step draws from.
  RngState rng;
  long step = 0;

  // Zero-initialized final layers, schedule from the config, step 0.
  static TrainState fresh(const TrainConfig& config);
  bool operator==(const TrainState&) const = default;
};

struct StepLosses {
  double lesion = 0.0;
  double brain = 0.0;
  double total() const { return lesion + brain; }
};

// One optimizer step on both networks. For every pair: draw t uniform in
// {1..T}, noise both branches, form the clamped cross estimates from the
// current networks conditioned on the noisy partner (held constant), then
// fit eps_x with lesion(x_t | y0_hat) and eps_y with brain(y_t | x0_hat).
StepLosses train_step(TrainState& state, std::span<const SamplePair> batch, Rng& rng, const AdamConfig& adam,
                      Precision precision = Precision::Float32);

// Random batch of `size` pairs drawn with replacement.
std::vector<SamplePair> draw_batch(std::span<const SamplePair> data, int size, Rng& rng);

// Training pairs (mask in diffusion space, pathological image).
std::vector<SamplePair> training_pairs(std::span<const Triple> triples);

struct TrainResult {
  TrainState state;
  std::vector<StepLosses> losses;  // one per step run by this call
  std::vector<std::filesystem::path> checkpoints;
};

// Trains from `initial` (or a fresh state) up to config.steps. Step s draws
// from substream s of the config seed, so resuming from any checkpoint
// reproduces an uninterrupted run. Writes <output>/loss.csv (appending on
// resume), <output>/checkpoint_<step>.usbc and <output>/final.usbc.
TrainResult train(const TrainConfig& config, std::span<const SamplePair> data,
                  std::optional<TrainState> initial = std::nullopt);
// Loads the train split of config.dataset first.
TrainResult train(const TrainConfig& config, std::optional<TrainState> initial = std::nullopt);

inline constexpr char kCheckpointMagic[4] = {'U', 'S', 'B', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

// Mean of the first `head` and of the last `tail` totals.
struct LossTrend {
  double initial = 0.0;
  double final = 0.0;
  double ratio() const { return final / initial; }
};
LossTrend loss_trend(std::span<const StepLosses> losses, std::size_t head = 20, std::size_t tail = 200);

}  // namespace usb
