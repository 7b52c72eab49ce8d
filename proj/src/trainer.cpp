#include "usb/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "usb/error.hpp"

namespace usb {

namespace {

constexpr std::uint64_t kTrainStream = 21;
constexpr std::uint64_t kInitStream = 22;

std::vector<double> pack_u64(std::span<const std::uint64_t> values) {
  std::vector<double> out;
  for (std::uint64_t v : values) {
    out.push_back(static_cast<double>(v >> 32));
    out.push_back(static_cast<double>(v & 0xffffffffULL));
  }
  return out;
}

std::uint64_t unpack_u64(const std::vector<double>& v, std::size_t k) {
  const double hi = v.at(2 * k);
  const double lo = v.at(2 * k + 1);
  if (hi < 0 || lo < 0 || hi > 4294967295.0 || lo > 4294967295.0 || hi != std::floor(hi) || lo != std::floor(lo)) {
    throw IoError("checkpoint: corrupt integer field");
  }
  return (static_cast<std::uint64_t>(hi) << 32) | static_cast<std::uint64_t>(lo);
}

Tensor vector_tensor(std::vector<double> v) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.values = std::move(v);
  return t;
}

const Tensor& require(const TensorMap& map, const std::string& name) {
  const auto it = map.find(name);
  if (it == map.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

Rng step_rng(std::uint64_t seed, long step) {
  return Rng(seed, kTrainStream).substream(static_cast<std::uint64_t>(step));
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw InvalidArgument("train: steps must be >= 1");
  if (batch < 1) throw InvalidArgument("train: batch must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("train: lr must be > 0");
  if (log_interval < 1) throw InvalidArgument("train: log_interval must be >= 1");
  if (checkpoint_interval < 0) throw InvalidArgument("train: checkpoint_interval must be >= 0");
  NoiseSchedule::linear(schedule_steps, beta1, betaT);
}

std::string to_string(Precision p) { return p == Precision::Float32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& name) {
  if (name == "f32") return Precision::Float32;
  if (name == "f64") return Precision::Float64;
  throw InvalidArgument("unknown precision '" + name + "'");
}

TrainState TrainState::fresh(const TrainConfig& config) {
  config.validate();
  Rng init(config.seed, kInitStream);
  Rng lesion_rng = init.substream(0);
  Rng brain_rng = init.substream(1);
  TrainState s{NoiseSchedule::linear(config.schedule_steps, config.beta1, config.betaT),
               ConvDenoiserParams::initialized(lesion_rng),
               ConvDenoiserParams::initialized(brain_rng),
               AdamState(ConvDenoiserParams::count()),
               AdamState(ConvDenoiserParams::count()),
               step_rng(config.seed, 0).state(),
               0};
  return s;
}

std::vector<SamplePair> draw_batch(std::span<const SamplePair> data, int size, Rng& rng) {
  if (data.empty()) throw InvalidArgument("draw_batch: empty dataset");
  std::vector<SamplePair> out;
  out.reserve(static_cast<std::size_t>(size));
  for (int b = 0; b < size; ++b) out.push_back(data[rng.below(data.size())]);
  return out;
}

std::vector<SamplePair> training_pairs(std::span<const Triple> triples) {
  std::vector<SamplePair> out;
  out.reserve(triples.size());
  for (const auto& t : triples) out.push_back({t.mask.to_diffusion(), t.pathological});
  return out;
}

StepLosses train_step(TrainState& state, std::span<const SamplePair> batch, Rng& rng, const AdamConfig& adam,
                      Precision precision) {
  if (batch.empty()) throw InvalidArgument("train_step: empty batch");
  const int steps = state.schedule.length();
  std::vector<NoisedPair> noised;
  std::vector<int> ts;
  noised.reserve(batch.size());
  for (const auto& pair : batch) {
    const int t = rng.integer(1, steps);
    ts.push_back(t);
    noised.push_back(forward_noise_pair(pair, state.schedule, t, rng));
  }

  // Cross estimates from the current networks, held constant.
  std::vector<DenoiserInput> lesion_in;
  std::vector<DenoiserInput> brain_in;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    lesion_in.push_back({noised[b].x_t, noised[b].y_t, ts[b], steps});
    brain_in.push_back({noised[b].y_t, noised[b].x_t, ts[b], steps});
  }
  const auto eps_x = conv_forward(state.lesion, lesion_in, precision);
  const auto eps_y = conv_forward(state.brain, brain_in, precision);
  std::vector<Field> target_x;
  std::vector<Field> target_y;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double ab = state.schedule.alpha_bar(ts[b]);
    const Field x0_hat = one_step_estimate(eps_x[b], noised[b].x_t, ab, true);
    const Field y0_hat = one_step_estimate(eps_y[b], noised[b].y_t, ab, true);
    lesion_in[b].condition = y0_hat;
    brain_in[b].condition = x0_hat;
    target_x.push_back(std::move(noised[b].eps_x));
    target_y.push_back(std::move(noised[b].eps_y));
  }

  std::vector<double> grad;
  StepLosses losses;
  losses.lesion = conv_mse_loss(state.lesion, lesion_in, target_x, grad, precision);
  adam_step(state.lesion.values(), grad, state.adam_lesion, adam);
  grad.clear();
  losses.brain = conv_mse_loss(state.brain, brain_in, target_y, grad, precision);
  adam_step(state.brain.values(), grad, state.adam_brain, adam);
  return losses;
}

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, long step) {
  return dir / ("checkpoint_" + std::to_string(step) + ".usbc");
}

// Keeps the header and rows up to `step`.
void truncate_log(const std::filesystem::path& path, long step) {
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    if (std::stol(line.substr(0, comma)) <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot rewrite " + path.string());
  for (const auto& l : keep) out << l << "\n";
}

}  // namespace

TrainResult train(const TrainConfig& config, std::span<const SamplePair> data, std::optional<TrainState> initial) {
  config.validate();
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  TrainResult result{initial ? std::move(*initial) : TrainState::fresh(config), {}, {}};
  TrainState& state = result.state;
  if (state.step > config.steps) throw InvalidArgument("train: checkpoint is past the requested step count");

  std::error_code ec;
  std::filesystem::create_directories(config.output, ec);
  if (ec) throw IoError("cannot create " + config.output.string() + ": " + ec.message());
  const auto log_path = config.output / "loss.csv";
  if (state.step > 0 && std::filesystem::exists(log_path)) {
    truncate_log(log_path, state.step);
  } else {
    std::ofstream header(log_path, std::ios::trunc);
    if (!header) throw IoError("cannot write " + log_path.string());
    header << "step,loss_lesion,loss_brain,loss_total\n";
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot append to " + log_path.string());
  log << std::setprecision(17);

  const AdamConfig adam{config.lr};
  while (state.step < config.steps) {
    Rng rng(state.rng);
    const auto batch = draw_batch(data, config.batch, rng);
    const StepLosses l = train_step(state, batch, rng, adam, config.precision);
    ++state.step;
    state.rng = step_rng(config.seed, state.step).state();
    result.losses.push_back(l);
    if (!std::isfinite(l.total())) throw Error("train: non-finite loss at step " + std::to_string(state.step));
    if (state.step % config.log_interval == 0 || state.step == config.steps) {
      log << state.step << ',' << l.lesion << ',' << l.brain << ',' << l.total() << '\n';
    }
    if (config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0) {
      const auto path = checkpoint_path(config.output, state.step);
      save_checkpoint(path, state);
      result.checkpoints.push_back(path);
    }
  }
  log.flush();
  if (!log) throw IoError("write failed for " + log_path.string());
  const auto final_path = config.output / "final.usbc";
  save_checkpoint(final_path, state);
  result.checkpoints.push_back(final_path);
  return result;
}

TrainResult train(const TrainConfig& config, std::optional<TrainState> initial) {
  const auto triples = load_split(config.dataset, "train");
  const auto pairs = training_pairs(triples);
  return train(config, pairs, std::move(initial));
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  TensorMap map;
  map["schedule.beta"] = vector_tensor(state.schedule.betas());
  map["schedule.alpha"] = vector_tensor(state.schedule.alphas());
  map["schedule.alpha_bar"] = vector_tensor(state.schedule.alpha_bars());
  map["schedule.posterior_var"] = vector_tensor(state.schedule.posterior_vars());
  state.lesion.export_tensors("lesion", map);
  state.brain.export_tensors("brain", map);
  map["adam.lesion.first"] = vector_tensor(state.adam_lesion.first);
  map["adam.lesion.second"] = vector_tensor(state.adam_lesion.second);
  map["adam.brain.first"] = vector_tensor(state.adam_brain.first);
  map["adam.brain.second"] = vector_tensor(state.adam_brain.second);
  const std::uint64_t ints[] = {state.rng.seed,
                                state.rng.stream,
                                state.rng.counter,
                                static_cast<std::uint64_t>(state.step),
                                static_cast<std::uint64_t>(state.adam_lesion.step),
                                static_cast<std::uint64_t>(state.adam_brain.step)};
  map["train.counters"] = vector_tensor(pack_u64(ints));
  save_archive(path, kCheckpointMagic, kCheckpointVersion, map);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::uint32_t version = 0;
  const TensorMap map = load_archive(path, kCheckpointMagic, version);
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto adam = [&](const std::string& prefix, std::uint64_t step) {
    AdamState a;
    a.first = require(map, prefix + ".first").values;
    a.second = require(map, prefix + ".second").values;
    a.step = static_cast<long>(step);
    if (a.first.size() != ConvDenoiserParams::count() || a.second.size() != a.first.size()) {
      throw IoError(path.string() + ": optimizer moments have the wrong size");
    }
    return a;
  };
  const auto& counters = require(map, "train.counters").values;
  if (counters.size() != 12) throw IoError(path.string() + ": corrupt counters");
  try {
    return TrainState{NoiseSchedule::from_tables(require(map, "schedule.beta").values,
                                                 require(map, "schedule.alpha").values,
                                                 require(map, "schedule.alpha_bar").values,
                                                 require(map, "schedule.posterior_var").values),
                      ConvDenoiserParams::import_tensors("lesion", map),
                      ConvDenoiserParams::import_tensors("brain", map),
                      adam("adam.lesion", unpack_u64(counters, 4)),
                      adam("adam.brain", unpack_u64(counters, 5)),
                      RngState{unpack_u64(counters, 0), unpack_u64(counters, 1), unpack_u64(counters, 2)},
                      static_cast<long>(unpack_u64(counters, 3))};
  } catch (const InvalidArgument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

LossTrend loss_trend(std::span<const StepLosses> losses, std::size_t head, std::size_t tail) {
  if (losses.empty() || head == 0 || tail == 0) throw InvalidArgument("loss_trend: empty window");
  head = std::min(head, losses.size());
  tail = std::min(tail, losses.size());
  LossTrend trend;
  for (std::size_t i = 0; i < head; ++i) trend.initial += losses[i].total();
  for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) trend.final += losses[i].total();
  trend.initial /= static_cast<double>(head);
  trend.final /= static_cast<double>(tail);
  return trend;
}

}  // namespace usb
