#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "usb/editing.hpp"
#include "usb/paired.hpp"
#include "usb/phantom.hpp"
#include "usb/trainer.hpp"

namespace usb {

// Inference settings shared by the sampling and editing subcommands.
struct SamplerConfig {
  int steps = 300;  // K
  PairConditioning conditioning = PairConditioning::Estimates;
  bool clamp_estimates = true;
};

// Complete resolved configuration of a CLI run.
struct RunConfig {
  DatasetSpec dataset;
  TrainConfig train;
  GuidanceConfig guidance;
  SamplerConfig sampler;
  std::uint64_t seed = 7;
  std::filesystem::path output = "out";
  int jobs = 1;
};

// Readers start from the object's current values and override the keys
// present. Unknown keys and wrongly typed values throw ConfigError.
nlohmann::json to_json(const Range& r);
nlohmann::json to_json(const PhantomSpec& s);
nlohmann::json to_json(const LesionSpec& s);
nlohmann::json to_json(const DatasetSpec& s);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const GuidanceConfig& c);
nlohmann::json to_json(const SamplerConfig& c);
nlohmann::json to_json(const RunConfig& c);

void from_json(const nlohmann::json& j, Range& r);
void from_json(const nlohmann::json& j, PhantomSpec& s);
void from_json(const nlohmann::json& j, LesionSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);
void from_json(const nlohmann::json& j, TrainConfig& c);
void from_json(const nlohmann::json& j, GuidanceConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Parses a config file over the defaults; throws ConfigError on syntax or
// schema errors and IoError if unreadable.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace usb
