#include "usb/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "usb/error.hpp"

namespace usb {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  void number(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }

  void integer(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      const auto n = v->get<long long>();
      if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) fail(key, "a 32-bit integer");
      out = static_cast<int>(n);
    }
  }

  template <class U>
  void unsigned_integer(const char* key, U& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = static_cast<U>(v->get<std::uint64_t>());
    }
  }

  void boolean(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }

  void string(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }

  void path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    string(key, s);
    out = s;
  }

  // Enum stored as a string; `parse` throws InvalidArgument for bad names.
  template <class E, class Parse>
  void named(const char* key, E& out, Parse parse) {
    std::string s;
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      try {
        out = parse(v->get<std::string>());
      } catch (const InvalidArgument& e) {
        throw ConfigError(where_ + "." + key + ": " + e.what());
      }
    }
  }

  template <class T>
  void nested(const char* key, T& out) {
    if (const json* v = take(key)) {
      if (!v->is_object() && !v->is_array()) fail(key, "an object");
      from_json(*v, out);
    }
  }

  // Throws ConfigError naming the first key never asked for.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError(where_ + "." + key + ": expected " + expected);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const Range& r) { return json::array({r.lo, r.hi}); }

void from_json(const json& j, Range& r) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError("range: expected [lo, hi]");
  }
  r.lo = j[0].get<double>();
  r.hi = j[1].get<double>();
}

json to_json(const PhantomSpec& s) {
  return json{{"size", s.size},
              {"center_jitter", s.center_jitter},
              {"axis_major", to_json(s.axis_major)},
              {"axis_minor", to_json(s.axis_minor)},
              {"skull_thickness", to_json(s.skull_thickness)},
              {"cortex_thickness", to_json(s.cortex_thickness)},
              {"skull_intensity", to_json(s.skull_intensity)},
              {"cortex_intensity", to_json(s.cortex_intensity)},
              {"tissue_intensity", to_json(s.tissue_intensity)},
              {"ventricle_intensity", to_json(s.ventricle_intensity)},
              {"ventricle_axis_major", to_json(s.ventricle_axis_major)},
              {"ventricle_axis_minor", to_json(s.ventricle_axis_minor)},
              {"texture_amplitude", s.texture_amplitude},
              {"texture_sigma", s.texture_sigma},
              {"smoothing_sigma", s.smoothing_sigma}};
}

void from_json(const json& j, PhantomSpec& s) {
  Reader r(j, "phantom");
  r.integer("size", s.size);
  r.number("center_jitter", s.center_jitter);
  r.nested("axis_major", s.axis_major);
  r.nested("axis_minor", s.axis_minor);
  r.nested("skull_thickness", s.skull_thickness);
  r.nested("cortex_thickness", s.cortex_thickness);
  r.nested("skull_intensity", s.skull_intensity);
  r.nested("cortex_intensity", s.cortex_intensity);
  r.nested("tissue_intensity", s.tissue_intensity);
  r.nested("ventricle_intensity", s.ventricle_intensity);
  r.nested("ventricle_axis_major", s.ventricle_axis_major);
  r.nested("ventricle_axis_minor", s.ventricle_axis_minor);
  r.number("texture_amplitude", s.texture_amplitude);
  r.number("texture_sigma", s.texture_sigma);
  r.number("smoothing_sigma", s.smoothing_sigma);
  r.finish();
}

json to_json(const LesionSpec& s) {
  return json{{"blob_count", json::array({s.blob_count_min, s.blob_count_max})},
              {"blob_scale", to_json(s.blob_scale)},
              {"roughness", s.roughness},
              {"max_area_fraction", s.max_area_fraction},
              {"intensity", to_string(s.intensity)},
              {"shift", to_json(s.shift)},
              {"softness", s.softness},
              {"texture_amplitude", s.texture_amplitude}};
}

void from_json(const json& j, LesionSpec& s) {
  Reader r(j, "lesion");
  Range count{static_cast<double>(s.blob_count_min), static_cast<double>(s.blob_count_max)};
  r.nested("blob_count", count);
  if (count.lo != std::floor(count.lo) || count.hi != std::floor(count.hi)) {
    throw ConfigError("lesion.blob_count: expected integers");
  }
  s.blob_count_min = static_cast<int>(count.lo);
  s.blob_count_max = static_cast<int>(count.hi);
  r.nested("blob_scale", s.blob_scale);
  r.number("roughness", s.roughness);
  r.number("max_area_fraction", s.max_area_fraction);
  r.named("intensity", s.intensity, lesion_intensity_from_string);
  r.nested("shift", s.shift);
  r.number("softness", s.softness);
  r.number("texture_amplitude", s.texture_amplitude);
  r.finish();
}

json to_json(const DatasetSpec& s) {
  return json{{"phantom", to_json(s.phantom)},
              {"lesion", to_json(s.lesion)},
              {"train_count", s.train_count},
              {"test_count", s.test_count},
              {"seed", s.seed}};
}

void from_json(const json& j, DatasetSpec& s) {
  Reader r(j, "dataset");
  r.nested("phantom", s.phantom);
  r.nested("lesion", s.lesion);
  r.unsigned_integer("train_count", s.train_count);
  r.unsigned_integer("test_count", s.test_count);
  r.unsigned_integer("seed", s.seed);
  r.finish();
}

json to_json(const TrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch", c.batch},
              {"lr", c.lr},
              {"seed", c.seed},
              {"schedule_steps", c.schedule_steps},
              {"beta1", c.beta1},
              {"betaT", c.betaT},
              {"log_interval", c.log_interval},
              {"checkpoint_interval", c.checkpoint_interval},
              {"dataset", c.dataset.string()},
              {"output", c.output.string()},
              {"precision", to_string(c.precision)}};
}

void from_json(const json& j, TrainConfig& c) {
  Reader r(j, "train");
  r.integer("steps", c.steps);
  r.integer("batch", c.batch);
  r.number("lr", c.lr);
  r.unsigned_integer("seed", c.seed);
  r.integer("schedule_steps", c.schedule_steps);
  r.number("beta1", c.beta1);
  r.number("betaT", c.betaT);
  r.integer("log_interval", c.log_interval);
  r.integer("checkpoint_interval", c.checkpoint_interval);
  r.path("dataset", c.dataset);
  r.path("output", c.output);
  r.named("precision", c.precision, precision_from_string);
  r.finish();
}

json to_json(const GuidanceConfig& c) {
  return json{{"alpha0", c.alpha0},
              {"k", c.k},
              {"eta", c.eta},
              {"pool_window", c.pool_window},
              {"t_start_frac", c.t_start_frac},
              {"acg_enabled", c.acg_enabled},
              {"lcg_enabled", c.lcg_enabled},
              {"randomize_start", c.randomize_start}};
}

void from_json(const json& j, GuidanceConfig& c) {
  Reader r(j, "guidance");
  r.number("alpha0", c.alpha0);
  r.number("k", c.k);
  r.number("eta", c.eta);
  r.integer("pool_window", c.pool_window);
  r.number("t_start_frac", c.t_start_frac);
  r.boolean("acg_enabled", c.acg_enabled);
  r.boolean("lcg_enabled", c.lcg_enabled);
  r.boolean("randomize_start", c.randomize_start);
  r.finish();
}

json to_json(const SamplerConfig& c) {
  return json{{"steps", c.steps}, {"conditioning", to_string(c.conditioning)}, {"clamp_estimates", c.clamp_estimates}};
}

void from_json(const json& j, SamplerConfig& c) {
  Reader r(j, "sampler");
  r.integer("steps", c.steps);
  r.named("conditioning", c.conditioning, pair_conditioning_from_string);
  r.boolean("clamp_estimates", c.clamp_estimates);
  r.finish();
}

json to_json(const RunConfig& c) {
  return json{{"dataset", to_json(c.dataset)},   {"train", to_json(c.train)},
              {"guidance", to_json(c.guidance)}, {"sampler", to_json(c.sampler)},
              {"seed", c.seed},                  {"output", c.output.string()},
              {"jobs", c.jobs}};
}

void from_json(const json& j, RunConfig& c) {
  Reader r(j, "config");
  r.nested("dataset", c.dataset);
  r.nested("train", c.train);
  r.nested("guidance", c.guidance);
  r.nested("sampler", c.sampler);
  r.unsigned_integer("seed", c.seed);
  r.path("output", c.output);
  r.integer("jobs", c.jobs);
  r.finish();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  return c;
}

}  // namespace usb
