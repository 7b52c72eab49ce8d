#include "usb/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "usb/config.hpp"
#include "usb/error.hpp"
#include "usb/rng.hpp"
#include "usb/tensor_io.hpp"

namespace usb {

namespace {

// Stream ids keep the random draws of each generator disjoint for one seed.
constexpr std::uint64_t kHealthyStream = 11;
constexpr std::uint64_t kMaskStream = 12;
constexpr std::uint64_t kTextureStream = 13;
constexpr std::uint64_t kShiftStream = 14;

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : rng.uniform(r.lo, r.hi); }

void check_range(const Range& r, const char* name, double lo_bound = -1e300, double hi_bound = 1e300) {
  if (!(r.lo <= r.hi) || r.lo < lo_bound || r.hi > hi_bound) {
    throw InvalidArgument(std::string("invalid range for ") + name);
  }
}

struct Ellipse {
  double cy, cx, a, b, cos_t, sin_t;

  // Squared normalised radius; < 1 inside.
  double rho2(double y, double x, double shrink = 0.0) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double u = cos_t * dy - sin_t * dx;
    const double v = sin_t * dy + cos_t * dx;
    const double aa = a - shrink;
    const double bb = b - shrink;
    if (aa <= 0.0 || bb <= 0.0) return 2.0;
    return (u * u) / (aa * aa) + (v * v) / (bb * bb);
  }
};

// Smoothed standard normal field rescaled to unit RMS.
Field unit_noise(Rng& rng, std::size_t h, std::size_t w, double sigma) {
  Field n = gaussian_blur(gaussian_draw(rng, h, w), sigma);
  double ss = 0.0;
  for (double v : n.values()) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(n.size()));
  if (rms > 0.0) {
    for (double& v : n.values()) v /= rms;
  }
  return n;
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t index) { return Rng(seed).substream(index).next_u64(); }

}  // namespace

void PhantomSpec::validate() const {
  if (size < 8) throw InvalidArgument("phantom size must be at least 8");
  check_range(axis_major, "axis_major", 1.0);
  check_range(axis_minor, "axis_minor", 1.0);
  check_range(skull_thickness, "skull_thickness", 0.0);
  check_range(cortex_thickness, "cortex_thickness", 0.0);
  check_range(skull_intensity, "skull_intensity", -1.0, 1.0);
  check_range(cortex_intensity, "cortex_intensity", -1.0, 1.0);
  check_range(tissue_intensity, "tissue_intensity", -1.0, 1.0);
  check_range(ventricle_intensity, "ventricle_intensity", -1.0, 1.0);
  check_range(ventricle_axis_major, "ventricle_axis_major", 0.0);
  check_range(ventricle_axis_minor, "ventricle_axis_minor", 0.0);
  if (center_jitter < 0.0 || texture_amplitude < 0.0 || texture_sigma < 0.0 || smoothing_sigma < 0.0) {
    throw InvalidArgument("phantom jitter, texture and smoothing must be non-negative");
  }
  const double half = (size - 1) / 2.0;
  if (half - center_jitter - std::max(axis_major.hi, axis_minor.hi) < 2.0) {
    throw InvalidArgument("phantom head does not fit with a 2 px margin");
  }
  if (skull_thickness.hi + cortex_thickness.hi + 2.0 >= std::min(axis_major.lo, axis_minor.lo)) {
    throw InvalidArgument("phantom skull and cortex leave no interior");
  }
}

std::string to_string(LesionIntensity mode) {
  switch (mode) {
    case LesionIntensity::Hypo: return "hypo";
    case LesionIntensity::Hyper: return "hyper";
    case LesionIntensity::Mixed: return "mixed";
  }
  return "hypo";
}

LesionIntensity lesion_intensity_from_string(const std::string& name) {
  if (name == "hypo") return LesionIntensity::Hypo;
  if (name == "hyper") return LesionIntensity::Hyper;
  if (name == "mixed") return LesionIntensity::Mixed;
  throw InvalidArgument("unknown lesion intensity mode '" + name + "'");
}

void LesionSpec::validate() const {
  if (blob_count_min < 0 || blob_count_max < blob_count_min) throw InvalidArgument("invalid blob count range");
  check_range(blob_scale, "blob_scale", 0.1);
  check_range(shift, "shift", 0.0, 2.0);
  if (roughness < 0.0 || softness < 0.0 || texture_amplitude < 0.0) {
    throw InvalidArgument("lesion roughness, softness and texture must be non-negative");
  }
  if (max_area_fraction < 0.0 || max_area_fraction > 0.35) {
    throw InvalidArgument("lesion max_area_fraction must lie in [0, 0.35]");
  }
}

HealthyPhantom generate_healthy(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed, kHealthyStream);
  const auto n = static_cast<std::size_t>(spec.size);
  const double half = (spec.size - 1) / 2.0;
  const double theta = rng.uniform(-0.15, 0.15);
  const Ellipse head{half + rng.uniform(-1.0, 1.0) * spec.center_jitter,
                     half + rng.uniform(-1.0, 1.0) * spec.center_jitter,
                     draw(rng, spec.axis_major),
                     draw(rng, spec.axis_minor),
                     std::cos(theta),
                     std::sin(theta)};
  const double skull = draw(rng, spec.skull_thickness);
  const double cortex = draw(rng, spec.cortex_thickness);
  const double skull_value = draw(rng, spec.skull_intensity);
  const double cortex_value = draw(rng, spec.cortex_intensity);
  const double tissue_value = draw(rng, spec.tissue_intensity);
  const double ventricle_value = draw(rng, spec.ventricle_intensity);

  std::array<Ellipse, 2> ventricles{};
  const double spread = rng.uniform(2.5, 4.0);
  const double lift = rng.uniform(-2.0, 2.0);
  for (int side = 0; side < 2; ++side) {
    const double tilt = theta + (side == 0 ? 1.0 : -1.0) * rng.uniform(0.0, 0.3);
    ventricles[side] = Ellipse{head.cy + lift,
                               head.cx + (side == 0 ? -spread : spread),
                               draw(rng, spec.ventricle_axis_major),
                               draw(rng, spec.ventricle_axis_minor),
                               std::cos(tilt),
                               std::sin(tilt)};
  }

  Field image(n, n, -1.0);
  BinaryMask brain(n, n);
  BinaryMask head_region(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double py = static_cast<double>(y);
      const double px = static_cast<double>(x);
      if (head.rho2(py, px) >= 1.0) continue;
      head_region.set(y, x, true);
      double v = skull_value;
      if (head.rho2(py, px, skull) < 1.0) {
        brain.set(y, x, true);
        v = head.rho2(py, px, skull + cortex) < 1.0 ? tissue_value : cortex_value;
        for (const auto& vent : ventricles) {
          if (vent.rho2(py, px) < 1.0) v = ventricle_value;
        }
      }
      image(y, x) = v;
    }
  }
  image = gaussian_blur(image, spec.smoothing_sigma);
  const Field texture = unit_noise(rng, n, n, spec.texture_sigma);
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (head_region[i]) image[i] += spec.texture_amplitude * texture[i];
  }
  return {clamp(image, -1.0, 1.0), std::move(brain)};
}

BinaryMask generate_lesion_mask(const LesionSpec& spec, const BinaryMask& brain, std::uint64_t seed) {
  spec.validate();
  if (brain.none()) throw InvalidArgument("lesion mask: empty brain region");
  Rng rng(seed, kMaskStream);
  const std::size_t h = brain.height();
  const std::size_t w = brain.width();
  std::vector<std::size_t> brain_pixels;
  for (std::size_t i = 0; i < brain.size(); ++i) {
    if (brain[i]) brain_pixels.push_back(i);
  }
  const auto cap = static_cast<std::size_t>(spec.max_area_fraction * static_cast<double>(brain_pixels.size()));
  BinaryMask mask(h, w);
  const int count = rng.integer(spec.blob_count_min, spec.blob_count_max);
  for (int k = 0; k < count; ++k) {
    const std::size_t centre = brain_pixels[rng.below(brain_pixels.size())];
    const double cy = static_cast<double>(centre / w);
    const double cx = static_cast<double>(centre % w);
    const double s = draw(rng, spec.blob_scale);
    const Field noise = unit_noise(rng, h, w, std::max(0.5, s / 2.0));
    BinaryMask candidate = mask;
    for (std::size_t i = 0; i < brain.size(); ++i) {
      if (!brain[i] || candidate[i]) continue;
      const double dy = static_cast<double>(i / w) - cy;
      const double dx = static_cast<double>(i % w) - cx;
      const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * s * s));
      const double profile = g * (1.0 + spec.roughness * noise[i]);
      if (profile > 0.5) candidate.set(i, true);
    }
    if (candidate.count() <= cap) mask = std::move(candidate);
  }
  return mask;
}

Field soft_mask(const BinaryMask& mask, double softness) {
  if (softness < 0.0) throw InvalidArgument("soft_mask: negative softness");
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  Field soft(h, w);
  const double reach = softness + 1.0;
  const auto radius = static_cast<long>(std::ceil(reach));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (mask(y, x)) {
        soft(y, x) = 1.0;
        continue;
      }
      double best = reach;
      for (long dy = -radius; dy <= radius; ++dy) {
        const long yy = static_cast<long>(y) + dy;
        if (yy < 0 || yy >= static_cast<long>(h)) continue;
        for (long dx = -radius; dx <= radius; ++dx) {
          const long xx = static_cast<long>(x) + dx;
          if (xx < 0 || xx >= static_cast<long>(w)) continue;
          if (!mask(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx))) continue;
          best = std::min(best, std::sqrt(static_cast<double>(dy * dy + dx * dx)));
        }
      }
      soft(y, x) = std::max(0.0, 1.0 - best / reach);
    }
  }
  return soft;
}

Field lesion_texture(const LesionSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed, kTextureStream);
  Field t = unit_noise(rng, height, width, 1.0);
  for (double& v : t.values()) v = 1.0 + spec.texture_amplitude * v;
  return t;
}

double lesion_shift(const LesionSpec& spec, std::uint64_t seed) {
  Rng rng(seed, kShiftStream);
  const double magnitude = draw(rng, spec.shift);
  const bool bright = rng.uniform() < 0.5;
  switch (spec.intensity) {
    case LesionIntensity::Hypo: return -magnitude;
    case LesionIntensity::Hyper: return magnitude;
    case LesionIntensity::Mixed: return bright ? magnitude : -magnitude;
  }
  return -magnitude;
}

Field embed_lesion(const Field& healthy, const BinaryMask& mask, const LesionSpec& spec, std::uint64_t seed) {
  if (!mask.same_shape(healthy)) throw ShapeMismatch("embed_lesion: mask and image shapes differ");
  spec.validate();
  const Field soft = soft_mask(mask, spec.softness);
  const Field texture = lesion_texture(spec, healthy.height(), healthy.width(), seed);
  const double shift = lesion_shift(spec, seed);
  Field out = healthy;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (soft[i] > 0.0) out[i] = std::clamp(healthy[i] + soft[i] * shift * texture[i], -1.0, 1.0);
  }
  return out;
}

Triple make_triple(const PhantomSpec& phantom, const LesionSpec& lesion, std::uint64_t seed) {
  HealthyPhantom h = generate_healthy(phantom, derived_seed(seed, 0));
  BinaryMask mask = generate_lesion_mask(lesion, h.brain, derived_seed(seed, 1));
  Field path = embed_lesion(h.image, mask, lesion, derived_seed(seed, 2));
  return {std::move(mask), std::move(path), std::move(h.image)};
}

std::uint64_t triple_seed(std::uint64_t base_seed, const std::string& split, std::size_t index) {
  std::uint64_t stream = 0;
  if (split == "train") {
    stream = 1;
  } else if (split == "test") {
    stream = 2;
  } else {
    throw InvalidArgument("unknown split '" + split + "'");
  }
  return Rng(base_seed, stream).substream(index).next_u64();
}

namespace {

std::filesystem::path triple_path(const std::filesystem::path& root, const std::string& split, std::size_t index,
                                  const char* kind) {
  return root / split / (std::to_string(index) + "." + kind + ".ubt");
}

}  // namespace

void write_dataset(const std::filesystem::path& root, const DatasetSpec& spec) {
  spec.phantom.validate();
  spec.lesion.validate();
  std::error_code ec;
  for (const char* split : {"train", "test"}) {
    std::filesystem::create_directories(root / split, ec);
    if (ec) throw IoError("cannot create " + (root / split).string() + ": " + ec.message());
  }
  for (const auto& [split, count] : {std::pair<std::string, std::size_t>{"train", spec.train_count},
                                     std::pair<std::string, std::size_t>{"test", spec.test_count}}) {
    for (std::size_t i = 0; i < count; ++i) {
      const Triple t = make_triple(spec.phantom, spec.lesion, triple_seed(spec.seed, split, i));
      save_field(triple_path(root, split, i, "mask"), t.mask.to_field());
      save_field(triple_path(root, split, i, "path"), t.pathological);
      save_field(triple_path(root, split, i, "healthy"), t.healthy);
    }
  }
  const auto manifest = root / "manifest.json";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << to_json(spec).dump(2) << "\n";
  if (!out) throw IoError("write failed for " + manifest.string());
}

DatasetSpec read_dataset_manifest(const std::filesystem::path& root) {
  const auto manifest = root / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest.string() + ": " + e.what());
  }
  DatasetSpec spec;
  from_json(j, spec);
  return spec;
}

std::vector<Triple> load_split(const std::filesystem::path& root, const std::string& split) {
  const DatasetSpec spec = read_dataset_manifest(root);
  std::size_t count = 0;
  if (split == "train") {
    count = spec.train_count;
  } else if (split == "test") {
    count = spec.test_count;
  } else {
    throw InvalidArgument("unknown split '" + split + "'");
  }
  std::vector<Triple> triples;
  triples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Triple t;
    t.mask = binarize(load_field(triple_path(root, split, i, "mask")), 0.5);
    t.pathological = load_field(triple_path(root, split, i, "path"));
    t.healthy = load_field(triple_path(root, split, i, "healthy"));
    if (!t.mask.same_shape(t.pathological) || !t.pathological.same_shape(t.healthy)) {
      throw ShapeMismatch("triple " + std::to_string(i) + " in " + split + " has inconsistent shapes");
    }
    triples.push_back(std::move(t));
  }
  return triples;
}

}  // namespace usb
