#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "usb/field.hpp"

namespace usb {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Elliptical head phantom. Geometry is in pixels, intensities in [-1, 1].
// The outer ellipse is the skull; the cortex band sits just inside it and
// the interior is white-matter-like tissue with two darker ventricles.
struct PhantomSpec {
  int size = 48;
  double center_jitter = 1.0;
  Range axis_major{17.0, 20.0};  // vertical semi-axis
  Range axis_minor{14.0, 17.0};  // horizontal semi-axis
  Range skull_thickness{1.5, 2.5};
  Range cortex_thickness{2.0, 3.5};
  Range skull_intensity{0.6, 0.9};
  Range cortex_intensity{0.0, 0.25};
  Range tissue_intensity{0.35, 0.6};
  Range ventricle_intensity{-0.6, -0.3};
  Range ventricle_axis_major{4.0, 7.0};
  Range ventricle_axis_minor{1.5, 3.0};
  double texture_amplitude = 0.05;
  double texture_sigma = 1.5;
  double smoothing_sigma = 0.7;

  // Throws InvalidArgument unless every range is ordered and the largest
  // head fits with a 2 px margin.
  void validate() const;
};

enum class LesionIntensity { Hypo, Hyper, Mixed };

std::string to_string(LesionIntensity mode);
LesionIntensity lesion_intensity_from_string(const std::string& name);

struct LesionSpec {
  int blob_count_min = 0;
  int blob_count_max = 3;
  Range blob_scale{1.5, 7.0};
  // Relative amplitude of the smoothed noise modulating each Gaussian blob
  // profile before thresholding at 0.5.
  double roughness = 0.25;
  double max_area_fraction = 0.35;
  LesionIntensity intensity = LesionIntensity::Hypo;
  Range shift{0.4, 0.9};  // magnitude; the sign comes from the mode
  double softness = 1.5;
  double texture_amplitude = 0.2;

  void validate() const;
};

struct HealthyPhantom {
  Field image;
  // Tissue inside the skull; lesions live here.
  BinaryMask brain;
};

HealthyPhantom generate_healthy(const PhantomSpec& spec, std::uint64_t seed);

// Union of thresholded noisy blobs centred on brain pixels, clipped to the
// brain. Blobs that would push the area past max_area_fraction of the
// brain are dropped.
BinaryMask generate_lesion_mask(const LesionSpec& spec, const BinaryMask& brain, std::uint64_t seed);

// 1 on the mask, falling linearly to 0 at distance softness + 1 outside it.
Field soft_mask(const BinaryMask& mask, double softness);

// Multiplicative lesion texture 1 + amplitude * n, with n smoothed unit noise.
Field lesion_texture(const LesionSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed);

// Signed intensity shift drawn for one lesion.
double lesion_shift(const LesionSpec& spec, std::uint64_t seed);

// clamp(healthy + soft(mask) * shift * texture, -1, 1) where soft > 0;
// other pixels are copied unchanged.
Field embed_lesion(const Field& healthy, const BinaryMask& mask, const LesionSpec& spec, std::uint64_t seed);

// Ground-truth training unit: lesion mask, lesioned image, healthy source.
struct Triple {
  BinaryMask mask;
  Field pathological;
  Field healthy;
};

Triple make_triple(const PhantomSpec& phantom, const LesionSpec& lesion, std::uint64_t seed);

struct DatasetSpec {
  PhantomSpec phantom;
  LesionSpec lesion;
  std::size_t train_count = 512;
  std::size_t test_count = 100;
  std::uint64_t seed = 1;
};

// Seed of triple `index` in `split` ("train" or "test").
std::uint64_t triple_seed(std::uint64_t base_seed, const std::string& split, std::size_t index);

// Writes <root>/<split>/<index>.{mask,path,healthy}.ubt for both splits and
// <root>/manifest.json.
void write_dataset(const std::filesystem::path& root, const DatasetSpec& spec);

DatasetSpec read_dataset_manifest(const std::filesystem::path& root);
std::vector<Triple> load_split(const std::filesystem::path& root, const std::string& split);

}  // namespace usb
