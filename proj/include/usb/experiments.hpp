#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "usb/editing.hpp"
#include "usb/paired.hpp"
#include "usb/phantom.hpp"

namespace usb {

// Shared inputs of the editing ablations. Case b always draws from
// substream b of `seed`, so settings are compared on common noise.
struct EditBench {
  const NoisePredictor& brain;
  const NoiseSchedule& schedule;
  const InferenceTimeline& timeline;
  LesionSpec lesion;  // softness defines the outside-lesion region
  std::uint64_t seed = 0;
};

// The first `count` triples with a non-empty lesion mask.
std::vector<Triple> lesion_cases(std::span<const Triple> triples, std::size_t count);

double median(std::vector<double> values);

// Per-case statistics of one editing setting.
struct EditStats {
  std::vector<double> outside_l1;     // vs healthy, weight 1 - soft(mask)  (p2h)
  std::vector<double> psnr;           // vs healthy                         (p2h)
  std::vector<double> input_l1;       // whole-image L1 to the edit input
  std::vector<double> inside_shift;   // mean |output - healthy| on the mask (h2p)
  std::vector<Field> outputs;
};

// p2h edits pathological images; h2p edits healthy images toward the mask.
EditStats run_edits(const EditBench& bench, std::span<const Triple> cases, EditDirection direction,
                    const GuidanceConfig& cfg);

struct AcgAblation {
  EditStats with;
  EditStats without;
  double median_l1_with = 0.0;
  double median_l1_without = 0.0;
  double median_psnr_with = 0.0;
  double median_psnr_without = 0.0;
  // Strictly lower median outside-lesion L1 and strictly higher median PSNR.
  bool holds() const { return median_l1_with < median_l1_without && median_psnr_with > median_psnr_without; }
};
AcgAblation ablate_acg(const EditBench& bench, std::span<const Triple> cases, const GuidanceConfig& cfg);

struct LcgAblation {
  EditStats with;
  EditStats without;
  // Share of cases whose inside-lesion shift with LCG is >= without.
  double fraction = 0.0;
  bool holds(double required = 0.8) const { return fraction >= required; }
};
LcgAblation ablate_lcg(const EditBench& bench, std::span<const Triple> cases, const GuidanceConfig& cfg);

struct SweepPoint {
  double value = 0.0;
  double median_input_l1 = 0.0;
  double median_inside_shift = 0.0;
};

// Re-runs edits with one guidance parameter ("alpha0", "k" or "eta") set to
// each value. alpha0 and k sweep p2h; eta sweeps h2p.
std::vector<SweepPoint> sweep_guidance(const EditBench& bench, std::span<const Triple> cases,
                                       const GuidanceConfig& cfg, const std::string& parameter,
                                       std::span<const double> values);

// True if the median input L1 never decreases along the sweep.
bool non_decreasing_input_l1(std::span<const SweepPoint> sweep);

struct OneStepAblation {
  double mmd_estimates = 0.0;
  double mmd_noisy = 0.0;
  bool holds() const { return mmd_estimates < mmd_noisy; }
};

// Unconditional pairs with estimate conditioning vs noisy-state conditioning;
// RBF-median MMD^2 of the images to `reference` on 4x downsampled features.
// Both modes start from the same substreams.
OneStepAblation ablate_onestep(const PairModels& models, const InferenceTimeline& timeline,
                               std::span<const Field> reference, std::size_t samples, std::uint64_t seed,
                               bool clamp_estimates = true);

}  // namespace usb
