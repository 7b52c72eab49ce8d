#include "usb/experiments.hpp"

#include <algorithm>

#include "usb/error.hpp"
#include "usb/metrics.hpp"

namespace usb {

std::vector<Triple> lesion_cases(std::span<const Triple> triples, std::size_t count) {
  std::vector<Triple> out;
  for (const auto& t : triples) {
    if (out.size() == count) break;
    if (!t.mask.none()) out.push_back(t);
  }
  if (out.size() < count) throw InvalidArgument("lesion_cases: not enough triples with lesions");
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EditStats run_edits(const EditBench& bench, std::span<const Triple> cases, EditDirection direction,
                    const GuidanceConfig& cfg) {
  std::vector<EditRequest> requests;
  requests.reserve(cases.size());
  for (const auto& c : cases) {
    requests.push_back({direction == EditDirection::P2H ? c.pathological : c.healthy, c.mask, direction});
  }
  std::vector<Rng> rngs = trajectory_rngs(Rng(bench.seed), 0, cases.size());
  const auto results = edit_batch(bench.brain, requests, cfg, bench.schedule, bench.timeline, rngs);

  EditStats stats;
  for (std::size_t b = 0; b < cases.size(); ++b) {
    const Field& out = results[b].output;
    const Triple& c = cases[b];
    const Field soft = soft_mask(c.mask, bench.lesion.softness);
    Field outside(soft.height(), soft.width());
    for (std::size_t i = 0; i < soft.size(); ++i) outside[i] = 1.0 - soft[i];
    stats.outside_l1.push_back(weighted_l1(out, c.healthy, outside));
    stats.psnr.push_back(psnr(out, c.healthy));
    stats.input_l1.push_back(l1(out, requests[b].source));
    stats.inside_shift.push_back(c.mask.none() ? 0.0 : weighted_l1(out, c.healthy, c.mask.to_field()));
    stats.outputs.push_back(out);
  }
  return stats;
}

AcgAblation ablate_acg(const EditBench& bench, std::span<const Triple> cases, const GuidanceConfig& cfg) {
  GuidanceConfig on = cfg;
  on.acg_enabled = true;
  GuidanceConfig off = cfg;
  off.acg_enabled = false;
  AcgAblation a;
  a.with = run_edits(bench, cases, EditDirection::P2H, on);
  a.without = run_edits(bench, cases, EditDirection::P2H, off);
  a.median_l1_with = median(a.with.outside_l1);
  a.median_l1_without = median(a.without.outside_l1);
  a.median_psnr_with = median(a.with.psnr);
  a.median_psnr_without = median(a.without.psnr);
  return a;
}

LcgAblation ablate_lcg(const EditBench& bench, std::span<const Triple> cases, const GuidanceConfig& cfg) {
  GuidanceConfig on = cfg;
  on.lcg_enabled = true;
  GuidanceConfig off = cfg;
  off.lcg_enabled = false;
  LcgAblation a;
  a.with = run_edits(bench, cases, EditDirection::H2P, on);
  a.without = run_edits(bench, cases, EditDirection::H2P, off);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < cases.size(); ++b) {
    if (a.with.inside_shift[b] >= a.without.inside_shift[b]) ++hits;
  }
  a.fraction = cases.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(cases.size());
  return a;
}

std::vector<SweepPoint> sweep_guidance(const EditBench& bench, std::span<const Triple> cases,
                                       const GuidanceConfig& cfg, const std::string& parameter,
                                       std::span<const double> values) {
  std::vector<SweepPoint> out;
  for (double v : values) {
    GuidanceConfig c = cfg;
    EditDirection direction = EditDirection::P2H;
    if (parameter == "alpha0") {
      c.alpha0 = v;
    } else if (parameter == "k") {
      c.k = v;
    } else if (parameter == "eta") {
      c.eta = v;
      direction = EditDirection::H2P;
    } else {
      throw InvalidArgument("sweep: unknown parameter '" + parameter + "'");
    }
    const EditStats s = run_edits(bench, cases, direction, c);
    out.push_back({v, median(s.input_l1), median(s.inside_shift)});
  }
  return out;
}

bool non_decreasing_input_l1(std::span<const SweepPoint> sweep) {
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    if (sweep[i].median_input_l1 < sweep[i - 1].median_input_l1) return false;
  }
  return true;
}

OneStepAblation ablate_onestep(const PairModels& models, const InferenceTimeline& timeline,
                               std::span<const Field> reference, std::size_t samples, std::uint64_t seed,
                               bool clamp_estimates) {
  if (reference.empty() || samples < 2) throw InvalidArgument("ablate_onestep: need reference images and >= 2 samples");
  const std::size_t h = reference[0].height();
  const std::size_t w = reference[0].width();
  const FeatureEmbedding ref = downsample_features(reference, 4);
  OneStepAblation out;
  for (const auto mode : {PairConditioning::Estimates, PairConditioning::NoisyState}) {
    std::vector<Rng> rngs = trajectory_rngs(Rng(seed), 0, samples);
    const auto pairs = sample_unconditional_pairs(models, timeline, h, w, rngs, {mode, clamp_estimates});
    std::vector<Field> images;
    images.reserve(pairs.size());
    for (const auto& p : pairs) images.push_back(clamp(p.image_field, -1.0, 1.0));
    const double m = mmd2(downsample_features(images, 4), ref);
    (mode == PairConditioning::Estimates ? out.mmd_estimates : out.mmd_noisy) = m;
  }
  return out;
}

}  // namespace usb
