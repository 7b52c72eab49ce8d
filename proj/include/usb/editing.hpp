#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "usb/denoiser.hpp"
#include "usb/field.hpp"
#include "usb/rng.hpp"
#include "usb/schedule.hpp"

namespace usb {

// Guidance gain g_i = alpha0 exp(-k i / K) decays along the inference
// timeline; the ACG weight is exp(-g_i |y0 - y0_hat|) and the LCG weight
// 1 - eta avgpool(mask).
struct GuidanceConfig {
  double alpha0 = 20.0;
  double k = 0.5;
  double eta = 1.0;
  int pool_window = 7;
  // Noise is injected at inference index round(t_start_frac K).
  double t_start_frac = 0.6;
  bool acg_enabled = true;
  bool lcg_enabled = true;
  // Draw the start index uniformly from [1, round(t_start_frac K)] instead.
  bool randomize_start = false;

  // Throws InvalidArgument outside alpha0 > 0, k >= 0, eta in [0, 1],
  // t_start_frac in (0, 1] and an odd window >= 1.
  void validate() const;
};

double guidance_gain(const GuidanceConfig& cfg, double t, double steps);
Field acg_weight(const GuidanceConfig& cfg, const Field& y0, const Field& y0_hat, double t, double steps);
Field lcg_weight(const GuidanceConfig& cfg, const BinaryMask& mask);

// (1 - lambda) y_prev + lambda y0. Throws InvalidArgument if lambda leaves
// [0, 1] by more than 1e-9.
Field guided_update(const Field& y_prev, const Field& y0, const Field& lambda);

// p2h removes pathology under the empty mask; h2p embeds the requested mask.
enum class EditDirection { P2H, H2P };

std::string to_string(EditDirection d);
EditDirection edit_direction_from_string(const std::string& name);

struct EditRequest {
  Field source;
  BinaryMask mask;
  EditDirection direction = EditDirection::P2H;
};

struct EditResult {
  Field output;
  int start_index = 0;
  // Guidance weight after the step leaving each requested index.
  std::map<int, Field> lambda_snapshots;
};

// Inference index at which noise is injected; draws from `rng` only when
// cfg.randomize_start is set.
int edit_start_index(const GuidanceConfig& cfg, int steps, Rng& rng);

// Noises each source to its start index, then runs the guided brain chain.
// Request b draws only from rngs[b]. With ACG disabled no update is applied
// and the chain equals the plain conditional reverse chain.
std::vector<EditResult> edit_batch(const NoisePredictor& brain, std::span<const EditRequest> requests,
                                   const GuidanceConfig& cfg, const NoiseSchedule& schedule,
                                   const InferenceTimeline& timeline, std::span<Rng> rngs,
                                   const std::vector<int>& snapshot_steps = {});
EditResult edit(const NoisePredictor& brain, const EditRequest& request, const GuidanceConfig& cfg,
                const NoiseSchedule& schedule, const InferenceTimeline& timeline, Rng& rng,
                const std::vector<int>& snapshot_steps = {});

}  // namespace usb
