#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "usb/denoiser.hpp"
#include "usb/field.hpp"
#include "usb/rng.hpp"
#include "usb/schedule.hpp"

namespace usb {

// A lesion mask in diffusion space (lesion = +1) and an image in [-1, 1].
struct SamplePair {
  Field mask_field;
  Field image_field;

  // Throws ShapeMismatch if the two fields differ in shape.
  void validate() const;
};

// State of a joint reverse trajectory at inference index i, with the
// one-step estimates of both clean branches at that index.
struct PairState {
  Field x_t;
  Field y_t;
  int i = 0;
  Field x0_hat;
  Field y0_hat;
};

// What each branch sees as its partner in the update of a joint step.
//   Estimates: the partner's one-step estimate, itself computed from a pass
//     conditioned on the noisy partner.
//   LesionOnNoisyImage: as Estimates for the brain branch; the lesion branch
//     conditions on y_t.
//   NoisyState: both branches condition on the partner's noisy state.
enum class PairConditioning { Estimates, LesionOnNoisyImage, NoisyState };

std::string to_string(PairConditioning mode);
PairConditioning pair_conditioning_from_string(const std::string& name);

struct SamplerOptions {
  PairConditioning conditioning = PairConditioning::Estimates;
  bool clamp_estimates = true;
};

struct PairModels {
  const NoisePredictor& lesion;
  const NoisePredictor& brain;
};

struct NoisedPair {
  Field x_t;
  Field y_t;
  Field eps_x;
  Field eps_y;
};

// Draws eps_x then eps_y from `rng` and noises both branches to step t.
NoisedPair forward_noise_pair(const SamplePair& pair, const NoiseSchedule& schedule, int t, Rng& rng);

// (noisy - sqrt(1 - abar) eps) / sqrt(abar), clamped to [-1, 1] if asked.
Field one_step_estimate(const Field& eps_pred, const Field& noisy, double alpha_bar, bool clamp_result = true);
Field one_step_estimate(const Field& eps_pred, const Field& noisy, const NoiseSchedule& schedule, int t,
                        bool clamp_result = true);

// Ancestral step from timeline index i to i - 1:
//   mean = (noisy - beta'_i / sqrt(1 - abar'_i) eps) / sqrt(alpha'_i)
// plus sqrt(var) fresh noise, var = posterior_var(i) + c0^2 clean_var with
// c0 = sqrt(abar'_{i-1}) beta'_i / (1 - abar'_i). Index 1 returns the mean
// and draws nothing.
Field ancestral_step(const Field& noisy, const Field& eps_pred, const InferenceTimeline& timeline, int i, Rng& rng,
                     std::optional<double> clean_var = std::nullopt);

// Model input for timeline index i.
DenoiserInput timeline_input(const Field& noisy, const Field& condition, const InferenceTimeline& timeline, int i);

// Fills x0_hat and y0_hat of `state` from a pass where each branch conditions
// on the noisy partner.
void estimate_pair(const PairModels& models, PairState& state, const InferenceTimeline& timeline,
                   bool clamp_estimates = true);

enum class Branch { Lesion, Brain };

// One branch's update from index state.i to state.i - 1. Expects the
// estimates in `state` to be current.
Field reverse_step(Branch branch, const PairModels& models, const PairState& state, const InferenceTimeline& timeline,
                   Rng& rng, const SamplerOptions& options = {});

// Joint step over a batch of trajectories sharing one index: estimates first,
// then the lesion update, then the brain update. Trajectory b draws its noise
// from rngs[b] only, so results do not depend on the batch composition.
void joint_step(const PairModels& models, std::span<PairState> states, const InferenceTimeline& timeline,
                std::span<Rng> rngs, const SamplerOptions& options = {});

// x_T then y_T drawn from each rng, K joint steps, the mask binarized at 0
// and mapped back to +-1.
std::vector<SamplePair> sample_unconditional_pairs(const PairModels& models, const InferenceTimeline& timeline,
                                                   std::size_t height, std::size_t width, std::span<Rng> rngs,
                                                   const SamplerOptions& options = {});
SamplePair sample_unconditional_pair(const PairModels& models, const InferenceTimeline& timeline, std::size_t height,
                                     std::size_t width, Rng& rng, const SamplerOptions& options = {});

// Called after every reverse step of the brain chain with the index i just
// left, the clamped one-step estimate used at i, and y_{i-1}, which the hook
// may rewrite.
class ChainHook {
 public:
  virtual ~ChainHook() = default;
  virtual void after_step(std::size_t trajectory, int i, const Field& y0_hat, Field& y_prev) = 0;
};

// Brain-branch chains from `starts` at index `from` down to index `to`,
// trajectory b conditioned on conditions[b] at every step and drawing from
// rngs[b].
std::vector<Field> reverse_chains(const NoisePredictor& brain, std::span<const Field> conditions,
                                  std::vector<Field> starts, int from, const InferenceTimeline& timeline,
                                  std::span<Rng> rngs, ChainHook* hook = nullptr, int to = 0);

// Brain branch from y_T ~ N(0, I), conditioned on each mask in diffusion
// space at every step.
std::vector<Field> sample_conditional_batch(const NoisePredictor& brain, std::span<const BinaryMask> masks,
                                            const InferenceTimeline& timeline, std::span<Rng> rngs);
Field sample_conditional(const NoisePredictor& brain, const BinaryMask& mask, const InferenceTimeline& timeline,
                         Rng& rng);

// Substream b of `base` for each of n trajectories.
std::vector<Rng> trajectory_rngs(const Rng& base, std::size_t first, std::size_t count);

}  // namespace usb
