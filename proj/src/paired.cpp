#include "usb/paired.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "usb/error.hpp"

namespace usb {

void SamplePair::validate() const { require_same_shape(mask_field, image_field, "sample pair"); }

std::string to_string(PairConditioning mode) {
  switch (mode) {
    case PairConditioning::Estimates: return "estimates";
    case PairConditioning::LesionOnNoisyImage: return "lesion-on-noisy-image";
    case PairConditioning::NoisyState: return "noisy-state";
  }
  return "estimates";
}

PairConditioning pair_conditioning_from_string(const std::string& name) {
  if (name == "estimates") return PairConditioning::Estimates;
  if (name == "lesion-on-noisy-image") return PairConditioning::LesionOnNoisyImage;
  if (name == "noisy-state") return PairConditioning::NoisyState;
  throw InvalidArgument("unknown pair conditioning '" + name + "'");
}

NoisedPair forward_noise_pair(const SamplePair& pair, const NoiseSchedule& schedule, int t, Rng& rng) {
  pair.validate();
  const std::size_t h = pair.mask_field.height();
  const std::size_t w = pair.mask_field.width();
  NoisedPair out;
  out.eps_x = gaussian_draw(rng, h, w);
  out.eps_y = gaussian_draw(rng, h, w);
  out.x_t = marginal_noise(schedule, pair.mask_field, t, out.eps_x);
  out.y_t = marginal_noise(schedule, pair.image_field, t, out.eps_y);
  return out;
}

Field one_step_estimate(const Field& eps_pred, const Field& noisy, double alpha_bar, bool clamp_result) {
  require_same_shape(eps_pred, noisy, "one_step_estimate");
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) throw InvalidArgument("one_step_estimate: alpha_bar outside (0, 1]");
  const double root = std::sqrt(alpha_bar);
  const double spread = std::sqrt(1.0 - alpha_bar);
  Field out(noisy.height(), noisy.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = (noisy[i] - spread * eps_pred[i]) / root;
    out[i] = clamp_result ? std::clamp(v, -1.0, 1.0) : v;
  }
  return out;
}

Field one_step_estimate(const Field& eps_pred, const Field& noisy, const NoiseSchedule& schedule, int t,
                        bool clamp_result) {
  return one_step_estimate(eps_pred, noisy, schedule.alpha_bar(t), clamp_result);
}

Field ancestral_step(const Field& noisy, const Field& eps_pred, const InferenceTimeline& timeline, int i, Rng& rng,
                     std::optional<double> clean_var) {
  require_same_shape(eps_pred, noisy, "ancestral_step");
  if (i < 1 || i > timeline.length()) throw InvalidArgument("ancestral_step: index outside the timeline");
  const double ab = timeline.alpha_bar(i);
  const double beta = timeline.beta(i);
  const double inv_root_alpha = 1.0 / std::sqrt(timeline.alpha(i));
  const double eps_gain = beta / std::sqrt(1.0 - ab);
  Field out(noisy.height(), noisy.width());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = inv_root_alpha * (noisy[p] - eps_gain * eps_pred[p]);
  if (i == 1) return out;
  double var = timeline.posterior_var(i);
  if (clean_var) {
    const double c0 = std::sqrt(timeline.alpha_bar(i - 1)) * beta / (1.0 - ab);
    var += c0 * c0 * *clean_var;
  }
  const double sd = std::sqrt(var);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] += sd * rng.normal();
  return out;
}

DenoiserInput timeline_input(const Field& noisy, const Field& condition, const InferenceTimeline& timeline, int i) {
  return DenoiserInput{noisy, condition, timeline.step(i), timeline.schedule_length()};
}

namespace {

std::optional<double> clean_variance_at(const NoisePredictor& model, const InferenceTimeline& timeline, int i) {
  return model.clean_variance(timeline.step(i));
}

// Fills the estimates of every state; returns the first-pass noise
// predictions of both branches.
void estimate_batch(const PairModels& models, std::span<PairState> states, const InferenceTimeline& timeline,
                    bool clamp_estimates, std::vector<Field>& eps_x, std::vector<Field>& eps_y) {
  std::vector<DenoiserInput> lesion_in;
  std::vector<DenoiserInput> brain_in;
  lesion_in.reserve(states.size());
  brain_in.reserve(states.size());
  for (const auto& s : states) {
    lesion_in.push_back(timeline_input(s.x_t, s.y_t, timeline, s.i));
    brain_in.push_back(timeline_input(s.y_t, s.x_t, timeline, s.i));
  }
  eps_x = models.lesion.predict_batch(lesion_in);
  eps_y = models.brain.predict_batch(brain_in);
  for (std::size_t b = 0; b < states.size(); ++b) {
    const double ab = timeline.alpha_bar(states[b].i);
    states[b].x0_hat = one_step_estimate(eps_x[b], states[b].x_t, ab, clamp_estimates);
    states[b].y0_hat = one_step_estimate(eps_y[b], states[b].y_t, ab, clamp_estimates);
  }
}

const Field& lesion_condition(const PairState& s, PairConditioning mode) {
  return mode == PairConditioning::Estimates ? s.y0_hat : s.y_t;
}

const Field& brain_condition(const PairState& s, PairConditioning mode) {
  return mode == PairConditioning::NoisyState ? s.x_t : s.x0_hat;
}

void check_state(const PairState& s, const InferenceTimeline& timeline) {
  require_same_shape(s.x_t, s.y_t, "pair state");
  if (s.i < 1 || s.i > timeline.length()) throw InvalidArgument("pair state: index outside the timeline");
}

}  // namespace

void estimate_pair(const PairModels& models, PairState& state, const InferenceTimeline& timeline,
                   bool clamp_estimates) {
  check_state(state, timeline);
  std::vector<Field> eps_x;
  std::vector<Field> eps_y;
  estimate_batch(models, std::span<PairState>(&state, 1), timeline, clamp_estimates, eps_x, eps_y);
}

Field reverse_step(Branch branch, const PairModels& models, const PairState& state, const InferenceTimeline& timeline,
                   Rng& rng, const SamplerOptions& options) {
  check_state(state, timeline);
  const int i = state.i;
  if (branch == Branch::Lesion) {
    const Field eps = models.lesion.predict(
        timeline_input(state.x_t, lesion_condition(state, options.conditioning), timeline, i));
    return ancestral_step(state.x_t, eps, timeline, i, rng, clean_variance_at(models.lesion, timeline, i));
  }
  const Field eps =
      models.brain.predict(timeline_input(state.y_t, brain_condition(state, options.conditioning), timeline, i));
  return ancestral_step(state.y_t, eps, timeline, i, rng, clean_variance_at(models.brain, timeline, i));
}

void joint_step(const PairModels& models, std::span<PairState> states, const InferenceTimeline& timeline,
                std::span<Rng> rngs, const SamplerOptions& options) {
  if (states.size() != rngs.size()) throw InvalidArgument("joint_step: one rng per trajectory required");
  if (states.empty()) return;
  const int i = states[0].i;
  for (const auto& s : states) {
    check_state(s, timeline);
    if (s.i != i) throw InvalidArgument("joint_step: trajectories must share the index");
  }
  std::vector<Field> eps_x;
  std::vector<Field> eps_y;
  estimate_batch(models, states, timeline, options.clamp_estimates, eps_x, eps_y);

  // The first pass already conditions on the noisy partner; only estimate
  // conditions need a second pass.
  const auto mode = options.conditioning;
  if (mode == PairConditioning::Estimates) {
    std::vector<DenoiserInput> in;
    in.reserve(states.size());
    for (const auto& s : states) in.push_back(timeline_input(s.x_t, s.y0_hat, timeline, i));
    eps_x = models.lesion.predict_batch(in);
  }
  if (mode != PairConditioning::NoisyState) {
    std::vector<DenoiserInput> in;
    in.reserve(states.size());
    for (const auto& s : states) in.push_back(timeline_input(s.y_t, s.x0_hat, timeline, i));
    eps_y = models.brain.predict_batch(in);
  }

  const auto var_x = clean_variance_at(models.lesion, timeline, i);
  const auto var_y = clean_variance_at(models.brain, timeline, i);
  for (std::size_t b = 0; b < states.size(); ++b) {
    Field x_prev = ancestral_step(states[b].x_t, eps_x[b], timeline, i, rngs[b], var_x);
    Field y_prev = ancestral_step(states[b].y_t, eps_y[b], timeline, i, rngs[b], var_y);
    states[b].x_t = std::move(x_prev);
    states[b].y_t = std::move(y_prev);
    states[b].i = i - 1;
  }
}

std::vector<SamplePair> sample_unconditional_pairs(const PairModels& models, const InferenceTimeline& timeline,
                                                   std::size_t height, std::size_t width, std::span<Rng> rngs,
                                                   const SamplerOptions& options) {
  if (height == 0 || width == 0) throw InvalidArgument("sample_unconditional: empty shape");
  std::vector<PairState> states(rngs.size());
  for (std::size_t b = 0; b < rngs.size(); ++b) {
    states[b].x_t = gaussian_draw(rngs[b], height, width);
    states[b].y_t = gaussian_draw(rngs[b], height, width);
    states[b].i = timeline.length();
  }
  for (int i = timeline.length(); i >= 1; --i) joint_step(models, states, timeline, rngs, options);
  std::vector<SamplePair> out;
  out.reserve(states.size());
  for (auto& s : states) out.push_back({binarize(s.x_t, 0.0).to_diffusion(), std::move(s.y_t)});
  return out;
}

SamplePair sample_unconditional_pair(const PairModels& models, const InferenceTimeline& timeline, std::size_t height,
                                     std::size_t width, Rng& rng, const SamplerOptions& options) {
  return sample_unconditional_pairs(models, timeline, height, width, std::span<Rng>(&rng, 1), options).front();
}

std::vector<Field> reverse_chains(const NoisePredictor& brain, std::span<const Field> conditions,
                                  std::vector<Field> starts, int from, const InferenceTimeline& timeline,
                                  std::span<Rng> rngs, ChainHook* hook, int to) {
  if (conditions.size() != starts.size() || rngs.size() != starts.size()) {
    throw InvalidArgument("reverse_chains: conditions, starts and rngs must align");
  }
  if (to < 0 || from < to || from > timeline.length()) {
    throw InvalidArgument("reverse_chains: need 0 <= to <= from <= K");
  }
  for (std::size_t b = 0; b < starts.size(); ++b) require_same_shape(starts[b], conditions[b], "reverse chain");
  std::vector<DenoiserInput> in(starts.size());
  for (int i = from; i > to; --i) {
    for (std::size_t b = 0; b < starts.size(); ++b) in[b] = timeline_input(starts[b], conditions[b], timeline, i);
    const std::vector<Field> eps = brain.predict_batch(in);
    const auto var = clean_variance_at(brain, timeline, i);
    for (std::size_t b = 0; b < starts.size(); ++b) {
      Field y_prev = ancestral_step(starts[b], eps[b], timeline, i, rngs[b], var);
      if (hook) {
        const Field y0_hat = one_step_estimate(eps[b], starts[b], timeline.alpha_bar(i), true);
        hook->after_step(b, i, y0_hat, y_prev);
      }
      starts[b] = std::move(y_prev);
    }
  }
  return starts;
}

std::vector<Field> sample_conditional_batch(const NoisePredictor& brain, std::span<const BinaryMask> masks,
                                            const InferenceTimeline& timeline, std::span<Rng> rngs) {
  if (masks.size() != rngs.size()) throw InvalidArgument("sample_conditional: one rng per mask required");
  std::vector<Field> conditions;
  std::vector<Field> starts;
  conditions.reserve(masks.size());
  starts.reserve(masks.size());
  for (std::size_t b = 0; b < masks.size(); ++b) {
    if (masks[b].size() == 0) throw ShapeMismatch("sample_conditional: empty mask shape");
    conditions.push_back(masks[b].to_diffusion());
    starts.push_back(gaussian_draw(rngs[b], masks[b].height(), masks[b].width()));
  }
  return reverse_chains(brain, conditions, std::move(starts), timeline.length(), timeline, rngs);
}

Field sample_conditional(const NoisePredictor& brain, const BinaryMask& mask, const InferenceTimeline& timeline,
                         Rng& rng) {
  return sample_conditional_batch(brain, std::span<const BinaryMask>(&mask, 1), timeline, std::span<Rng>(&rng, 1))
      .front();
}

std::vector<Rng> trajectory_rngs(const Rng& base, std::size_t first, std::size_t count) {
  std::vector<Rng> out;
  out.reserve(count);
  for (std::size_t b = 0; b < count; ++b) out.push_back(base.substream(first + b));
  return out;
}

}  // namespace usb
