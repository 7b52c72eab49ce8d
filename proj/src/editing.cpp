#include "usb/editing.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "usb/error.hpp"
#include "usb/paired.hpp"

namespace usb {

void GuidanceConfig::validate() const {
  if (!(alpha0 > 0.0)) throw InvalidArgument("guidance: alpha0 must be > 0");
  if (!(k >= 0.0)) throw InvalidArgument("guidance: k must be >= 0");
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidArgument("guidance: eta must lie in [0, 1]");
  if (!(t_start_frac > 0.0 && t_start_frac <= 1.0)) throw InvalidArgument("guidance: t_start_frac must lie in (0, 1]");
  if (pool_window < 1 || pool_window % 2 == 0) throw InvalidArgument("guidance: pool_window must be odd and >= 1");
}

double guidance_gain(const GuidanceConfig& cfg, double t, double steps) {
  if (!(steps > 0.0) || t < 0.0 || t > steps) throw InvalidArgument("guidance_gain: need 0 <= t <= steps");
  return cfg.alpha0 * std::exp(-cfg.k * t / steps);
}

Field acg_weight(const GuidanceConfig& cfg, const Field& y0, const Field& y0_hat, double t, double steps) {
  require_same_shape(y0, y0_hat, "acg_weight");
  const double g = guidance_gain(cfg, t, steps);
  Field out(y0.height(), y0.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(-g * std::abs(y0[i] - y0_hat[i]));
  return out;
}

Field lcg_weight(const GuidanceConfig& cfg, const BinaryMask& mask) {
  const Field pooled = avg_pool_same(mask.to_field(), cfg.pool_window);
  Field out(pooled.height(), pooled.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - cfg.eta * pooled[i];
  return out;
}

Field guided_update(const Field& y_prev, const Field& y0, const Field& lambda) {
  require_same_shape(y_prev, y0, "guided_update");
  require_same_shape(y_prev, lambda, "guided_update weight");
  Field out(y_prev.height(), y_prev.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double l = lambda[i];
    if (!(l >= -1e-9 && l <= 1.0 + 1e-9)) throw InvalidArgument("guided_update: weight outside [0, 1]");
    out[i] = y_prev[i] + l * (y0[i] - y_prev[i]);
  }
  return out;
}

std::string to_string(EditDirection d) { return d == EditDirection::P2H ? "p2h" : "h2p"; }

EditDirection edit_direction_from_string(const std::string& name) {
  if (name == "p2h") return EditDirection::P2H;
  if (name == "h2p") return EditDirection::H2P;
  throw InvalidArgument("unknown edit direction '" + name + "'");
}

int edit_start_index(const GuidanceConfig& cfg, int steps, Rng& rng) {
  cfg.validate();
  const int top = std::clamp(static_cast<int>(std::lround(cfg.t_start_frac * steps)), 1, steps);
  return cfg.randomize_start ? rng.integer(1, top) : top;
}

namespace {

class GuidanceHook final : public ChainHook {
 public:
  GuidanceHook(const GuidanceConfig& cfg, std::span<const EditRequest> requests, int steps,
               const std::vector<int>& snapshot_steps, std::vector<EditResult>& results)
      : cfg_(cfg), requests_(requests), steps_(steps), snapshot_steps_(snapshot_steps), results_(results) {
    lesion_.reserve(requests.size());
    for (const auto& r : requests) {
      if (r.direction == EditDirection::H2P && cfg.lcg_enabled) {
        lesion_.push_back(lcg_weight(cfg, r.mask));
      } else {
        lesion_.emplace_back();
      }
    }
  }

  void after_step(std::size_t b, int i, const Field& y0_hat, Field& y_prev) override {
    const Field& y0 = requests_[b].source;
    Field lambda = acg_weight(cfg_, y0, y0_hat, i, steps_);
    if (!lesion_[b].empty()) lambda = mul(lambda, lesion_[b]);
    y_prev = guided_update(y_prev, y0, lambda);
    if (std::find(snapshot_steps_.begin(), snapshot_steps_.end(), i) != snapshot_steps_.end()) {
      results_[b].lambda_snapshots[i] = std::move(lambda);
    }
  }

 private:
  const GuidanceConfig& cfg_;
  std::span<const EditRequest> requests_;
  int steps_;
  const std::vector<int>& snapshot_steps_;
  std::vector<EditResult>& results_;
  std::vector<Field> lesion_;
};

}  // namespace

std::vector<EditResult> edit_batch(const NoisePredictor& brain, std::span<const EditRequest> requests,
                                   const GuidanceConfig& cfg, const NoiseSchedule& schedule,
                                   const InferenceTimeline& timeline, std::span<Rng> rngs,
                                   const std::vector<int>& snapshot_steps) {
  cfg.validate();
  if (requests.size() != rngs.size()) throw InvalidArgument("edit: one rng per request required");
  if (timeline.schedule_length() != schedule.length()) throw InvalidArgument("edit: timeline and schedule differ");
  std::vector<EditResult> results(requests.size());
  if (requests.empty()) return results;

  std::vector<Field> conditions;
  std::vector<Field> starts;
  for (std::size_t b = 0; b < requests.size(); ++b) {
    const auto& r = requests[b];
    if (!r.mask.same_shape(r.source)) throw ShapeMismatch("edit: source and mask shapes differ");
    results[b].start_index = edit_start_index(cfg, timeline.length(), rngs[b]);
    const Field eps = gaussian_draw(rngs[b], r.source.height(), r.source.width());
    starts.push_back(marginal_noise(schedule, r.source, timeline.step(results[b].start_index), eps));
    conditions.push_back(r.direction == EditDirection::H2P ? r.mask.to_diffusion()
                                                           : BinaryMask(r.mask.height(), r.mask.width()).to_diffusion());
  }

  // Trajectories with different start indices join the batch as the shared
  // index reaches them.
  GuidanceHook hook(cfg, requests, timeline.length(), snapshot_steps, results);
  ChainHook* active = cfg.acg_enabled ? &hook : nullptr;
  int top = 0;
  for (const auto& r : results) top = std::max(top, r.start_index);
  std::vector<Field> state = starts;
  for (int i = top; i >= 1; --i) {
    std::vector<std::size_t> members;
    for (std::size_t b = 0; b < requests.size(); ++b) {
      if (results[b].start_index >= i) members.push_back(b);
    }
    std::vector<Field> cond;
    std::vector<Field> cur;
    std::vector<Rng> sub_rngs;
    for (std::size_t b : members) {
      cond.push_back(conditions[b]);
      cur.push_back(std::move(state[b]));
      sub_rngs.push_back(rngs[b]);
    }
    struct Remap final : ChainHook {
      ChainHook* inner;
      const std::vector<std::size_t>* ids;
      void after_step(std::size_t b, int idx, const Field& y0_hat, Field& y_prev) override {
        inner->after_step((*ids)[b], idx, y0_hat, y_prev);
      }
    } remap;
    remap.inner = active;
    remap.ids = &members;
    cur = reverse_chains(brain, cond, std::move(cur), i, timeline, sub_rngs, active ? &remap : nullptr, i - 1);
    for (std::size_t m = 0; m < members.size(); ++m) {
      state[members[m]] = std::move(cur[m]);
      rngs[members[m]] = sub_rngs[m];
    }
  }
  for (std::size_t b = 0; b < requests.size(); ++b) results[b].output = clamp(state[b], -1.0, 1.0);
  return results;
}

EditResult edit(const NoisePredictor& brain, const EditRequest& request, const GuidanceConfig& cfg,
                const NoiseSchedule& schedule, const InferenceTimeline& timeline, Rng& rng,
                const std::vector<int>& snapshot_steps) {
  return edit_batch(brain, std::span<const EditRequest>(&request, 1), cfg, schedule, timeline,
                    std::span<Rng>(&rng, 1), snapshot_steps)
      .front();
}

}  // namespace usb
