#pragma once

#include <optional>
#include <span>
#include <vector>

#include "usb/field.hpp"
#include "usb/schedule.hpp"

namespace usb {

// One evaluation of an epsilon-predictor: the noisy branch state, the paired
// condition (a clean estimate, a fixed mask, or the empty mask) and the
// training step t of a schedule with `steps` entries.
struct DenoiserInput {
  Field noisy;
  Field condition;
  int t = 1;
  int steps = 1;
};

class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  virtual Field predict(const DenoiserInput& input) const = 0;
  virtual std::vector<Field> predict_batch(std::span<const DenoiserInput> inputs) const;

  // Per-pixel Var[x0 | x_t] when the predictor knows it exactly. Samplers add
  // the matching term to the reverse-step variance.
  virtual std::optional<double> clean_variance(int /*t*/) const { return std::nullopt; }
};

// Data law N(mu, sigma2 * I) used to verify sampler math.
struct GaussianOracleSpec {
  Field mu;
  double sigma2 = 1.0;
};

// E[x0 | x_t] for Gaussian data.
Field oracle_posterior_mean(const GaussianOracleSpec& spec, const NoiseSchedule& schedule, const Field& noisy, int t);
// The noise that maps x_t back onto E[x0 | x_t].
Field oracle_predict_noise(const GaussianOracleSpec& spec, const NoiseSchedule& schedule, const Field& noisy, int t);

// Exact epsilon-predictor for Gaussian data; ignores the condition.
class GaussianOracle final : public NoisePredictor {
 public:
  GaussianOracle(GaussianOracleSpec spec, const NoiseSchedule& schedule);

  Field predict(const DenoiserInput& input) const override;
  std::optional<double> clean_variance(int t) const override;

  const GaussianOracleSpec& spec() const { return spec_; }

 private:
  GaussianOracleSpec spec_;
  const NoiseSchedule* schedule_;
};

// Always predicts zero noise.
class ZeroPredictor final : public NoisePredictor {
 public:
  Field predict(const DenoiserInput& input) const override { return Field(input.noisy.height(), input.noisy.width()); }
};

}  // namespace usb
