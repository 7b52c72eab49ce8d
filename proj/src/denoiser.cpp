#include "usb/denoiser.hpp"

#include <cmath>

#include "usb/error.hpp"

namespace usb {

std::vector<Field> NoisePredictor::predict_batch(std::span<const DenoiserInput> inputs) const {
  std::vector<Field> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(predict(in));
  return out;
}

Field oracle_posterior_mean(const GaussianOracleSpec& spec, const NoiseSchedule& schedule, const Field& noisy, int t) {
  require_same_shape(spec.mu, noisy, "oracle_posterior_mean");
  const double ab = schedule.alpha_bar(t);
  const double root = std::sqrt(ab);
  const double gain = root * spec.sigma2 / (ab * spec.sigma2 + 1.0 - ab);
  Field out(noisy.height(), noisy.width());
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    out[i] = spec.mu[i] + gain * (noisy[i] - root * spec.mu[i]);
  }
  return out;
}

Field oracle_predict_noise(const GaussianOracleSpec& spec, const NoiseSchedule& schedule, const Field& noisy, int t) {
  const Field mean = oracle_posterior_mean(spec, schedule, noisy, t);
  const double ab = schedule.alpha_bar(t);
  const double root = std::sqrt(ab);
  const double spread = std::sqrt(1.0 - ab);
  Field out(noisy.height(), noisy.width());
  for (std::size_t i = 0; i < noisy.size(); ++i) out[i] = (noisy[i] - root * mean[i]) / spread;
  return out;
}

GaussianOracle::GaussianOracle(GaussianOracleSpec spec, const NoiseSchedule& schedule)
    : spec_(std::move(spec)), schedule_(&schedule) {
  if (spec_.sigma2 < 0.0) throw InvalidArgument("oracle: sigma2 must be >= 0");
}

Field GaussianOracle::predict(const DenoiserInput& input) const {
  return oracle_predict_noise(spec_, *schedule_, input.noisy, input.t);
}

std::optional<double> GaussianOracle::clean_variance(int t) const {
  const double ab = schedule_->alpha_bar(t);
  return spec_.sigma2 * (1.0 - ab) / (ab * spec_.sigma2 + 1.0 - ab);
}

}  // namespace usb
