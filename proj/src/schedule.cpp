#include "usb/schedule.hpp"

#include <cmath>
#include <string>

#include "usb/error.hpp"

namespace usb {

NoiseSchedule NoiseSchedule::linear(int steps, double beta1, double betaT) {
  if (steps < 2) throw InvalidArgument("schedule: T must be >= 2, got " + std::to_string(steps));
  if (!(beta1 > 0.0 && beta1 <= betaT && betaT < 1.0)) {
    throw InvalidArgument("schedule: need 0 < beta1 <= betaT < 1");
  }
  const auto n = static_cast<std::size_t>(steps);
  std::vector<double> beta(n), alpha(n), alpha_bar(n), posterior(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    beta[i] = beta1 + static_cast<double>(i) / static_cast<double>(n - 1) * (betaT - beta1);
    alpha[i] = 1.0 - beta[i];
    running *= alpha[i];
    alpha_bar[i] = running;
  }
  posterior[0] = beta[0];
  for (std::size_t i = 1; i < n; ++i) {
    posterior[i] = (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]) * beta[i];
  }
  return from_tables(std::move(beta), std::move(alpha), std::move(alpha_bar), std::move(posterior));
}

NoiseSchedule NoiseSchedule::from_tables(std::vector<double> beta, std::vector<double> alpha,
                                         std::vector<double> alpha_bar, std::vector<double> posterior_var) {
  const std::size_t n = beta.size();
  if (n < 2 || alpha.size() != n || alpha_bar.size() != n || posterior_var.size() != n) {
    throw InvalidArgument("schedule: tables must share a length >= 2");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(beta[i] > 0.0 && beta[i] < 1.0) || posterior_var[i] < 0.0 ||
        (i > 0 && !(alpha_bar[i] < alpha_bar[i - 1]))) {
      throw InvalidArgument("schedule: table entry " + std::to_string(i + 1) + " violates invariants");
    }
  }
  NoiseSchedule s;
  s.beta_ = std::move(beta);
  s.alpha_ = std::move(alpha);
  s.alpha_bar_ = std::move(alpha_bar);
  s.posterior_var_ = std::move(posterior_var);
  return s;
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > length()) {
    throw InvalidArgument("schedule: step " + std::to_string(t) + " outside [1, " + std::to_string(length()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

Field marginal_noise(const NoiseSchedule& schedule, const Field& x0, int t, const Field& noise) {
  require_same_shape(x0, noise, "marginal_noise");
  const double signal = std::sqrt(schedule.alpha_bar(t));
  const double spread = std::sqrt(1.0 - schedule.alpha_bar(t));
  Field out(x0.height(), x0.width());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = signal * x0[i] + spread * noise[i];
  return out;
}

InferenceTimeline InferenceTimeline::subsample(const NoiseSchedule& schedule, int count) {
  const int total = schedule.length();
  if (count < 2 || count > total) {
    throw InvalidArgument("timeline: K must lie in [2, " + std::to_string(total) + "], got " + std::to_string(count));
  }
  InferenceTimeline tl;
  tl.schedule_length_ = total;
  tl.steps_.resize(static_cast<std::size_t>(count));
  tl.alpha_bar_.resize(static_cast<std::size_t>(count) + 1);
  tl.alpha_bar_[0] = 1.0;
  const double stride = static_cast<double>(total - 1) / static_cast<double>(count - 1);
  for (int i = 1; i <= count; ++i) {
    const int t = 1 + static_cast<int>(std::lround((i - 1) * stride));
    tl.steps_[static_cast<std::size_t>(i - 1)] = t;
    tl.alpha_bar_[static_cast<std::size_t>(i)] = schedule.alpha_bar(t);
  }
  return tl;
}

double InferenceTimeline::posterior_var(int i) const {
  return (1.0 - alpha_bar(i - 1)) / (1.0 - alpha_bar(i)) * beta(i);
}

}  // namespace usb
