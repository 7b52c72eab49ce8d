#pragma once

#include <vector>

#include "usb/field.hpp"

namespace usb {

// Diffusion timeline tables, indexed 1..T. t = 0 denotes clean data and is
// never a valid index.
class NoiseSchedule {
 public:
  // beta_t rises linearly from beta1 (t = 1) to betaT (t = T).
  static NoiseSchedule linear(int steps, double beta1, double betaT);
  // Rebuilds a schedule from stored tables without recomputing anything.
  static NoiseSchedule from_tables(std::vector<double> beta, std::vector<double> alpha,
                                   std::vector<double> alpha_bar, std::vector<double> posterior_var);

  int length() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
  // DDPM posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t, with
  // beta_1 stored at t = 1. Samplers never add noise on the final step.
  double posterior_var(int t) const { return posterior_var_[index(t)]; }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alphas() const { return alpha_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }
  const std::vector<double>& posterior_vars() const { return posterior_var_; }

  bool operator==(const NoiseSchedule&) const = default;

 private:
  std::size_t index(int t) const;

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_var_;
};

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise.
Field marginal_noise(const NoiseSchedule& schedule, const Field& x0, int t, const Field& noise);

// Inference-time subsequence t_1 < ... < t_K of training steps, evenly spaced
// over [1, T] with both ends included, and the transition coefficients
// re-derived from abar ratios. Reverse sampling walks i = K .. 1.
class InferenceTimeline {
 public:
  static InferenceTimeline subsample(const NoiseSchedule& schedule, int count);

  int length() const { return static_cast<int>(steps_.size()); }
  int schedule_length() const { return schedule_length_; }
  // Training step behind inference index i (1-based).
  int step(int i) const { return steps_.at(static_cast<std::size_t>(i - 1)); }
  const std::vector<int>& steps() const { return steps_; }

  // Retimed abar'_i = abar_{t_i}; index 0 is the clean end with value 1.
  double alpha_bar(int i) const { return alpha_bar_.at(static_cast<std::size_t>(i)); }
  // beta'_i = 1 - abar'_i / abar'_{i-1}.
  double beta(int i) const { return 1.0 - alpha_bar(i) / alpha_bar(i - 1); }
  double alpha(int i) const { return alpha_bar(i) / alpha_bar(i - 1); }
  // (1 - abar'_{i-1}) / (1 - abar'_i) * beta'_i, exactly 0 at i = 1.
  double posterior_var(int i) const;

 private:
  int schedule_length_ = 0;
  std::vector<int> steps_;
  std::vector<double> alpha_bar_;
};

}  // namespace usb
