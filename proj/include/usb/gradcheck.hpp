#pragma once

#include <cstddef>
#include <cstdint>

namespace usb {

struct GradcheckOptions {
  int parameters = 200;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::size_t size = 16;
};

struct GradcheckResult {
  std::uint64_t seed = 0;
  int checked = 0;
  int failures = 0;
  // Largest |analytic - numeric| / (|analytic| + 1e-8).
  double worst_relative = 0.0;
  // max |conv_forward - direct extended-precision forward| over the output.
  double forward_error = 0.0;
  bool passed() const { return failures == 0 && checked > 0 && forward_error < kForwardTolerance; }
  static constexpr double kForwardTolerance = 1e-10;
};

// Randomized parameters, input and output weighting drawn from `seed`;
// compares conv_backward against central differences of
// <weight, forward> for parameters sampled without replacement. The
// differences use a direct extended-precision forward, which must also
// agree with conv_forward.
GradcheckResult run_gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace usb
