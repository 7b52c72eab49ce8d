#include "usb/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "usb/conv_denoiser.hpp"
#include "usb/error.hpp"
#include "usb/rng.hpp"

namespace usb {

namespace {

using Wide = long double;

// Direct same-padded convolutions in extended precision; an independent
// evaluation of conv_forward whose rounding stays far below the difference
// quotient's resolution.
std::vector<Wide> direct_forward(const ConvDenoiserParams& params, const DenoiserInput& input) {
  const std::size_t h = input.noisy.height();
  const std::size_t w = input.noisy.width();
  const std::size_t hw = h * w;
  std::vector<Wide> act(2 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    act[i] = input.noisy[i];
    act[hw + i] = input.condition[i];
  }
  const auto embed = time_embedding(input.t, input.steps);
  const auto tw = params.block("time.weight");
  const auto tb = params.block("time.bias");
  for (int l = 0; l < arch::kLayers; ++l) {
    const int cin = arch::kChannels[static_cast<std::size_t>(l)];
    const int cout = arch::kChannels[static_cast<std::size_t>(l) + 1];
    const auto weight = params.block("layer" + std::to_string(l) + ".weight");
    const auto bias = params.block("layer" + std::to_string(l) + ".bias");
    std::vector<Wide> z(static_cast<std::size_t>(cout) * hw);
    for (int co = 0; co < cout; ++co) {
      Wide shift = bias[static_cast<std::size_t>(co)];
      if (l == 0) {
        shift += tb[static_cast<std::size_t>(co)];
        for (int j = 0; j < arch::kEmbedDim; ++j) {
          shift += static_cast<Wide>(tw[static_cast<std::size_t>(co * arch::kEmbedDim + j)]) * embed[static_cast<std::size_t>(j)];
        }
      }
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          Wide acc = shift;
          for (int ci = 0; ci < cin; ++ci) {
            for (int ky = 0; ky < 3; ++ky) {
              const long yy = static_cast<long>(y) + ky - 1;
              if (yy < 0 || yy >= static_cast<long>(h)) continue;
              for (int kx = 0; kx < 3; ++kx) {
                const long xx = static_cast<long>(x) + kx - 1;
                if (xx < 0 || xx >= static_cast<long>(w)) continue;
                acc += static_cast<Wide>(weight[static_cast<std::size_t>(((co * cin + ci) * 3 + ky) * 3 + kx)]) *
                       act[static_cast<std::size_t>(ci) * hw + static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
              }
            }
          }
          z[static_cast<std::size_t>(co) * hw + y * w + x] = acc;
        }
      }
    }
    if (l + 1 < arch::kLayers) {
      for (auto& v : z) v = v / (1.0L + std::exp(-v));
    }
    act = std::move(z);
  }
  return act;
}

Wide weighted_output(const ConvDenoiserParams& params, const DenoiserInput& input, const Field& weight) {
  const std::vector<Wide> out = direct_forward(params, input);
  Wide s = 0.0L;
  for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<Wide>(weight[i]) * out[i];
  return s;
}

}  // namespace

GradcheckResult run_gradcheck(std::uint64_t seed, const GradcheckOptions& options) {
  const std::size_t n = ConvDenoiserParams::count();
  if (options.parameters < 1 || static_cast<std::size_t>(options.parameters) > n || !(options.step > 0.0) ||
      options.size < 1) {
    throw InvalidArgument("gradcheck: invalid options");
  }
  Rng rng(seed);
  ConvDenoiserParams params = ConvDenoiserParams::randomized(rng);
  const std::size_t s = options.size;
  const DenoiserInput input{gaussian_draw(rng, s, s), gaussian_draw(rng, s, s), rng.integer(1, 1024), 1024};
  const Field weight = gaussian_draw(rng, s, s);
  const ConvGradients grads = conv_backward(params, input, weight);
  const Field fast = conv_forward(params, input);
  const std::vector<Wide> slow = direct_forward(params, input);
  GradcheckResult result;
  for (std::size_t i = 0; i < fast.size(); ++i) {
    result.forward_error = std::max(result.forward_error, std::abs(fast[i] - static_cast<double>(slow[i])));
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int k = 0; k < options.parameters; ++k) {
    const auto j = static_cast<std::size_t>(k) + rng.below(n - static_cast<std::size_t>(k));
    std::swap(order[static_cast<std::size_t>(k)], order[j]);
  }

  result.seed = seed;
  for (int k = 0; k < options.parameters; ++k) {
    const std::size_t idx = order[static_cast<std::size_t>(k)];
    const double original = params.values()[idx];
    params.values()[idx] = original + options.step;
    const Wide plus = weighted_output(params, input, weight);
    params.values()[idx] = original - options.step;
    const Wide minus = weighted_output(params, input, weight);
    params.values()[idx] = original;
    const auto numeric = static_cast<double>((plus - minus) / (2.0L * static_cast<Wide>(options.step)));
    const double analytic = grads.params[idx];
    const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
    result.worst_relative = std::max(result.worst_relative, rel);
    ++result.checked;
    if (!(rel < options.tolerance)) ++result.failures;
  }
  return result;
}

}  // namespace usb
