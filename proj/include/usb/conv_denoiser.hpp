#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "usb/denoiser.hpp"
#include "usb/tensor_io.hpp"

namespace usb {

class Rng;

// Arithmetic used inside the convolution engine. Parameters and gradients
// are always stored as f64; Float32 runs activations and GEMMs in single
// precision.
enum class Precision { Float64, Float32 };

// Five same-padded 3x3 convolutions over (noisy, condition):
//   2 -> 16 -> 32 -> 32 -> 16 -> 1, SiLU between layers,
// plus an affine map of a 16-dim sinusoidal time embedding onto the
// per-channel bias of the first layer.
namespace arch {
inline constexpr int kLayers = 5;
inline constexpr std::array<int, kLayers + 1> kChannels = {2, 16, 32, 32, 16, 1};
inline constexpr int kKernel = 3;
inline constexpr int kEmbedDim = 16;
}  // namespace arch

struct ParamBlock {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Flat parameter vector with a fixed named-block layout:
//   layer{l}.weight [cout, cin, 3, 3], layer{l}.bias [cout],
//   time.weight [16, 16], time.bias [16].
class ConvDenoiserParams {
 public:
  ConvDenoiserParams();

  // Glorot-uniform weights, zero biases, zero final layer.
  static ConvDenoiserParams initialized(Rng& rng);
  // Every block Glorot-uniform, biases included; used for gradient checks.
  static ConvDenoiserParams randomized(Rng& rng);

  static const std::vector<ParamBlock>& layout();
  static std::size_t count();

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> block(std::string_view name);
  std::span<const double> block(std::string_view name) const;

  // Blocks named "<prefix>.<block>".
  void export_tensors(std::string_view prefix, TensorMap& out) const;
  static ConvDenoiserParams import_tensors(std::string_view prefix, const TensorMap& in);

  bool operator==(const ConvDenoiserParams&) const = default;

 private:
  std::vector<double> values_;
};

std::array<double, arch::kEmbedDim> time_embedding(int t, int steps);

// Parameter gradient plus the gradient with respect to both input channels.
struct ConvGradients {
  std::vector<double> params;
  Field noisy;
  Field condition;
};

// Learned epsilon-predictor.
class ConvDenoiser final : public NoisePredictor {
 public:
  explicit ConvDenoiser(ConvDenoiserParams params = {}, Precision precision = Precision::Float64);

  Field predict(const DenoiserInput& input) const override;
  std::vector<Field> predict_batch(std::span<const DenoiserInput> inputs) const override;

  const ConvDenoiserParams& params() const { return params_; }
  ConvDenoiserParams& params() { return params_; }
  Precision precision() const { return precision_; }
  void set_precision(Precision p) { precision_ = p; }

 private:
  ConvDenoiserParams params_;
  Precision precision_;
};

std::vector<Field> conv_forward(const ConvDenoiserParams& params, std::span<const DenoiserInput> inputs,
                                Precision precision = Precision::Float64);
Field conv_forward(const ConvDenoiserParams& params, const DenoiserInput& input);

// Exact reverse-mode gradient of <output_grad, conv_forward(params, input)>.
ConvGradients conv_backward(const ConvDenoiserParams& params, const DenoiserInput& input, const Field& output_grad);

// Mean over the batch and pixels of (prediction - target)^2. Adds its
// parameter gradient into `grad` (resized to count() if empty).
double conv_mse_loss(const ConvDenoiserParams& params, std::span<const DenoiserInput> inputs,
                     std::span<const Field> targets, std::vector<double>& grad,
                     Precision precision = Precision::Float64);

// Adam moments for one parameter vector.
struct AdamState {
  std::vector<double> first;
  std::vector<double> second;
  long step = 0;

  explicit AdamState(std::size_t n = 0) : first(n, 0.0), second(n, 0.0) {}
  bool operator==(const AdamState&) const = default;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);

}  // namespace usb
