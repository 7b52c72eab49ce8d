#include "usb/conv_denoiser.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "usb/error.hpp"
#include "usb/rng.hpp"
#include "winograd.hpp"

namespace usb {

namespace {

using arch::kChannels;
using arch::kEmbedDim;
using arch::kLayers;
constexpr int kTaps = arch::kKernel * arch::kKernel;

std::vector<ParamBlock> build_layout() {
  std::vector<ParamBlock> blocks;
  std::size_t offset = 0;
  auto push = [&](std::string name, std::vector<std::uint32_t> shape) {
    std::size_t size = 1;
    for (auto d : shape) size *= d;
    blocks.push_back({std::move(name), std::move(shape), offset, size});
    offset += size;
  };
  for (int l = 0; l < kLayers; ++l) {
    const auto cin = static_cast<std::uint32_t>(kChannels[l]);
    const auto cout = static_cast<std::uint32_t>(kChannels[l + 1]);
    push("layer" + std::to_string(l) + ".weight", {cout, cin, 3, 3});
    push("layer" + std::to_string(l) + ".bias", {cout});
  }
  push("time.weight", {static_cast<std::uint32_t>(kChannels[1]), kEmbedDim});
  push("time.bias", {static_cast<std::uint32_t>(kChannels[1])});
  return blocks;
}

const ParamBlock& find_block(std::string_view name) {
  for (const auto& b : ConvDenoiserParams::layout()) {
    if (b.name == name) return b;
  }
  throw InvalidArgument("no parameter block named " + std::string(name));
}

std::size_t weight_offset(int layer) { return ConvDenoiserParams::layout()[2 * layer].offset; }
std::size_t bias_offset(int layer) { return ConvDenoiserParams::layout()[2 * layer + 1].offset; }
std::size_t time_weight_offset() { return ConvDenoiserParams::layout()[2 * kLayers].offset; }
std::size_t time_bias_offset() { return ConvDenoiserParams::layout()[2 * kLayers + 1].offset; }

void glorot(std::span<double> w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : w) v = rng.uniform(-limit, limit);
}

// Aligned to the widest SIMD width so Eigen picks the same kernels, and hence
// the same summation order, on every run.
template <class S>
using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

template <class S>
Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> array_of(Buffer<S>& v) {
  return {v.data(), static_cast<long>(v.size())};
}
template <class S>
Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> array_of(const Buffer<S>& v) {
  return {v.data(), static_cast<long>(v.size())};
}

// Forward/backward for one sample at a time; activations are channel-major
// planes (buffer[c * hw + pixel]) small enough to stay cache resident. Each
// 3x3 layer runs in the Winograd F(2x2, 3x3) domain as 16 small GEMMs over
// chunks of tile rows.
template <class S>
class ConvEngine {
 public:
  ConvEngine(const ConvDenoiserParams& params, std::size_t height, std::size_t width)
      : tiling_{height, width}, scratch_(tiling_), hw_(height * width) {
    if (hw_ == 0) throw ShapeMismatch("conv: empty field");
    const auto p = params.values();
    weights_.assign(p.begin(), p.end());
    for (int l = 0; l < kLayers; ++l) {
      const int cin = kChannels[l];
      const int cout = kChannels[l + 1];
      kernels_[l].resize(16 * static_cast<std::size_t>(cout) * cin);
      winograd::transform_kernels(weights_.data() + weight_offset(l), cout, cin, kernels_[l].data());
      transposed_[l].resize(kernels_[l].size());
      for (int xi = 0; xi < 16; ++xi) {
        MatMap<S>(transposed_[l].data() + xi * cout * cin, cin, cout) =
            ConstMatMap<S>(kernels_[l].data() + xi * cout * cin, cout, cin).transpose();
      }
      act_[l].resize(static_cast<std::size_t>(cin) * hw_);
      pre_[l].resize(static_cast<std::size_t>(cout) * hw_);
    }
  }

  std::size_t pixels() const { return hw_; }

  // Runs the network on one input; keeps activations for a later backward().
  const Buffer<S>& forward(const DenoiserInput& input) {
    require_same_shape(input.noisy, Field(tiling_.height, tiling_.width), "conv input");
    require_same_shape(input.condition, input.noisy, "conv condition");
    embedding_ = time_embedding(input.t, input.steps);
    const auto noisy = input.noisy.values();
    const auto cond = input.condition.values();
    for (std::size_t i = 0; i < hw_; ++i) {
      act_[0][i] = static_cast<S>(noisy[i]);
      act_[0][hw_ + i] = static_cast<S>(cond[i]);
    }

    for (int l = 0; l < kLayers; ++l) {
      const int cin = kChannels[l];
      const int cout = kChannels[l + 1];
      for_each_chunk([&](winograd::TileRows rows, long tiles) {
        v_.resize(16 * static_cast<std::size_t>(cin * tiles));
        m_.resize(16 * static_cast<std::size_t>(cout * tiles));
        winograd::transform_input(act_[l].data(), hw_, cin, tiling_, rows, v_.data(), scratch_);
        for (int xi = 0; xi < 16; ++xi) {
          ConstMatMap<S> u(kernels_[l].data() + xi * cout * cin, cout, cin);
          ConstMatMap<S> v(v_.data() + xi * cin * tiles, cin, tiles);
          MatMap<S>(m_.data() + xi * cout * tiles, cout, tiles).noalias() = u * v;
        }
        winograd::transform_output(m_.data(), cout, tiling_, rows, pre_[l].data(), hw_, scratch_);
      });

      const S* bias = weights_.data() + bias_offset(l);
      for (int c = 0; c < cout; ++c) {
        const S shift = bias[c] + (l == 0 ? time_shift(c) : S(0));
        S* row = pre_[l].data() + static_cast<std::size_t>(c) * hw_;
        for (std::size_t i = 0; i < hw_; ++i) row[i] += shift;
      }
      if (l + 1 < kLayers) {
        const auto z = array_of(pre_[l]);
        array_of(act_[l + 1]) = z / (S(1) + (-z).exp());
      }
    }
    return pre_[kLayers - 1];
  }

  // Adds the parameter gradient of the loss whose output gradient is
  // `out_grad` (for the last forward() input) to the engine accumulator.
  // Writes the gradient with respect to both input channels when asked.
  void backward(const Buffer<S>& out_grad, Buffer<S>* input_grad) {
    if (grad_.empty()) grad_.assign(weights_.size(), S(0));
    dz_ = out_grad;
    for (int l = kLayers - 1; l >= 0; --l) {
      const int cin = kChannels[l];
      const int cout = kChannels[l + 1];
      const bool need_data_grad = l > 0 || input_grad != nullptr;
      if (need_data_grad) da_.assign(static_cast<std::size_t>(cin) * hw_, S(0));
      du_.assign(16 * static_cast<std::size_t>(cout) * cin, S(0));

      for_each_chunk([&](winograd::TileRows rows, long tiles) {
        v_.resize(16 * static_cast<std::size_t>(cin * tiles));
        m_.resize(16 * static_cast<std::size_t>(cout * tiles));
        winograd::transform_output_adjoint(dz_.data(), hw_, cout, tiling_, rows, m_.data(), scratch_);
        winograd::transform_input(act_[l].data(), hw_, cin, tiling_, rows, v_.data(), scratch_);
        for (int xi = 0; xi < 16; ++xi) {
          ConstMatMap<S> dm(m_.data() + xi * cout * tiles, cout, tiles);
          MatMap<S> v(v_.data() + xi * cin * tiles, cin, tiles);
          MatMap<S>(du_.data() + xi * cout * cin, cout, cin).noalias() += dm * v.transpose();
          if (need_data_grad) v.noalias() = ConstMatMap<S>(transposed_[l].data() + xi * cout * cin, cin, cout) * dm;
        }
        if (need_data_grad) {
          winograd::transform_input_adjoint(v_.data(), cin, tiling_, rows, da_.data(), hw_, scratch_);
        }
      });
      winograd::kernels_adjoint(du_.data(), cout, cin, grad_.data() + weight_offset(l));

      S* db = grad_.data() + bias_offset(l);
      for (int c = 0; c < cout; ++c) {
        const S* row = dz_.data() + static_cast<std::size_t>(c) * hw_;
        S s(0);
        for (std::size_t i = 0; i < hw_; ++i) s += row[i];
        db[c] += s;
        if (l == 0) {
          S* tw = grad_.data() + time_weight_offset() + static_cast<std::size_t>(c) * kEmbedDim;
          for (int j = 0; j < kEmbedDim; ++j) tw[j] += s * static_cast<S>(embedding_[j]);
          grad_[time_bias_offset() + c] += s;
        }
      }

      if (!need_data_grad) break;
      if (l == 0) {
        if (input_grad) *input_grad = da_;
        break;
      }
      dz_.resize(pre_[l - 1].size());
      const auto z = array_of(pre_[l - 1]);
      const auto sig = (S(1) + (-z).exp()).inverse();
      array_of(dz_) = array_of(da_) * sig * (S(1) + z * (S(1) - sig));
    }
  }

  // Adds the accumulated parameter gradient to `out`.
  void flush_gradient(std::span<double> out) const {
    for (std::size_t i = 0; i < grad_.size(); ++i) out[i] += static_cast<double>(grad_[i]);
  }

 private:
  static constexpr std::size_t kChunkTiles = 144;

  template <class Fn>
  void for_each_chunk(Fn&& fn) {
    const std::size_t step = std::max<std::size_t>(1, kChunkTiles / tiling_.tiles_x());
    for (std::size_t ty = 0; ty < tiling_.tiles_y(); ty += step) {
      const winograd::TileRows rows{ty, std::min(tiling_.tiles_y(), ty + step)};
      fn(rows, static_cast<long>(rows.count() * tiling_.stride_x()));
    }
  }

  S time_shift(int channel) const {
    const S* tw = weights_.data() + time_weight_offset() + static_cast<std::size_t>(channel) * kEmbedDim;
    S s = weights_[time_bias_offset() + channel];
    for (int j = 0; j < kEmbedDim; ++j) s += tw[j] * static_cast<S>(embedding_[j]);
    return s;
  }

  winograd::Tiling tiling_;
  winograd::Scratch<S> scratch_;
  std::size_t hw_ = 0;
  Buffer<S> weights_;
  std::array<Buffer<S>, kLayers> kernels_;
  std::array<Buffer<S>, kLayers> transposed_;
  std::array<double, kEmbedDim> embedding_{};
  std::array<Buffer<S>, kLayers> act_;
  std::array<Buffer<S>, kLayers> pre_;
  Buffer<S> v_;
  Buffer<S> m_;
  Buffer<S> dz_;
  Buffer<S> da_;
  Buffer<S> du_;
  Buffer<S> grad_;
};

template <class S>
std::vector<Field> forward_as(const ConvDenoiserParams& params, std::span<const DenoiserInput> inputs) {
  std::vector<Field> result;
  if (inputs.empty()) return result;
  ConvEngine<S> engine(params, inputs[0].noisy.height(), inputs[0].noisy.width());
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    const auto& out = engine.forward(in);
    Field f(in.noisy.height(), in.noisy.width());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<double>(out[i]);
    result.push_back(std::move(f));
  }
  return result;
}

template <class S>
double mse_as(const ConvDenoiserParams& params, std::span<const DenoiserInput> inputs,
              std::span<const Field> targets, std::span<double> grad) {
  if (inputs.empty()) throw InvalidArgument("conv_mse_loss: empty batch");
  ConvEngine<S> engine(params, inputs[0].noisy.height(), inputs[0].noisy.width());
  const std::size_t hw = engine.pixels();
  const double inv = 1.0 / static_cast<double>(hw * inputs.size());
  Buffer<S> dout(hw);
  double loss = 0.0;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    require_same_shape(targets[b], inputs[b].noisy, "conv target");
    const auto& out = engine.forward(inputs[b]);
    for (std::size_t i = 0; i < hw; ++i) {
      const double diff = static_cast<double>(out[i]) - targets[b][i];
      loss += diff * diff;
      dout[i] = static_cast<S>(2.0 * diff * inv);
    }
    engine.backward(dout, nullptr);
  }
  engine.flush_gradient(grad);
  return loss * inv;
}

}  // namespace

ConvDenoiserParams::ConvDenoiserParams() : values_(count(), 0.0) {}

const std::vector<ParamBlock>& ConvDenoiserParams::layout() {
  static const std::vector<ParamBlock> blocks = build_layout();
  return blocks;
}

std::size_t ConvDenoiserParams::count() {
  const auto& last = layout().back();
  return last.offset + last.size;
}

ConvDenoiserParams ConvDenoiserParams::initialized(Rng& rng) {
  ConvDenoiserParams p;
  for (int l = 0; l + 1 < kLayers; ++l) {
    glorot(p.block("layer" + std::to_string(l) + ".weight"), kChannels[l] * kTaps, kChannels[l + 1] * kTaps, rng);
  }
  glorot(p.block("time.weight"), kEmbedDim, kChannels[1], rng);
  return p;
}

ConvDenoiserParams ConvDenoiserParams::randomized(Rng& rng) {
  ConvDenoiserParams p;
  for (int l = 0; l < kLayers; ++l) {
    glorot(p.block("layer" + std::to_string(l) + ".weight"), kChannels[l] * kTaps, kChannels[l + 1] * kTaps, rng);
    glorot(p.block("layer" + std::to_string(l) + ".bias"), kChannels[l] * kTaps, kChannels[l + 1] * kTaps, rng);
  }
  glorot(p.block("time.weight"), kEmbedDim, kChannels[1], rng);
  glorot(p.block("time.bias"), kEmbedDim, kChannels[1], rng);
  return p;
}

std::span<double> ConvDenoiserParams::block(std::string_view name) {
  const auto& b = find_block(name);
  return std::span<double>(values_).subspan(b.offset, b.size);
}

std::span<const double> ConvDenoiserParams::block(std::string_view name) const {
  const auto& b = find_block(name);
  return std::span<const double>(values_).subspan(b.offset, b.size);
}

void ConvDenoiserParams::export_tensors(std::string_view prefix, TensorMap& out) const {
  for (const auto& b : layout()) {
    const auto first = values_.begin() + static_cast<long>(b.offset);
    out[std::string(prefix) + "." + b.name] = Tensor{b.shape, std::vector<double>(first, first + static_cast<long>(b.size))};
  }
}

ConvDenoiserParams ConvDenoiserParams::import_tensors(std::string_view prefix, const TensorMap& in) {
  ConvDenoiserParams p;
  for (const auto& b : layout()) {
    const std::string name = std::string(prefix) + "." + b.name;
    const auto it = in.find(name);
    if (it == in.end()) throw IoError("missing tensor " + name);
    if (it->second.dims != b.shape) throw ShapeMismatch("tensor " + name + " has the wrong shape");
    std::copy(it->second.values.begin(), it->second.values.end(), p.values_.begin() + static_cast<long>(b.offset));
  }
  return p;
}

std::array<double, arch::kEmbedDim> time_embedding(int t, int steps) {
  std::array<double, arch::kEmbedDim> e{};
  const double tau = static_cast<double>(t) / static_cast<double>(steps);
  for (int i = 0; i < arch::kEmbedDim / 2; ++i) {
    const double freq = std::numbers::pi * static_cast<double>(1 << i);
    e[2 * i] = std::sin(freq * tau);
    e[2 * i + 1] = std::cos(freq * tau);
  }
  return e;
}

ConvDenoiser::ConvDenoiser(ConvDenoiserParams params, Precision precision)
    : params_(std::move(params)), precision_(precision) {}

Field ConvDenoiser::predict(const DenoiserInput& input) const {
  return conv_forward(params_, std::span<const DenoiserInput>(&input, 1), precision_).front();
}

std::vector<Field> ConvDenoiser::predict_batch(std::span<const DenoiserInput> inputs) const {
  return conv_forward(params_, inputs, precision_);
}

std::vector<Field> conv_forward(const ConvDenoiserParams& params, std::span<const DenoiserInput> inputs,
                                Precision precision) {
  return precision == Precision::Float32 ? forward_as<float>(params, inputs) : forward_as<double>(params, inputs);
}

Field conv_forward(const ConvDenoiserParams& params, const DenoiserInput& input) {
  return conv_forward(params, std::span<const DenoiserInput>(&input, 1), Precision::Float64).front();
}

ConvGradients conv_backward(const ConvDenoiserParams& params, const DenoiserInput& input, const Field& output_grad) {
  require_same_shape(output_grad, input.noisy, "conv_backward");
  ConvEngine<double> engine(params, input.noisy.height(), input.noisy.width());
  engine.forward(input);
  const Buffer<double> out_grad(output_grad.storage().begin(), output_grad.storage().end());
  Buffer<double> input_grad;
  engine.backward(out_grad, &input_grad);
  ConvGradients g;
  g.params.assign(ConvDenoiserParams::count(), 0.0);
  engine.flush_gradient(g.params);
  const auto split = input_grad.begin() + static_cast<long>(engine.pixels());
  g.noisy = Field(input.noisy.height(), input.noisy.width(), std::vector<double>(input_grad.begin(), split));
  g.condition = Field(input.noisy.height(), input.noisy.width(), std::vector<double>(split, input_grad.end()));
  return g;
}

double conv_mse_loss(const ConvDenoiserParams& params, std::span<const DenoiserInput> inputs,
                     std::span<const Field> targets, std::vector<double>& grad, Precision precision) {
  if (inputs.size() != targets.size()) throw ShapeMismatch("conv_mse_loss: inputs and targets differ in count");
  if (grad.empty()) grad.assign(ConvDenoiserParams::count(), 0.0);
  if (grad.size() != ConvDenoiserParams::count()) throw ShapeMismatch("conv_mse_loss: gradient buffer size");
  return precision == Precision::Float32 ? mse_as<float>(params, inputs, targets, grad)
                                         : mse_as<double>(params, inputs, targets, grad);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.first.size() != params.size() || state.second.size() != params.size()) {
    throw ShapeMismatch("adam_step: parameter, gradient and moment sizes differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first[i] = cfg.beta1 * state.first[i] + (1.0 - cfg.beta1) * grads[i];
    state.second[i] = cfg.beta2 * state.second[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.first[i] / c1;
    const double v_hat = state.second[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace usb
