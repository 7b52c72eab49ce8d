#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace usb {

class Rng;

// Dense row-major grid of real intensities. Images, masks in diffusion
// space, noises and guidance weights are all Fields.
class Field {
 public:
  Field() = default;
  Field(std::size_t height, std::size_t width, double fill = 0.0);
  Field(std::size_t height, std::size_t width, std::vector<double> values);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& storage() const { return values_; }

  bool same_shape(const Field& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool operator==(const Field& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

// Binary lesion mask; every element is 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width, bool fill = false);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  bool operator()(std::size_t row, std::size_t col) const { return values_[row * width_ + col] != 0; }
  bool operator[](std::size_t i) const { return values_[i] != 0; }
  void set(std::size_t row, std::size_t col, bool on) { values_[row * width_ + col] = on ? 1 : 0; }
  void set(std::size_t i, bool on) { values_[i] = on ? 1 : 0; }

  std::size_t count() const;
  bool none() const { return count() == 0; }

  // {0,1} intensities.
  Field to_field() const;
  // Diffusion-space relaxation: lesion = +1, background = -1.
  Field to_diffusion() const;

  bool same_shape(const Field& f) const { return height_ == f.height() && width_ == f.width(); }
  bool same_shape(const BinaryMask& m) const { return height_ == m.height_ && width_ == m.width_; }

  bool operator==(const BinaryMask& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> values_;
};

// Thresholds a diffusion-space mask: value > threshold becomes lesion.
BinaryMask binarize(const Field& f, double threshold = 0.0);

// Throws ShapeMismatch naming `what` if the shapes differ.
void require_same_shape(const Field& a, const Field& b, const char* what);

Field add(const Field& a, const Field& b);
Field sub(const Field& a, const Field& b);
Field mul(const Field& a, const Field& b);
Field scale(const Field& a, double s);
Field exp(const Field& a);
Field abs(const Field& a);
Field clamp(const Field& a, double lo, double hi);

inline Field operator+(const Field& a, const Field& b) { return add(a, b); }
inline Field operator-(const Field& a, const Field& b) { return sub(a, b); }
inline Field operator*(double s, const Field& a) { return scale(a, s); }

double sum(const Field& a);
double mean(const Field& a);
bool all_finite(const Field& a);

// Window-mean pooling with zero padding and constant divisor window².
// The window must be odd, >= 1 and no larger than either dimension.
Field avg_pool_same(const Field& f, int window);

// Separable Gaussian blur with edge clamping. sigma <= 0 returns the input.
Field gaussian_blur(const Field& f, double sigma);

// I.i.d. standard normal field drawn from `rng` in row-major order.
Field gaussian_draw(Rng& rng, std::size_t height, std::size_t width);

}  // namespace usb
