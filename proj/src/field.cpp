#include "usb/field.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "usb/error.hpp"
#include "usb/rng.hpp"

namespace usb {

Field::Field(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), values_(height * width, fill) {}

Field::Field(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height * width) {
    throw ShapeMismatch("field: " + std::to_string(values_.size()) + " values for a " +
                        std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), values_(height * width, fill ? 1 : 0) {}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

Field BinaryMask::to_field() const {
  Field f(height_, width_);
  for (std::size_t i = 0; i < values_.size(); ++i) f[i] = values_[i];
  return f;
}

Field BinaryMask::to_diffusion() const {
  Field f(height_, width_);
  for (std::size_t i = 0; i < values_.size(); ++i) f[i] = values_[i] ? 1.0 : -1.0;
  return f;
}

BinaryMask binarize(const Field& f, double threshold) {
  BinaryMask m(f.height(), f.width());
  for (std::size_t i = 0; i < f.size(); ++i) m.set(i, f[i] > threshold);
  return m;
}

void require_same_shape(const Field& a, const Field& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(what) + ": shape " + std::to_string(a.height()) + "x" +
                        std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                        std::to_string(b.width()));
  }
}

namespace {

template <class Op>
Field zip(const Field& a, const Field& b, const char* what, Op op) {
  require_same_shape(a, b, what);
  Field out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

template <class Op>
Field map(const Field& a, Op op) {
  Field out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i]);
  return out;
}

}  // namespace

Field add(const Field& a, const Field& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
Field sub(const Field& a, const Field& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
Field mul(const Field& a, const Field& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
Field scale(const Field& a, double s) {
  return map(a, [s](double x) { return s * x; });
}
Field exp(const Field& a) {
  Field out = map(a, [](double x) { return std::exp(x); });
  if (!all_finite(out)) throw InvalidArgument("exp: result overflows");
  return out;
}
Field abs(const Field& a) {
  return map(a, [](double x) { return std::fabs(x); });
}
Field clamp(const Field& a, double lo, double hi) {
  if (lo > hi) throw InvalidArgument("clamp: lo > hi");
  return map(a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
}

double sum(const Field& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

double mean(const Field& a) { return a.empty() ? 0.0 : sum(a) / static_cast<double>(a.size()); }

bool all_finite(const Field& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

Field avg_pool_same(const Field& f, int window) {
  if (window < 1 || window % 2 == 0 ||
      static_cast<std::size_t>(window) > std::min(f.height(), f.width())) {
    throw InvalidArgument("avg_pool_same: window " + std::to_string(window) +
                          " must be odd, >= 1 and <= min(height, width)");
  }
  const long h = static_cast<long>(f.height());
  const long w = static_cast<long>(f.width());
  const long r = window / 2;
  const double inv = 1.0 / (static_cast<double>(window) * window);
  Field out(f.height(), f.width());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long yy = std::max(0L, y - r); yy <= std::min(h - 1, y + r); ++yy) {
        for (long xx = std::max(0L, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          acc += f(yy, xx);
        }
      }
      out(y, x) = acc * inv;
    }
  }
  return out;
}

Field gaussian_blur(const Field& f, double sigma) {
  if (sigma <= 0.0 || f.empty()) return f;
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double norm = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    norm += taps[k + radius];
  }
  for (double& t : taps) t /= norm;

  const long h = static_cast<long>(f.height());
  const long w = static_cast<long>(f.width());
  Field tmp(f.height(), f.width());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) acc += taps[k + radius] * f(y, std::clamp(x + k, 0L, w - 1));
      tmp(y, x) = acc;
    }
  }
  Field out(f.height(), f.width());
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) acc += taps[k + radius] * tmp(std::clamp(y + k, 0L, h - 1), x);
      out(y, x) = acc;
    }
  }
  return out;
}

Field gaussian_draw(Rng& rng, std::size_t height, std::size_t width) {
  Field out(height, width);
  for (double& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace usb
