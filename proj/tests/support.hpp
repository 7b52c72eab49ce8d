#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>

#include "usb/field.hpp"
#include "usb/rng.hpp"

namespace usb::test {

// Fresh empty directory under the build tree's scratch area.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "usb_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Field uniform_field(Rng& rng, std::size_t h, std::size_t w, double lo = -1.0, double hi = 1.0) {
  Field f(h, w);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(lo, hi);
  return f;
}

inline double max_abs_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace usb::test
