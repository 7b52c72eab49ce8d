#pragma once

#include <array>
#include <cstdint>

namespace usb {

// Serializable position of an Rng stream.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;

  bool operator==(const RngState&) const = default;
};

// Counter-based generator (Philox4x32-10). The key is the seed, the 128-bit
// counter holds (position, stream). Every draw consumes one block, so the
// whole state is the triple above.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : state_{seed, stream, 0} {}
  explicit Rng(const RngState& state) : state_(state) {}

  // Independent child stream; children of distinct indices never overlap
  // with each other or with the parent.
  Rng substream(std::uint64_t index) const;

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Inclusive integer range.
  int integer(int lo, int hi);
  double normal();

  const RngState& state() const { return state_; }

 private:
  std::array<std::uint32_t, 4> block();

  RngState state_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace usb
