#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "volimp/tensor.hpp"

namespace volimp::nd {

/// Counter-based 64-bit generator (splitmix-style output hash over seed and
/// position). Streams are split by key, never by sharing state, so every
/// stochastic consumer owns an explicit named stream and replays are
/// bit-identical.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  RngStream child(std::uint64_t key) const;
  RngStream child(std::string_view name) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Standard normal via Box-Muller; pairs are cached inside the stream.
  double normal();

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

Tensor normal_tensor(RngStream& rng, std::vector<int> shape);
Tensor uniform_tensor(RngStream& rng, std::vector<int> shape, double lo, double hi);

}  // namespace volimp::nd
