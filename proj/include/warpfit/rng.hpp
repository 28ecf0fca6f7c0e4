#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace warpfit {

// Deterministic, platform-independent generator (SplitMix64 core).
// std::random distributions are implementation-defined, so every draw the
// project makes goes through this class; frozen test values stay valid
// across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform on [0, 1).
  double uniform();

  // Uniform integer in [0, n), n > 0.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Marsaglia polar method.
  double normal();

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // k distinct indices from [0, n), in selection order.
  std::vector<int> sample_without_replacement(int n, int k);

  // Independent stream derived from a root seed and a label.
  static Rng stream(std::uint64_t root_seed, const std::string& label);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit hash, also used for artifact checksums.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t seed = 1469598103934665603ull);
std::uint64_t fnv1a(const std::string& s,
                    std::uint64_t seed = 1469598103934665603ull);

}  // namespace warpfit
