#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aprecond {

using Vec = std::vector<double>;
using ConstVecRef = std::span<const double>;

/// Raised when an integrated state leaves the finite range (|x| > 1e8 or NaN).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class SingularCoefficientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDriftError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDivergenceThreshold = 1e8;

/// True when every coordinate is finite and within the divergence threshold.
inline bool state_is_sane(ConstVecRef x) {
  for (double v : x) {
    if (!(v > -kDivergenceThreshold && v < kDivergenceThreshold)) return false;
  }
  return true;
}

/// splitmix64 finalizer; used to derive independent stream seeds from one run seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ stream) ^ index);
}

}  // namespace aprecond
