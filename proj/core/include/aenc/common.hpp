#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace aenc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Malformed input: bad manifest, bad tensor file, inconsistent config.
// The CLI maps this to exit code 1; any other exception is exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackboneInfo {
  std::string label;
  Index dim = 0;

  friend bool operator==(const BackboneInfo&, const BackboneInfo&) = default;
};

// Round to the nearest binary32 value. Tensors are f32 on disk; keeping
// in-memory values f32-representable makes save/load lossless.
inline double f32_round(double v) { return static_cast<double>(static_cast<float>(v)); }

Mat f32_round(const Mat& m);

// SplitMix64 finalizer; derives independent sub-seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

// mt19937_64 with hand-rolled output mappings. The stdlib distributions are
// implementation-defined, so seeded streams would not be stable across
// standard libraries; these mappings are pinned.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // [0, n), n >= 1
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (pairs cached)
  double normal();

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace aenc
