#pragma once

#include "dimgap/common.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace dimgap {

// All randomness in the lab flows through Rng.
//
// Engine: std::mt19937_64 (bit-exact across standard libraries).
// Uniforms: the top 53 bits of one engine output scaled by 2^-53, giving [0, 1).
// Gaussians: Box-Muller on (1 - u1, u2); both outputs of a pair are used, the
// second one cached for the next call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();
  double normal();
  double normal(double stddev) { return stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Vector normal_vector(Eigen::Index size, double stddev = 1.0);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0);

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a 64-bit hash of a stage tag.
std::uint64_t tag_hash(std::string_view tag);

/// Child seed for (base seed, cell index, stage tag):
///   splitmix64(splitmix64(base) ^ splitmix64(index + 0x9e3779b97f4a7c15) ^ fnv1a64(tag))
/// Any implementation reproducing this mix gets the same seed family.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::string_view tag);

}  // namespace dimgap
