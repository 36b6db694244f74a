#include "dimgap/common.hpp"
#include "dimgap/rng.hpp"

#include <cmath>

namespace dimgap {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDimensions: return "invalid-dimensions";
    case ErrorKind::DegenerateImmersion: return "degenerate-immersion";
    case ErrorKind::TooManyClusters: return "too-many-clusters";
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::RejectionExhausted: return "rejection-exhausted";
    case ErrorKind::UndefinedInput: return "undefined-input";
    case ErrorKind::NoOpposingCluster: return "no-opposing-cluster";
    case ErrorKind::MissingTruth: return "missing-truth";
    case ErrorKind::Parse: return "parse-error";
    case ErrorKind::Io: return "io-error";
  }
  return "unknown";
}

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection: exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

Vector Rng::normal_vector(Eigen::Index size, double stddev) {
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = stddev * normal();
  return v;
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev) {
  // Filled column by column; the draw order is part of the replay contract.
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = stddev * normal();
  return m;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t tag_hash(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::string_view tag) {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x9e3779b97f4a7c15ULL) ^ tag_hash(tag));
}

}  // namespace dimgap
