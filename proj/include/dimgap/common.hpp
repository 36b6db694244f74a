#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dimgap {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ErrorKind {
  InvalidDimensions,
  DegenerateImmersion,
  TooManyClusters,
  InvalidSpec,
  RejectionExhausted,
  UndefinedInput,
  NoOpposingCluster,
  MissingTruth,
  Parse,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-readable kind
/// alongside the human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

/// Serial is the plain-loop reference; Parallel runs the OpenMP kernels over
/// fixed-size chunks, so its result does not depend on the thread count.
enum class Exec { Serial, Parallel };

/// Rows per work chunk in the parallel kernels.
inline constexpr Eigen::Index kChunk = 64;

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

}  // namespace dimgap
