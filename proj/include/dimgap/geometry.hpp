#pragma once

#include "dimgap/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string_view>

namespace dimgap {

enum class ImmersionMode { ExactQr, GaussianRaw };

std::string_view to_string(ImmersionMode mode);
ImmersionMode immersion_mode_from_string(std::string_view s);

/// D x d matrix M carrying intrinsic coordinates into the ambient space.
struct OrthonormalImmersion {
  int d = 0;
  int D = 0;
  Matrix M;
  ImmersionMode mode = ImmersionMode::ExactQr;
};

/// exact-qr: Householder QR of a D x d standard Gaussian draw, with column
/// signs fixed so that diag(R) > 0. gaussian-raw: columns ~ N(0, I_D / D).
OrthonormalImmersion sample_orthonormal_immersion(int d, int D, ImmersionMode mode,
                                                  std::uint64_t seed);

/// M = first d columns of I_D.
OrthonormalImmersion axis_aligned_immersion(int d, int D);

/// Po projects onto range(M), P = I - Po onto its orthogonal complement.
///
/// Up to kDenseLimit ambient dimensions both projectors are materialized;
/// above it the dense accessors throw. Application uses the factored form
/// M (Gram^-1 (M^T z)) whenever d < D / 2, dense or not.
class SubspaceProjectors {
 public:
  static constexpr int kDenseLimit = 4096;

  explicit SubspaceProjectors(const OrthonormalImmersion& imm);

  int d() const { return d_; }
  int D() const { return D_; }
  bool dense() const { return Po_.has_value(); }

  const Matrix& Po() const;
  const Matrix& P() const;

  Vector on(const Vector& z) const;
  Vector off(const Vector& z) const;
  /// Row-wise projection of an n x D block.
  Matrix on_rows(const Matrix& Z) const;
  Matrix off_rows(const Matrix& Z) const;

 private:
  bool factored_apply() const { return 2 * d_ < D_; }

  int d_;
  int D_;
  Matrix M_;
  Matrix gram_inv_;
  std::optional<Matrix> Po_;
  std::optional<Matrix> P_;
};

SubspaceProjectors build_projectors(const OrthonormalImmersion& imm);

/// a^T A b.
double semi_inner(const Vector& a, const Vector& b, const Matrix& A);

/// {rows, cols, entries: [row-major]}
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

}  // namespace dimgap
