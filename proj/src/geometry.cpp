#include "dimgap/geometry.hpp"

#include "dimgap/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <json.hpp>

#include <cmath>

namespace dimgap {

std::string_view to_string(ImmersionMode mode) {
  return mode == ImmersionMode::ExactQr ? "exact-qr" : "gaussian-raw";
}

ImmersionMode immersion_mode_from_string(std::string_view s) {
  if (s == "exact-qr") return ImmersionMode::ExactQr;
  if (s == "gaussian-raw") return ImmersionMode::GaussianRaw;
  throw Error(ErrorKind::InvalidSpec, "unknown immersion mode '" + std::string(s) + "'");
}

OrthonormalImmersion sample_orthonormal_immersion(int d, int D, ImmersionMode mode,
                                                  std::uint64_t seed) {
  require(d >= 1 && D >= 1, ErrorKind::InvalidDimensions, "d and D must be positive");
  require(d <= D, ErrorKind::InvalidDimensions,
          "d=" + std::to_string(d) + " exceeds D=" + std::to_string(D));

  Rng rng(seed);
  OrthonormalImmersion imm{d, D, Matrix(), mode};
  if (mode == ImmersionMode::GaussianRaw) {
    imm.M = rng.normal_matrix(D, d, 1.0 / std::sqrt(static_cast<double>(D)));
    return imm;
  }

  const Matrix G = rng.normal_matrix(D, d);
  Eigen::HouseholderQR<Matrix> qr(G);
  imm.M = qr.householderQ() * Matrix::Identity(D, d);
  const Matrix R = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
  for (int c = 0; c < d; ++c)
    if (R(c, c) < 0) imm.M.col(c) *= -1.0;
  return imm;
}

OrthonormalImmersion axis_aligned_immersion(int d, int D) {
  require(d >= 1 && d <= D, ErrorKind::InvalidDimensions, "need 1 <= d <= D");
  return {d, D, Matrix::Identity(D, d), ImmersionMode::ExactQr};
}

SubspaceProjectors::SubspaceProjectors(const OrthonormalImmersion& imm)
    : d_(imm.d), D_(imm.D), M_(imm.M) {
  require(M_.rows() == D_ && M_.cols() == d_, ErrorKind::InvalidDimensions,
          "immersion matrix shape does not match (D, d)");
  require(all_finite(M_), ErrorKind::DegenerateImmersion, "immersion has non-finite entries");

  const Matrix gram = M_.transpose() * M_;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  require(hi > 0 && lo > 1e-12 * hi, ErrorKind::DegenerateImmersion,
          "Gram matrix M^T M is singular (min eigenvalue " + std::to_string(lo) + ")");
  gram_inv_ = gram.llt().solve(Matrix::Identity(d_, d_));
  gram_inv_ = 0.5 * (gram_inv_ + gram_inv_.transpose()).eval();

  if (D_ <= kDenseLimit) {
    Matrix po = M_ * gram_inv_ * M_.transpose();
    po = 0.5 * (po + po.transpose()).eval();
    P_ = Matrix::Identity(D_, D_) - po;
    Po_ = std::move(po);
  }
}

const Matrix& SubspaceProjectors::Po() const {
  require(Po_.has_value(), ErrorKind::InvalidDimensions,
          "dense projector not materialized for D > " + std::to_string(kDenseLimit));
  return *Po_;
}

const Matrix& SubspaceProjectors::P() const {
  require(P_.has_value(), ErrorKind::InvalidDimensions,
          "dense projector not materialized for D > " + std::to_string(kDenseLimit));
  return *P_;
}

Vector SubspaceProjectors::on(const Vector& z) const {
  require(z.size() == D_, ErrorKind::InvalidDimensions, "vector length != D");
  if (Po_ && !factored_apply()) return *Po_ * z;
  return M_ * (gram_inv_ * (M_.transpose() * z));
}

Vector SubspaceProjectors::off(const Vector& z) const {
  require(z.size() == D_, ErrorKind::InvalidDimensions, "vector length != D");
  if (P_ && !factored_apply()) return *P_ * z;
  return z - on(z);
}

Matrix SubspaceProjectors::on_rows(const Matrix& Z) const {
  require(Z.cols() == D_, ErrorKind::InvalidDimensions, "block width != D");
  if (Po_ && !factored_apply()) return Z * *Po_;
  return ((Z * M_) * gram_inv_) * M_.transpose();
}

Matrix SubspaceProjectors::off_rows(const Matrix& Z) const {
  require(Z.cols() == D_, ErrorKind::InvalidDimensions, "block width != D");
  if (P_ && !factored_apply()) return Z * *P_;
  return Z - on_rows(Z);
}

SubspaceProjectors build_projectors(const OrthonormalImmersion& imm) {
  return SubspaceProjectors(imm);
}

double semi_inner(const Vector& a, const Vector& b, const Matrix& A) {
  require(A.rows() == A.cols(), ErrorKind::InvalidDimensions, "A must be square");
  require(a.size() == A.rows() && b.size() == A.cols(), ErrorKind::InvalidDimensions,
          "vector lengths do not match A");
  return a.dot(A * b);
}

nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> entries;
  entries.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) entries.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"entries", std::move(entries)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& entries = j.at("entries");
  require(rows >= 0 && cols >= 0 && entries.size() == static_cast<std::size_t>(rows * cols),
          ErrorKind::Parse, "matrix entries length != rows*cols");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = entries[k++].get<double>();
  require(all_finite(m), ErrorKind::Parse, "matrix has non-finite entries");
  return m;
}

nlohmann::json vector_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace dimgap
