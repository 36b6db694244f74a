#include "dimgap/geometry.hpp"
#include "dimgap/rng.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace dimgap;

TEST_SUITE("geometry") {

TEST_CASE("rng replay and seed derivation") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  CHECK(derive_seed(1, 0, "x") == derive_seed(1, 0, "x"));
  CHECK(derive_seed(1, 0, "x") != derive_seed(1, 1, "x"));
  CHECK(derive_seed(1, 0, "x") != derive_seed(1, 0, "y"));
  CHECK(derive_seed(1, 0, "x") != derive_seed(2, 0, "x"));
  // FNV-1a offset basis for the empty tag.
  CHECK(tag_hash("") == 0xcbf29ce484222325ULL);

  Rng r(9);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1) < 0.02);
}

TEST_CASE("1-D immersion is a unit scalar") {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    const auto imm = sample_orthonormal_immersion(1, 1, ImmersionMode::ExactQr, seed);
    CHECK(std::abs(std::abs(imm.M(0, 0)) - 1) < 1e-15);
  }
}

TEST_CASE("exact-qr columns are orthonormal") {
  const auto imm = sample_orthonormal_immersion(3, 10, ImmersionMode::ExactQr, 7);
  const Matrix G = imm.M.transpose() * imm.M;
  CHECK((G - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("gaussian-raw columns are nearly orthogonal at large D") {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto imm = sample_orthonormal_immersion(5, 2000, ImmersionMode::GaussianRaw, seed);
    Matrix G = imm.M.transpose() * imm.M;
    G.diagonal().setZero();
    worst = std::max(worst, G.cwiseAbs().maxCoeff());
  }
  CHECK(worst < 0.1);
}

TEST_CASE("d > D is rejected") {
  CHECK_THROWS_AS(sample_orthonormal_immersion(5, 4, ImmersionMode::ExactQr, 1), Error);
}

TEST_CASE("immersion replay is bit-identical") {
  const auto a = sample_orthonormal_immersion(4, 30, ImmersionMode::ExactQr, 5);
  const auto b = sample_orthonormal_immersion(4, 30, ImmersionMode::ExactQr, 5);
  CHECK(a.M == b.M);
}

TEST_CASE("axis-aligned projector") {
  const SubspaceProjectors proj(axis_aligned_immersion(3, 7));
  Matrix expect = Matrix::Zero(7, 7);
  expect.topLeftCorner(3, 3).setIdentity();
  CHECK((proj.Po() - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("projector algebra") {
  for (auto mode : {ImmersionMode::ExactQr, ImmersionMode::GaussianRaw}) {
    const auto imm = sample_orthonormal_immersion(4, 12, mode, 3);
    const SubspaceProjectors proj(imm);
    const Matrix& Po = proj.Po();
    const Matrix& P = proj.P();
    CHECK((Po + P - Matrix::Identity(12, 12)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((Po * Po - Po).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((P * P - P).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((P.transpose() - P).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((Po.transpose() - Po).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((Po * imm.M - imm.M).cwiseAbs().maxCoeff() <= 1e-9);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(Po);
    CHECK((eig.eigenvalues().array() >= 0.5).count() == 4);
    if (mode == ImmersionMode::ExactQr) CHECK(std::abs(Po.trace() - 4) <= 1e-6);
  }
}

TEST_CASE("factored application matches the dense projectors") {
  // 2d < D takes the factored path, 2d >= D the dense one.
  for (int d : {3, 9}) {
    const SubspaceProjectors proj(sample_orthonormal_immersion(d, 16, ImmersionMode::ExactQr, 11));
    Rng r(1);
    const Matrix Z = r.normal_matrix(5, 16);
    CHECK((proj.on_rows(Z) - Z * proj.Po()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((proj.off_rows(Z) - Z * proj.P()).cwiseAbs().maxCoeff() <= 1e-12);
    const Vector z = Z.row(0).transpose();
    const Vector a = proj.on(z), b = proj.off(z);
    CHECK((a + b - z).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(std::abs(a.dot(b)) <= 1e-8 * z.squaredNorm());
  }
}

TEST_CASE("projectors above the dense limit stay factored") {
  const int D = SubspaceProjectors::kDenseLimit + 4;
  const SubspaceProjectors proj(axis_aligned_immersion(2, D));
  CHECK_FALSE(proj.dense());
  CHECK_THROWS_AS(proj.Po(), Error);
  Vector z = Vector::Ones(D);
  const Vector on = proj.on(z);
  CHECK(on.head(2).isOnes());
  CHECK(on.tail(D - 2).isZero());
}

TEST_CASE("isometry of exact-qr immersions") {
  const auto imm = sample_orthonormal_immersion(6, 40, ImmersionMode::ExactQr, 2);
  Rng r(4);
  for (int t = 0; t < 20; ++t) {
    const Vector u = r.normal_vector(6), v = r.normal_vector(6);
    CHECK(std::abs((imm.M * u).dot(imm.M * v) - u.dot(v)) <= 1e-8 * u.norm() * v.norm());
  }
}

TEST_CASE("semi-inner product") {
  Vector a(2), b(2);
  a << 1, 2;
  b << 3, 4;
  CHECK(semi_inner(a, a, Matrix::Identity(2, 2)) == doctest::Approx(5.0));
  Matrix e1 = Matrix::Zero(2, 2);
  e1(0, 0) = 1;
  CHECK(semi_inner(a, b, e1) == 3.0);

  const SubspaceProjectors proj(sample_orthonormal_immersion(3, 9, ImmersionMode::ExactQr, 8));
  Rng r(2);
  const Vector x = r.normal_vector(9), y = r.normal_vector(9);
  CHECK(std::abs(semi_inner(x, y, proj.P()) - (proj.P() * x).dot(proj.P() * y)) <= 1e-10);
  CHECK_THROWS_AS(semi_inner(a, b, Matrix::Identity(3, 3)), Error);
}

TEST_CASE("matrix json round trip") {
  Rng r(6);
  const Matrix m = r.normal_matrix(3, 4);
  const auto j = matrix_to_json(m);
  CHECK(j["rows"] == 3);
  CHECK(j["cols"] == 4);
  CHECK(j["entries"][1].get<double>() == m(0, 1));  // row-major
  CHECK(matrix_from_json(j) == m);
  nlohmann::json bad = j;
  bad["entries"].erase(0);
  CHECK_THROWS_AS(matrix_from_json(bad), Error);
}

}
