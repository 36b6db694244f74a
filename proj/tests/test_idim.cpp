#include "dimgap/geometry.hpp"
#include "dimgap/idim.hpp"
#include "dimgap/io.hpp"
#include "dimgap/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace dimgap;

namespace {

PointCloud cloud_of(Matrix X) {
  PointCloud c;
  c.X = std::move(X);
  return c;
}

// Uniform points in [0,1]^m pushed through an exact-qr immersion into R^D.
PointCloud immersed_cube(int n, int m, int D, std::uint64_t seed) {
  Rng r(seed);
  Matrix U(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) U(i, j) = r.uniform();
  const auto imm = sample_orthonormal_immersion(m, D, ImmersionMode::ExactQr, seed + 1);
  return cloud_of(U * imm.M.transpose());
}

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto p = std::filesystem::temp_directory_path() / name;
  write_file(p, content);
  return p;
}

}  // namespace

TEST_SUITE("idim") {

TEST_CASE("mle local value by hand") {
  CHECK(mle_local({1, 2, 4}, 3) == doctest::Approx(2 / std::log(8.0)).epsilon(1e-12));
  CHECK(mle_local({1, 2, 4}, 3) == doctest::Approx(0.96180).epsilon(1e-4));
  CHECK(std::isnan(mle_local({0, 2, 4}, 3)));
}

TEST_CASE("twonn from constant ratios") {
  CHECK(twonn_from_ratios(std::vector<double>(50, std::exp(1.0)), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(twonn_from_ratios(std::vector<double>(50, std::exp(0.5)), 0.0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(twonn_from_ratios(std::vector<double>(50, std::exp(1.0)), 0.1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("neighbours are sorted with index tie-break") {
  Matrix X(4, 1);
  X << 0, 1, -1, 2;
  const auto nb = nearest_neighbors(X, 2, Exec::Serial);
  // Point 0 is equidistant from 1 and 2.
  CHECK(nb.index(0, 0) == 1);
  CHECK(nb.index(0, 1) == 2);
  CHECK(nb.distance(0, 0) == 1.0);
  CHECK(nb.index(3, 0) == 1);
}

TEST_CASE("serial and parallel neighbours agree") {
  Rng r(3);
  const Matrix X = r.normal_matrix(300, 7);
  const auto a = nearest_neighbors(X, 10, Exec::Serial);
  const auto b = nearest_neighbors(X, 10, Exec::Parallel);
  CHECK(a.index == b.index);
  CHECK(a.distance == b.distance);
}

TEST_CASE("lpca on a line and a disc") {
  Rng r(1);
  Vector dir = r.normal_vector(3);
  Matrix L(100, 3);
  for (int i = 0; i < 100; ++i) L.row(i) = (i * 0.37 - 5) * dir.transpose();
  CHECK(lpca_dim(cloud_of(L), 10, 1 - 1e-9).value == 1);

  const auto imm = sample_orthonormal_immersion(2, 10, ImmersionMode::ExactQr, 4);
  Matrix P(500, 2);
  for (int i = 0; i < 500;) {
    const double a = 2 * r.uniform() - 1, b = 2 * r.uniform() - 1;
    if (a * a + b * b > 1) continue;
    P(i, 0) = a;
    P(i, 1) = b;
    ++i;
  }
  CHECK(lpca_dim(cloud_of(P * imm.M.transpose()), 20, 0.95).value == 2);
}

TEST_CASE("lpca skips collapsed neighbourhoods") {
  Matrix X = Matrix::Zero(20, 3);
  for (int i = 10; i < 20; ++i) X(i, 0) = i;
  const auto e = lpca_dim(cloud_of(X), 5, 0.95);
  CHECK(e.skipped >= 1);
  CHECK(e.per_point.size() + e.skipped == 20);
}

TEST_CASE("mle on a uniform 1-D grid") {
  Matrix X(400, 2);
  for (int i = 0; i < 400; ++i) {
    X(i, 0) = 0.6 * i;
    X(i, 1) = 0.8 * i;
  }
  const auto e = mle_dim(cloud_of(X), 5);
  CHECK(e.skipped == 0);
  // Interior neighbour distances are (1, 1, 2, 2, 3) in grid units.
  const double interior = 4 / (2 * std::log(3.0) + 2 * std::log(1.5));
  CHECK(e.per_point[200] == doctest::Approx(interior).epsilon(1e-12));
  CHECK(e.value == doctest::Approx(interior).epsilon(0.01));
}

TEST_CASE("mle on random points along a segment") {
  Rng r(12);
  Vector dir = r.normal_vector(4).normalized();
  Matrix X(2000, 4);
  for (int i = 0; i < 2000; ++i) X.row(i) = 50 * r.uniform() * dir.transpose();
  const auto e = mle_dim(cloud_of(X), 5);
  CHECK(e.value >= 0.8);
  CHECK(e.value <= 1.3);
}

TEST_CASE("zero first-neighbour distances are skipped") {
  Rng r(5);
  Matrix X = r.normal_matrix(50, 3);
  X.row(1) = X.row(0);
  const auto t = twonn_dim(cloud_of(X), 0.1);
  CHECK(t.skipped == 2);
  CHECK(t.per_point.size() == 48);
  const auto m = mle_dim(cloud_of(X), 5);
  CHECK(m.skipped == 2);
}

TEST_CASE("twonn on a plane in R^20") {
  const auto e = twonn_dim(immersed_cube(2000, 2, 20, 9), 0.1);
  CHECK(e.value >= 1.8);
  CHECK(e.value <= 2.3);
}

TEST_CASE("five-cube in R^50") {
  const auto c = immersed_cube(2000, 5, 50, 2);
  const auto m = mle_dim(c, 5);
  const auto t = twonn_dim(c, 0.1);
  CHECK(m.value >= 4);
  CHECK(m.value <= 6);
  CHECK(t.value >= 4);
  CHECK(t.value <= 6);
  CHECK(m.value <= 50);
}

TEST_CASE("scale and rotation invariance") {
  const auto c = immersed_cube(400, 3, 12, 6);
  const auto Q = sample_orthonormal_immersion(12, 12, ImmersionMode::ExactQr, 8).M;
  const auto scaled = cloud_of(c.X * 7.5);
  const auto rotated = cloud_of(c.X * Q.transpose());
  const double m = mle_dim(c, 5).value, t = twonn_dim(c).value, l = lpca_dim(c, 20, 0.95).value;
  CHECK(std::abs(mle_dim(scaled, 5).value - m) <= 1e-9);
  CHECK(std::abs(twonn_dim(scaled).value - t) <= 1e-9);
  CHECK(std::abs(mle_dim(rotated, 5).value - m) <= 1e-9);
  CHECK(std::abs(twonn_dim(rotated).value - t) <= 1e-9);
  CHECK(lpca_dim(rotated, 20, 0.95).value == l);
}

TEST_CASE("serial and parallel estimators agree") {
  const auto c = immersed_cube(300, 3, 9, 1);
  CHECK(mle_dim(c, 5, Exec::Serial).value == mle_dim(c, 5, Exec::Parallel).value);
  CHECK(twonn_dim(c, 0.1, Exec::Serial).value == twonn_dim(c, 0.1, Exec::Parallel).value);
  CHECK(lpca_dim(c, 15, 0.95, Exec::Serial).per_point == lpca_dim(c, 15, 0.95, Exec::Parallel).per_point);
}

TEST_CASE("preconditions") {
  Rng r(2);
  CHECK_THROWS_AS(twonn_dim(cloud_of(r.normal_matrix(9, 3))), Error);
  CHECK_THROWS_AS(mle_dim(cloud_of(r.normal_matrix(5, 3)), 5), Error);
  CHECK_THROWS_AS(mle_dim(cloud_of(r.normal_matrix(20, 3)), 1), Error);
  CHECK_THROWS_AS(lpca_dim(cloud_of(r.normal_matrix(20, 3)), 2, 0.9), Error);
  CHECK_THROWS_AS(lpca_dim(cloud_of(r.normal_matrix(20, 3)), 5, 1.0), Error);
}

TEST_CASE("point cloud csv") {
  const auto plain = load_point_cloud(temp_file("dimgap_pc1.csv", "1,2\n3,4\n5,6\n"));
  CHECK(plain.n() == 3);
  CHECK(plain.D() == 2);
  CHECK_FALSE(plain.labels);
  CHECK(plain.X(2, 1) == 6);

  const auto labelled = load_point_cloud(temp_file("dimgap_pc2.csv", "y,x1,x2\n1,0.5,2\n-1,3,4\n"));
  CHECK(labelled.D() == 2);
  REQUIRE(labelled.labels);
  CHECK((*labelled.labels)[1] == -1);
  CHECK(labelled.X(0, 0) == 0.5);

  CHECK_THROWS_AS(load_point_cloud(temp_file("dimgap_pc3.csv", "")), Error);
  try {
    load_point_cloud(temp_file("dimgap_pc4.csv", "1,2\n3\n"));
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find('2') != std::string::npos);
  }
  CHECK_THROWS_AS(load_point_cloud(temp_file("dimgap_pc5.csv", "1,2\n3,abc\n")), Error);
}

TEST_CASE("estimate json") {
  const auto e = twonn_dim(immersed_cube(100, 2, 4, 3));
  const auto j = to_json(e);
  CHECK(j["method"] == "twonn");
  CHECK(j.contains("global"));
  CHECK(j.contains("skipped"));
}

}
