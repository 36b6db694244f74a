#include "dimgap/datagen.hpp"
#include "dimgap/io.hpp"
#include "dimgap/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace dimgap;

namespace {

std::shared_ptr<const DataModel> model_for(int k, int d, int D, double tau, MeanMode mm, std::uint64_t seed,
                                           double xi = 1, double omega = 1) {
  AmbientSpec a;
  a.D = D;
  a.tau = tau;
  a.xi_scale = xi;
  a.omega_scale = omega;
  return std::make_shared<const DataModel>(make_data_model(sample_cluster_means(k, d, mm, seed), a, seed + 1));
}

double reconstruction_error(const GeneratedDataset& g) {
  const auto& m = *g.model;
  double worst = 0;
  for (int i = 0; i < g.n; ++i) {
    const Vector x = g.intrinsic.row(i).transpose();
    const Vector rebuilt = m.immersion.M * x + m.zetas[g.cluster_ids[i]] + g.omega.row(i).transpose();
    worst = std::max(worst, (g.X.row(i).transpose() - rebuilt).norm());
  }
  return worst;
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("orthogonal means on distinct axes") {
  const auto cs = sample_cluster_means(2, 4, MeanMode::OrthogonalSqrtD, 0);
  Vector m0 = Vector::Zero(4), m1 = Vector::Zero(4);
  m0[0] = 2;
  m1[1] = 2;
  CHECK(cs.means[0] == m0);
  CHECK(cs.means[1] == m1);
  CHECK(cs.p() == 0.0);
  CHECK(cs.labels == std::vector<int>{1, -1});
  CHECK_THROWS_AS(sample_cluster_means(5, 4, MeanMode::OrthogonalSqrtD, 0), Error);
  try {
    sample_cluster_means(5, 4, MeanMode::OrthogonalSqrtD, 0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooManyClusters);
  }
}

TEST_CASE("gaussian means have norm near sqrt d") {
  double s = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) s += sample_cluster_means(2, 100, MeanMode::Gaussian, seed).means[0].norm();
  CHECK(s / 200 >= 9.5);
  CHECK(s / 200 <= 10.5);
}

TEST_CASE("p is the brute-force max overlap") {
  const auto cs = sample_cluster_means(5, 100, MeanMode::Gaussian, 3);
  double p = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) p = std::max(p, std::abs(cs.means[i].dot(cs.means[j])));
  CHECK(cs.p() == doctest::Approx(p).epsilon(1e-14));
}

TEST_CASE("tau modes") {
  AmbientSpec a;
  a.D = 400;
  a.tau_mode = TauMode::OneOverD;
  CHECK(a.effective_tau(25) == doctest::Approx(std::sqrt(1.0 / 400)));
  a.tau_mode = TauMode::DOverD;
  CHECK(a.effective_tau(25) == doctest::Approx(std::sqrt(25.0 / 400)));
  a.tau_mode = TauMode::Explicit;
  a.tau = 0.3;
  CHECK(a.effective_tau(25) == 0.3);
  CHECK(tau_mode_from_string("d-over-D") == TauMode::DOverD);
  CHECK_THROWS_AS(tau_mode_from_string("bogus"), Error);
}

TEST_CASE("empty dataset keeps its specs") {
  const auto m = model_for(2, 4, 8, 0.1, MeanMode::OrthogonalSqrtD, 1);
  const auto g = synthesize(*m, 0, 5);
  CHECK(g.n == 0);
  CHECK(g.X.rows() == 0);
  CHECK(g.X.cols() == 8);
  CHECK(g.has_truth());
}

TEST_CASE("noiseless data collapses to the embedded means") {
  const auto m = model_for(3, 5, 12, 0.0, MeanMode::OrthogonalSqrtD, 2, 0, 0);
  const auto g = synthesize(*m, 60, 4);
  for (int i = 0; i < g.n; ++i)
    CHECK((g.X.row(i).transpose() - m->embedded_mean(g.cluster_ids[i])).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reconstruction, labels and replay") {
  const auto m = model_for(4, 20, 60, 0.2, MeanMode::Gaussian, 3);
  const auto g = synthesize(*m, 200, 9);
  CHECK(reconstruction_error(g) <= 1e-10);
  for (int i = 0; i < g.n; ++i) CHECK(g.y[i] == m->cluster.labels[g.cluster_ids[i]]);
  const auto h = synthesize(*m, 200, 9);
  CHECK(g.X == h.X);
  CHECK(g.y == h.y);
}

TEST_CASE("xi has unit expected norm") {
  const auto m = model_for(2, 100, 2000, 0.0, MeanMode::Gaussian, 5);
  const auto g = synthesize(*m, 1000, 6);
  const double mean = g.xi.rowwise().norm().mean();
  CHECK(mean >= 0.95);
  CHECK(mean <= 1.05);
}

TEST_CASE("within-cluster isometry without ambient noise") {
  const auto m = model_for(2, 6, 30, 0.5, MeanMode::Gaussian, 7, 1, 0);
  const auto g = synthesize(*m, 80, 8);
  for (int i = 0; i < g.n; ++i)
    for (int j = i + 1; j < g.n; ++j)
      if (g.cluster_ids[i] == g.cluster_ids[j])
        CHECK(std::abs((g.X.row(i) - g.X.row(j)).norm() - (g.intrinsic.row(i) - g.intrinsic.row(j)).norm()) <= 1e-8);
}

TEST_CASE("nice examples carry their certificates") {
  const auto m = model_for(2, 100, 300, 0.1, MeanMode::Gaussian, 9);
  const double bound = std::sqrt(2.0) * std::log(100.0);
  long draws = 0;
  for (int t = 0; t < 200; ++t) {
    const auto ex = sample_nice_example(*m, t % 2, derive_seed(1, t, "t"));
    CHECK(ex.xi.norm() <= bound);
    CHECK(ex.omega.norm() <= 1.0);
    CHECK(ex.y == m->cluster.labels[t % 2]);
    const Vector rebuilt = m->immersion.M * (m->cluster.means[t % 2] + ex.xi) + m->zetas[t % 2] + ex.omega;
    CHECK((ex.x - rebuilt).norm() <= 1e-10);
    draws += ex.xi_draws;
  }
  // ||xi|| ~ 1 against a bound of 6.5: essentially every draw is accepted.
  CHECK(draws == 200);

  const auto quiet = model_for(2, 10, 20, 0.3, MeanMode::Gaussian, 1, 0, 0);
  const auto ex = sample_nice_example(*quiet, 1, 3);
  CHECK(ex.xi_draws == 1);
  CHECK((ex.x - (quiet->embedded_mean(1) + quiet->zetas[1])).norm() <= 1e-12);
}

TEST_CASE("misconfigured noise exhausts rejection") {
  const auto m = model_for(2, 10, 20, 0.0, MeanMode::Gaussian, 1, 1, 50);
  try {
    sample_nice_example(*m, 0, 1);
    FAIL("expected rejection-exhausted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RejectionExhausted);
  }
}

TEST_CASE("audit: orthogonal means without noise") {
  const auto m = model_for(2, 10, 40, 0.0, MeanMode::OrthogonalSqrtD, 1, 0, 0);
  const auto audit = audit_assumptions(synthesize(*m, 50, 2));
  CHECK(audit.a1_holds);
  CHECK(audit.p == 0.0);
  CHECK_FALSE(audit.a4_holds);  // tau = 0
}

TEST_CASE("audit: desk regime violates A4") {
  const auto m = model_for(2, 100, 2000, std::sqrt(0.05), MeanMode::OrthogonalSqrtD, 4);
  const auto audit = audit_assumptions(synthesize(*m, 100, 2));
  const double c3 = 95.0 / 40 - 21.0 / 20 * std::sqrt(13.0 * 95 / 8);
  CHECK(audit.constants.c3 == doctest::Approx(c3).epsilon(1e-12));
  CHECK(c3 < 0);
  CHECK_FALSE(audit.a4_holds);
  CHECK(audit.pairs_checked == 100);
}

TEST_CASE("audit: p matches the pairwise scan for gaussian means") {
  const auto m = model_for(2, 100, 300, 0.1, MeanMode::Gaussian, 6);
  const auto audit = audit_assumptions(synthesize(*m, 50, 2));
  CHECK(audit.p == std::abs(m->cluster.means[0].dot(m->cluster.means[1])));
  CHECK(audit.max_xi_norm > 0);
}

TEST_CASE("dataset directory round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "dimgap_test_dataset";
  std::filesystem::remove_all(dir);
  const auto m = model_for(2, 4, 9, 0.2, MeanMode::Gaussian, 3);
  const auto g = synthesize(*m, 25, 4);
  write_dataset(g, dir);
  CHECK(std::filesystem::exists(dir / "spec.toml"));
  CHECK(read_file(dir / "data.csv").rfind("y,x1,x2,", 0) == 0);
  const auto back = read_dataset(dir);
  CHECK(back.X == g.X);
  CHECK(back.y == g.y);
  REQUIRE(back.has_truth());
  CHECK(back.model->immersion.M == m->immersion.M);
  CHECK(back.model->zetas[1] == m->zetas[1]);
  CHECK(back.cluster_ids == g.cluster_ids);
  CHECK(reconstruction_error(back) <= 1e-10);
  std::filesystem::remove(dir / "truth.json");
  CHECK_FALSE(read_dataset(dir).has_truth());
  std::filesystem::remove_all(dir);
}

}
