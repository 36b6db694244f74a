#include "dimgap/datagen.hpp"
#include "dimgap/net.hpp"
#include "dimgap/rng.hpp"

#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <filesystem>

using namespace dimgap;

namespace {

struct Problem {
  Matrix X;
  Vector y;
};

Problem random_problem(int n, int D, std::uint64_t seed) {
  Rng r(seed);
  Problem p{r.normal_matrix(n, D), Vector(n)};
  for (int i = 0; i < n; ++i) p.y[i] = r.uniform() < 0.5 ? -1.0 : 1.0;
  return p;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

}  // namespace

TEST_SUITE("net") {

TEST_CASE("losses") {
  CHECK(loss_value(LossKind::Exponential, 0) == 1.0);
  CHECK(loss_value(LossKind::Logistic, 0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(loss_value(LossKind::Exponential, 3) == doctest::Approx(0.049787).epsilon(1e-5));
  CHECK(loss_value(LossKind::Logistic, -1000) == doctest::Approx(1000));
  CHECK(std::isfinite(loss_value(LossKind::Logistic, 1000)));
  CHECK(loss_derivative(LossKind::Logistic, -1000) == doctest::Approx(-1));
  CHECK(loss_derivative(LossKind::Exponential, 2) == doctest::Approx(-std::exp(-2.0)));

  const auto p = random_problem(7, 4, 1);
  const NetParams zero = init_params(5, 4, 0.0, 1);
  CHECK(empirical_loss(zero, p.X, p.y, LossKind::Exponential) == 1.0);
  CHECK(empirical_loss(zero, p.X, p.y, LossKind::Logistic) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("init") {
  const NetParams a = init_params(2000, 500, 1.0, 3);
  const double var = a.W.array().square().mean() - std::pow(a.W.mean(), 2);
  CHECK(var >= 0.9 * 2.0 / 500);
  CHECK(var <= 1.1 * 2.0 / 500);
  CHECK(a.b.isZero());
  const NetParams b = init_params(2000, 500, 1.0, 3);
  CHECK(a.W == b.W);
  CHECK(a.v == b.v);
  const NetParams s = init_params(2000, 500, 0.01, 3);
  CHECK((s.W - 0.01 * a.W).cwiseAbs().maxCoeff() <= 1e-15);
  const NetParams z = init_params(10, 3, 0.0, 3);
  CHECK(z.W.isZero());
  CHECK(z.v.isZero());
  CHECK(forward(z, Vector::Ones(3)) == 0.0);
}

TEST_CASE("forward on hand-built nets") {
  NetParams p;
  p.W = Matrix::Zero(1, 2);
  p.W(0, 0) = 1;
  p.b = Vector::Zero(1);
  p.v = Vector::Ones(1);
  Vector x(2);
  x << 3, -1;
  CHECK(forward(p, x) == 3.0);
  x << -3, -1;
  CHECK(forward(p, x) == 0.0);
  CHECK_THROWS_AS(forward(p, Vector::Ones(3)), Error);
}

TEST_CASE("2-homogeneity at a fixed activation pattern") {
  NetParams p = init_params(16, 6, 1.0, 5);
  Rng r(5);
  p.b = r.normal_vector(16, 0.1);
  const Vector x = r.normal_vector(6);
  NetParams q = p;
  q.W *= 2.5;
  q.b *= 2.5;
  q.v *= 0.3;
  CHECK(forward(q, x) == doctest::Approx(0.75 * forward(p, x)).epsilon(1e-12));
}

TEST_CASE("serial and parallel kernels agree") {
  const auto p = random_problem(300, 40, 2);
  NetParams net = init_params(100, 40, 1.0, 2);
  Rng r(2);
  net.b = r.normal_vector(100, 0.1);
  const Vector fs = forward_batch(net, p.X, Exec::Serial);
  const Vector fp = forward_batch(net, p.X, Exec::Parallel);
  CHECK((fs - fp).cwiseAbs().maxCoeff() <= 1e-12 * fs.cwiseAbs().maxCoeff());
  for (auto kind : {LossKind::Exponential, LossKind::Logistic}) {
    const auto gs = gradient(net, p.X, p.y, kind, 0.1, Exec::Serial);
    const auto gp = gradient(net, p.X, p.y, kind, 0.1, Exec::Parallel);
    CHECK((gs.W - gp.W).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((gs.b - gp.b).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((gs.v - gp.v).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(gs.loss == doctest::Approx(gp.loss).epsilon(1e-14));
  }
  const Matrix is = input_gradients(net, p.X, Exec::Serial);
  const Matrix ip = input_gradients(net, p.X, Exec::Parallel);
  CHECK((is - ip).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("parallel kernels do not depend on the thread count") {
  const auto p = random_problem(500, 30, 3);
  const NetParams net = init_params(130, 30, 1.0, 3);
  const int before = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto g1 = gradient(net, p.X, p.y, LossKind::Logistic, 0.0);
  const Vector f1 = forward_batch(net, p.X);
  omp_set_num_threads(4);
  const auto g4 = gradient(net, p.X, p.y, LossKind::Logistic, 0.0);
  const Vector f4 = forward_batch(net, p.X);
  omp_set_num_threads(before);
  CHECK(g1.W == g4.W);
  CHECK(g1.v == g4.v);
  CHECK(f1 == f4);
}

TEST_CASE("gradient matches central differences at smooth points") {
  const auto p = random_problem(12, 5, 4);
  Rng r(4);
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 20 && seed < 200; ++seed) {
    NetParams net = init_params(6, 5, 1.0, 100 + seed);
    net.b = r.normal_vector(6, 0.2);
    if (preactivations(net, p.X).cwiseAbs().minCoeff() < 1e-3) continue;
    ++checked;
    for (auto kind : {LossKind::Exponential, LossKind::Logistic}) {
      const double wd = 0.01;
      const auto g = gradient(net, p.X, p.y, kind, wd);
      auto obj = [&](const NetParams& q) {
        return empirical_loss(q, p.X, p.y, kind) + 0.5 * wd * q.squared_norm();
      };
      const double h = 1e-5;
      double worst = 0;
      for (int j = 0; j < 6; ++j) {
        for (int c = 0; c < 5; ++c) {
          NetParams a = net, b = net;
          a.W(j, c) += h;
          b.W(j, c) -= h;
          worst = std::max(worst, rel_err(g.W(j, c), (obj(a) - obj(b)) / (2 * h)));
        }
        NetParams a = net, b = net;
        a.b[j] += h;
        b.b[j] -= h;
        worst = std::max(worst, rel_err(g.b[j], (obj(a) - obj(b)) / (2 * h)));
        a = net, b = net;
        a.v[j] += h;
        b.v[j] -= h;
        worst = std::max(worst, rel_err(g.v[j], (obj(a) - obj(b)) / (2 * h)));
      }
      CHECK(worst <= 1e-5);
    }
  }
  CHECK(checked == 20);
}

TEST_CASE("gradient edge cases") {
  const auto p = random_problem(9, 4, 5);
  const auto g0 = gradient(init_params(5, 4, 0.0, 1), p.X, p.y, LossKind::Exponential, 0.0);
  CHECK(g0.W.isZero());
  CHECK(g0.b.isZero());

  // Output is identically zero on this data, so only the decay term remains
  // in the first-layer gradient.
  NetParams net = init_params(5, 4, 1.0, 2);
  net.v.setZero();
  const auto g = gradient(net, p.X, p.y, LossKind::Exponential, 1.0);
  CHECK((g.W - net.W).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((g.b - net.b).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("lr = 0 leaves parameters and trace constant") {
  const auto p = random_problem(20, 6, 6);
  const NetParams init = init_params(8, 6, 1.0, 6);
  TrainConfig c;
  c.lr = 0;
  c.epochs = 10;
  c.width = 8;
  auto [out, trace] = train_gd(init, p.X, p.y, c);
  CHECK(out.W == init.W);
  CHECK(trace.loss.size() == 10);
  for (double l : trace.loss) CHECK(l == trace.loss.front());
}

TEST_CASE("two separable points train to small loss") {
  Matrix X(2, 2);
  X << 1, 0.5, -1, -0.2;
  Vector y(2);
  y << 1, -1;
  TrainConfig c;
  c.width = 50;
  c.epochs = 2000;
  auto [out, trace] = train_gd(init_params(50, 2, 1.0, 1), X, y, c);
  CHECK(trace.final_loss < 0.01);
  CHECK(trace.final_accuracy == 1.0);
  CHECK(trace.crossed_inverse_n >= 0);
}

TEST_CASE("small learning rate decreases the loss monotonically") {
  const auto p = random_problem(40, 8, 7);
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 100;
  c.width = 20;
  auto [out, trace] = train_gd(init_params(20, 8, 1.0, 7), p.X, p.y, c);
  for (std::size_t t = 1; t < trace.loss.size(); ++t) CHECK(trace.loss[t] <= trace.loss[t - 1] + 1e-12);
}

TEST_CASE("late-phase norm growth and margin stabilization") {
  Rng r(8);
  Matrix X = r.normal_matrix(30, 10);
  Vector y(30);
  for (int i = 0; i < 30; ++i) y[i] = X(i, 0) > 0 ? 1 : -1;
  TrainConfig c;
  c.width = 40;
  c.epochs = 4000;
  auto [out, trace] = train_gd(init_params(40, 10, 1.0, 8), X, y, c);
  REQUIRE(trace.final_loss < 1.0 / 30);
  const std::size_t T = trace.loss.size(), start = T - T / 10;
  double lo = trace.normalized_margin[start], hi = lo;
  for (std::size_t t = start + 1; t < T; ++t) {
    CHECK(trace.param_norm[t] >= trace.param_norm[t - 1]);
    lo = std::min(lo, trace.normalized_margin[t]);
    hi = std::max(hi, trace.normalized_margin[t]);
  }
  CHECK(lo > 0);
  CHECK((hi - lo) / hi <= 0.05);
}

TEST_CASE("divergence returns the last finite parameters") {
  const auto p = random_problem(20, 5, 9);
  TrainConfig c;
  c.lr = 1e6;
  c.epochs = 50;
  c.width = 10;
  auto [out, trace] = train_gd(init_params(10, 5, 1.0, 9), p.X, p.y, c);
  CHECK(trace.stop == StopReason::Diverged);
  CHECK(all_finite(out.W));
  CHECK(trace.last_finite_epoch >= 0);
  for (double l : trace.loss) CHECK(std::isfinite(l));
}

TEST_CASE("nnls on a small system") {
  // min ||A x - b|| with x >= 0 where the unconstrained optimum has a negative entry.
  Matrix A(3, 2);
  A << 1, 0, 0, 1, 1, 1;
  Vector b(3);
  b << 2, -1, 1;
  const auto res = nnls_gram(A.transpose() * A, A.transpose() * b);
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(1.5));
  CHECK(res.x[1] == doctest::Approx(0.0));
}

TEST_CASE("KKT plant and recover") {
  const int n = 5, w = 3, D = 6;
  Rng r(10);
  const Matrix X = r.normal_matrix(n, D);
  Vector y(n);
  y << 1, -1, 1, -1, 1;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> active(n, w);
  active << 1, 0, 1, 1, 1, 0, 0, 1, 1, 1, 0, 1, 1, 1, 0;
  Vector lambda(n);
  lambda << 0.5, 1.25, 0.0, 2.0, 0.75;
  NetParams p;
  p.v = r.normal_vector(w);
  p.W = Matrix::Zero(w, D);
  p.b = Vector::Zero(w);
  for (int j = 0; j < w; ++j)
    for (int i = 0; i < n; ++i)
      if (active(i, j)) {
        p.W.row(j) += p.v[j] * lambda[i] * y[i] * X.row(i);
        p.b[j] += p.v[j] * lambda[i] * y[i];
      }
  const auto diag = kkt_fit(p, X, y, active);
  CHECK(diag.weight_residual <= 1e-8);
  CHECK(diag.bias_residual <= 1e-8);
  CHECK((diag.lambdas - lambda).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("KKT diagnostics on an untrained net are total") {
  AmbientSpec a;
  a.D = 30;
  a.tau = 0.3;
  auto m = std::make_shared<const DataModel>(make_data_model(sample_cluster_means(2, 5, MeanMode::Gaussian, 1), a, 2));
  const auto data = synthesize(*m, 20, 3);
  const auto diag = kkt_diagnostics(init_params(7, 30, 1.0, 1), data);
  CHECK(diag.weight_residual >= 0);
  CHECK((diag.lambdas.array() >= 0).all());
  CHECK(diag.volatile_available);
  CHECK(diag.volatile_span_residual.size() == 7);

  GeneratedDataset bare = data;
  bare.model.reset();
  CHECK_FALSE(kkt_diagnostics(init_params(7, 30, 1.0, 1), bare).volatile_available);
}

TEST_CASE("weight decomposition") {
  const NetParams net = init_params(6, 9, 1.0, 11);
  const auto imm = sample_orthonormal_immersion(3, 9, ImmersionMode::ExactQr, 2);
  const SubspaceProjectors proj(imm);
  const auto split = decompose_weights(net, proj);
  CHECK((split.authentic + split.volatile_ - net.W).cwiseAbs().maxCoeff() <= 1e-9);

  // On a noiseless in-manifold sample the volatile part is invisible.
  NetParams authentic = net;
  authentic.W = split.authentic;
  Rng r(3);
  const Vector x = imm.M * r.normal_vector(3);
  CHECK(std::abs(forward(authentic, x) - forward(net, x)) <= 1e-8);

  const SubspaceProjectors axis(axis_aligned_immersion(3, 9));
  const auto s2 = decompose_weights(net, axis);
  CHECK(s2.authentic.leftCols(3) == net.W.leftCols(3));
  CHECK(s2.authentic.rightCols(6).isZero());
  CHECK(s2.volatile_.rightCols(6) == net.W.rightCols(6));

  const SubspaceProjectors full(sample_orthonormal_immersion(9, 9, ImmersionMode::ExactQr, 4));
  CHECK(decompose_weights(net, full).volatile_.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("margin normalization") {
  Problem sep = random_problem(20, 4, 7);
  for (int i = 0; i < 20; ++i) sep.y[i] = sep.X(i, 0) > 0 ? 1.0 : -1.0;
  TrainConfig tc;
  tc.width = 16;
  tc.epochs = 500;
  tc.loss = LossKind::Logistic;
  const auto [net, trace] = train_gd(init_params(16, 4, 1.0, 3), sep.X, sep.y, tc);
  REQUIRE(trace.final_accuracy == 1.0);
  const auto q = margin_normalized(net, sep.X, sep.y);
  const Vector out = forward_batch(q, sep.X);
  CHECK((sep.y.array() * out.array()).minCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  // 2-homogeneity: outputs scale by 1 / old margin.
  const Vector before = forward_batch(net, sep.X);
  const double m = (sep.y.array() * before.array()).minCoeff();
  CHECK((out - before / m).cwiseAbs().maxCoeff() <= 1e-10 * before.cwiseAbs().maxCoeff() / m);
  CHECK_THROWS_AS(margin_normalized(net, sep.X, -sep.y), Error);
}

TEST_CASE("model file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "dimgap_test_model.json";
  TrainConfig c;
  c.width = 4;
  c.stop_loss = 0.02;
  const NetParams net = init_params(4, 3, 1.0, 12);
  write_model(path, {net, c, 0.125, 99});
  const auto back = read_model(path);
  CHECK(back.params.W == net.W);
  CHECK(back.params.v == net.v);
  CHECK(back.config.width == 4);
  CHECK(back.config.stop_loss.value() == 0.02);
  CHECK(back.final_loss == 0.125);
  CHECK(back.seed == 99);
  std::filesystem::remove(path);
}

}
