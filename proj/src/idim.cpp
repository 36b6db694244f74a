#include "dimgap/idim.hpp"

#include "dimgap/io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dimgap {

PointCloud load_point_cloud(const std::filesystem::path& path) {
  const auto table = read_numeric_csv(path);
  PointCloud cloud;
  const auto it = std::find(table.header.begin(), table.header.end(), "y");
  if (it == table.header.end()) {
    cloud.X = table.values;
    return cloud;
  }
  const auto ycol = static_cast<Eigen::Index>(it - table.header.begin());
  const Eigen::Index cols = table.values.cols();
  cloud.labels = table.values.col(ycol);
  cloud.X.resize(table.values.rows(), cols - 1);
  for (Eigen::Index c = 0, o = 0; c < cols; ++c)
    if (c != ycol) cloud.X.col(o++) = table.values.col(c);
  return cloud;
}

namespace {

void knn_row(const Matrix& X, Eigen::Index i, int k, bool full_sort, Neighbors& out,
             std::vector<std::pair<double, Eigen::Index>>& buf) {
  const Eigen::Index n = X.rows();
  buf.clear();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) continue;
    buf.emplace_back((X.row(j) - X.row(i)).norm(), j);
  }
  if (full_sort)
    std::sort(buf.begin(), buf.end());
  else
    std::partial_sort(buf.begin(), buf.begin() + k, buf.end());
  for (int t = 0; t < k; ++t) {
    out.distance(i, t) = buf[t].first;
    out.index(i, t) = buf[t].second;
  }
}

void check_cloud(const PointCloud& c, int min_n) {
  require(c.n() >= min_n, ErrorKind::UndefinedInput,
          "estimator needs at least " + std::to_string(min_n) + " points, got " + std::to_string(c.n()));
  require(all_finite(c.X), ErrorKind::UndefinedInput, "point cloud has non-finite entries");
}

double median_upper(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double mean(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                   : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Neighbors nearest_neighbors(const Matrix& X, int k, Exec exec) {
  const Eigen::Index n = X.rows();
  require(k >= 1 && k < n, ErrorKind::UndefinedInput, "need 1 <= k < n neighbours");
  Neighbors out;
  out.index.resize(n, k);
  out.distance.resize(n, k);
  if (exec == Exec::Serial) {
    std::vector<std::pair<double, Eigen::Index>> buf;
    for (Eigen::Index i = 0; i < n; ++i) knn_row(X, i, k, true, out, buf);
    return out;
  }
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
#pragma omp parallel
  {
    std::vector<std::pair<double, Eigen::Index>> buf;
    buf.reserve(static_cast<std::size_t>(n));
#pragma omp for schedule(dynamic, 1)
    for (Eigen::Index c = 0; c < chunks; ++c)
      for (Eigen::Index i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i)
        knn_row(X, i, k, false, out, buf);
  }
  return out;
}

IdEstimate lpca_dim(const PointCloud& cloud, int neighbors, double var_threshold, Exec exec) {
  check_cloud(cloud, 3);
  require(neighbors >= 3 && neighbors < cloud.n(), ErrorKind::UndefinedInput,
          "lpca needs 3 <= neighbors < n");
  require(var_threshold > 0 && var_threshold < 1, ErrorKind::InvalidSpec, "var_threshold must be in (0, 1)");
  const auto nb = nearest_neighbors(cloud.X, neighbors, exec);
  const int n = cloud.n();
  std::vector<int> local(n, -1);

  auto one = [&](int i) {
    Matrix Y(neighbors, cloud.D());
    for (int t = 0; t < neighbors; ++t) Y.row(t) = cloud.X.row(nb.index(i, t));
    Y.rowwise() -= Y.colwise().mean();
    // Nonzero spectrum of the covariance via the neighbors x neighbors Gram.
    const Matrix gram = Y * Y.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    Vector ev = eig.eigenvalues().reverse().cwiseMax(0.0);
    const double total = ev.sum();
    if (!(total > 0)) return;
    double acc = 0;
    for (Eigen::Index m = 0; m < ev.size(); ++m) {
      acc += ev[m];
      if (acc >= var_threshold * total) {
        local[i] = static_cast<int>(m + 1);
        return;
      }
    }
    local[i] = static_cast<int>(ev.size());
  };
  if (exec == Exec::Serial) {
    for (int i = 0; i < n; ++i) one(i);
  } else {
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < n; ++i) one(i);
  }

  IdEstimate e;
  e.method = "lpca";
  e.params = {{"neighbors", neighbors}, {"var_threshold", var_threshold}};
  for (int v : local) {
    if (v < 0)
      ++e.skipped;
    else
      e.per_point.push_back(v);
  }
  require(!e.per_point.empty(), ErrorKind::UndefinedInput, "every neighbourhood collapsed");
  e.raw_value = median_upper(e.per_point);
  e.value = std::min(e.raw_value, static_cast<double>(cloud.D()));
  e.mean_value = mean(e.per_point);
  return e;
}

double mle_local(const std::vector<double>& T, int k) {
  require(k >= 2 && static_cast<int>(T.size()) >= k, ErrorKind::UndefinedInput, "mle needs k >= 2 distances");
  if (!(T[0] > 0)) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (int j = 0; j < k - 1; ++j) s += std::log(T[k - 1] / T[j]);
  return static_cast<double>(k - 1) / s;
}

IdEstimate mle_dim(const PointCloud& cloud, int k, Exec exec) {
  check_cloud(cloud, 3);
  require(k >= 2 && k < cloud.n(), ErrorKind::UndefinedInput, "mle needs 2 <= k < n");
  const auto nb = nearest_neighbors(cloud.X, k, exec);
  IdEstimate e;
  e.method = "mle";
  e.params = {{"k", k}, {"aggregation", "inverse-of-mean-inverse"}};
  double inv_sum = 0;
  std::vector<double> T(k);
  for (int i = 0; i < cloud.n(); ++i) {
    for (int t = 0; t < k; ++t) T[t] = nb.distance(i, t);
    const double m = mle_local(T, k);
    if (std::isnan(m)) {
      ++e.skipped;
      continue;
    }
    e.per_point.push_back(m);
    inv_sum += 1.0 / m;
  }
  require(!e.per_point.empty(), ErrorKind::UndefinedInput, "every point has a zero nearest-neighbour distance");
  e.raw_value = static_cast<double>(e.per_point.size()) / inv_sum;
  e.value = std::min(e.raw_value, static_cast<double>(cloud.D()));
  e.mean_value = mean(e.per_point);
  return e;
}

double twonn_from_ratios(std::vector<double> mu, double discard_fraction) {
  require(!mu.empty(), ErrorKind::UndefinedInput, "twonn needs ratios");
  require(discard_fraction >= 0 && discard_fraction < 1, ErrorKind::InvalidSpec,
          "discard_fraction must be in [0, 1)");
  std::sort(mu.begin(), mu.end());
  const auto N = mu.size();
  const auto keep = std::max<std::size_t>(1, N - static_cast<std::size_t>(std::floor(discard_fraction * N)));
  const double cut = mu[keep - 1];
  double s = 0;
  std::size_t kept = 0;
  for (double m : mu)
    if (m <= cut) {
      s += std::log(m);
      ++kept;
    }
  const auto censored = N - kept;
  return static_cast<double>(kept) / (s + static_cast<double>(censored) * std::log(cut));
}

IdEstimate twonn_dim(const PointCloud& cloud, double discard_fraction, Exec exec) {
  check_cloud(cloud, 10);
  const auto nb = nearest_neighbors(cloud.X, 2, exec);
  IdEstimate e;
  e.method = "twonn";
  e.params = {{"discard_fraction", discard_fraction}, {"fit", "censored-pareto-mle"}};
  for (int i = 0; i < cloud.n(); ++i) {
    if (!(nb.distance(i, 0) > 0)) {
      ++e.skipped;
      continue;
    }
    e.per_point.push_back(nb.distance(i, 1) / nb.distance(i, 0));
  }
  require(!e.per_point.empty(), ErrorKind::UndefinedInput, "every point has a zero nearest-neighbour distance");
  e.raw_value = twonn_from_ratios(e.per_point, discard_fraction);
  e.value = std::min(e.raw_value, static_cast<double>(cloud.D()));
  e.mean_value = mean(e.per_point);
  return e;
}

nlohmann::json to_json(const IdEstimate& e) {
  nlohmann::json summary = nullptr;
  if (!e.per_point.empty()) {
    std::vector<double> v = e.per_point;
    std::sort(v.begin(), v.end());
    auto q = [&](double f) { return v[static_cast<std::size_t>(std::floor(f * (v.size() - 1)))]; };
    summary = {{"count", v.size()}, {"min", v.front()}, {"q1", q(0.25)}, {"median", q(0.5)},
               {"q3", q(0.75)},     {"max", v.back()},  {"mean", e.mean_value}};
  }
  return {{"method", e.method},   {"params", e.params},         {"global", e.value},
          {"raw_global", e.raw_value}, {"per_point_summary", summary}, {"skipped", e.skipped}};
}

}  // namespace dimgap
