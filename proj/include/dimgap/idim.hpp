#pragma once

#include "dimgap/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dimgap {

struct PointCloud {
  Matrix X;  // n x D
  std::optional<Vector> labels;

  int n() const { return static_cast<int>(X.rows()); }
  int D() const { return static_cast<int>(X.cols()); }
};

/// Numeric CSV, optional header; a header column named y becomes the labels.
PointCloud load_point_cloud(const std::filesystem::path& path);

struct IdEstimate {
  std::string method;
  double value = 0;       // global estimate, capped at D
  double raw_value = 0;   // before the cap
  double mean_value = 0;  // simple mean of per-point values
  nlohmann::json params;
  std::vector<double> per_point;  // skipped points excluded
  int skipped = 0;
};

/// Neighbours of each point sorted by (distance, index), self excluded.
/// Distances are computed from coordinate differences.
struct Neighbors {
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> index;  // n x k
  Matrix distance;                                                    // n x k
};
Neighbors nearest_neighbors(const Matrix& X, int k, Exec exec = Exec::Parallel);

/// Local dimension: smallest m whose top-m covariance eigenvalues carry at
/// least var_threshold of the total, over each point's neighbourhood. The
/// global value is the median (upper middle for even counts).
IdEstimate lpca_dim(const PointCloud& cloud, int neighbors, double var_threshold,
                    Exec exec = Exec::Parallel);

/// Levina-Bickel with the (k - 1) normalization; global value is the inverse
/// of the mean inverse.
IdEstimate mle_dim(const PointCloud& cloud, int k, Exec exec = Exec::Parallel);
/// Per-point value from sorted neighbour distances T_1..T_k; NaN when T_1 == 0.
double mle_local(const std::vector<double>& T, int k);

/// TwoNN with ratios mu = r2 / r1; the top discard_fraction of ratios is
/// treated as right-censored at the largest kept ratio.
IdEstimate twonn_dim(const PointCloud& cloud, double discard_fraction = 0.1,
                     Exec exec = Exec::Parallel);
double twonn_from_ratios(std::vector<double> mu, double discard_fraction);

nlohmann::json to_json(const IdEstimate& e);

}  // namespace dimgap
