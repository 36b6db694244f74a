#pragma once

#include "dimgap/common.hpp"
#include "dimgap/geometry.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace dimgap {

struct GeneratedDataset;

enum class LossKind { Exponential, Logistic };

std::string_view to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view s);

/// l(z) = exp(-z) or log(1 + exp(-z)), overflow-safe for logistic.
double loss_value(LossKind kind, double z);
/// l'(z)
double loss_derivative(LossKind kind, double z);

/// N(x) = sum_j v_j relu(w_j^T x + b_j). Row j of W is w_j.
struct NetParams {
  Matrix W;  // width x D
  Vector b;
  Vector v;

  int width() const { return static_cast<int>(W.rows()); }
  int D() const { return static_cast<int>(W.cols()); }
  /// ||theta||^2 over (W, b, v).
  double squared_norm() const { return W.squaredNorm() + b.squaredNorm() + v.squaredNorm(); }
  void validate() const;
};

/// Kaiming normal: W ~ N(0, 2/D), v ~ N(0, 2/width), b = 0; every draw is
/// multiplied by factor.
NetParams init_params(int width, int D, double factor, std::uint64_t seed);

double forward(const NetParams& params, const Vector& x);
/// Outputs for the rows of X.
Vector forward_batch(const NetParams& params, const Matrix& X, Exec exec = Exec::Parallel);
/// w_j^T x_i + b_j as an n x width matrix.
Matrix preactivations(const NetParams& params, const Matrix& X, Exec exec = Exec::Parallel);

/// (1/n) sum_i l(y_i N(x_i))
double empirical_loss(const NetParams& params, const Matrix& X, const Vector& y, LossKind kind,
                      Exec exec = Exec::Parallel);

struct Gradient {
  Matrix W;
  Vector b;
  Vector v;
  double loss = 0;  // loss at the evaluation point, before weight decay
};

/// Gradient of (1/n) sum l(y_i N(x_i)) + (weight_decay/2) ||theta||^2 with
/// relu'(0) = 0.
Gradient gradient(const NetParams& params, const Matrix& X, const Vector& y, LossKind kind,
                  double weight_decay, Exec exec = Exec::Parallel);

/// Gradient of N with respect to each input row: (v o relu'(W x + b))^T W.
Matrix input_gradients(const NetParams& params, const Matrix& X, Exec exec = Exec::Parallel);

struct TrainConfig {
  LossKind loss = LossKind::Exponential;
  double lr = 0.1;
  int epochs = 1000;
  double weight_decay = 0.0;
  int width = 2000;
  double init_factor = 1.0;
  std::optional<double> stop_loss;
  void validate() const;
};

enum class StopReason { Epochs, StopLoss, Diverged };
std::string_view to_string(StopReason r);

/// Entry t describes theta(t), the parameters before update t.
struct TrainTrace {
  std::vector<double> loss;
  std::vector<double> train_accuracy;
  std::vector<double> param_norm;
  std::vector<double> normalized_margin;  // min_i y_i N(x_i) / ||theta||^2
  StopReason stop = StopReason::Epochs;
  int updates = 0;
  /// First t with loss < 1/n, or -1.
  int crossed_inverse_n = -1;
  int last_finite_epoch = -1;
  double final_loss = 0;
  double final_accuracy = 0;
};

/// Full-batch gradient descent. On a non-finite loss the last finite
/// parameters are returned with stop == Diverged.
std::pair<NetParams, TrainTrace> train_gd(NetParams params, const Matrix& X, const Vector& y,
                                          const TrainConfig& config, Exec exec = Exec::Parallel);

double accuracy(const NetParams& params, const Matrix& X, const Vector& y, Exec exec = Exec::Parallel);

/// Scales (W, b) and v each by s with s^2 = 1 / min_i y_i N(x_i), so the
/// smallest margin becomes 1. Needs a positive minimum margin.
NetParams margin_normalized(const NetParams& params, const Matrix& X, const Vector& y);

/// Lawson-Hanson active set on the normal equations: min 1/2 x^T G x - c^T x, x >= 0.
struct NnlsResult {
  Vector x;
  int iterations = 0;
  double stationarity = 0;  // max_i over the zero set of (c - G x)_i, relative to max |c|
  bool converged = false;
};
NnlsResult nnls_gram(const Matrix& G, const Vector& c, double tol = 1e-10, int max_iter = 0);

struct KktDiagnostics {
  Vector lambdas;
  double weight_residual = 0;
  double bias_residual = 0;
  NnlsResult nnls;
  bool volatile_available = false;
  /// Per neuron ||(I - QQ^T) P w_j|| / ||P w_j||; 0 for P w_j == 0.
  std::vector<double> volatile_span_residual;
  int volatile_span_rank = 0;
};

/// KKT stationarity fit w_j = v_j sum_i lambda_i y_i relu'_ij x_i (and b_j
/// likewise) with lambda >= 0 by NNLS.
KktDiagnostics kkt_diagnostics(const NetParams& params, const GeneratedDataset& data);

/// Core fit, usable on hand-built activation patterns.
KktDiagnostics kkt_fit(const NetParams& params, const Matrix& X, const Vector& y,
                       const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& active);

struct WeightSplit {
  Matrix authentic;  // rows Po w_j
  Matrix volatile_;  // rows P w_j
};
WeightSplit decompose_weights(const NetParams& params, const SubspaceProjectors& proj);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ModelFile {
  NetParams params;
  TrainConfig config;
  double final_loss = 0;
  std::uint64_t seed = 0;
};
void write_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile read_model(const std::filesystem::path& path);

}  // namespace dimgap
