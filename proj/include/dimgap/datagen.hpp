#pragma once

#include "dimgap/common.hpp"
#include "dimgap/geometry.hpp"
#include "dimgap/theory.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string_view>
#include <vector>

namespace dimgap {

enum class MeanMode { OrthogonalSqrtD, Gaussian };
enum class TauMode { Explicit, OneOverD, DOverD };

std::string_view to_string(MeanMode m);
std::string_view to_string(TauMode m);
MeanMode mean_mode_from_string(std::string_view s);
TauMode tau_mode_from_string(std::string_view s);

struct ClusterSpec {
  int k = 2;
  int d = 100;
  std::vector<Vector> means;
  std::vector<int> labels;  // +1 / -1 per cluster
  MeanMode mean_mode = MeanMode::OrthogonalSqrtD;

  /// max_{i != j} |<mu_i, mu_j>|
  double p() const;
  void validate() const;
};

/// Labels alternate +1, -1, +1, ... by cluster index.
ClusterSpec sample_cluster_means(int k, int d, MeanMode mode, std::uint64_t seed);

struct AmbientSpec {
  int D = 2000;
  double tau = 0.0;  // used in explicit mode
  double xi_scale = 1.0;
  double omega_scale = 1.0;
  TauMode tau_mode = TauMode::Explicit;
  ImmersionMode immersion = ImmersionMode::ExactQr;

  double effective_tau(int d) const;
  void validate(int d) const;
};

/// The hidden ground truth shared by every sample of one experiment:
/// immersion M and the cluster shifts zeta^(r).
struct DataModel {
  ClusterSpec cluster;
  AmbientSpec ambient;
  OrthonormalImmersion immersion;
  std::vector<Vector> zetas;  // k vectors in R^D
  double tau = 0.0;
  std::uint64_t seed = 0;

  int d() const { return cluster.d; }
  int D() const { return ambient.D; }
  int k() const { return cluster.k; }
  /// M mu^(r)
  Vector embedded_mean(int r) const;
};

DataModel make_data_model(const ClusterSpec& cluster, const AmbientSpec& ambient,
                          std::uint64_t seed);

struct GeneratedDataset {
  int n = 0;
  int D = 0;
  Matrix X;  // n x D, row i is x~_i
  Vector y;  // +1 / -1
  std::vector<int> cluster_ids;

  /// Truth; absent for datasets loaded from a bare CSV.
  std::shared_ptr<const DataModel> model;
  Matrix intrinsic;  // n x d, x_i = mu^(r(i)) + xi_i
  Matrix xi;         // n x d
  Matrix omega;      // n x D

  bool has_truth() const { return model != nullptr; }
};

/// Clusters are drawn uniformly; xi ~ N(0, xi_scale^2 I_d / d), omega ~ N(0, omega_scale^2 I_D / D).
GeneratedDataset synthesize(const DataModel& model, int n, std::uint64_t seed);
GeneratedDataset synthesize(const ClusterSpec& cluster, const AmbientSpec& ambient, int n,
                            std::uint64_t seed);

struct NiceExample {
  Vector x;
  double y = 0;
  int cluster = 0;
  Vector xi;
  Vector omega;
  long xi_draws = 0;
  long omega_draws = 0;
  double xi_acceptance() const { return 1.0 / static_cast<double>(xi_draws); }
  double omega_acceptance() const { return 1.0 / static_cast<double>(omega_draws); }
};

/// Rejection-samples xi and omega independently until ||xi|| <= sqrt2 ln d and
/// ||omega|| <= 1. Gives up after kMaxNiceDraws attempts of either with
/// rejection-exhausted.
inline constexpr long kMaxNiceDraws = 1000;
NiceExample sample_nice_example(const DataModel& model, int r, std::uint64_t seed);

/// n nice examples with uniformly drawn clusters, as a dataset carrying truth.
GeneratedDataset sample_nice_dataset(const std::shared_ptr<const DataModel>& model, int n,
                                     std::uint64_t seed);

struct AssumptionAudit {
  bool a1_holds = false;
  bool a2_holds = false;           // probabilistic zeta-bar
  bool a2_holds_realized = false;  // realized max ||zeta^(r) + omega_i||
  bool a3_holds = false;
  bool a4_holds = false;
  double p = 0;
  double c_prime = 0;
  double c_prime_realized = 0;
  double max_xi_norm = 0;
  double max_omega_norm = 0;
  double realized_zeta_bar = 0;
  theory::ConstantsReport constants;
  theory::ConstantsReport constants_realized;
  /// Properties 1-4 of the inner-product lemma, checked with the realized constants.
  int pairs_checked = 0;
  std::array<int, 4> property_violations{};
};

AssumptionAudit audit_assumptions(const GeneratedDataset& data, std::uint64_t seed = 0);

nlohmann::json to_json(const AssumptionAudit& a);

/// data.csv + truth.json + spec.toml
void write_dataset(const GeneratedDataset& data, const std::filesystem::path& dir);
/// Reads data.csv and, when present, truth.json.
GeneratedDataset read_dataset(const std::filesystem::path& dir);

void write_data_csv(const GeneratedDataset& data, const std::filesystem::path& path);
nlohmann::json truth_to_json(const GeneratedDataset& data);
std::string spec_toml(const DataModel& model, int n);

}  // namespace dimgap
