#pragma once

#include "dimgap/attacks.hpp"
#include "dimgap/datagen.hpp"
#include "dimgap/net.hpp"
#include "dimgap/theory.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dimgap {

enum class SweepAxis { AmbientD, IntrinsicD };

struct DataConfig {
  int d = 100;
  int D = 2000;
  int k = 2;
  int n = 1000;
  int n_test = 1000;
  double tau = 0.0;
  TauMode tau_mode = TauMode::DOverD;
  MeanMode mean_mode = MeanMode::Gaussian;
  double xi_scale = 1.0;
  double omega_scale = 1.0;
  ImmersionMode immersion = ImmersionMode::ExactQr;
  std::vector<int> labels;  // empty: alternate
};

struct AttackConfig {
  std::vector<Norm> norms{Norm::L2};
  std::vector<Subspace> subspaces{Subspace::Full, Subspace::OnManifold, Subspace::OffManifold};
  int steps = 20;
  double step_factor = 2.5;
  LossKind loss = LossKind::Exponential;
  /// Test examples attacked per cell.
  int n_eval = 1000;
  ThresholdSearch search;
  /// Also run the u_perp theory attack on n_theory test examples.
  bool theory = false;
  int n_theory = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out;
  DataConfig data;
  TrainConfig train;
  AttackConfig attack;
  SweepAxis axis = SweepAxis::AmbientD;
  std::vector<int> sweep_values;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Write wall-clock seconds into sweep.csv instead of "-".
  bool record_runtime = false;

  void validate() const;
};

/// Parses TOML text; unknown keys raise invalid-spec.
ExperimentConfig config_from_toml(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_toml(const ExperimentConfig& c);

/// Data model of one cell with the sweep value applied.
ClusterSpec make_cluster(const DataConfig& data, std::uint64_t seed);
AmbientSpec make_ambient(const DataConfig& data);

struct SweepRow {
  int sweep_value = 0;
  std::uint64_t seed = 0;
  Norm norm = Norm::L2;
  Subspace subspace = Subspace::Full;
  double eps_star = 0;
  bool saturated = false;
  double clean_train_acc = 0;
  double clean_test_acc = 0;
  double on_manifold_prop = 0;  // NaN unless subspace == full
  double runtime_s = 0;
  std::string status = "ok";
};

struct TheoryRow {
  int sweep_value = 0;
  std::uint64_t seed = 0;
  int examples = 0;
  double normalized_flip_fraction = 0;
  double sign_flip_fraction = 0;
  int unbounded = 0;
  double median_eta = 0;
  double median_l2 = 0;       // ||eta* u_perp||
  double opposite_flip_fraction = 0;
  double eta_theory = 0;      // eta1_perp + eta2_perp, NaN when undefined
  bool delta1_vacuous = true;
  std::string status = "ok";
};

struct CellResult {
  int cell = 0;
  std::vector<SweepRow> rows;
  std::optional<TheoryRow> theory;
  double seconds = 0;
};

struct SweepResult {
  std::vector<CellResult> cells;  // cell-index order
  int resumed = 0;
};

/// Cell index -> (sweep value index, seed index): value-major.
std::uint64_t cell_seed(const ExperimentConfig& c, int cell);
CellResult run_cell(const ExperimentConfig& c, int cell);

/// Runs every cell missing from out/sweep.csv (all of them unless resume) and
/// writes sweep.csv, sweep_summary.csv, theory_attack.csv (when enabled) and
/// timing.json.
SweepResult run_sweep(const ExperimentConfig& c, bool resume, int threads);

std::string sweep_csv_header();
std::string sweep_csv(const ExperimentConfig& c, const SweepResult& r);
std::string sweep_summary_csv(const ExperimentConfig& c, const SweepResult& r);
std::string theory_attack_csv(const SweepResult& r);

struct TheoryReportParams {
  theory::RegimeParams regime;
  TauMode tau_mode = TauMode::Explicit;
  long draws = 10000;
  std::uint64_t seed = 1;
  theory::McImmersion immersion = theory::McImmersion::FixedRandom;
};

/// theory_report.json and lemma_verification.json in dir.
nlohmann::json run_theory_report(const TheoryReportParams& p, const std::filesystem::path& dir);

}  // namespace dimgap
