#pragma once

#include "dimgap/common.hpp"
#include "dimgap/geometry.hpp"
#include "dimgap/net.hpp"
#include "dimgap/theory.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dimgap {

struct DataModel;

enum class Norm { L2, Linf };
enum class Subspace { Full, OnManifold, OffManifold };

std::string_view to_string(Norm n);
std::string_view to_string(Subspace s);
Norm norm_from_string(std::string_view s);
Subspace subspace_from_string(std::string_view s);

struct AttackSpec {
  Norm norm = Norm::L2;
  double epsilon = 0.0;
  int steps = 20;
  /// Step size is step_factor * epsilon / steps unless step_size is set.
  double step_factor = 2.5;
  std::optional<double> step_size;
  Subspace subspace = Subspace::Full;
  LossKind loss = LossKind::Exponential;
  /// Uniform start inside the ball (projected onto the subspace) instead of z = 0.
  bool random_start = false;
  std::uint64_t seed = 0;

  double step() const { return step_size ? *step_size : step_factor * epsilon / steps; }
  void validate() const;
};

struct AttackOutcome {
  Matrix Z;  // m x D perturbations
  std::vector<char> success;  // correct before, wrong after
  std::vector<char> correct_after;
  Vector l2;
  Vector linf;
  double clean_accuracy = 0;
  double robust_accuracy = 0;
};

/// Projected gradient ascent on the training loss l(y N(x + z)). The step
/// direction is taken from -y grad_x N, which has the sign of the loss gradient
/// for both losses.
AttackOutcome pgd_attack(const NetParams& params, const Matrix& X, const Vector& y,
                         const AttackSpec& spec, const SubspaceProjectors* proj,
                         Exec exec = Exec::Parallel);

double robust_accuracy(const NetParams& params, const Matrix& X, const Vector& y,
                       const AttackSpec& spec, const SubspaceProjectors* proj,
                       Exec exec = Exec::Parallel);

struct ThresholdSearch {
  /// Explicit strictly increasing grid; when empty the geometric search runs.
  std::vector<double> grid;
  /// Geometric search: bracket by doubling from start, then walk a
  /// factor-spaced grid inside the bracket, then bisect.
  double start = 0.1;
  double factor = 1.25;
  double max_epsilon = 1e4;
  /// Bisect until (hi - lo) / hi <= refine_rel; 0 disables.
  double refine_rel = 0.05;
  double target = 0.10;
  void validate() const;
};

struct ThresholdResult {
  double epsilon_star = 0;  // +inf when saturated
  bool saturated = false;
  std::vector<std::pair<double, double>> curve;  // (epsilon, robust accuracy), sorted by epsilon
  std::vector<std::string> trace;
};

ThresholdResult minimal_strength_threshold(const std::function<double(double)>& robust_acc,
                                           const ThresholdSearch& search);

ThresholdResult minimal_strength_threshold(const NetParams& params, const Matrix& X,
                                           const Vector& y, const AttackSpec& spec_template,
                                           const SubspaceProjectors* proj,
                                           const ThresholdSearch& search,
                                           Exec exec = Exec::Parallel);

struct TheoryDirections {
  Vector u_perp;
  Vector u_par;
  double c = 0;
  theory::ConstantsReport constants;
};

TheoryDirections build_theory_directions(const DataModel& model, const SubspaceProjectors& proj);

struct TheoryAttackOptions {
  /// Output multiplier; 1 / min_i y_i N(x_i) gives the margin-normalized net.
  double output_scale = 1.0;
  /// Auto search: doubling from eta_start, bisection to rel_tol.
  double eta_start = 0;   // 0: 1e-3 / ||u||^2
  double eta_max = 0;     // 0: 1e6 * eta_reference
  double eta_reference = 0;  // 0: 1 / ||u||^2
  double rel_tol = 0.01;
  /// +1 moves x - y eta u; -1 the opposite sign.
  int sign = 1;
};

struct TheoryAttackResult {
  double eta = 0;
  bool normalized_flip = false;  // y * scale * N(x') <= -1
  bool sign_flip = false;        // y * N(x') <= 0
  bool unbounded = false;
  double output_before = 0;  // scaled
  double output_after = 0;   // scaled
  double l2 = 0;
  double linf = 0;
};

/// eta == nullopt runs the auto search for the smallest flipping eta.
TheoryAttackResult theory_attack(const NetParams& params, const Vector& x, double y, const Vector& u,
                                 std::optional<double> eta, const TheoryAttackOptions& options = {});

/// min_i y_i N(x_i); the margin-normalizing scale is its inverse.
double min_margin(const NetParams& params, const Matrix& X, const Vector& y);

double on_manifold_proportion(const Vector& z, const SubspaceProjectors& proj);

/// example_id, subspace, norm, epsilon, success, l2_norm, linf_norm, on_manifold_proportion
std::string attack_result_csv_header();
std::string attack_result_csv_rows(const AttackOutcome& out, const AttackSpec& spec,
                                   const SubspaceProjectors* proj);

}  // namespace dimgap
