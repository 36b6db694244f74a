#pragma once

#include "dimgap/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace dimgap::theory {

/// Regime parameters the closed-form constants depend on.
struct RegimeParams {
  std::int64_t d = 100;
  std::int64_t D = 2000;
  double tau = 0.0;
  int k = 2;
  /// max_{i != j} |<mu_i, mu_j>|
  double p = 0.0;
  /// k^-1 min(|Q+|, |Q-|)
  double c_class = 0.5;
  /// Realized noise norms, echoed and used for the (A3) check only.
  double max_xi = 0.0;
  double max_omega = 0.0;
  /// Overrides the probabilistic zeta-bar (realized max ||zeta + omega||).
  double zeta_bar_override = -1.0;

  std::int64_t g() const { return D - d; }
};

struct ConstantsReport {
  RegimeParams params;

  double c2 = 0;
  double zeta_bar = 0;
  double omega_bar = 1.0;
  double Delta = 0;
  double eps_x = 0;
  double eps_xi = 0;
  double eps_x_xi = 0;
  /// Upper bounds of (sqrt2 ln d + omega_bar)||Po zeta|| and omega_bar ||P zeta||
  /// on the high-probability events ||Po zeta||^2 < 13 d tau^2 / 8, ||P zeta||^2 < 13 g tau^2 / 8.
  double eps_zeta_par = 0;
  double eps_zeta_perp = 0;
  double p = 0;
  double Delta_prime = 0;
  double c_prime = 0;
  double c3 = 0;
  double c4 = 0;
  double c5 = 0;
  double c6 = 0;
  double c = 0;
  double eta1_perp = 0;
  double eta2_perp = 0;
  double eta1_par = 0;
  double eta2_par = 0;

  bool eta_perp_defined = false;  // c6 > 0
  bool eta_par_defined = false;   // c4 > 0
  bool a2_holds = false;
  bool a3_holds = false;
  bool a4_holds = false;  // c3 > 0 and c5 > 0
};

ConstantsReport compute_constants(const RegimeParams& params);

struct BoundPrediction {
  double z_perp_l2 = 0;
  double z_perp_linf = 0;
  double z_par_l2 = 0;
  double z_par_linf = 0;
  /// Asymptotic shapes with unit constants.
  double z_perp_l2_rate = 0;
  double z_perp_linf_rate = 0;
  double z_par_l2_rate = 0;
  double z_par_linf_rate = 0;
  double delta1 = 0;
  double delta2 = 0;
  bool perp_defined = false;
  bool par_defined = false;
  bool delta1_vacuous = true;
  bool delta2_vacuous = true;
  bool assumptions_hold = false;
};

BoundPrediction predict_bounds(const ConstantsReport& constants);

/// Rate sandwiches for c4 and c6. Only meaningful where the premises hold.
struct Sandwich {
  double c6_lo, c6_hi, c4_lo, c4_hi;
  bool c6_inside, c4_inside;
};
Sandwich rate_sandwich(const ConstantsReport& constants);

struct EventFrequency {
  std::string name;
  std::string description;
  double frequency = 0;
  double lower_bound = 0;
  /// False when the event is degenerate for the regime (tau == 0 makes the
  /// two-sided and ratio events meaningless).
  bool applicable = true;
  bool passes = false;  // frequency >= lower_bound - slack
};

enum class McImmersion {
  /// One exact-qr immersion for the whole run.
  FixedRandom,
  /// First d axes; equal in law to any orthonormal immersion for isotropic shifts.
  AxisAligned,
  /// A fresh exact-qr immersion per chunk of draws.
  PerChunk,
};

struct McOptions {
  McImmersion immersion = McImmersion::FixedRandom;
  /// Mean-overlap value fed into delta2 through c4.
  double p = 0.0;
  /// Chunk size of draws sharing one derived seed; fixed so results do not
  /// depend on the thread count.
  int chunk = 64;
  bool parallel = true;
};

struct LemmaVerification {
  int d = 0, D = 0, k = 0;
  double tau = 0;
  long draws = 0;
  std::uint64_t seed = 0;
  double slack = 0;  // 2 / sqrt(draws)
  std::vector<EventFrequency> events;
  bool all_pass() const;
};

LemmaVerification monte_carlo_verify(int d, int D, double tau, int k, long draws,
                                     std::uint64_t seed, const McOptions& options = {});

/// Regime where c3, c5 > 0 so the pairwise events E6/E7 carry a non-vacuous bound.
struct ValidRegime {
  int d, D;
  double tau;
  int k;
};
ValidRegime pairwise_event_regime();

nlohmann::json to_json(const ConstantsReport& c);
nlohmann::json to_json(const BoundPrediction& b);
nlohmann::json to_json(const LemmaVerification& v);

}  // namespace dimgap::theory
