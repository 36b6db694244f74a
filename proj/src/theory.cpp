#include "dimgap/theory.hpp"

#include "dimgap/geometry.hpp"
#include "dimgap/rng.hpp"

#include <omp.h>

#include <cmath>
#include <limits>
#include <optional>

namespace dimgap::theory {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// exp(-num / den) with den == 0 read as a vacuous (infinite) term.
double tail(double num, double den) {
  if (den <= 0) return num > 0 ? 0.0 : kInf;
  return std::exp(-num / den);
}

}  // namespace

ConstantsReport compute_constants(const RegimeParams& in) {
  require(in.d >= 2, ErrorKind::InvalidSpec, "constants need d >= 2 (ln d > 0)");
  require(in.D >= in.d, ErrorKind::InvalidDimensions, "need D >= d");
  require(in.tau >= 0, ErrorKind::InvalidSpec, "tau must be >= 0");
  require(in.k >= 2, ErrorKind::InvalidSpec, "constants need k >= 2");

  ConstantsReport r;
  r.params = in;
  const double d = in.d;
  const double D = in.D;
  const double g = in.g();
  const double k = in.k;
  const double tau = in.tau;
  const double tau2 = tau * tau;
  const double lnd = std::log(d);
  const double sqrt2 = std::sqrt(2.0);
  const double sqd = std::sqrt(d);

  r.c2 = 1.0 + sqrt2;
  r.omega_bar = 1.0;
  const double zeta_bar_sq_formula = 1.0 + 2.0 * tau * std::sqrt(13.0 * D / 8.0) + 13.0 * D * tau2 / 8.0;
  r.zeta_bar = in.zeta_bar_override >= 0 ? in.zeta_bar_override : std::sqrt(zeta_bar_sq_formula);
  const double zb = r.zeta_bar;
  const double zb2 = zb * zb;

  r.Delta = 2.0 * r.c2 * sqd * lnd;
  r.eps_x = zb2 + 2.0 * zb * sqd * r.c2;
  r.eps_xi = zb2 + 2.0 * zb * sqrt2 * lnd;
  r.eps_x_xi = zb2 + zb * (2.0 * sqrt2 * lnd + sqd * r.c2);
  r.eps_zeta_par = (sqrt2 * lnd + r.omega_bar) * std::sqrt(13.0 * d * tau2 / 8.0);
  r.eps_zeta_perp = r.omega_bar * std::sqrt(13.0 * g * tau2 / 8.0);
  r.p = in.p;
  r.Delta_prime = r.Delta + r.eps_x;
  r.c = in.c_class;

  const double denom = d - r.Delta_prime + 1.0;
  const double numer = k * (r.p + r.Delta_prime + 1.0);
  r.c_prime = denom > 0 ? numer / denom : kInf;
  r.a2_holds = denom > 0 && numer <= 0.1 * denom;

  const double mix = (10.0 * k + 1.0) / (10.0 * k);
  r.c3 = g * tau2 / (20.0 * k) - mix * std::sqrt(13.0 * g * tau2 / 8.0);
  r.c5 = d * tau2 / (20.0 * k) - mix * std::sqrt(13.0 * d * tau2 / 8.0) * std::sqrt(2.0 * lnd + 1.0);
  r.c4 = d - r.Delta_prime +
         0.9 * (d * tau2 / 2.0 - std::sqrt(13.0 * d * tau2 / 8.0) * (sqrt2 * lnd + 1.0)) -
         k * (r.p + r.Delta_prime);
  r.c6 = 0.9 * (g * tau2 / 2.0 - std::sqrt(13.0 * g * tau2 / 8.0));
  r.a4_holds = r.c3 > 0 && r.c5 > 0;
  r.a3_holds = in.max_xi <= sqrt2 * lnd && in.max_omega <= 1.0;

  const double first = 2.0 * r.Delta_prime + r.p + 1.0;
  const double second = 3.0 * (3.0 * d + r.Delta_prime + 1.0) * (1.0 - 2.0 * r.c_prime) /
                        ((1.0 - 3.0 * r.c_prime) * r.c * k);
  r.eta_perp_defined = r.c6 > 0;
  r.eta_par_defined = r.c4 > 0;
  r.eta1_perp = r.eta_perp_defined ? first / r.c6 : kNaN;
  r.eta2_perp = r.eta_perp_defined ? second / r.c6 : kNaN;
  r.eta1_par = r.eta_par_defined ? (10.0 / 9.0) * first / r.c4 : kNaN;
  r.eta2_par = r.eta_par_defined ? (10.0 / 9.0) * second / r.c4 : kNaN;
  return r;
}

BoundPrediction predict_bounds(const ConstantsReport& c) {
  const auto& in = c.params;
  const double d = in.d;
  const double D = in.D;
  const double g = in.g();
  const double k = in.k;
  const double tau = in.tau;
  const double tau2 = tau * tau;

  BoundPrediction b;
  const double eta_perp = c.eta1_perp + c.eta2_perp;
  const double eta_par = c.eta1_par + c.eta2_par;
  b.perp_defined = c.eta_perp_defined && std::isfinite(eta_perp) && eta_perp >= 0;
  b.par_defined = c.eta_par_defined && std::isfinite(eta_par) && eta_par >= 0;

  const double u_perp_l2 = std::sqrt(k * 13.0 * g * tau2 / 8.0 + k * g * tau2 / 20.0);
  const double u_perp_linf = 3.0 * k * tau * std::sqrt(2.0 * std::log(2.0 * g));
  const double u_par_l2 = std::sqrt(k * d * (6.0 / 5.0 + 69.0 * tau2 / 40.0) + k / 10.0);
  const double u_par_linf = k * std::sqrt(d) + 3.0 * k * tau * std::sqrt(2.0 * std::log(2.0 * d));

  b.z_perp_l2 = b.perp_defined ? eta_perp * u_perp_l2 : kNaN;
  b.z_perp_linf = b.perp_defined ? eta_perp * u_perp_linf : kNaN;
  b.z_par_l2 = b.par_defined ? eta_par * u_par_l2 : kNaN;
  b.z_par_linf = b.par_defined ? eta_par * u_par_linf : kNaN;

  const double cc = c.c;
  b.z_perp_l2_rate = d / (cc * std::sqrt(k * g * tau2));
  b.z_perp_linf_rate = d * std::sqrt(2.0 * std::log(2.0 * g)) / (cc * g * tau);
  b.z_par_l2_rate = std::sqrt(d / (cc * cc * k * (2.0 + tau2)));
  b.z_par_linf_rate = (std::sqrt(d) + tau * std::sqrt(2.0 * std::log(2.0 * d))) / (cc * (2.0 + tau2));

  b.delta1 = 4.0 * k * (k - 1.0) * tail(c.c3, std::sqrt(4.0 * g) * tau2) +
             2.0 * k * std::exp(-g / 16.0) + 2.0 * k * std::exp(-D / 16.0) +
             k * std::exp(-4.0 * std::log(2.0 * g));
  b.delta2 = 4.0 * k * (k - 1.0) * tail(c.c5, std::sqrt(4.0 * d) * tau2) +
             2.0 * k * std::exp(-d / 16.0) + 2.0 * k * std::exp(-D / 16.0) +
             k * std::exp(-4.0 * std::log(2.0 * d)) +
             2.0 * k * tail(c.c4 * c.c4, 20.0 * tau2 * d * k);
  b.delta1_vacuous = !(b.delta1 < 1.0);
  b.delta2_vacuous = !(b.delta2 < 1.0);
  b.assumptions_hold = c.a2_holds && c.a4_holds;
  return b;
}

Sandwich rate_sandwich(const ConstantsReport& c) {
  const double d = c.params.d;
  const double g = c.params.g();
  const double tau2 = c.params.tau * c.params.tau;
  Sandwich s;
  s.c6_lo = (18.0 / 21.0) * g * tau2 / 2.0;
  s.c6_hi = 0.9 * g * tau2 / 2.0;
  s.c4_lo = (18.0 / 21.0) * d * (1.0 + tau2 / 2.0);
  s.c4_hi = d * (1.0 + 9.0 * tau2 / 20.0);
  s.c6_inside = s.c6_lo <= c.c6 && c.c6 <= s.c6_hi;
  s.c4_inside = s.c4_lo <= c.c4 && c.c4 <= s.c4_hi;
  return s;
}

bool LemmaVerification::all_pass() const {
  for (const auto& e : events)
    if (e.applicable && !e.passes) return false;
  return true;
}

namespace {

struct EventCounts {
  long hits[7] = {0, 0, 0, 0, 0, 0, 0};
};

// One draw of k shifts; evaluates E1..E7 jointly over q in [k].
struct DrawEvaluator {
  int d, D, k;
  double tau;
  const SubspaceProjectors* proj;  // null for the axis-aligned layout
  double omega_bar = 1.0;

  void operator()(Rng& rng, EventCounts& counts) const {
    const int g = D - d;
    const double tau2 = tau * tau;
    std::vector<Vector> on(k), off(k);
    std::vector<double> norm2(k);
    for (int q = 0; q < k; ++q) {
      const Vector zeta = rng.normal_vector(D, tau);
      norm2[q] = zeta.squaredNorm();
      if (proj) {
        on[q] = proj->on(zeta);
        off[q] = zeta - on[q];
      } else {
        on[q] = zeta.head(d);
        off[q] = zeta.tail(g);
      }
    }

    bool e[7] = {true, true, true, true, true, true, true};
    const double lnd = std::log(static_cast<double>(d));
    const double linf_off = 3.0 * tau * std::sqrt(2.0 * std::log(2.0 * g));
    const double linf_on = 3.0 * tau * std::sqrt(2.0 * std::log(2.0 * d));
    double max_pair_off = 0, max_pair_on = 0;
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) {
        max_pair_off = std::max(max_pair_off, std::abs(off[i].dot(off[j])));
        max_pair_on = std::max(max_pair_on, std::abs(on[i].dot(on[j])));
      }

    for (int q = 0; q < k; ++q) {
      const double qp = off[q].squaredNorm();
      const double qo = on[q].squaredNorm();
      e[0] = e[0] && D * tau2 / 2.0 < norm2[q] && norm2[q] < 13.0 * D * tau2 / 8.0;
      e[1] = e[1] && g * tau2 / 2.0 < qp && qp < 13.0 * g * tau2 / 8.0;
      e[2] = e[2] && d * tau2 / 2.0 < qo && qo < 13.0 * d * tau2 / 8.0;
      // Upper-bound events compare with <= so that tau == 0 counts as satisfied.
      const double off_inf = off[q].size() ? off[q].cwiseAbs().maxCoeff() : 0.0;
      const double on_inf = on[q].size() ? on[q].cwiseAbs().maxCoeff() : 0.0;
      e[3] = e[3] && (tau > 0 ? off_inf < linf_off : off_inf <= linf_off);
      e[4] = e[4] && (tau > 0 ? on_inf < linf_on : on_inf <= linf_on);
      const double eps_perp = omega_bar * std::sqrt(qp);
      const double eps_par = (std::sqrt(2.0) * lnd + omega_bar) * std::sqrt(qo);
      e[5] = e[5] && k * (max_pair_off + eps_perp) < 0.1 * (qp - eps_perp);
      e[6] = e[6] && k * (max_pair_on + eps_par) < 0.1 * (qo - eps_par);
    }
    for (int t = 0; t < 7; ++t)
      if (e[t]) ++counts.hits[t];
  }
};

}  // namespace

LemmaVerification monte_carlo_verify(int d, int D, double tau, int k, long draws,
                                     std::uint64_t seed, const McOptions& options) {
  require(draws >= 100, ErrorKind::InvalidSpec, "monte_carlo_verify needs draws >= 100");
  require(d >= 2 && D > d, ErrorKind::InvalidDimensions, "need 2 <= d < D");
  require(k >= 2, ErrorKind::InvalidSpec, "need k >= 2");
  require(tau >= 0, ErrorKind::InvalidSpec, "tau must be >= 0");
  require(options.chunk >= 1, ErrorKind::InvalidSpec, "chunk must be >= 1");

  const long chunks = (draws + options.chunk - 1) / options.chunk;
  std::vector<EventCounts> per_chunk(static_cast<std::size_t>(chunks));

  std::optional<SubspaceProjectors> fixed;
  if (options.immersion == McImmersion::FixedRandom)
    fixed.emplace(sample_orthonormal_immersion(d, D, ImmersionMode::ExactQr,
                                               derive_seed(seed, 0, "mc-immersion")));

  auto run_chunk = [&](long c) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c), "mc-draws"));
    std::optional<SubspaceProjectors> local;
    const SubspaceProjectors* proj = nullptr;
    if (options.immersion == McImmersion::FixedRandom) {
      proj = &*fixed;
    } else if (options.immersion == McImmersion::PerChunk) {
      local.emplace(sample_orthonormal_immersion(
          d, D, ImmersionMode::ExactQr, derive_seed(seed, static_cast<std::uint64_t>(c), "mc-immersion")));
      proj = &*local;
    }
    DrawEvaluator eval{d, D, k, tau, proj};
    const long begin = c * options.chunk;
    const long end = std::min(draws, begin + options.chunk);
    for (long i = begin; i < end; ++i) eval(rng, per_chunk[static_cast<std::size_t>(c)]);
  };

  if (options.parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    for (long c = 0; c < chunks; ++c) run_chunk(c);
  }

  long totals[7] = {0, 0, 0, 0, 0, 0, 0};
  for (const auto& pc : per_chunk)
    for (int t = 0; t < 7; ++t) totals[t] += pc.hits[t];

  RegimeParams rp;
  rp.d = d;
  rp.D = D;
  rp.tau = tau;
  rp.k = k;
  rp.p = options.p;
  const auto constants = compute_constants(rp);
  const auto bounds = predict_bounds(constants);

  const double g = D - d;
  const double kk = k;
  LemmaVerification out;
  out.d = d;
  out.D = D;
  out.k = k;
  out.tau = tau;
  out.draws = draws;
  out.seed = seed;
  out.slack = 2.0 / std::sqrt(static_cast<double>(draws));

  const bool degenerate = tau == 0.0;
  struct Spec {
    const char* name;
    const char* description;
    double bound;
    bool applicable;
  };
  const Spec specs[7] = {
      {"E1", "tau*sqrt(D/2) < ||zeta_q|| < tau*sqrt(13D/8) for all q",
       1.0 - 2.0 * kk * std::exp(-D / 16.0), !degenerate},
      {"E2", "g/2 < zeta_q^T P zeta_q / tau^2 < 13g/8 for all q",
       1.0 - 2.0 * kk * std::exp(-g / 16.0), !degenerate},
      {"E3", "d/2 < zeta_q^T Po zeta_q / tau^2 < 13d/8 for all q",
       1.0 - 2.0 * kk * std::exp(-d / 16.0), !degenerate},
      {"E4", "||P zeta_q||_inf < 3 tau sqrt(2 ln 2g) for all q",
       1.0 - kk * std::exp(-4.0 * std::log(2.0 * g)), true},
      {"E5", "||Po zeta_q||_inf < 3 tau sqrt(2 ln 2d) for all q",
       1.0 - kk * std::exp(-4.0 * std::log(2.0 * d)), true},
      {"E6", "k(max|<zeta_i,zeta_j>_P| + eps_perp) < (zeta_q^T P zeta_q - eps_perp)/10 for all q",
       1.0 - bounds.delta1, !degenerate},
      {"E7", "k(max|<zeta_i,zeta_j>_Po| + eps_par) < (zeta_q^T Po zeta_q - eps_par)/10 for all q",
       1.0 - bounds.delta2, !degenerate},
  };
  for (int t = 0; t < 7; ++t) {
    EventFrequency ev;
    ev.name = specs[t].name;
    ev.description = specs[t].description;
    ev.frequency = static_cast<double>(totals[t]) / static_cast<double>(draws);
    ev.lower_bound = specs[t].bound;
    ev.applicable = specs[t].applicable;
    ev.passes = ev.frequency >= ev.lower_bound - out.slack;
    out.events.push_back(std::move(ev));
  }
  return out;
}

ValidRegime pairwise_event_regime() { return {200000, 400000, 1.0, 2}; }

namespace {

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const ConstantsReport& c) {
  const auto& p = c.params;
  return {
      {"inputs", {{"d", p.d}, {"D", p.D}, {"g", p.g()}, {"tau", p.tau}, {"k", p.k}, {"p", p.p},
                  {"c_class", p.c_class}, {"max_xi", p.max_xi}, {"max_omega", p.max_omega}}},
      {"c2", finite_or_null(c.c2)},
      {"zeta_bar", finite_or_null(c.zeta_bar)},
      {"omega_bar", finite_or_null(c.omega_bar)},
      {"Delta", finite_or_null(c.Delta)},
      {"eps_x", finite_or_null(c.eps_x)},
      {"eps_xi", finite_or_null(c.eps_xi)},
      {"eps_x_xi", finite_or_null(c.eps_x_xi)},
      {"eps_zeta_par", finite_or_null(c.eps_zeta_par)},
      {"eps_zeta_perp", finite_or_null(c.eps_zeta_perp)},
      {"p", finite_or_null(c.p)},
      {"Delta_prime", finite_or_null(c.Delta_prime)},
      {"c_prime", finite_or_null(c.c_prime)},
      {"c3", finite_or_null(c.c3)},
      {"c4", finite_or_null(c.c4)},
      {"c5", finite_or_null(c.c5)},
      {"c6", finite_or_null(c.c6)},
      {"c", finite_or_null(c.c)},
      {"eta1_perp", finite_or_null(c.eta1_perp)},
      {"eta2_perp", finite_or_null(c.eta2_perp)},
      {"eta1_par", finite_or_null(c.eta1_par)},
      {"eta2_par", finite_or_null(c.eta2_par)},
      {"eta_perp_defined", c.eta_perp_defined},
      {"eta_par_defined", c.eta_par_defined},
      {"a2_holds", c.a2_holds},
      {"a3_holds", c.a3_holds},
      {"a4_holds", c.a4_holds},
  };
}

nlohmann::json to_json(const BoundPrediction& b) {
  return {
      {"z_perp_l2", finite_or_null(b.z_perp_l2)},
      {"z_perp_linf", finite_or_null(b.z_perp_linf)},
      {"z_par_l2", finite_or_null(b.z_par_l2)},
      {"z_par_linf", finite_or_null(b.z_par_linf)},
      {"asymptotic",
       {{"z_perp_l2", finite_or_null(b.z_perp_l2_rate)},
        {"z_perp_linf", finite_or_null(b.z_perp_linf_rate)},
        {"z_par_l2", finite_or_null(b.z_par_l2_rate)},
        {"z_par_linf", finite_or_null(b.z_par_linf_rate)}}},
      {"delta1", finite_or_null(b.delta1)},
      {"delta2", finite_or_null(b.delta2)},
      {"delta1_vacuous", b.delta1_vacuous},
      {"delta2_vacuous", b.delta2_vacuous},
      {"perp_defined", b.perp_defined},
      {"par_defined", b.par_defined},
      {"assumptions_hold", finite_or_null(b.assumptions_hold)},
  };
}

nlohmann::json to_json(const LemmaVerification& v) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : v.events)
    events.push_back({{"name", e.name},
                      {"description", e.description},
                      {"frequency", e.frequency},
                      {"lower_bound", e.lower_bound},
                      {"applicable", e.applicable},
                      {"passes", e.passes}});
  return {{"d", v.d},         {"D", v.D},       {"k", v.k},         {"tau", v.tau},
          {"draws", v.draws}, {"seed", v.seed}, {"slack", v.slack}, {"events", events},
          {"all_pass", v.all_pass()}};
}

}  // namespace dimgap::theory
