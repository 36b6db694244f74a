#include "dimgap/attacks.hpp"

#include "dimgap/datagen.hpp"
#include "dimgap/io.hpp"
#include "dimgap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace dimgap {

std::string_view to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

std::string_view to_string(Subspace s) {
  switch (s) {
    case Subspace::Full: return "full";
    case Subspace::OnManifold: return "on-manifold";
    case Subspace::OffManifold: return "off-manifold";
  }
  return "full";
}

Norm norm_from_string(std::string_view s) {
  if (s == "l2") return Norm::L2;
  if (s == "linf") return Norm::Linf;
  throw Error(ErrorKind::InvalidSpec, "unknown norm '" + std::string(s) + "'");
}

Subspace subspace_from_string(std::string_view s) {
  if (s == "full") return Subspace::Full;
  if (s == "on-manifold" || s == "on") return Subspace::OnManifold;
  if (s == "off-manifold" || s == "off") return Subspace::OffManifold;
  throw Error(ErrorKind::InvalidSpec, "unknown subspace '" + std::string(s) + "'");
}

void AttackSpec::validate() const {
  require(epsilon >= 0 && std::isfinite(epsilon), ErrorKind::InvalidSpec, "epsilon must be finite and >= 0");
  require(steps >= 1, ErrorKind::InvalidSpec, "steps must be >= 1");
  require(!step_size || *step_size >= 0, ErrorKind::InvalidSpec, "step_size must be >= 0");
}

namespace {

void project_rows(Matrix& G, Subspace s, const SubspaceProjectors* proj) {
  if (s == Subspace::Full) return;
  G = s == Subspace::OnManifold ? proj->on_rows(G) : proj->off_rows(G);
}

void ball_rows(Matrix& Z, Norm norm, double eps) {
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    if (norm == Norm::Linf) {
      Z.row(i) = Z.row(i).cwiseMax(-eps).cwiseMin(eps);
    } else {
      const double n = Z.row(i).norm();
      if (n > eps) Z.row(i) *= eps / n;
    }
  }
}

// After the subspace projection the l-inf norm can exceed the budget again.
void rescale_rows(Matrix& Z, Norm norm, double eps) {
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double n = norm == Norm::Linf ? Z.row(i).cwiseAbs().maxCoeff() : Z.row(i).norm();
    if (n > eps) Z.row(i) *= eps / n;
  }
}

void direction_rows(Matrix& G, Norm norm) {
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    if (norm == Norm::Linf) {
      G.row(i) = G.row(i).unaryExpr([](double t) { return t > 0 ? 1.0 : (t < 0 ? -1.0 : 0.0); });
    } else {
      const double n = G.row(i).norm();
      if (n > 0) G.row(i) /= n;
    }
  }
}

// PGD for one block of examples; Serial evaluates per-example gradients with
// plain loops, Parallel with one GEMM per step.
Matrix pgd_block(const NetParams& params, const Matrix& X, const Vector& y, const AttackSpec& spec,
                 const SubspaceProjectors* proj, Exec exec, std::uint64_t block_seed) {
  const Eigen::Index m = X.rows();
  const Eigen::Index D = X.cols();
  Matrix Z = Matrix::Zero(m, D);
  if (spec.epsilon == 0) return Z;
  if (spec.random_start) {
    Rng rng(block_seed);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index c = 0; c < D; ++c) Z(i, c) = spec.epsilon * (2.0 * rng.uniform() - 1.0);
    project_rows(Z, spec.subspace, proj);
    rescale_rows(Z, spec.norm, spec.epsilon);
  }
  const double step = spec.step();
  for (int t = 0; t < spec.steps; ++t) {
    Matrix G = input_gradients(params, X + Z, exec);
    for (Eigen::Index i = 0; i < m; ++i) G.row(i) *= -y[i];
    project_rows(G, spec.subspace, proj);
    direction_rows(G, spec.norm);
    Z += step * G;
    ball_rows(Z, spec.norm, spec.epsilon);
    project_rows(Z, spec.subspace, proj);
    rescale_rows(Z, spec.norm, spec.epsilon);
  }
  return Z;
}

}  // namespace

AttackOutcome pgd_attack(const NetParams& params, const Matrix& X, const Vector& y,
                         const AttackSpec& spec, const SubspaceProjectors* proj, Exec exec) {
  spec.validate();
  require(X.rows() >= 1, ErrorKind::UndefinedInput, "attack batch is empty");
  require(y.size() == X.rows(), ErrorKind::InvalidDimensions, "labels length != batch size");
  require(X.cols() == params.D(), ErrorKind::InvalidDimensions, "batch dimension != D");
  require(spec.subspace == Subspace::Full || proj != nullptr, ErrorKind::InvalidSpec,
          "subspace attacks need projectors");
  require(proj == nullptr || proj->D() == params.D(), ErrorKind::InvalidDimensions,
          "projectors disagree on D");

  const Eigen::Index m = X.rows();
  AttackOutcome out;
  out.Z.resize(m, X.cols());
  const Eigen::Index chunks = (m + kChunk - 1) / kChunk;
  if (exec == Exec::Serial) {
    for (Eigen::Index i = 0; i < m; ++i)
      out.Z.row(i) = pgd_block(params, X.middleRows(i, 1), y.segment(i, 1), spec, proj, Exec::Serial,
                               derive_seed(spec.seed, static_cast<std::uint64_t>(i / kChunk), "pgd-start"));
  } else {
#pragma omp parallel for schedule(dynamic, 1)
    for (Eigen::Index c = 0; c < chunks; ++c) {
      const Eigen::Index r0 = c * kChunk;
      const Eigen::Index len = std::min(kChunk, m - r0);
      out.Z.middleRows(r0, len) =
          pgd_block(params, X.middleRows(r0, len), y.segment(r0, len), spec, proj, Exec::Parallel,
                    derive_seed(spec.seed, static_cast<std::uint64_t>(c), "pgd-start"));
    }
  }

  const Vector before = forward_batch(params, X, exec);
  const Vector after = forward_batch(params, X + out.Z, exec);
  out.success.resize(m);
  out.correct_after.resize(m);
  out.l2.resize(m);
  out.linf.resize(m);
  long clean = 0, robust = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const bool ok_before = y[i] * before[i] > 0;
    const bool ok_after = y[i] * after[i] > 0;
    clean += ok_before;
    robust += ok_after;
    out.correct_after[i] = ok_after;
    out.success[i] = ok_before && !ok_after;
    out.l2[i] = out.Z.row(i).norm();
    out.linf[i] = out.Z.row(i).cwiseAbs().maxCoeff();
  }
  out.clean_accuracy = static_cast<double>(clean) / static_cast<double>(m);
  out.robust_accuracy = static_cast<double>(robust) / static_cast<double>(m);
  return out;
}

double robust_accuracy(const NetParams& params, const Matrix& X, const Vector& y,
                       const AttackSpec& spec, const SubspaceProjectors* proj, Exec exec) {
  return pgd_attack(params, X, y, spec, proj, exec).robust_accuracy;
}

void ThresholdSearch::validate() const {
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] > grid[i - 1], ErrorKind::InvalidSpec, "threshold grid must be strictly increasing");
  require(grid.empty() || grid.front() >= 0, ErrorKind::InvalidSpec, "grid values must be >= 0");
  require(grid.empty() ? (start > 0 && factor > 1 && max_epsilon >= start) : true, ErrorKind::InvalidSpec,
          "geometric search needs start > 0, factor > 1, max_epsilon >= start");
  require(target >= 0 && target <= 1, ErrorKind::InvalidSpec, "target must be in [0, 1]");
  require(refine_rel >= 0 && refine_rel < 1, ErrorKind::InvalidSpec, "refine_rel must be in [0, 1)");
}

ThresholdResult minimal_strength_threshold(const std::function<double(double)>& robust_acc,
                                           const ThresholdSearch& search) {
  search.validate();
  ThresholdResult res;
  std::map<double, double> seen;
  auto eval = [&](double eps, const char* phase) {
    auto it = seen.find(eps);
    if (it != seen.end()) return it->second;
    const double acc = robust_acc(eps);
    seen.emplace(eps, acc);
    res.trace.push_back(std::string(phase) + " eps=" + fmt17(eps) + " acc=" + fmt17(acc));
    return acc;
  };
  auto finish = [&](double star, bool saturated) {
    res.epsilon_star = saturated ? std::numeric_limits<double>::infinity() : star;
    res.saturated = saturated;
    res.curve.assign(seen.begin(), seen.end());
    return res;
  };

  double lo = -1;  // largest tested eps above target (-1: none)
  double hi = -1;  // smallest tested eps at or below target
  if (!search.grid.empty()) {
    for (double e : search.grid) {
      if (eval(e, "grid") <= search.target) {
        hi = e;
        break;
      }
      lo = e;
    }
    if (hi < 0) return finish(0, true);
    if (lo < 0) return finish(hi, false);
  } else {
    double e = search.start;
    if (eval(e, "bracket") <= search.target) {
      hi = e;
      while (true) {
        const double down = hi / 2;
        if (down < search.start * 1e-6) return finish(hi, false);
        if (eval(down, "bracket") > search.target) {
          lo = down;
          break;
        }
        hi = down;
      }
    } else {
      lo = e;
      while (true) {
        e = lo * 2;
        if (e > search.max_epsilon) {
          if (lo < search.max_epsilon && eval(search.max_epsilon, "bracket") <= search.target) {
            hi = search.max_epsilon;
            break;
          }
          return finish(0, true);
        }
        if (eval(e, "bracket") <= search.target) {
          hi = e;
          break;
        }
        lo = e;
      }
    }
    for (double g = lo * search.factor; g < hi * (1 - 1e-12); g *= search.factor) {
      if (eval(g, "grid") <= search.target) {
        hi = g;
        break;
      }
      lo = g;
    }
  }
  while (search.refine_rel > 0 && (hi - lo) / hi > search.refine_rel) {
    const double mid = 0.5 * (lo + hi);
    if (eval(mid, "bisect") <= search.target)
      hi = mid;
    else
      lo = mid;
  }
  return finish(hi, false);
}

ThresholdResult minimal_strength_threshold(const NetParams& params, const Matrix& X,
                                           const Vector& y, const AttackSpec& spec_template,
                                           const SubspaceProjectors* proj,
                                           const ThresholdSearch& search, Exec exec) {
  return minimal_strength_threshold(
      [&](double eps) {
        AttackSpec spec = spec_template;
        spec.epsilon = eps;
        return robust_accuracy(params, X, y, spec, proj, exec);
      },
      search);
}

TheoryDirections build_theory_directions(const DataModel& model, const SubspaceProjectors& proj) {
  require(proj.D() == model.D() && proj.d() == model.d(), ErrorKind::InvalidDimensions,
          "projectors disagree with the data model");
  const auto& labels = model.cluster.labels;
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const auto neg = static_cast<long>(labels.size()) - pos;
  require(pos > 0 && neg > 0, ErrorKind::NoOpposingCluster, "labels need both signs");

  TheoryDirections t;
  t.u_perp = Vector::Zero(model.D());
  t.u_par = Vector::Zero(model.D());
  for (int q = 0; q < model.k(); ++q) {
    const Vector on = proj.on(model.zetas[q]);
    const Vector off = model.zetas[q] - on;
    t.u_perp += labels[q] * off;
    t.u_par += labels[q] * (model.embedded_mean(q) + on);
  }
  t.c = static_cast<double>(std::min<long>(pos, neg)) / model.k();
  if (model.d() >= 2) {
    theory::RegimeParams rp;
    rp.d = model.d();
    rp.D = model.D();
    rp.tau = model.tau;
    rp.k = model.k();
    rp.p = model.cluster.p();
    rp.c_class = t.c;
    t.constants = theory::compute_constants(rp);
  }
  return t;
}

double min_margin(const NetParams& params, const Matrix& X, const Vector& y) {
  const Vector out = forward_batch(params, X);
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < out.size(); ++i) m = std::min(m, y[i] * out[i]);
  return m;
}

TheoryAttackResult theory_attack(const NetParams& params, const Vector& x, double y, const Vector& u,
                                 std::optional<double> eta, const TheoryAttackOptions& o) {
  require(u.size() == x.size(), ErrorKind::InvalidDimensions, "direction length != input length");
  require(y == 1.0 || y == -1.0, ErrorKind::InvalidSpec, "label must be +1 or -1");
  const double dir = -static_cast<double>(o.sign) * y;
  auto out_at = [&](double e) { return o.output_scale * forward(params, x + (dir * e) * u); };
  auto flipped = [&](double e) { return y * out_at(e) <= -1.0; };

  TheoryAttackResult r;
  r.output_before = out_at(0);
  auto fill = [&](double e) {
    r.eta = e;
    r.output_after = out_at(e);
    r.normalized_flip = y * r.output_after <= -1.0;
    r.sign_flip = y * r.output_after <= 0.0;
    r.l2 = e * u.norm();
    r.linf = e * (u.size() ? u.cwiseAbs().maxCoeff() : 0.0);
    return r;
  };
  if (eta) return fill(*eta);

  const double un2 = u.squaredNorm();
  if (flipped(0)) return fill(0);
  if (un2 == 0) {
    r = fill(0);
    r.unbounded = true;
    return r;
  }
  const double ref = o.eta_reference > 0 ? o.eta_reference : 1.0 / un2;
  const double eta_max = o.eta_max > 0 ? o.eta_max : 1e6 * ref;
  double hi = o.eta_start > 0 ? o.eta_start : 1e-3 / un2;
  double lo = 0;
  while (!flipped(hi)) {
    lo = hi;
    hi *= 2;
    if (hi > eta_max) {
      r = fill(eta_max);
      r.unbounded = true;
      return r;
    }
  }
  while ((hi - lo) / hi > o.rel_tol) {
    const double mid = 0.5 * (lo + hi);
    if (flipped(mid))
      hi = mid;
    else
      lo = mid;
  }
  return fill(hi);
}

double on_manifold_proportion(const Vector& z, const SubspaceProjectors& proj) {
  const double n = z.norm();
  require(n > 0, ErrorKind::UndefinedInput, "on-manifold proportion of a zero perturbation");
  return proj.on(z).norm() / n;
}

std::string attack_result_csv_header() {
  return "example_id,subspace,norm,epsilon,success,l2_norm,linf_norm,on_manifold_proportion\n";
}

std::string attack_result_csv_rows(const AttackOutcome& out, const AttackSpec& spec,
                                   const SubspaceProjectors* proj) {
  std::string s;
  for (Eigen::Index i = 0; i < out.Z.rows(); ++i) {
    std::string prop = "nan";
    if (proj && out.l2[i] > 0) prop = fmt17(on_manifold_proportion(out.Z.row(i).transpose(), *proj));
    s += std::to_string(i) + "," + std::string(to_string(spec.subspace)) + "," +
         std::string(to_string(spec.norm)) + "," + fmt17(spec.epsilon) + "," +
         (out.success[i] ? "1" : "0") + "," + fmt17(out.l2[i]) + "," + fmt17(out.linf[i]) + "," + prop +
         "\n";
  }
  return s;
}

}  // namespace dimgap
