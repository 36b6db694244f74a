// dimgap: data generation, training, attacks, sweeps, theory reports and
// intrinsic-dimension estimates from one binary.

#include "dimgap/attacks.hpp"
#include "dimgap/datagen.hpp"
#include "dimgap/harness.hpp"
#include "dimgap/idim.hpp"
#include "dimgap/io.hpp"
#include "dimgap/net.hpp"
#include "dimgap/rng.hpp"
#include "dimgap/theory.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <omp.h>

#include <cstdio>
#include <iostream>
#include <limits>
#include <optional>

#ifndef DIMGAP_VERSION
#define DIMGAP_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dimgap;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int threads = 0;
  bool resume = false;
};

fs::path need_out(const Globals& g) {
  if (!g.out) throw UsageError("missing required flag --out");
  return *g.out;
}

template <class T>
void set_if(T& dst, const std::optional<T>& src) {
  if (src) dst = *src;
}

json option_json(const CLI::Option* o) {
  json j{{"name", o->get_name(false, true)}, {"description", o->get_description()}};
  const std::string type = o->get_type_name();
  j["takes_value"] = !type.empty();
  if (!type.empty()) j["type"] = type;
  if (!o->get_default_str().empty()) j["default"] = o->get_default_str();
  if (!o->get_envname().empty()) j["env"] = o->get_envname();
  return j;
}

json help_json(const CLI::App& app) {
  json opts = json::array();
  for (const auto* o : app.get_options())
    if (!o->get_name(false, true).empty()) opts.push_back(option_json(o));
  json subs = json::array();
  for (const auto* s : app.get_subcommands({})) {
    json so = json::array();
    for (const auto* o : s->get_options())
      if (o->get_name() != "--help") so.push_back(option_json(o));
    subs.push_back({{"name", s->get_name()}, {"description", s->get_description()}, {"options", so}});
  }
  return {{"name", app.get_name()},
          {"version", DIMGAP_VERSION},
          {"description", app.get_description()},
          {"global_options", opts},
          {"subcommands", subs},
          {"exit_codes", {{"0", "success"}, {"1", "usage error"}, {"2", "runtime failure"}}}};
}

ExperimentConfig maybe_config(const std::optional<std::string>& path) {
  return path ? load_config(*path) : ExperimentConfig{};
}

// ---- data flags shared by gen and sweep

struct DataFlags {
  std::optional<int> d, D, k, n, n_test;
  std::optional<double> tau, xi_scale, omega_scale;
  std::optional<std::string> tau_mode, mean_mode, immersion;

  void add(CLI::App* s, bool with_test) {
    s->add_option("--d", d, "intrinsic dimension");
    s->add_option("--D", D, "ambient dimension");
    s->add_option("--k", k, "number of clusters");
    s->add_option("--n", n, "number of samples");
    if (with_test) s->add_option("--n-test", n_test, "fresh nice test examples per cell");
    s->add_option("--tau", tau, "cluster-shift scale (implies --tau-mode explicit)");
    s->add_option("--tau-mode", tau_mode, "explicit | one-over-D | d-over-D")
        ->check(CLI::IsMember({"explicit", "one-over-D", "d-over-D"}));
    s->add_option("--mean-mode", mean_mode, "orthogonal-sqrt-d | gaussian")
        ->check(CLI::IsMember({"orthogonal-sqrt-d", "gaussian"}));
    s->add_option("--xi-scale", xi_scale, "intrinsic noise scale");
    s->add_option("--omega-scale", omega_scale, "ambient noise scale");
    s->add_option("--immersion", immersion, "exact-qr | gaussian-raw")
        ->check(CLI::IsMember({"exact-qr", "gaussian-raw"}));
  }

  void apply(DataConfig& dc) const {
    set_if(dc.d, d);
    set_if(dc.D, D);
    set_if(dc.k, k);
    set_if(dc.n, n);
    set_if(dc.n_test, n_test);
    if (tau) {
      dc.tau = *tau;
      dc.tau_mode = TauMode::Explicit;
    }
    if (tau_mode) dc.tau_mode = tau_mode_from_string(*tau_mode);
    if (mean_mode) dc.mean_mode = mean_mode_from_string(*mean_mode);
    set_if(dc.xi_scale, xi_scale);
    set_if(dc.omega_scale, omega_scale);
    if (immersion) dc.immersion = immersion_mode_from_string(*immersion);
  }
};

struct TrainFlags {
  std::optional<int> width, epochs;
  std::optional<double> lr, weight_decay, init_factor, stop_loss;
  std::optional<std::string> loss;

  void add(CLI::App* s) {
    s->add_option("--width", width, "hidden width");
    s->add_option("--epochs", epochs, "gradient-descent updates");
    s->add_option("--lr", lr, "learning rate");
    s->add_option("--weight-decay", weight_decay, "L2 penalty on all parameters");
    s->add_option("--init-factor", init_factor, "multiplier on the Kaiming init");
    s->add_option("--stop-loss", stop_loss, "stop once the training loss falls below this");
    s->add_option("--loss", loss, "exponential | logistic")->check(CLI::IsMember({"exponential", "logistic"}));
  }

  void apply(TrainConfig& tc) const {
    set_if(tc.width, width);
    set_if(tc.epochs, epochs);
    set_if(tc.lr, lr);
    set_if(tc.weight_decay, weight_decay);
    set_if(tc.init_factor, init_factor);
    if (stop_loss) tc.stop_loss = *stop_loss;
    if (loss) tc.loss = loss_kind_from_string(*loss);
  }
};

struct AttackFlags {
  std::optional<std::vector<std::string>> norms, subspaces;
  std::optional<int> steps, n_eval;
  std::optional<double> step_factor, target, start, max_epsilon;

  void add(CLI::App* s) {
    s->add_option("--norm", norms, "l2 | linf (repeatable)")->check(CLI::IsMember({"l2", "linf"}));
    s->add_option("--subspace", subspaces, "full | on-manifold | off-manifold (repeatable)")
        ->check(CLI::IsMember({"full", "on-manifold", "off-manifold"}));
    s->add_option("--steps", steps, "PGD steps");
    s->add_option("--step-factor", step_factor, "step size = factor * epsilon / steps");
    s->add_option("--n-eval", n_eval, "examples attacked");
    s->add_option("--target", target, "robust accuracy defining the threshold");
    s->add_option("--start", start, "first epsilon of the threshold search");
    s->add_option("--max-epsilon", max_epsilon, "threshold search gives up above this");
  }

  void apply(AttackConfig& ac) const {
    if (norms) {
      ac.norms.clear();
      for (const auto& s : *norms) ac.norms.push_back(norm_from_string(s));
    }
    if (subspaces) {
      ac.subspaces.clear();
      for (const auto& s : *subspaces) ac.subspaces.push_back(subspace_from_string(s));
    }
    set_if(ac.steps, steps);
    set_if(ac.n_eval, n_eval);
    set_if(ac.step_factor, step_factor);
    set_if(ac.search.target, target);
    set_if(ac.search.start, start);
    set_if(ac.search.max_epsilon, max_epsilon);
  }
};

// ---- subcommands

int cmd_gen(const Globals& g, const std::optional<std::string>& config, const DataFlags& f, bool nice) {
  ExperimentConfig c = maybe_config(config);
  f.apply(c.data);
  const fs::path out = g.out ? fs::path(*g.out) : c.out;
  if (out.empty()) throw UsageError("missing required flag --out");
  const std::uint64_t seed = g.seed.value_or(c.seed);
  const ClusterSpec cluster = make_cluster(c.data, derive_seed(seed, 0, "means"));
  auto model = std::make_shared<const DataModel>(
      make_data_model(cluster, make_ambient(c.data), derive_seed(seed, 0, "model")));
  const GeneratedDataset data = nice ? sample_nice_dataset(model, c.data.n, derive_seed(seed, 0, "samples"))
                                     : synthesize(*model, c.data.n, derive_seed(seed, 0, "samples"));
  write_dataset(data, out);
  write_json(out / "audit.json", to_json(audit_assumptions(data, derive_seed(seed, 0, "audit"))));
  std::cout << "wrote " << data.n << " samples (d=" << c.data.d << ", D=" << c.data.D << ") to " << out.string()
            << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::optional<std::string>& config, const std::string& data_dir,
              const TrainFlags& f, bool kkt) {
  ExperimentConfig c = maybe_config(config);
  f.apply(c.train);
  const fs::path out = need_out(g);
  const std::uint64_t seed = g.seed.value_or(c.seed);
  const GeneratedDataset data = read_dataset(data_dir);
  NetParams init = init_params(c.train.width, data.D, c.train.init_factor, derive_seed(seed, 0, "init"));
  auto [params, trace] = train_gd(std::move(init), data.X, data.y, c.train);

  write_model(out / "model.json", {params, c.train, trace.final_loss, seed});
  std::string csv = "epoch,loss,train_accuracy,param_norm,normalized_margin\n";
  for (std::size_t t = 0; t < trace.loss.size(); ++t)
    csv += std::to_string(t) + "," + fmt17(trace.loss[t]) + "," + fmt17(trace.train_accuracy[t]) + "," +
           fmt17(trace.param_norm[t]) + "," + fmt17(trace.normalized_margin[t]) + "\n";
  write_file(out / "train_trace.csv", csv);
  json summary{{"final_loss", trace.final_loss},
               {"final_accuracy", trace.final_accuracy},
               {"updates", trace.updates},
               {"stop", to_string(trace.stop)},
               {"crossed_inverse_n", trace.crossed_inverse_n}};
  if (kkt) {
    const auto diag = kkt_diagnostics(params, data);
    json spans = diag.volatile_available ? json(diag.volatile_span_residual) : json(nullptr);
    summary["kkt"] = {{"weight_residual", diag.weight_residual},
                      {"bias_residual", diag.bias_residual},
                      {"lambdas", std::vector<double>(diag.lambdas.data(), diag.lambdas.data() + diag.lambdas.size())},
                      {"nnls_converged", diag.nnls.converged},
                      {"volatile_span_rank", diag.volatile_span_rank},
                      {"volatile_span_residual", spans}};
  }
  if (data.has_truth() && trace.stop != StopReason::Diverged && trace.final_accuracy == 1.0) {
    // Output scale on fresh nice examples once the smallest training margin is 1.
    const NetParams normalized = margin_normalized(params, data.X, data.y);
    const auto fresh = sample_nice_dataset(data.model, 100, derive_seed(seed, 0, "nice-check"));
    summary["normalized_output_max_abs"] = forward_batch(normalized, fresh.X).cwiseAbs().maxCoeff();
  }
  write_json(out / "train_summary.json", summary);
  std::cout << "trained width " << params.width() << " for " << trace.updates << " updates: loss "
            << fmt17(trace.final_loss) << ", accuracy " << trace.final_accuracy << " (" << to_string(trace.stop)
            << ")\n";
  return trace.stop == StopReason::Diverged ? 2 : 0;
}

int cmd_attack(const Globals& g, const std::optional<std::string>& config, const std::string& model_path,
               const std::string& data_dir, const AttackFlags& f, std::optional<double> epsilon, bool theory) {
  ExperimentConfig c = maybe_config(config);
  f.apply(c.attack);
  const fs::path out = need_out(g);
  const std::uint64_t seed = g.seed.value_or(c.seed);
  const ModelFile mf = read_model(model_path);
  const GeneratedDataset data = read_dataset(data_dir);
  require(mf.params.D() == data.D, ErrorKind::InvalidDimensions, "model and data disagree on D");
  std::optional<SubspaceProjectors> proj;
  if (data.has_truth()) proj.emplace(data.model->immersion);
  const SubspaceProjectors* pp = proj ? &*proj : nullptr;
  const int m = std::min(c.attack.n_eval, data.n);
  const Matrix X = data.X.topRows(m);
  const Vector y = data.y.head(m);

  std::string csv = attack_result_csv_header();
  json thresholds = json::array();
  int idx = 0;
  for (Norm norm : c.attack.norms)
    for (Subspace sub : c.attack.subspaces) {
      AttackSpec spec;
      spec.norm = norm;
      spec.subspace = sub;
      spec.steps = c.attack.steps;
      spec.step_factor = c.attack.step_factor;
      spec.loss = c.attack.loss;
      spec.seed = derive_seed(seed, static_cast<std::uint64_t>(idx++), "attack");
      if (!epsilon) {
        const auto th = minimal_strength_threshold(mf.params, X, y, spec, pp, c.attack.search);
        json curve = json::array();
        for (const auto& [e, a] : th.curve) curve.push_back({e, a});
        thresholds.push_back({{"norm", to_string(norm)},
                              {"subspace", to_string(sub)},
                              {"eps_star", th.saturated ? json("inf") : json(th.epsilon_star)},
                              {"saturated", th.saturated},
                              {"curve", curve}});
        if (th.saturated) continue;
        spec.epsilon = th.epsilon_star;
      } else {
        spec.epsilon = *epsilon;
      }
      const auto res = pgd_attack(mf.params, X, y, spec, pp);
      csv += attack_result_csv_rows(res, spec, pp);
      std::cout << to_string(norm) << "/" << to_string(sub) << " eps=" << fmt17(spec.epsilon)
                << " robust accuracy " << res.robust_accuracy << "\n";
    }
  write_file(out / "attack_result.csv", csv);
  if (!epsilon) write_json(out / "threshold.json", thresholds);

  if (theory) {
    require(data.has_truth(), ErrorKind::MissingTruth, "the theory attack needs truth.json");
    const auto dirs = build_theory_directions(*data.model, *proj);
    const double gamma = min_margin(mf.params, data.X, data.y);
    require(gamma > 0, ErrorKind::UndefinedInput, "the model does not separate the data");
    TheoryAttackOptions opt;
    opt.output_scale = 1.0 / gamma;
    json rows = json::array();
    for (int i = 0; i < m; ++i) {
      const auto r = theory_attack(mf.params, X.row(i).transpose(), y[i], dirs.u_perp, std::nullopt, opt);
      rows.push_back({{"example_id", i},
                      {"eta", r.eta},
                      {"normalized_flip", r.normalized_flip},
                      {"sign_flip", r.sign_flip},
                      {"unbounded", r.unbounded},
                      {"l2", r.l2}});
    }
    write_json(out / "theory_attack.json",
               {{"constants", theory::to_json(dirs.constants)},
                {"bounds", theory::to_json(theory::predict_bounds(dirs.constants))},
                {"margin", gamma},
                {"examples", rows}});
  }
  return 0;
}

int cmd_sweep(const Globals& g, const std::optional<std::string>& config, const DataFlags& df,
              const TrainFlags& tf, const AttackFlags& af, const std::optional<std::string>& axis,
              const std::optional<std::vector<int>>& values, const std::optional<std::vector<std::uint64_t>>& seeds,
              bool theory, bool record_runtime) {
  ExperimentConfig c = maybe_config(config);
  df.apply(c.data);
  tf.apply(c.train);
  af.apply(c.attack);
  if (axis) c.axis = *axis == "D" ? SweepAxis::AmbientD : SweepAxis::IntrinsicD;
  set_if(c.sweep_values, values);
  set_if(c.seeds, seeds);
  if (theory) c.attack.theory = true;
  if (record_runtime) c.record_runtime = true;
  set_if(c.seed, g.seed);
  if (g.out) c.out = *g.out;
  if (c.out.empty()) throw UsageError("missing required flag --out");
  c.validate();
  fs::create_directories(c.out);
  write_file(c.out / "config.toml", config_to_toml(c));
  const auto res = run_sweep(c, g.resume, g.threads);
  int failed = 0;
  for (const auto& cell : res.cells)
    for (const auto& r : cell.rows) failed += r.status.rfind("error", 0) == 0;
  std::cout << res.cells.size() << " cells (" << res.resumed << " resumed), " << failed << " failed rows; wrote "
            << (c.out / "sweep.csv").string() << "\n";
  return 0;
}

theory::McImmersion mc_immersion(const std::string& s) {
  if (s == "axis-aligned") return theory::McImmersion::AxisAligned;
  if (s == "per-chunk") return theory::McImmersion::PerChunk;
  return theory::McImmersion::FixedRandom;
}

struct TheoryFlags {
  std::int64_t d = 100, D = 2000;
  int k = 2;
  std::optional<double> tau;
  std::string tau_mode = "d-over-D";
  double p = 0, c_class = 0.5, max_xi = 0, max_omega = 0;
  long draws = 10000;
  std::string immersion = "fixed-random";
  bool pairwise = false;

  void add(CLI::App* s, bool regime_flags) {
    s->add_option("--d", d, "intrinsic dimension")->capture_default_str();
    s->add_option("--D", D, "ambient dimension")->capture_default_str();
    s->add_option("--k", k, "number of clusters")->capture_default_str();
    s->add_option("--tau", tau, "cluster-shift scale (implies --tau-mode explicit)");
    s->add_option("--tau-mode", tau_mode, "explicit | one-over-D | d-over-D")
        ->check(CLI::IsMember({"explicit", "one-over-D", "d-over-D"}))
        ->capture_default_str();
    if (regime_flags) {
      s->add_option("--p", p, "max |<mu_i, mu_j>| over distinct means")->capture_default_str();
      s->add_option("--c", c_class, "smaller class fraction of clusters")->capture_default_str();
      s->add_option("--max-xi", max_xi, "realized max ||xi_i||")->capture_default_str();
      s->add_option("--max-omega", max_omega, "realized max ||omega_i||")->capture_default_str();
    }
    s->add_option("--draws", draws, "Monte Carlo draws")->capture_default_str();
    s->add_option("--immersion", immersion, "fixed-random | axis-aligned | per-chunk")
        ->check(CLI::IsMember({"fixed-random", "axis-aligned", "per-chunk"}))
        ->capture_default_str();
    s->add_flag("--pairwise-regime", pairwise, "use the built-in regime where the pairwise events are informative");
  }

  double effective_tau() const {
    if (tau) return *tau;
    if (tau_mode == "one-over-D") return std::sqrt(1.0 / static_cast<double>(D));
    if (tau_mode == "d-over-D") return std::sqrt(static_cast<double>(d) / static_cast<double>(D));
    return 0.0;
  }
};

int cmd_theory(const Globals& g, TheoryFlags f) {
  const fs::path out = need_out(g);
  if (f.pairwise) {
    const auto r = theory::pairwise_event_regime();
    f.d = r.d, f.D = r.D, f.k = r.k, f.tau = r.tau;
  }
  TheoryReportParams p;
  p.regime.d = f.d;
  p.regime.D = f.D;
  p.regime.k = f.k;
  p.regime.tau = f.effective_tau();
  p.regime.p = f.p;
  p.regime.c_class = f.c_class;
  p.regime.max_xi = f.max_xi;
  p.regime.max_omega = f.max_omega;
  p.tau_mode = TauMode::Explicit;
  p.draws = f.draws;
  p.seed = g.seed.value_or(1);
  p.immersion = mc_immersion(f.immersion);
  const json report = run_theory_report(p, out);
  std::cout << "A4 " << (report["flags"]["a4_false"].get<bool>() ? "false" : "true") << ", eta_perp "
            << (report["flags"]["eta_perp_undefined"].get<bool>() ? "undefined" : "defined") << ", lemma events "
            << (report["lemma_verification"]["all_pass"].is_null()
                    ? "skipped"
                    : report["lemma_verification"]["all_pass"].get<bool>() ? "pass" : "FAIL")
            << "\n";
  return 0;
}

int cmd_verify(const Globals& g, TheoryFlags f) {
  const fs::path out = need_out(g);
  if (f.pairwise) {
    const auto r = theory::pairwise_event_regime();
    f.d = r.d, f.D = r.D, f.k = r.k, f.tau = r.tau;
    if (f.immersion == "fixed-random") f.immersion = "axis-aligned";
  }
  require(f.D <= std::numeric_limits<int>::max(), ErrorKind::InvalidDimensions, "verify-lemmas needs D < 2^31");
  theory::McOptions mo;
  mo.immersion = mc_immersion(f.immersion);
  const auto v = theory::monte_carlo_verify(static_cast<int>(f.d), static_cast<int>(f.D), f.effective_tau(), f.k, f.draws, g.seed.value_or(1), mo);
  write_json(out / "lemma_verification.json", theory::to_json(v));
  for (const auto& e : v.events) {
    std::printf("%-3s %-8s freq %.4f  bound %.4f  %s\n", e.name.c_str(),
                e.applicable ? (e.passes ? "pass" : "FAIL") : "n/a", e.frequency, e.lower_bound,
                e.description.c_str());
  }
  return v.all_pass() ? 0 : 2;
}

struct IdimFlags {
  std::string input;
  std::string method = "twonn";
  int k = 5;
  int neighbors = 50;
  double var_threshold = 0.95;
  double discard = 0.1;
};

int cmd_idim(const Globals& g, const IdimFlags& f) {
  const fs::path out = g.out ? fs::path(*g.out) : fs::path(".");
  const PointCloud cloud = load_point_cloud(f.input);
  auto one = [&](const std::string& m) {
    if (m == "lpca") return lpca_dim(cloud, f.neighbors, f.var_threshold);
    if (m == "mle") return mle_dim(cloud, f.k);
    return twonn_dim(cloud, f.discard);
  };
  json report;
  if (f.method == "all") {
    report = json::array();
    for (const char* m : {"lpca", "mle", "twonn"}) report.push_back(to_json(one(m)));
  } else {
    report = to_json(one(f.method));
  }
  write_json(out / "idim_report.json", report);
  const auto print = [](const json& r) {
    std::cout << r["method"].get<std::string>() << ": " << r["global"].dump() << "\n";
  };
  if (report.is_array())
    for (const auto& r : report) print(r);
  else
    print(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dimension-gap adversarial robustness toolkit", "dimgap"};
  app.set_version_flag("--version", DIMGAP_VERSION);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "base seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads (0: OpenMP default)")->envname("DIMGAP_THREADS");
  app.add_flag("--resume", g.resume, "sweep: keep finished cells from an earlier run");

  std::optional<std::string> config;
  auto add_config = [&](CLI::App* s) { s->add_option("--config", config, "TOML experiment config"); };

  auto* gen = app.add_subcommand("gen", "sample a dataset: data.csv, truth.json, spec.toml, audit.json");
  DataFlags gen_data;
  bool gen_nice = false;
  add_config(gen);
  gen_data.add(gen, false);
  gen->add_flag("--nice", gen_nice, "keep only nice examples");

  auto* train = app.add_subcommand("train", "train the two-layer ReLU net: model.json, train_trace.csv");
  TrainFlags train_flags;
  std::string train_data;
  bool train_kkt = false;
  add_config(train);
  train->add_option("--data", train_data, "dataset directory")->required();
  train_flags.add(train);
  train->add_flag("--kkt", train_kkt, "fit KKT multipliers and report volatile-span residuals");

  auto* attack = app.add_subcommand("attack", "PGD attacks and thresholds: attack_result.csv, threshold.json");
  AttackFlags attack_flags;
  std::string attack_model, attack_data;
  std::optional<double> attack_eps;
  bool attack_theory = false;
  add_config(attack);
  attack->add_option("--model", attack_model, "model.json")->required();
  attack->add_option("--data", attack_data, "dataset directory")->required();
  attack->add_option("--epsilon", attack_eps, "fixed budget; omitted: search for the threshold");
  attack_flags.add(attack);
  attack->add_flag("--theory", attack_theory, "also run the u_perp theory attack");

  auto* sweep = app.add_subcommand("sweep", "dimension sweep: sweep.csv, sweep_summary.csv, timing.json");
  DataFlags sweep_data;
  TrainFlags sweep_train;
  AttackFlags sweep_attack;
  std::optional<std::string> sweep_axis;
  std::optional<std::vector<int>> sweep_values;
  std::optional<std::vector<std::uint64_t>> sweep_seeds;
  bool sweep_theory = false, sweep_runtime = false;
  add_config(sweep);
  sweep_data.add(sweep, true);
  sweep_train.add(sweep);
  sweep_attack.add(sweep);
  sweep->add_option("--axis", sweep_axis, "D | d")->check(CLI::IsMember({"D", "d"}));
  sweep->add_option("--values", sweep_values, "sweep values, strictly increasing");
  sweep->add_option("--seeds", sweep_seeds, "replicate seeds");
  sweep->add_flag("--theory", sweep_theory, "also run the theory-direction attack per cell");
  sweep->add_flag("--record-runtime", sweep_runtime, "write wall-clock seconds into sweep.csv");

  auto* theory_cmd = app.add_subcommand("theory", "constants, bounds and lemma checks: theory_report.json");
  TheoryFlags theory_flags;
  theory_flags.add(theory_cmd, true);

  auto* verify = app.add_subcommand("verify-lemmas", "Monte Carlo lemma events: lemma_verification.json");
  TheoryFlags verify_flags;
  verify_flags.add(verify, false);

  auto* idim = app.add_subcommand("idim", "intrinsic-dimension estimates: idim_report.json");
  IdimFlags idim_flags;
  idim->add_option("--input", idim_flags.input, "numeric CSV (a y column is ignored)")->required();
  idim->add_option("--method", idim_flags.method, "lpca | mle | twonn | all")
      ->check(CLI::IsMember({"lpca", "mle", "twonn", "all"}))
      ->capture_default_str();
  idim->add_option("--k", idim_flags.k, "MLE neighbours")->capture_default_str();
  idim->add_option("--neighbors", idim_flags.neighbors, "LPCA neighbourhood size")->capture_default_str();
  idim->add_option("--var-threshold", idim_flags.var_threshold, "LPCA explained variance")->capture_default_str();
  idim->add_option("--discard", idim_flags.discard, "TwoNN censored fraction")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << help_json(app).dump(2) << "\n";
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << help_json(app).dump(2) << "\n";
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << DIMGAP_VERSION << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "dimgap: " << e.what() << "\n";
    return 1;
  }

  if (g.threads < 0) {
    std::cerr << "dimgap: --threads must be >= 0\n";
    return 1;
  }
  if (g.threads > 0) omp_set_num_threads(g.threads);

  try {
    if (gen->parsed()) return cmd_gen(g, config, gen_data, gen_nice);
    if (train->parsed()) return cmd_train(g, config, train_data, train_flags, train_kkt);
    if (attack->parsed())
      return cmd_attack(g, config, attack_model, attack_data, attack_flags, attack_eps, attack_theory);
    if (sweep->parsed())
      return cmd_sweep(g, config, sweep_data, sweep_train, sweep_attack, sweep_axis, sweep_values, sweep_seeds,
                       sweep_theory, sweep_runtime);
    if (theory_cmd->parsed()) return cmd_theory(g, theory_flags);
    if (verify->parsed()) return cmd_verify(g, verify_flags);
    if (idim->parsed()) return cmd_idim(g, idim_flags);
  } catch (const UsageError& e) {
    std::cerr << "dimgap: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "dimgap: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
