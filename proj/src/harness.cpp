#include "dimgap/harness.hpp"

#include "dimgap/io.hpp"
#include "dimgap/rng.hpp"

#include <toml.hpp>

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace dimgap {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// NaN prints as "nan" regardless of its sign bit so rows re-read on resume
// reproduce byte-identically.
std::string num(double v) { return std::isnan(v) ? "nan" : fmt17(v); }

double parse_num(const std::string& s) {
  if (s == "-") return 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  require(end == s.c_str() + s.size(), ErrorKind::Parse, "bad number '" + s + "' in sweep.csv");
  return v;
}

// Typed lookups that reject unknown keys.
class Section {
 public:
  Section(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

  template <class T>
  T get(const char* key, T fallback) {
    seen_.insert(key);
    if (!t_) return fallback;
    const auto* node = t_->get(key);
    if (!node) return fallback;
    if constexpr (std::is_same_v<T, double>) {
      if (auto v = node->value<double>()) return *v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value<bool>()) return *v;
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node->value<std::int64_t>()) return static_cast<T>(*v);
    } else {
      if (auto v = node->value<std::string>()) return *v;
    }
    throw Error(ErrorKind::InvalidSpec, name_ + "." + key + " has the wrong type");
  }

  template <class T>
  std::vector<T> list(const char* key, std::vector<T> fallback) {
    seen_.insert(key);
    if (!t_) return fallback;
    const auto* node = t_->get(key);
    if (!node) return fallback;
    const auto* arr = node->as_array();
    require(arr != nullptr, ErrorKind::InvalidSpec, name_ + "." + key + " must be an array");
    std::vector<T> out;
    for (const auto& el : *arr) {
      if constexpr (std::is_same_v<T, double>) {
        auto v = el.value<double>();
        require(v.has_value(), ErrorKind::InvalidSpec, name_ + "." + key + " must hold numbers");
        out.push_back(*v);
      } else if constexpr (std::is_integral_v<T>) {
        auto v = el.value<std::int64_t>();
        require(v.has_value(), ErrorKind::InvalidSpec, name_ + "." + key + " must hold integers");
        out.push_back(static_cast<T>(*v));
      } else {
        auto v = el.value<std::string>();
        require(v.has_value(), ErrorKind::InvalidSpec, name_ + "." + key + " must hold strings");
        out.push_back(*v);
      }
    }
    return out;
  }

  bool has(const char* key) const { return t_ && t_->contains(key); }

  void finish() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_) {
      if (v.is_table()) continue;
      require(seen_.count(std::string(k.str())) > 0, ErrorKind::InvalidSpec,
              "unknown config key " + name_ + "." + std::string(k.str()));
    }
  }

 private:
  const toml::table* t_;
  std::string name_;
  std::set<std::string> seen_;
};

double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  if (v.size() % 2) return v[h];
  if (v[h - 1] == v[h]) return v[h];
  return 0.5 * (v[h - 1] + v[h]);
}

double quantile_of(std::vector<double> v, double f) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double pos = f * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0 || v[lo] == v[lo + 1]) return v[lo];
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

std::string sanitize(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!seeds.empty(), ErrorKind::InvalidSpec, "seeds must be nonempty");
  for (std::size_t i = 1; i < sweep_values.size(); ++i)
    require(sweep_values[i] > sweep_values[i - 1], ErrorKind::InvalidSpec, "sweep values must be strictly increasing");
  require(data.n >= 1 && data.n_test >= 1, ErrorKind::InvalidSpec, "n and n_test must be >= 1");
  require(attack.n_eval >= 1 && attack.n_eval <= data.n_test, ErrorKind::InvalidSpec,
          "attack.n_eval must be in [1, n_test]");
  require(!attack.theory || (attack.n_theory >= 0 && attack.n_theory <= data.n_test), ErrorKind::InvalidSpec,
          "attack.n_theory must be in [0, n_test]");
  require(!attack.norms.empty() && !attack.subspaces.empty(), ErrorKind::InvalidSpec,
          "attack needs at least one norm and one subspace");
  require(attack.steps >= 1, ErrorKind::InvalidSpec, "attack.steps must be >= 1");
  attack.search.validate();
  train.validate();
  const std::vector<int> values = sweep_values.empty()
                                      ? std::vector<int>{axis == SweepAxis::AmbientD ? data.D : data.d}
                                      : sweep_values;
  for (int v : values) {
    const int d = axis == SweepAxis::IntrinsicD ? v : data.d;
    const int D = axis == SweepAxis::AmbientD ? v : data.D;
    require(d >= 1 && d <= D, ErrorKind::InvalidDimensions,
            "sweep cell with d=" + std::to_string(d) + " > D=" + std::to_string(D));
    require(data.mean_mode != MeanMode::OrthogonalSqrtD || data.k <= d, ErrorKind::TooManyClusters,
            "orthogonal means need k <= d");
  }
}

ExperimentConfig config_from_toml(const std::string& text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << e.description() << " at line " << e.source().begin.line;
    throw Error(ErrorKind::Parse, "config: " + ss.str());
  }
  ExperimentConfig c;
  Section top(&root, "");
  c.seed = top.get<std::uint64_t>("seed", c.seed);
  c.out = top.get<std::string>("out", c.out.string());
  c.record_runtime = top.get<bool>("record_runtime", c.record_runtime);
  top.finish();
  for (const auto& [k, v] : root)
    require(!v.is_table() || k == "data" || k == "train" || k == "attack" || k == "sweep",
            ErrorKind::InvalidSpec, "unknown config table [" + std::string(k.str()) + "]");

  Section data(root["data"].as_table(), "data");
  auto& dc = c.data;
  dc.d = data.get<int>("d", dc.d);
  dc.D = data.get<int>("D", dc.D);
  dc.k = data.get<int>("k", dc.k);
  dc.n = data.get<int>("n", dc.n);
  dc.n_test = data.get<int>("n_test", dc.n_test);
  dc.tau = data.get<double>("tau", dc.tau);
  dc.tau_mode = tau_mode_from_string(data.get<std::string>("tau_mode", std::string(to_string(dc.tau_mode))));
  if (data.has("tau") && !data.has("tau_mode")) dc.tau_mode = TauMode::Explicit;
  dc.mean_mode = mean_mode_from_string(data.get<std::string>("mean_mode", std::string(to_string(dc.mean_mode))));
  dc.xi_scale = data.get<double>("xi_scale", dc.xi_scale);
  dc.omega_scale = data.get<double>("omega_scale", dc.omega_scale);
  dc.immersion = immersion_mode_from_string(data.get<std::string>("immersion", std::string(to_string(dc.immersion))));
  dc.labels = data.list<int>("labels", dc.labels);
  data.finish();

  Section train(root["train"].as_table(), "train");
  auto& tc = c.train;
  tc.loss = loss_kind_from_string(train.get<std::string>("loss", std::string(to_string(tc.loss))));
  tc.lr = train.get<double>("lr", tc.lr);
  tc.epochs = train.get<int>("epochs", tc.epochs);
  tc.weight_decay = train.get<double>("weight_decay", tc.weight_decay);
  tc.width = train.get<int>("width", tc.width);
  tc.init_factor = train.get<double>("init_factor", tc.init_factor);
  if (train.has("stop_loss")) tc.stop_loss = train.get<double>("stop_loss", 0.0);
  train.finish();

  Section atk(root["attack"].as_table(), "attack");
  auto& ac = c.attack;
  if (atk.has("norms")) {
    ac.norms.clear();
    for (const auto& s : atk.list<std::string>("norms", {})) ac.norms.push_back(norm_from_string(s));
  }
  if (atk.has("subspaces")) {
    ac.subspaces.clear();
    for (const auto& s : atk.list<std::string>("subspaces", {})) ac.subspaces.push_back(subspace_from_string(s));
  }
  atk.list<std::string>("norms", {});
  atk.list<std::string>("subspaces", {});
  ac.steps = atk.get<int>("steps", ac.steps);
  ac.step_factor = atk.get<double>("step_factor", ac.step_factor);
  ac.loss = loss_kind_from_string(atk.get<std::string>("loss", std::string(to_string(ac.loss))));
  ac.n_eval = atk.get<int>("n_eval", ac.n_eval);
  ac.search.target = atk.get<double>("target", ac.search.target);
  ac.search.start = atk.get<double>("start", ac.search.start);
  ac.search.factor = atk.get<double>("factor", ac.search.factor);
  ac.search.max_epsilon = atk.get<double>("max_epsilon", ac.search.max_epsilon);
  ac.search.refine_rel = atk.get<double>("refine_rel", ac.search.refine_rel);
  ac.search.grid = atk.list<double>("grid", ac.search.grid);
  ac.theory = atk.get<bool>("theory", ac.theory);
  ac.n_theory = atk.get<int>("n_theory", ac.n_theory);
  atk.finish();

  Section sw(root["sweep"].as_table(), "sweep");
  const std::string axis = sw.get<std::string>("axis", "D");
  require(axis == "D" || axis == "d", ErrorKind::InvalidSpec, "sweep.axis must be \"D\" or \"d\"");
  c.axis = axis == "D" ? SweepAxis::AmbientD : SweepAxis::IntrinsicD;
  c.sweep_values = sw.list<int>("values", c.sweep_values);
  c.seeds = sw.list<std::uint64_t>("seeds", c.seeds);
  sw.finish();
  return c;
}

ExperimentConfig load_config(const fs::path& path) { return config_from_toml(read_file(path)); }

std::string config_to_toml(const ExperimentConfig& c) {
  auto str_array = [](const auto& items) {
    toml::array a;
    for (const auto& it : items) a.push_back(std::string(to_string(it)));
    return a;
  };
  toml::array labels, grid, values, seeds;
  for (int l : c.data.labels) labels.push_back(l);
  for (double g : c.attack.search.grid) grid.push_back(g);
  for (int v : c.sweep_values) values.push_back(v);
  for (auto s : c.seeds) seeds.push_back(static_cast<std::int64_t>(s));

  toml::table data{{"d", c.data.d},
                   {"D", c.data.D},
                   {"k", c.data.k},
                   {"n", c.data.n},
                   {"n_test", c.data.n_test},
                   {"tau", c.data.tau},
                   {"tau_mode", std::string(to_string(c.data.tau_mode))},
                   {"mean_mode", std::string(to_string(c.data.mean_mode))},
                   {"xi_scale", c.data.xi_scale},
                   {"omega_scale", c.data.omega_scale},
                   {"immersion", std::string(to_string(c.data.immersion))}};
  if (!c.data.labels.empty()) data.insert("labels", labels);
  toml::table train{{"loss", std::string(to_string(c.train.loss))},
                    {"lr", c.train.lr},
                    {"epochs", c.train.epochs},
                    {"weight_decay", c.train.weight_decay},
                    {"width", c.train.width},
                    {"init_factor", c.train.init_factor}};
  if (c.train.stop_loss) train.insert("stop_loss", *c.train.stop_loss);
  toml::table attack{{"norms", str_array(c.attack.norms)},
                     {"subspaces", str_array(c.attack.subspaces)},
                     {"steps", c.attack.steps},
                     {"step_factor", c.attack.step_factor},
                     {"loss", std::string(to_string(c.attack.loss))},
                     {"n_eval", c.attack.n_eval},
                     {"target", c.attack.search.target},
                     {"start", c.attack.search.start},
                     {"factor", c.attack.search.factor},
                     {"max_epsilon", c.attack.search.max_epsilon},
                     {"refine_rel", c.attack.search.refine_rel},
                     {"theory", c.attack.theory},
                     {"n_theory", c.attack.n_theory}};
  if (!c.attack.search.grid.empty()) attack.insert("grid", grid);
  toml::table sweep{{"axis", c.axis == SweepAxis::AmbientD ? "D" : "d"}, {"values", values}, {"seeds", seeds}};
  toml::table root{{"seed", static_cast<std::int64_t>(c.seed)},
                   {"out", c.out.string()},
                   {"record_runtime", c.record_runtime},
                   {"data", data},
                   {"train", train},
                   {"attack", attack},
                   {"sweep", sweep}};
  std::ostringstream ss;
  ss << root << '\n';
  return ss.str();
}

ClusterSpec make_cluster(const DataConfig& data, std::uint64_t seed) {
  ClusterSpec cs = sample_cluster_means(data.k, data.d, data.mean_mode, seed);
  if (!data.labels.empty()) {
    require(static_cast<int>(data.labels.size()) == data.k, ErrorKind::InvalidSpec, "data.labels needs k entries");
    cs.labels = data.labels;
  }
  cs.validate();
  return cs;
}

AmbientSpec make_ambient(const DataConfig& data) {
  AmbientSpec a;
  a.D = data.D;
  a.tau = data.tau;
  a.tau_mode = data.tau_mode;
  a.xi_scale = data.xi_scale;
  a.omega_scale = data.omega_scale;
  a.immersion = data.immersion;
  return a;
}

namespace {

std::vector<int> effective_values(const ExperimentConfig& c) {
  if (!c.sweep_values.empty()) return c.sweep_values;
  return {c.axis == SweepAxis::AmbientD ? c.data.D : c.data.d};
}

int cell_count(const ExperimentConfig& c) {
  return static_cast<int>(effective_values(c).size() * c.seeds.size());
}

int rows_per_cell(const ExperimentConfig& c) {
  return static_cast<int>(c.attack.norms.size() * c.attack.subspaces.size());
}

}  // namespace

std::uint64_t cell_seed(const ExperimentConfig& c, int cell) {
  const auto si = static_cast<std::size_t>(cell) % c.seeds.size();
  return derive_seed(c.seed, static_cast<std::uint64_t>(cell), "cell/" + std::to_string(c.seeds[si]));
}

CellResult run_cell(const ExperimentConfig& c, int cell) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto values = effective_values(c);
  const auto vi = static_cast<std::size_t>(cell) / c.seeds.size();
  const auto si = static_cast<std::size_t>(cell) % c.seeds.size();
  const int value = values.at(vi);
  const std::uint64_t seed = c.seeds[si];
  DataConfig dc = c.data;
  if (c.axis == SweepAxis::AmbientD)
    dc.D = value;
  else
    dc.d = value;
  const std::uint64_t cs = cell_seed(c, cell);

  CellResult res;
  res.cell = cell;
  auto base_row = [&](Norm norm, Subspace sub) {
    SweepRow r;
    r.sweep_value = value;
    r.seed = seed;
    r.norm = norm;
    r.subspace = sub;
    r.eps_star = kNaN;
    r.clean_train_acc = kNaN;
    r.clean_test_acc = kNaN;
    r.on_manifold_prop = kNaN;
    return r;
  };

  try {
    const ClusterSpec cluster = make_cluster(dc, derive_seed(cs, 0, "means"));
    const auto model = std::make_shared<const DataModel>(
        make_data_model(cluster, make_ambient(dc), derive_seed(cs, 0, "model")));
    const GeneratedDataset train = synthesize(*model, dc.n, derive_seed(cs, 0, "train"));
    const GeneratedDataset test = sample_nice_dataset(model, dc.n_test, derive_seed(cs, 0, "test"));

    TrainConfig tc = c.train;
    NetParams init = init_params(tc.width, dc.D, tc.init_factor, derive_seed(cs, 0, "init"));
    auto [params, trace] = train_gd(std::move(init), train.X, train.y, tc);
    const double train_acc = trace.final_accuracy;
    const double test_acc = accuracy(params, test.X, test.y);
    const SubspaceProjectors proj(model->immersion);
    const Matrix Xe = test.X.topRows(c.attack.n_eval);
    const Vector ye = test.y.head(c.attack.n_eval);

    int idx = 0;
    for (Norm norm : c.attack.norms)
      for (Subspace sub : c.attack.subspaces) {
        SweepRow r = base_row(norm, sub);
        r.clean_train_acc = train_acc;
        r.clean_test_acc = test_acc;
        if (trace.stop == StopReason::Diverged) r.status = "diverged";
        AttackSpec spec;
        spec.norm = norm;
        spec.subspace = sub;
        spec.steps = c.attack.steps;
        spec.step_factor = c.attack.step_factor;
        spec.loss = c.attack.loss;
        spec.seed = derive_seed(cs, static_cast<std::uint64_t>(idx++), "attack");
        const auto th = minimal_strength_threshold(params, Xe, ye, spec, &proj, c.attack.search);
        r.eps_star = th.epsilon_star;
        r.saturated = th.saturated;
        if (sub == Subspace::Full && !th.saturated && th.epsilon_star > 0) {
          spec.epsilon = th.epsilon_star;
          const auto out = pgd_attack(params, Xe, ye, spec, &proj);
          std::vector<double> props;
          for (Eigen::Index i = 0; i < out.Z.rows(); ++i)
            if (out.success[i] && out.l2[i] > 0)
              props.push_back(on_manifold_proportion(out.Z.row(i).transpose(), proj));
          if (!props.empty()) {
            double s = 0;
            for (double p : props) s += p;
            r.on_manifold_prop = s / static_cast<double>(props.size());
          }
        }
        res.rows.push_back(std::move(r));
      }

    if (c.attack.theory) {
      TheoryRow tr;
      tr.sweep_value = value;
      tr.seed = seed;
      const auto dirs = build_theory_directions(*model, proj);
      const auto bounds = theory::predict_bounds(dirs.constants);
      tr.eta_theory = dirs.constants.eta_perp_defined ? dirs.constants.eta1_perp + dirs.constants.eta2_perp : kNaN;
      tr.delta1_vacuous = bounds.delta1_vacuous;
      const double gamma = min_margin(params, train.X, train.y);
      if (!(gamma > 0)) {
        tr.status = "nonpositive-margin";
        tr.median_eta = tr.median_l2 = kNaN;
      } else {
        TheoryAttackOptions opt;
        opt.output_scale = 1.0 / gamma;
        if (std::isfinite(tr.eta_theory) && tr.eta_theory > 0) opt.eta_reference = tr.eta_theory;
        TheoryAttackOptions opposite = opt;
        opposite.sign = -1;
        std::vector<double> etas, l2s;
        int nflip = 0, sflip = 0, oflip = 0;
        for (int i = 0; i < c.attack.n_theory; ++i) {
          const Vector x = test.X.row(i).transpose();
          const auto a = theory_attack(params, x, test.y[i], dirs.u_perp, std::nullopt, opt);
          if (a.unbounded) {
            ++tr.unbounded;
            continue;
          }
          nflip += a.normalized_flip;
          sflip += a.sign_flip;
          etas.push_back(a.eta);
          l2s.push_back(a.l2);
          oflip += theory_attack(params, x, test.y[i], dirs.u_perp, a.eta, opposite).normalized_flip;
        }
        tr.examples = c.attack.n_theory;
        const double n = std::max(1, tr.examples);
        tr.normalized_flip_fraction = nflip / n;
        tr.sign_flip_fraction = sflip / n;
        tr.opposite_flip_fraction = oflip / n;
        tr.median_eta = median_of(etas);
        tr.median_l2 = median_of(l2s);
      }
      res.theory = tr;
    }
  } catch (const std::exception& e) {
    const std::string status = "error:" + sanitize(e.what());
    res.rows.clear();
    for (Norm norm : c.attack.norms)
      for (Subspace sub : c.attack.subspaces) {
        SweepRow r = base_row(norm, sub);
        r.status = status;
        res.rows.push_back(std::move(r));
      }
    if (c.attack.theory) {
      TheoryRow tr;
      tr.sweep_value = value;
      tr.seed = seed;
      tr.median_eta = tr.median_l2 = tr.eta_theory = kNaN;
      tr.status = status;
      res.theory = tr;
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (auto& r : res.rows) r.runtime_s = res.seconds;
  return res;
}

std::string sweep_csv_header() {
  return "sweep_value,seed,norm,subspace,eps_star,saturated,clean_train_acc,clean_test_acc,"
         "on_manifold_prop,runtime_s,status\n";
}

namespace {

std::string row_line(const SweepRow& r, const std::string& seed, bool runtime) {
  return std::to_string(r.sweep_value) + "," + seed + "," + std::string(to_string(r.norm)) + "," +
         std::string(to_string(r.subspace)) + "," + num(r.eps_star) + "," + (r.saturated ? "1" : "0") + "," +
         num(r.clean_train_acc) + "," + num(r.clean_test_acc) + "," + num(r.on_manifold_prop) + "," +
         (runtime ? num(r.runtime_s) : "-") + "," + r.status + "\n";
}

using GroupKey = std::tuple<int, int, int>;  // value, norm, subspace

std::map<GroupKey, std::vector<const SweepRow*>> group_rows(const SweepResult& r) {
  std::map<GroupKey, std::vector<const SweepRow*>> g;
  for (const auto& cell : r.cells)
    for (const auto& row : cell.rows)
      g[{row.sweep_value, static_cast<int>(row.norm), static_cast<int>(row.subspace)}].push_back(&row);
  return g;
}

template <class F>
std::vector<double> collect(const std::vector<const SweepRow*>& rows, F f) {
  std::vector<double> v;
  for (const auto* r : rows) v.push_back(f(*r));
  return v;
}

std::string cells_csv(const ExperimentConfig& c, const SweepResult& r) {
  std::string s = sweep_csv_header();
  for (const auto& cell : r.cells)
    for (const auto& row : cell.rows) s += row_line(row, std::to_string(row.seed), c.record_runtime);
  return s;
}

}  // namespace

std::string sweep_csv(const ExperimentConfig& c, const SweepResult& r) {
  std::string s = cells_csv(c, r);
  // Summary rows: medians over seeds, in sweep-value then norm/subspace order.
  for (int value : effective_values(c))
    for (Norm norm : c.attack.norms)
      for (Subspace sub : c.attack.subspaces) {
        const auto groups = group_rows(r);
        const auto it = groups.find({value, static_cast<int>(norm), static_cast<int>(sub)});
        SweepRow m;
        m.sweep_value = value;
        m.norm = norm;
        m.subspace = sub;
        m.status = "summary";
        if (it == groups.end()) {
          m.eps_star = m.clean_train_acc = m.clean_test_acc = m.on_manifold_prop = kNaN;
        } else {
          const auto& rows = it->second;
          m.eps_star = median_of(collect(rows, [](const SweepRow& x) { return x.eps_star; }));
          m.saturated = std::isinf(m.eps_star);
          m.clean_train_acc = median_of(collect(rows, [](const SweepRow& x) { return x.clean_train_acc; }));
          m.clean_test_acc = median_of(collect(rows, [](const SweepRow& x) { return x.clean_test_acc; }));
          m.on_manifold_prop = median_of(collect(rows, [](const SweepRow& x) { return x.on_manifold_prop; }));
        }
        s += row_line(m, "median", false);
      }
  return s;
}

std::string sweep_summary_csv(const ExperimentConfig& c, const SweepResult& r) {
  std::string s = "sweep_value,norm,subspace,metric,median,q1,q3,count,saturated\n";
  const auto groups = group_rows(r);
  for (int value : effective_values(c))
    for (Norm norm : c.attack.norms)
      for (Subspace sub : c.attack.subspaces) {
        const auto it = groups.find({value, static_cast<int>(norm), static_cast<int>(sub)});
        if (it == groups.end()) continue;
        const auto& rows = it->second;
        int saturated = 0;
        for (const auto* x : rows) saturated += x->saturated;
        const std::pair<const char*, double SweepRow::*> metrics[] = {
            {"eps_star", &SweepRow::eps_star},
            {"on_manifold_prop", &SweepRow::on_manifold_prop},
            {"clean_train_acc", &SweepRow::clean_train_acc},
            {"clean_test_acc", &SweepRow::clean_test_acc}};
        for (const auto& [name, field] : metrics) {
          auto v = collect(rows, [f = field](const SweepRow& x) { return x.*f; });
          const auto count = std::count_if(v.begin(), v.end(), [](double x) { return !std::isnan(x); });
          s += std::to_string(value) + "," + std::string(to_string(norm)) + "," + std::string(to_string(sub)) +
               "," + name + "," + num(median_of(v)) + "," + num(quantile_of(v, 0.25)) + "," +
               num(quantile_of(v, 0.75)) + "," + std::to_string(count) + "," + std::to_string(saturated) + "\n";
        }
      }
  return s;
}

std::string theory_attack_csv(const SweepResult& r) {
  std::string s =
      "sweep_value,seed,examples,normalized_flip_fraction,sign_flip_fraction,opposite_flip_fraction,"
      "unbounded,median_eta,median_l2,eta_theory,delta1_vacuous,status\n";
  for (const auto& cell : r.cells) {
    if (!cell.theory) continue;
    const auto& t = *cell.theory;
    s += std::to_string(t.sweep_value) + "," + std::to_string(t.seed) + "," + std::to_string(t.examples) + "," +
         num(t.normalized_flip_fraction) + "," + num(t.sign_flip_fraction) + "," + num(t.opposite_flip_fraction) +
         "," + std::to_string(t.unbounded) + "," + num(t.median_eta) + "," + num(t.median_l2) + "," +
         num(t.eta_theory) + "," + (t.delta1_vacuous ? "1" : "0") + "," + t.status + "\n";
  }
  return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Cells already present in a previous sweep.csv / theory_attack.csv.
std::map<int, CellResult> load_finished(const ExperimentConfig& c, const fs::path& dir) {
  std::map<int, CellResult> done;
  if (!fs::exists(dir / "sweep.csv")) return done;
  const auto values = effective_values(c);
  auto cell_of = [&](int value, std::uint64_t seed) -> int {
    const auto vi = std::find(values.begin(), values.end(), value) - values.begin();
    const auto si = std::find(c.seeds.begin(), c.seeds.end(), seed) - c.seeds.begin();
    if (vi >= static_cast<long>(values.size()) || si >= static_cast<long>(c.seeds.size())) return -1;
    return static_cast<int>(vi * static_cast<long>(c.seeds.size()) + si);
  };

  std::istringstream in(read_file(dir / "sweep.csv"));
  std::string line;
  std::getline(in, line);
  require(line + "\n" == sweep_csv_header(), ErrorKind::Parse, "sweep.csv header mismatch; cannot resume");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    require(f.size() == 11, ErrorKind::Parse, "sweep.csv row with " + std::to_string(f.size()) + " fields");
    if (f[1] == "median") continue;
    SweepRow r;
    r.sweep_value = std::stoi(f[0]);
    r.seed = std::stoull(f[1]);
    r.norm = norm_from_string(f[2]);
    r.subspace = subspace_from_string(f[3]);
    r.eps_star = parse_num(f[4]);
    r.saturated = f[5] == "1";
    r.clean_train_acc = parse_num(f[6]);
    r.clean_test_acc = parse_num(f[7]);
    r.on_manifold_prop = parse_num(f[8]);
    r.runtime_s = parse_num(f[9]);
    r.status = f[10];
    const int cell = cell_of(r.sweep_value, r.seed);
    if (cell < 0) continue;
    done[cell].cell = cell;
    done[cell].rows.push_back(std::move(r));
  }

  if (c.attack.theory && fs::exists(dir / "theory_attack.csv")) {
    std::istringstream tin(read_file(dir / "theory_attack.csv"));
    std::getline(tin, line);
    while (std::getline(tin, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      require(f.size() == 12, ErrorKind::Parse, "theory_attack.csv row with wrong field count");
      TheoryRow t;
      t.sweep_value = std::stoi(f[0]);
      t.seed = std::stoull(f[1]);
      t.examples = std::stoi(f[2]);
      t.normalized_flip_fraction = parse_num(f[3]);
      t.sign_flip_fraction = parse_num(f[4]);
      t.opposite_flip_fraction = parse_num(f[5]);
      t.unbounded = std::stoi(f[6]);
      t.median_eta = parse_num(f[7]);
      t.median_l2 = parse_num(f[8]);
      t.eta_theory = parse_num(f[9]);
      t.delta1_vacuous = f[10] == "1";
      t.status = f[11];
      const int cell = cell_of(t.sweep_value, t.seed);
      if (cell >= 0 && done.count(cell)) done[cell].theory = t;
    }
  }

  // Only complete cells count as finished.
  for (auto it = done.begin(); it != done.end();) {
    const bool complete = static_cast<int>(it->second.rows.size()) == rows_per_cell(c) &&
                          (!c.attack.theory || it->second.theory.has_value());
    it = complete ? std::next(it) : done.erase(it);
  }
  return done;
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& c, bool resume, int threads) {
  c.validate();
  require(!c.out.empty(), ErrorKind::InvalidSpec, "sweep needs an output directory");
  fs::create_directories(c.out);
  if (threads > 0) omp_set_num_threads(threads);

  const int cells = cell_count(c);
  std::map<int, CellResult> done = resume ? load_finished(c, c.out) : std::map<int, CellResult>{};
  std::vector<int> pending;
  for (int i = 0; i < cells; ++i)
    if (!done.count(i)) pending.push_back(i);

  SweepResult result;
  result.resumed = static_cast<int>(done.size());
  std::vector<std::optional<CellResult>> slots(static_cast<std::size_t>(cells));
  for (auto& [i, cr] : done) slots[static_cast<std::size_t>(i)] = std::move(cr);

  auto flush_partial = [&] {
    SweepResult partial;
    for (const auto& s : slots)
      if (s) partial.cells.push_back(*s);
    write_file(c.out / "sweep.csv", cells_csv(c, partial));
    if (c.attack.theory) write_file(c.out / "theory_attack.csv", theory_attack_csv(partial));
  };

  const int nthreads = threads > 0 ? threads : omp_get_max_threads();
  if (nthreads > 1 && pending.size() > 1) {
    // Cells run in parallel; kernels inside a cell then run on one thread,
    // which does not change their results.
    omp_set_max_active_levels(1);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t p = 0; p < pending.size(); ++p) {
      CellResult cr = run_cell(c, pending[p]);
#pragma omp critical(dimgap_sweep_writer)
      {
        slots[static_cast<std::size_t>(pending[p])] = std::move(cr);
        flush_partial();
      }
    }
  } else {
    for (int i : pending) {
      slots[static_cast<std::size_t>(i)] = run_cell(c, i);
      flush_partial();
    }
  }

  for (auto& s : slots) result.cells.push_back(std::move(*s));
  write_file(c.out / "sweep.csv", sweep_csv(c, result));
  write_file(c.out / "sweep_summary.csv", sweep_summary_csv(c, result));
  if (c.attack.theory) write_file(c.out / "theory_attack.csv", theory_attack_csv(result));

  nlohmann::json timing = nlohmann::json::array();
  double total = 0;
  for (const auto& cell : result.cells) {
    timing.push_back({{"cell", cell.cell}, {"seconds", cell.seconds}});
    total += cell.seconds;
  }
  write_json(c.out / "timing.json", {{"cells", timing}, {"total_seconds", total}, {"resumed", result.resumed}});
  return result;
}

constexpr std::int64_t kMcMaxD = 10'000'000;

nlohmann::json run_theory_report(const TheoryReportParams& p, const fs::path& dir) {
  theory::RegimeParams rp = p.regime;
  if (p.tau_mode == TauMode::OneOverD) rp.tau = std::sqrt(1.0 / static_cast<double>(rp.D));
  if (p.tau_mode == TauMode::DOverD) rp.tau = std::sqrt(static_cast<double>(rp.d) / static_cast<double>(rp.D));

  const auto constants = theory::compute_constants(rp);
  const auto bounds = theory::predict_bounds(constants);
  const auto sandwich = theory::rate_sandwich(constants);

  theory::McOptions mo;
  mo.immersion = p.immersion;
  mo.p = rp.p;
  // A fixed random immersion at this size would not fit in memory; the
  // axis-aligned one has the same law for isotropic shifts.
  if (mo.immersion != theory::McImmersion::AxisAligned &&
      static_cast<double>(rp.D) * static_cast<double>(rp.d) > 5e7)
    mo.immersion = theory::McImmersion::AxisAligned;
  nlohmann::json mc_json;
  if (rp.D <= kMcMaxD) {
    mc_json = theory::to_json(theory::monte_carlo_verify(static_cast<int>(rp.d), static_cast<int>(rp.D), rp.tau,
                                                         rp.k, p.draws, p.seed, mo));
  } else {
    mc_json = {{"skipped", "D above " + std::to_string(kMcMaxD) + ", constants only"}, {"all_pass", nullptr}};
  }

  nlohmann::json report{
      {"inputs",
       {{"d", rp.d}, {"D", rp.D}, {"g", rp.g()}, {"tau", rp.tau}, {"tau_mode", to_string(p.tau_mode)},
        {"k", rp.k}, {"p", rp.p}, {"c", rp.c_class}, {"draws", p.draws}, {"seed", p.seed}}},
      {"constants", theory::to_json(constants)},
      {"bounds", theory::to_json(bounds)},
      {"sandwich",
       {{"c6_lo", sandwich.c6_lo},
        {"c6_hi", sandwich.c6_hi},
        {"c4_lo", sandwich.c4_lo},
        {"c4_hi", sandwich.c4_hi},
        {"c6_inside", sandwich.c6_inside},
        {"c4_inside", sandwich.c4_inside},
        {"premises_hold", constants.a4_holds && constants.a2_holds}}},
      {"flags",
       {{"a4_false", !constants.a4_holds},
        {"a2_false", !constants.a2_holds},
        {"eta_perp_undefined", !constants.eta_perp_defined},
        {"eta_par_undefined", !constants.eta_par_defined},
        {"delta1_vacuous", bounds.delta1_vacuous},
        {"delta2_vacuous", bounds.delta2_vacuous}}},
      {"lemma_verification", mc_json}};
  fs::create_directories(dir);
  write_json(dir / "theory_report.json", report);
  write_json(dir / "lemma_verification.json", mc_json);
  return report;
}

}  // namespace dimgap
