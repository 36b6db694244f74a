#include "dimgap/datagen.hpp"

#include "dimgap/io.hpp"
#include "dimgap/rng.hpp"

#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dimgap {

namespace fs = std::filesystem;

std::string_view to_string(MeanMode m) {
  return m == MeanMode::OrthogonalSqrtD ? "orthogonal-sqrt-d" : "gaussian";
}

std::string_view to_string(TauMode m) {
  switch (m) {
    case TauMode::Explicit: return "explicit";
    case TauMode::OneOverD: return "one-over-D";
    case TauMode::DOverD: return "d-over-D";
  }
  return "explicit";
}

MeanMode mean_mode_from_string(std::string_view s) {
  if (s == "orthogonal-sqrt-d" || s == "orthogonal") return MeanMode::OrthogonalSqrtD;
  if (s == "gaussian") return MeanMode::Gaussian;
  throw Error(ErrorKind::InvalidSpec, "unknown mean mode '" + std::string(s) + "'");
}

TauMode tau_mode_from_string(std::string_view s) {
  if (s == "explicit") return TauMode::Explicit;
  if (s == "one-over-D") return TauMode::OneOverD;
  if (s == "d-over-D") return TauMode::DOverD;
  throw Error(ErrorKind::InvalidSpec, "unknown tau mode '" + std::string(s) + "'");
}

double ClusterSpec::p() const {
  double best = 0;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j)
      best = std::max(best, std::abs(means[i].dot(means[j])));
  return best;
}

void ClusterSpec::validate() const {
  require(k >= 2, ErrorKind::InvalidSpec, "k must be >= 2");
  require(d >= 1, ErrorKind::InvalidDimensions, "d must be >= 1");
  require(static_cast<int>(means.size()) == k && static_cast<int>(labels.size()) == k,
          ErrorKind::InvalidSpec, "need one mean and one label per cluster");
  bool pos = false, neg = false;
  for (int r = 0; r < k; ++r) {
    require(means[r].size() == d, ErrorKind::InvalidDimensions, "mean length != d");
    require(labels[r] == 1 || labels[r] == -1, ErrorKind::InvalidSpec, "labels must be +1 or -1");
    pos = pos || labels[r] == 1;
    neg = neg || labels[r] == -1;
  }
  require(pos && neg, ErrorKind::InvalidSpec, "labels need both signs");
}

ClusterSpec sample_cluster_means(int k, int d, MeanMode mode, std::uint64_t seed) {
  require(k >= 2, ErrorKind::InvalidSpec, "k must be >= 2");
  require(d >= 1, ErrorKind::InvalidDimensions, "d must be >= 1");
  ClusterSpec spec;
  spec.k = k;
  spec.d = d;
  spec.mean_mode = mode;
  if (mode == MeanMode::OrthogonalSqrtD) {
    require(k <= d, ErrorKind::TooManyClusters,
            "orthogonal means need k <= d (k=" + std::to_string(k) + ", d=" + std::to_string(d) + ")");
    for (int r = 0; r < k; ++r) {
      Vector mu = Vector::Zero(d);
      mu[r] = std::sqrt(static_cast<double>(d));
      spec.means.push_back(std::move(mu));
    }
  } else {
    Rng rng(seed);
    for (int r = 0; r < k; ++r) spec.means.push_back(rng.normal_vector(d));
  }
  for (int r = 0; r < k; ++r) spec.labels.push_back(r % 2 == 0 ? 1 : -1);
  return spec;
}

double AmbientSpec::effective_tau(int d) const {
  switch (tau_mode) {
    case TauMode::Explicit: return tau;
    case TauMode::OneOverD: return std::sqrt(1.0 / D);
    case TauMode::DOverD: return std::sqrt(static_cast<double>(d) / D);
  }
  return tau;
}

void AmbientSpec::validate(int d) const {
  require(D >= d, ErrorKind::InvalidDimensions,
          "d=" + std::to_string(d) + " exceeds D=" + std::to_string(D));
  require(tau >= 0 && std::isfinite(tau), ErrorKind::InvalidSpec, "tau must be finite and >= 0");
  require(xi_scale >= 0 && omega_scale >= 0, ErrorKind::InvalidSpec, "noise scales must be >= 0");
}

Vector DataModel::embedded_mean(int r) const { return immersion.M * cluster.means[r]; }

DataModel make_data_model(const ClusterSpec& cluster, const AmbientSpec& ambient,
                          std::uint64_t seed) {
  cluster.validate();
  ambient.validate(cluster.d);
  DataModel m;
  m.cluster = cluster;
  m.ambient = ambient;
  m.seed = seed;
  m.tau = ambient.effective_tau(cluster.d);
  m.immersion = sample_orthonormal_immersion(cluster.d, ambient.D, ambient.immersion,
                                             derive_seed(seed, 0, "immersion"));
  Rng rng(derive_seed(seed, 0, "zeta"));
  for (int r = 0; r < cluster.k; ++r) m.zetas.push_back(rng.normal_vector(ambient.D, m.tau));
  return m;
}

GeneratedDataset synthesize(const DataModel& model, int n, std::uint64_t seed) {
  require(n >= 0, ErrorKind::InvalidSpec, "n must be >= 0");
  const int d = model.d();
  const int D = model.D();
  GeneratedDataset out;
  out.n = n;
  out.D = D;
  out.model = std::make_shared<const DataModel>(model);
  out.y.resize(n);
  out.cluster_ids.resize(n);
  out.intrinsic.resize(n, d);
  out.xi.resize(n, d);
  out.omega.resize(n, D);

  Rng rng(seed);
  const double xi_sd = model.ambient.xi_scale / std::sqrt(static_cast<double>(d));
  const double omega_sd = model.ambient.omega_scale / std::sqrt(static_cast<double>(D));
  for (int i = 0; i < n; ++i) {
    const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(model.k())));
    out.cluster_ids[i] = r;
    out.y[i] = model.cluster.labels[r];
    out.xi.row(i) = rng.normal_vector(d, xi_sd).transpose();
    out.omega.row(i) = rng.normal_vector(D, omega_sd).transpose();
    out.intrinsic.row(i) = model.cluster.means[r].transpose() + out.xi.row(i);
  }
  out.X = out.intrinsic * model.immersion.M.transpose() + out.omega;
  for (int i = 0; i < n; ++i) out.X.row(i) += model.zetas[out.cluster_ids[i]].transpose();
  return out;
}

GeneratedDataset synthesize(const ClusterSpec& cluster, const AmbientSpec& ambient, int n,
                            std::uint64_t seed) {
  return synthesize(make_data_model(cluster, ambient, derive_seed(seed, 0, "model")), n,
                    derive_seed(seed, 0, "samples"));
}

NiceExample sample_nice_example(const DataModel& model, int r, std::uint64_t seed) {
  require(r >= 0 && r < model.k(), ErrorKind::InvalidSpec, "cluster index out of range");
  const int d = model.d();
  const int D = model.D();
  const double xi_bound = std::sqrt(2.0) * std::log(static_cast<double>(d));
  const double xi_sd = model.ambient.xi_scale / std::sqrt(static_cast<double>(d));
  const double omega_sd = model.ambient.omega_scale / std::sqrt(static_cast<double>(D));

  Rng rng(seed);
  NiceExample ex;
  ex.cluster = r;
  ex.y = model.cluster.labels[r];
  do {
    require(ex.xi_draws < kMaxNiceDraws, ErrorKind::RejectionExhausted,
            "xi rejection: 0 of " + std::to_string(ex.xi_draws) +
                " draws accepted (acceptance rate 0); xi_scale too large for sqrt2 ln d");
    ex.xi = rng.normal_vector(d, xi_sd);
    ++ex.xi_draws;
  } while (ex.xi.norm() > xi_bound);
  do {
    require(ex.omega_draws < kMaxNiceDraws, ErrorKind::RejectionExhausted,
            "omega rejection: 0 of " + std::to_string(ex.omega_draws) +
                " draws accepted (acceptance rate 0); omega_scale too large for ||omega|| <= 1");
    ex.omega = rng.normal_vector(D, omega_sd);
    ++ex.omega_draws;
  } while (ex.omega.norm() > 1.0);

  ex.x = model.immersion.M * (model.cluster.means[r] + ex.xi) + model.zetas[r] + ex.omega;
  return ex;
}

GeneratedDataset sample_nice_dataset(const std::shared_ptr<const DataModel>& model, int n,
                                     std::uint64_t seed) {
  require(model != nullptr, ErrorKind::MissingTruth, "nice examples need the data model");
  const int d = model->d();
  const int D = model->D();
  GeneratedDataset out;
  out.n = n;
  out.D = D;
  out.model = model;
  out.X.resize(n, D);
  out.y.resize(n);
  out.cluster_ids.resize(n);
  out.intrinsic.resize(n, d);
  out.xi.resize(n, d);
  out.omega.resize(n, D);
  Rng pick(derive_seed(seed, 0, "nice-clusters"));
  for (int i = 0; i < n; ++i) {
    const int r = static_cast<int>(pick.below(static_cast<std::uint64_t>(model->k())));
    auto ex = sample_nice_example(*model, r, derive_seed(seed, static_cast<std::uint64_t>(i), "nice"));
    out.X.row(i) = ex.x.transpose();
    out.y[i] = ex.y;
    out.cluster_ids[i] = r;
    out.xi.row(i) = ex.xi.transpose();
    out.omega.row(i) = ex.omega.transpose();
    out.intrinsic.row(i) = (model->cluster.means[r] + ex.xi).transpose();
  }
  return out;
}

namespace {

double class_balance(const ClusterSpec& c) {
  const auto pos = std::count(c.labels.begin(), c.labels.end(), 1);
  const auto neg = static_cast<long>(c.labels.size()) - pos;
  return static_cast<double>(std::min<long>(pos, neg)) / c.k;
}

}  // namespace

AssumptionAudit audit_assumptions(const GeneratedDataset& data, std::uint64_t seed) {
  require(data.has_truth(), ErrorKind::MissingTruth, "audit needs truth fields");
  const DataModel& m = *data.model;
  const int d = m.d();
  const double sqd = std::sqrt(static_cast<double>(d));

  AssumptionAudit a;
  a.p = m.cluster.p();
  a.a1_holds = true;
  for (const auto& mu : m.cluster.means)
    a.a1_holds = a.a1_holds && std::abs(mu.norm() - sqd) <= 1e-9 * sqd;

  for (int i = 0; i < data.n; ++i) {
    a.max_xi_norm = std::max(a.max_xi_norm, data.xi.row(i).norm());
    a.max_omega_norm = std::max(a.max_omega_norm, data.omega.row(i).norm());
    a.realized_zeta_bar = std::max(
        a.realized_zeta_bar, (m.zetas[data.cluster_ids[i]] + data.omega.row(i).transpose()).norm());
  }
  if (data.n == 0)
    for (const auto& z : m.zetas) a.realized_zeta_bar = std::max(a.realized_zeta_bar, z.norm());

  if (d < 2) return a;  // ln d = 0: the constants are undefined

  theory::RegimeParams rp;
  rp.d = d;
  rp.D = m.D();
  rp.tau = m.tau;
  rp.k = m.k();
  rp.p = a.p;
  rp.c_class = class_balance(m.cluster);
  rp.max_xi = a.max_xi_norm;
  rp.max_omega = a.max_omega_norm;
  a.constants = theory::compute_constants(rp);
  rp.zeta_bar_override = a.realized_zeta_bar;
  a.constants_realized = theory::compute_constants(rp);

  a.c_prime = a.constants.c_prime;
  a.c_prime_realized = a.constants_realized.c_prime;
  a.a2_holds = a.constants.a2_holds;
  a.a2_holds_realized = a.constants_realized.a2_holds;
  a.a3_holds = a.constants.a3_holds;
  a.a4_holds = a.constants.a4_holds;

  if (data.n < 2) return a;
  const double delta = a.constants_realized.Delta;
  const double delta_p = a.constants_realized.Delta_prime;
  Rng rng(derive_seed(seed, 0, "audit-pairs"));
  const auto n = static_cast<std::uint64_t>(data.n);
  for (int t = 0; t < 100; ++t) {
    const auto i = static_cast<int>(rng.below(n));
    auto j = static_cast<int>(rng.below(n - 1));
    if (j >= i) ++j;
    const int ri = data.cluster_ids[i];
    const int rj = data.cluster_ids[j];
    const Vector xi_i = data.xi.row(i).transpose();
    const Vector xi_j = data.xi.row(j).transpose();
    const Vector x_i = data.intrinsic.row(i).transpose();
    const Vector x_j = data.intrinsic.row(j).transpose();
    const Vector xt_i = data.X.row(i).transpose();
    const Vector xt_j = data.X.row(j).transpose();
    const Vector xit_i = xt_i - m.embedded_mean(ri);
    const Vector xit_j = xt_j - m.embedded_mean(rj);

    if (!(std::abs(xi_i.dot(xi_j)) < delta && std::abs(xit_i.dot(xit_j)) <= delta_p))
      ++a.property_violations[0];
    if (!(std::abs(x_i.dot(xi_j)) <= delta && std::abs(xt_i.dot(xit_j)) <= delta_p))
      ++a.property_violations[1];
    if (ri != rj) {
      if (!(std::abs(x_i.dot(x_j)) <= a.p + delta && std::abs(xt_i.dot(xt_j)) <= a.p + delta_p))
        ++a.property_violations[2];
    } else {
      if (!(std::abs(x_i.dot(x_j) - d) <= delta && std::abs(xt_i.dot(xt_j) - d) <= delta_p))
        ++a.property_violations[3];
    }
    ++a.pairs_checked;
  }
  return a;
}

nlohmann::json to_json(const AssumptionAudit& a) {
  return {{"a1_holds", a.a1_holds},
          {"a2_holds", a.a2_holds},
          {"a2_holds_realized", a.a2_holds_realized},
          {"a3_holds", a.a3_holds},
          {"a4_holds", a.a4_holds},
          {"p", a.p},
          {"c_prime", a.c_prime},
          {"c_prime_realized", a.c_prime_realized},
          {"max_xi_norm", a.max_xi_norm},
          {"max_omega_norm", a.max_omega_norm},
          {"realized_zeta_bar", a.realized_zeta_bar},
          {"pairs_checked", a.pairs_checked},
          {"property_violations", a.property_violations},
          {"constants", theory::to_json(a.constants)},
          {"constants_realized", theory::to_json(a.constants_realized)}};
}

void write_data_csv(const GeneratedDataset& data, const fs::path& path) {
  std::string s = "y";
  for (int c = 1; c <= data.D; ++c) s += ",x" + std::to_string(c);
  s += '\n';
  s.reserve(s.size() + static_cast<std::size_t>(data.n) * data.D * 24);
  for (int i = 0; i < data.n; ++i) {
    s += fmt17(data.y[i]);
    for (int c = 0; c < data.D; ++c) {
      s += ',';
      s += fmt17(data.X(i, c));
    }
    s += '\n';
  }
  write_file(path, s);
}

nlohmann::json truth_to_json(const GeneratedDataset& data) {
  require(data.has_truth(), ErrorKind::MissingTruth, "dataset has no truth to write");
  const DataModel& m = *data.model;
  nlohmann::json means = nlohmann::json::array();
  for (const auto& mu : m.cluster.means) means.push_back(vector_to_json(mu));
  nlohmann::json zetas = nlohmann::json::array();
  for (const auto& z : m.zetas) zetas.push_back(vector_to_json(z));
  return {{"d", m.d()},
          {"D", m.D()},
          {"k", m.k()},
          {"n", data.n},
          {"tau", m.tau},
          {"tau_mode", to_string(m.ambient.tau_mode)},
          {"mean_mode", to_string(m.cluster.mean_mode)},
          {"xi_scale", m.ambient.xi_scale},
          {"omega_scale", m.ambient.omega_scale},
          {"immersion_mode", to_string(m.immersion.mode)},
          {"model_seed", m.seed},
          {"means", means},
          {"labels", m.cluster.labels},
          {"M", matrix_to_json(m.immersion.M)},
          {"zetas", zetas},
          {"samples",
           {{"cluster_id", data.cluster_ids},
            {"xi", matrix_to_json(data.xi)},
            {"omega", matrix_to_json(data.omega)}}}};
}

std::string spec_toml(const DataModel& m, int n) {
  toml::table data{
      {"d", m.d()},
      {"D", m.D()},
      {"k", m.k()},
      {"n", n},
      {"tau", m.ambient.tau},
      {"tau_mode", std::string(to_string(m.ambient.tau_mode))},
      {"mean_mode", std::string(to_string(m.cluster.mean_mode))},
      {"xi_scale", m.ambient.xi_scale},
      {"omega_scale", m.ambient.omega_scale},
      {"immersion", std::string(to_string(m.ambient.immersion))},
  };
  toml::array labels;
  for (int l : m.cluster.labels) labels.push_back(l);
  data.insert("labels", std::move(labels));
  toml::table root{{"data", std::move(data)}};
  std::ostringstream ss;
  ss << root << '\n';
  return ss.str();
}

void write_dataset(const GeneratedDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  write_data_csv(data, dir / "data.csv");
  if (data.has_truth()) {
    write_json(dir / "truth.json", truth_to_json(data));
    write_file(dir / "spec.toml", spec_toml(*data.model, data.n));
  }
}

GeneratedDataset read_dataset(const fs::path& dir) {
  const auto table = read_numeric_csv(dir / "data.csv");
  require(!table.header.empty() && table.header.front() == "y", ErrorKind::Parse,
          (dir / "data.csv").string() + ": header must start with 'y'");
  GeneratedDataset out;
  out.n = static_cast<int>(table.values.rows());
  out.D = static_cast<int>(table.values.cols()) - 1;
  out.y = table.values.col(0);
  out.X = table.values.rightCols(out.D);
  for (int i = 0; i < out.n; ++i)
    require(out.y[i] == 1.0 || out.y[i] == -1.0, ErrorKind::Parse,
            "row " + std::to_string(i + 1) + ": label must be +1 or -1");

  if (!fs::exists(dir / "truth.json")) return out;
  const auto j = read_json(dir / "truth.json");
  try {
    auto m = std::make_shared<DataModel>();
    m->cluster.k = j.at("k").get<int>();
    m->cluster.d = j.at("d").get<int>();
    m->cluster.mean_mode = mean_mode_from_string(j.at("mean_mode").get<std::string>());
    for (const auto& mu : j.at("means")) m->cluster.means.push_back(vector_from_json(mu));
    m->cluster.labels = j.at("labels").get<std::vector<int>>();
    m->ambient.D = j.at("D").get<int>();
    m->ambient.tau_mode = tau_mode_from_string(j.at("tau_mode").get<std::string>());
    m->tau = j.at("tau").get<double>();
    m->ambient.tau = m->tau;
    m->ambient.xi_scale = j.at("xi_scale").get<double>();
    m->ambient.omega_scale = j.at("omega_scale").get<double>();
    m->ambient.immersion = immersion_mode_from_string(j.at("immersion_mode").get<std::string>());
    m->immersion = {m->cluster.d, m->ambient.D, matrix_from_json(j.at("M")), m->ambient.immersion};
    for (const auto& z : j.at("zetas")) m->zetas.push_back(vector_from_json(z));
    m->seed = j.at("model_seed").get<std::uint64_t>();
    m->cluster.validate();
    require(m->ambient.D == out.D, ErrorKind::Parse, "truth.json D does not match data.csv");

    const auto& s = j.at("samples");
    out.cluster_ids = s.at("cluster_id").get<std::vector<int>>();
    out.xi = matrix_from_json(s.at("xi"));
    out.omega = matrix_from_json(s.at("omega"));
    require(static_cast<int>(out.cluster_ids.size()) == out.n && out.xi.rows() == out.n &&
                out.omega.rows() == out.n,
            ErrorKind::Parse, "truth.json sample count does not match data.csv");
    out.intrinsic = out.xi;
    for (int i = 0; i < out.n; ++i)
      out.intrinsic.row(i) += m->cluster.means.at(out.cluster_ids[i]).transpose();
    out.model = std::move(m);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, (dir / "truth.json").string() + ": " + e.what());
  }
  return out;
}

}  // namespace dimgap
