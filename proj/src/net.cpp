#include "dimgap/net.hpp"

#include "dimgap/datagen.hpp"
#include "dimgap/io.hpp"
#include "dimgap/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dimgap {

std::string_view to_string(LossKind k) { return k == LossKind::Exponential ? "exponential" : "logistic"; }

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "exponential" || s == "exp") return LossKind::Exponential;
  if (s == "logistic") return LossKind::Logistic;
  throw Error(ErrorKind::InvalidSpec, "unknown loss '" + std::string(s) + "'");
}

double loss_value(LossKind kind, double z) {
  if (kind == LossKind::Exponential) return std::exp(-z);
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

double loss_derivative(LossKind kind, double z) {
  if (kind == LossKind::Exponential) return -std::exp(-z);
  if (z >= 0) {
    const double e = std::exp(-z);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(z));
}

void NetParams::validate() const {
  require(W.rows() >= 1, ErrorKind::InvalidSpec, "width must be >= 1");
  require(b.size() == W.rows() && v.size() == W.rows(), ErrorKind::InvalidDimensions,
          "b and v must have one entry per neuron");
  require(all_finite(W) && all_finite(b) && all_finite(v), ErrorKind::InvalidSpec,
          "parameters must be finite");
}

NetParams init_params(int width, int D, double factor, std::uint64_t seed) {
  require(width >= 1 && D >= 1, ErrorKind::InvalidSpec, "width and D must be >= 1");
  Rng rng(seed);
  NetParams p;
  p.W = rng.normal_matrix(width, D, factor * std::sqrt(2.0 / D));
  p.b = Vector::Zero(width);
  p.v = rng.normal_vector(width, factor * std::sqrt(2.0 / width));
  return p;
}

namespace {

void check_inputs(const NetParams& p, const Matrix& X) {
  require(X.cols() == p.D(), ErrorKind::InvalidDimensions,
          "input dimension " + std::to_string(X.cols()) + " != D=" + std::to_string(p.D()));
}

Eigen::Index chunk_count(Eigen::Index n) { return (n + kChunk - 1) / kChunk; }

}  // namespace

double forward(const NetParams& params, const Vector& x) {
  require(x.size() == params.D(), ErrorKind::InvalidDimensions,
          "input dimension " + std::to_string(x.size()) + " != D=" + std::to_string(params.D()));
  const Vector h = params.W * x + params.b;
  return params.v.dot(h.cwiseMax(0.0));
}

Matrix preactivations(const NetParams& params, const Matrix& X, Exec exec) {
  check_inputs(params, X);
  const Eigen::Index n = X.rows();
  const Eigen::Index w = params.width();
  Matrix H(n, w);
  if (exec == Exec::Serial) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < w; ++j) {
        double s = params.b[j];
        for (Eigen::Index c = 0; c < X.cols(); ++c) s += params.W(j, c) * X(i, c);
        H(i, j) = s;
      }
    return H;
  }
  const Eigen::Index chunks = chunk_count(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index r0 = c * kChunk;
    const Eigen::Index len = std::min(kChunk, n - r0);
    auto block = H.middleRows(r0, len);
    block.noalias() = X.middleRows(r0, len) * params.W.transpose();
    block.rowwise() += params.b.transpose();
  }
  return H;
}

Vector forward_batch(const NetParams& params, const Matrix& X, Exec exec) {
  const Matrix H = preactivations(params, X, exec);
  Vector out(H.rows());
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < H.cols(); ++j)
      if (H(i, j) > 0) s += params.v[j] * H(i, j);
    out[i] = s;
  }
  return out;
}

double empirical_loss(const NetParams& params, const Matrix& X, const Vector& y, LossKind kind,
                      Exec exec) {
  require(X.rows() >= 1, ErrorKind::UndefinedInput, "empirical loss needs n >= 1");
  require(y.size() == X.rows(), ErrorKind::InvalidDimensions, "labels length != n");
  const Vector out = forward_batch(params, X, exec);
  double s = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i) s += loss_value(kind, y[i] * out[i]);
  return s / static_cast<double>(out.size());
}

double accuracy(const NetParams& params, const Matrix& X, const Vector& y, Exec exec) {
  if (X.rows() == 0) return 0.0;
  const Vector out = forward_batch(params, X, exec);
  long ok = 0;
  for (Eigen::Index i = 0; i < out.size(); ++i) ok += y[i] * out[i] > 0;
  return static_cast<double>(ok) / static_cast<double>(out.size());
}

NetParams margin_normalized(const NetParams& params, const Matrix& X, const Vector& y) {
  require(X.rows() == y.size() && X.rows() > 0, ErrorKind::InvalidDimensions, "need a nonempty labelled batch");
  const Vector out = forward_batch(params, X);
  const double m = (y.array() * out.array()).minCoeff();
  require(m > 0, ErrorKind::UndefinedInput, "margin normalization needs every example classified correctly");
  const double s = 1.0 / std::sqrt(m);
  NetParams q = params;
  q.W *= s;
  q.b *= s;
  q.v *= s;
  return q;
}

namespace {

struct GradientPass {
  Gradient grad;
  Vector outputs;
};

GradientPass gradient_pass(const NetParams& params, const Matrix& X, const Vector& y,
                           LossKind kind, double weight_decay, Exec exec) {
  check_inputs(params, X);
  require(X.rows() >= 1, ErrorKind::UndefinedInput, "gradient needs n >= 1");
  require(y.size() == X.rows(), ErrorKind::InvalidDimensions, "labels length != n");
  const Eigen::Index n = X.rows();
  const Eigen::Index w = params.width();
  const Eigen::Index D = params.D();
  const double inv_n = 1.0 / static_cast<double>(n);

  GradientPass out;
  Gradient& g = out.grad;
  const Matrix H = preactivations(params, X, exec);
  out.outputs.resize(n);
  Vector coef(n);  // y_i l'(y_i N_i) / n
  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0;
    for (Eigen::Index j = 0; j < w; ++j)
      if (H(i, j) > 0) s += params.v[j] * H(i, j);
    out.outputs[i] = s;
    loss += loss_value(kind, y[i] * s);
    coef[i] = y[i] * loss_derivative(kind, y[i] * s) * inv_n;
  }
  g.loss = loss * inv_n;

  if (exec == Exec::Serial) {
    g.W = Matrix::Zero(w, D);
    g.b = Vector::Zero(w);
    g.v = Vector::Zero(w);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < w; ++j) {
        if (H(i, j) <= 0) continue;
        g.v[j] += coef[i] * H(i, j);
        const double s = coef[i] * params.v[j];
        g.b[j] += s;
        for (Eigen::Index c = 0; c < D; ++c) g.W(j, c) += s * X(i, c);
      }
  } else {
    // S_ij = coef_i v_j relu'(H_ij), A_ij = relu(H_ij); reductions over samples
    // run inside each neuron chunk, so the order is fixed.
    Matrix S(n, w);
    Matrix A(n, w);
    const Eigen::Index rchunks = chunk_count(n);
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < rchunks; ++c) {
      const Eigen::Index r0 = c * kChunk;
      const Eigen::Index r1 = std::min(n, r0 + kChunk);
      for (Eigen::Index j = 0; j < w; ++j)
        for (Eigen::Index i = r0; i < r1; ++i) {
          const bool on = H(i, j) > 0;
          A(i, j) = on ? H(i, j) : 0.0;
          S(i, j) = on ? coef[i] * params.v[j] : 0.0;
        }
    }
    g.W.resize(w, D);
    g.b.resize(w);
    g.v.resize(w);
    const Eigen::Index nchunks = chunk_count(w);
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < nchunks; ++c) {
      const Eigen::Index j0 = c * kChunk;
      const Eigen::Index len = std::min(kChunk, w - j0);
      g.W.middleRows(j0, len).noalias() = S.middleCols(j0, len).transpose() * X;
      g.v.segment(j0, len).noalias() = A.middleCols(j0, len).transpose() * coef;
      g.b.segment(j0, len) = S.middleCols(j0, len).colwise().sum().transpose();
    }
  }

  if (weight_decay != 0) {
    g.W += weight_decay * params.W;
    g.b += weight_decay * params.b;
    g.v += weight_decay * params.v;
  }
  return out;
}

}  // namespace

Gradient gradient(const NetParams& params, const Matrix& X, const Vector& y, LossKind kind,
                  double weight_decay, Exec exec) {
  return gradient_pass(params, X, y, kind, weight_decay, exec).grad;
}

Matrix input_gradients(const NetParams& params, const Matrix& X, Exec exec) {
  const Matrix H = preactivations(params, X, exec);
  const Eigen::Index n = X.rows();
  const Eigen::Index w = params.width();
  Matrix G(n, params.D());
  if (exec == Exec::Serial) {
    G.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < w; ++j)
        if (H(i, j) > 0) G.row(i) += params.v[j] * params.W.row(j);
    return G;
  }
  const Eigen::Index chunks = chunk_count(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const Eigen::Index r0 = c * kChunk;
    const Eigen::Index len = std::min(kChunk, n - r0);
    Matrix S(len, w);
    for (Eigen::Index j = 0; j < w; ++j)
      for (Eigen::Index i = 0; i < len; ++i) S(i, j) = H(r0 + i, j) > 0 ? params.v[j] : 0.0;
    G.middleRows(r0, len).noalias() = S * params.W;
  }
  return G;
}

void TrainConfig::validate() const {
  require(lr >= 0 && std::isfinite(lr), ErrorKind::InvalidSpec, "lr must be finite and >= 0");
  require(epochs >= 1, ErrorKind::InvalidSpec, "epochs must be >= 1");
  require(weight_decay >= 0, ErrorKind::InvalidSpec, "weight_decay must be >= 0");
  require(width >= 1, ErrorKind::InvalidSpec, "width must be >= 1");
}

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::Epochs: return "epochs";
    case StopReason::StopLoss: return "stop-loss";
    case StopReason::Diverged: return "diverged";
  }
  return "epochs";
}

std::pair<NetParams, TrainTrace> train_gd(NetParams params, const Matrix& X, const Vector& y,
                                          const TrainConfig& config, Exec exec) {
  config.validate();
  params.validate();
  const double inv_n = 1.0 / static_cast<double>(std::max<Eigen::Index>(X.rows(), 1));
  TrainTrace trace;
  NetParams prev = params;

  auto record = [&](double loss, const Vector& out) {
    long ok = 0;
    double margin = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      ok += y[i] * out[i] > 0;
      margin = std::min(margin, y[i] * out[i]);
    }
    const double sq = params.squared_norm();
    trace.loss.push_back(loss);
    trace.train_accuracy.push_back(static_cast<double>(ok) / static_cast<double>(out.size()));
    trace.param_norm.push_back(std::sqrt(sq));
    trace.normalized_margin.push_back(sq > 0 ? margin / sq : 0.0);
  };

  bool diverged = false;
  for (int t = 0; t < config.epochs; ++t) {
    auto pass = gradient_pass(params, X, y, config.loss, config.weight_decay, exec);
    if (!std::isfinite(pass.grad.loss) || !all_finite(pass.grad.W)) {
      diverged = true;
      params = prev;
      break;
    }
    record(pass.grad.loss, pass.outputs);
    trace.last_finite_epoch = t;
    if (trace.crossed_inverse_n < 0 && pass.grad.loss < inv_n) trace.crossed_inverse_n = t;
    if (config.stop_loss && pass.grad.loss <= *config.stop_loss) {
      trace.stop = StopReason::StopLoss;
      break;
    }
    prev = params;
    params.W -= config.lr * pass.grad.W;
    params.b -= config.lr * pass.grad.b;
    params.v -= config.lr * pass.grad.v;
    ++trace.updates;
  }

  double final_loss = empirical_loss(params, X, y, config.loss, exec);
  if (!diverged && (!std::isfinite(final_loss) || !all_finite(params.W))) {
    diverged = true;
    params = prev;
    --trace.updates;
    final_loss = empirical_loss(params, X, y, config.loss, exec);
  }
  if (diverged) trace.stop = StopReason::Diverged;
  trace.final_loss = final_loss;
  trace.final_accuracy = accuracy(params, X, y, exec);
  return {std::move(params), std::move(trace)};
}

NnlsResult nnls_gram(const Matrix& G, const Vector& c, double tol, int max_iter) {
  const Eigen::Index n = c.size();
  require(G.rows() == n && G.cols() == n, ErrorKind::InvalidDimensions, "Gram shape != n x n");
  if (max_iter <= 0) max_iter = static_cast<int>(3 * n + 30);
  const double scale = std::max(c.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());

  NnlsResult res;
  res.x = Vector::Zero(n);
  std::vector<char> passive(n, 0), blocked(n, 0);
  Vector& x = res.x;

  auto solve_passive = [&](std::vector<Eigen::Index>& idx, Vector& s) {
    idx.clear();
    for (Eigen::Index i = 0; i < n; ++i)
      if (passive[i]) idx.push_back(i);
    const auto m = static_cast<Eigen::Index>(idx.size());
    Matrix Gp(m, m);
    Vector cp(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      cp[a] = c[idx[a]];
      for (Eigen::Index b = 0; b < m; ++b) Gp(a, b) = G(idx[a], idx[b]);
    }
    s = Gp.ldlt().solve(cp);
  };

  while (res.iterations < max_iter) {
    const Vector w = c - G * x;
    Eigen::Index j = -1;
    double best = tol * scale;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!passive[i] && !blocked[i] && w[i] > best) {
        best = w[i];
        j = i;
      }
    if (j < 0) {
      res.converged = true;
      break;
    }
    ++res.iterations;
    passive[j] = 1;

    std::vector<Eigen::Index> idx;
    Vector s;
    bool first = true;
    while (true) {
      solve_passive(idx, s);
      bool feasible = true;
      for (Eigen::Index a = 0; a < s.size(); ++a) feasible = feasible && s[a] > 0;
      if (feasible) {
        for (Eigen::Index a = 0; a < s.size(); ++a) x[idx[a]] = s[a];
        std::fill(blocked.begin(), blocked.end(), 0);
        break;
      }
      double alpha = 1.0;
      for (Eigen::Index a = 0; a < s.size(); ++a)
        if (s[a] <= 0) alpha = std::min(alpha, x[idx[a]] / (x[idx[a]] - s[a]));
      if (first && alpha <= 0) {
        // The entering index cannot move; keep it out until x changes.
        passive[j] = 0;
        blocked[j] = 1;
        break;
      }
      first = false;
      for (Eigen::Index a = 0; a < s.size(); ++a) {
        const Eigen::Index i = idx[a];
        x[i] += alpha * (s[a] - x[i]);
        if (x[i] <= 1e-300 || (s[a] <= 0 && x[i] <= 1e-15 * std::abs(s[a]))) {
          x[i] = 0;
          passive[i] = 0;
        }
      }
      std::fill(blocked.begin(), blocked.end(), 0);
      if (std::none_of(passive.begin(), passive.end(), [](char p) { return p != 0; })) break;
    }
  }

  const Vector w = c - G * x;
  double stat = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    stat = std::max(stat, passive[i] ? std::abs(w[i]) : std::max(w[i], 0.0));
  res.stationarity = stat / scale;
  return res;
}

KktDiagnostics kkt_fit(const NetParams& params, const Matrix& X, const Vector& y,
                       const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& active) {
  check_inputs(params, X);
  const Eigen::Index n = X.rows();
  const Eigen::Index w = params.width();
  require(active.rows() == n && active.cols() == w, ErrorKind::InvalidDimensions,
          "activation pattern must be n x width");
  require(y.size() == n, ErrorKind::InvalidDimensions, "labels length != n");

  const Matrix Phi = active.cast<double>().matrix();
  const Matrix H = preactivations(params, X);
  const Vector v2 = params.v.cwiseAbs2();
  const Matrix Q = Phi * v2.asDiagonal() * Phi.transpose();
  Matrix K = X * X.transpose();
  K.array() += 1.0;
  const Matrix G = (y * y.transpose()).cwiseProduct(K).cwiseProduct(Q);
  const Vector c = y.cwiseProduct(Phi.cwiseProduct(H) * params.v);

  KktDiagnostics out;
  out.nnls = nnls_gram(G, c);
  out.lambdas = out.nnls.x;

  const Vector ly = out.lambdas.cwiseProduct(y);
  const Matrix coeff = params.v.asDiagonal() * Phi.transpose() * ly.asDiagonal();  // w x n
  const Matrix W_hat = coeff * X;
  const Vector b_hat = coeff.rowwise().sum();
  const double wn = params.W.norm();
  const double bn = params.b.norm();
  out.weight_residual = (W_hat - params.W).norm() / (wn > 0 ? wn : 1.0);
  out.bias_residual = (b_hat - params.b).norm() / (bn > 0 ? bn : 1.0);
  return out;
}

KktDiagnostics kkt_diagnostics(const NetParams& params, const GeneratedDataset& data) {
  const Matrix H = preactivations(params, data.X);
  auto out = kkt_fit(params, data.X, data.y, (H.array() > 0.0));
  if (!data.has_truth()) return out;

  const DataModel& m = *data.model;
  const SubspaceProjectors proj(m.immersion);
  Matrix span(m.k() + data.n, m.D());
  for (int r = 0; r < m.k(); ++r) span.row(r) = m.zetas[r].transpose();
  span.bottomRows(data.n) = data.omega;
  const Matrix basis_src = proj.off_rows(span).transpose();  // D x (k + n)

  Eigen::ColPivHouseholderQR<Matrix> qr(basis_src);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  const Matrix Q = qr.householderQ() * Matrix::Identity(m.D(), rank);
  const Matrix PW = proj.off_rows(params.W);
  const Matrix R = PW - (PW * Q) * Q.transpose();
  out.volatile_available = true;
  out.volatile_span_rank = static_cast<int>(rank);
  for (Eigen::Index j = 0; j < PW.rows(); ++j) {
    const double nrm = PW.row(j).norm();
    out.volatile_span_residual.push_back(nrm > 0 ? R.row(j).norm() / nrm : 0.0);
  }
  return out;
}

WeightSplit decompose_weights(const NetParams& params, const SubspaceProjectors& proj) {
  require(params.D() == proj.D(), ErrorKind::InvalidDimensions, "weights and projectors disagree on D");
  WeightSplit s;
  s.authentic = proj.on_rows(params.W);
  s.volatile_ = params.W - s.authentic;
  return s;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"loss", to_string(c.loss)},   {"lr", c.lr},
                   {"epochs", c.epochs},          {"weight_decay", c.weight_decay},
                   {"width", c.width},            {"init_factor", c.init_factor}};
  j["stop_loss"] = c.stop_loss ? nlohmann::json(*c.stop_loss) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  c.lr = j.at("lr").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.weight_decay = j.value("weight_decay", 0.0);
  c.width = j.value("width", c.width);
  c.init_factor = j.value("init_factor", 1.0);
  if (j.contains("stop_loss") && !j["stop_loss"].is_null()) c.stop_loss = j["stop_loss"].get<double>();
  return c;
}

void write_model(const std::filesystem::path& path, const ModelFile& model) {
  const auto& p = model.params;
  write_json(path, {{"width", p.width()},
                    {"D", p.D()},
                    {"W", matrix_to_json(p.W)},
                    {"b", vector_to_json(p.b)},
                    {"v", vector_to_json(p.v)},
                    {"train_config", to_json(model.config)},
                    {"final_loss", model.final_loss},
                    {"seed", model.seed}});
}

ModelFile read_model(const std::filesystem::path& path) {
  const auto j = read_json(path);
  try {
    ModelFile m;
    m.params.W = matrix_from_json(j.at("W"));
    m.params.b = vector_from_json(j.at("b"));
    m.params.v = vector_from_json(j.at("v"));
    m.params.validate();
    require(m.params.width() == j.at("width").get<int>() && m.params.D() == j.at("D").get<int>(),
            ErrorKind::Parse, "model.json width/D disagree with W");
    m.config = train_config_from_json(j.at("train_config"));
    m.final_loss = j.value("final_loss", 0.0);
    m.seed = j.value("seed", std::uint64_t{0});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

}  // namespace dimgap
