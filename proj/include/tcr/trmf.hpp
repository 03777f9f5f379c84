#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcr/error.hpp"
#include "tcr/parallel.hpp"
#include "tcr/rng.hpp"
#include "tcr/series.hpp"

namespace tcr::trmf {

struct Hyper {
  int d = 8;
  int p = 4;
  double lambda_f = 0.5;
  double lambda_z = 0.5;
  double lambda_phi = 0.1;
  double eta_z = 0.9;
  double eta_f = 0.0;
  int max_sweeps = 50;
  double tol = 1e-5;

  void validate(Eigen::Index periods) const {
    if (d < 1) fail(ErrorCategory::ConfigError, "trmf d must be >= 1");
    if (p < 1) fail(ErrorCategory::ConfigError, "trmf p must be >= 1");
    if (p >= periods) fail(ErrorCategory::InsufficientHistory, "trmf p must be below the series length");
    if (lambda_f < 0 || lambda_z < 0 || lambda_phi < 0) fail(ErrorCategory::ConfigError, "negative trmf penalty");
    if (eta_z < 0 || eta_z > 1 || eta_f < 0 || eta_f > 1) fail(ErrorCategory::ConfigError, "trmf eta outside [0, 1]");
    if (max_sweeps < 1) fail(ErrorCategory::ConfigError, "trmf max_sweeps must be >= 1");
  }
};

/// Optional column graph for the loadings penalty: A (n x n, non-negative).
struct Graph {
  Eigen::MatrixXd similarity;

  /// G = M M^T with M = I - A^T D^{-1}, D = diag(row sums of A). Rows with
  /// zero degree contribute no smoothing.
  Eigen::MatrixXd gram() const {
    const Eigen::Index n = similarity.rows();
    const Eigen::VectorXd deg = similarity.rowwise().sum();
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (deg(j) > 0) m.col(j) -= similarity.row(j).transpose() / deg(j);
    }
    // m(:, j) = e_j - A(j, :)^T / D_jj, i.e. I - A^T D^{-1}.
    return m * m.transpose();
  }
};

struct Model {
  Eigen::MatrixXd Z;    // T x d
  Eigen::MatrixXd F;    // d x n
  Eigen::MatrixXd phi;  // d x p, phi(j, l-1) multiplies z_{t-l, j}
  Hyper hyper;
  std::uint64_t seed = 0;
  std::vector<double> objective_trace;
  std::optional<Graph> graph;
  int sweeps = 0;

  Eigen::Index periods() const { return Z.rows(); }
  Eigen::Index series() const { return F.cols(); }
};

/// Full regularized objective evaluated from scratch.
inline double objective(const SeriesMatrix& y, const Eigen::MatrixXd& z, const Eigen::MatrixXd& f,
                        const Eigen::MatrixXd& phi, const Hyper& h, const Graph* graph = nullptr) {
  const double T = static_cast<double>(z.rows()), d = static_cast<double>(h.d), n = static_cast<double>(f.cols()),
               p = static_cast<double>(h.p);
  const double omega = static_cast<double>(y.observed_count());
  const Eigen::MatrixXd resid = y.values - z * f;
  double fit = 0.0;
  for (Eigen::Index i = 0; i < resid.cols(); ++i) {
    for (Eigen::Index t = 0; t < resid.rows(); ++t) {
      if (y.observed(t, i)) fit += resid(t, i) * resid(t, i);
    }
  }
  double reg_f = f.squaredNorm() / (d * n);
  if (graph) {
    const Eigen::MatrixXd g = graph->gram();
    reg_f = (1.0 - h.eta_f) * reg_f + h.eta_f * (f * g * f.transpose()).trace() / (d * n);
  }
  double ar = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index t = h.p; t < z.rows(); ++t) {
      double e = z(t, j);
      for (int l = 1; l <= h.p; ++l) e -= phi(j, l - 1) * z(t - l, j);
      ar += e * e;
    }
  }
  return fit / (2.0 * omega) + 0.5 * h.lambda_f * reg_f + 0.5 * h.lambda_phi * phi.squaredNorm() / (d * p) +
         0.5 * h.lambda_z * ((1.0 - h.eta_z) * z.squaredNorm() / (T * d) + h.eta_z * ar / ((T - p) * d));
}

inline double objective(const SeriesMatrix& y, const Model& m) {
  return objective(y, m.Z, m.F, m.phi, m.hyper, m.graph ? &*m.graph : nullptr);
}

namespace detail {

/// Solves the symmetric positive (semi)definite system; a tiny diagonal
/// shift is added only if the factorization breaks down.
inline Eigen::VectorXd spd_solve(Eigen::MatrixXd a, const Eigen::VectorXd& b) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  const double shift = 1e-10 * std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
  a.diagonal().array() += shift;
  return a.ldlt().solve(b);
}

}  // namespace detail

/// Exact minimization over Z with F and phi fixed: one sparse (T d) x (T d)
/// system coupling every factor entry through the data and AR terms.
inline void update_z(const SeriesMatrix& y, Model& m) {
  const Hyper& h = m.hyper;
  const Eigen::Index T = y.periods(), n = y.series();
  const int d = h.d;
  const double omega = static_cast<double>(y.observed_count());
  const double ridge = h.lambda_z * (1.0 - h.eta_z) / (static_cast<double>(T) * d);
  const double c = h.lambda_z * h.eta_z / (static_cast<double>(T - h.p) * d);
  const Eigen::Index dim = T * d;
  auto idx = [d](Eigen::Index t, int j) { return t * d + j; };

  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  const bool dense_mask = y.fully_observed();
  Eigen::MatrixXd shared;
  if (dense_mask) shared = m.F * m.F.transpose() / omega;
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    if (dense_mask) {
      block = shared;
      b = m.F * y.values.row(t).transpose() / omega;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!y.observed(t, i)) continue;
        block.noalias() += m.F.col(i) * m.F.col(i).transpose();
        b.noalias() += y.values(t, i) * m.F.col(i);
      }
      block /= omega;
      b /= omega;
    }
    block.diagonal().array() += ridge;
    rhs.segment(idx(t, 0), d) = b;
    for (int a = 0; a < d; ++a) {
      for (int bcol = 0; bcol < d; ++bcol) {
        if (block(a, bcol) != 0.0) trip.emplace_back(idx(t, a), idx(t, bcol), block(a, bcol));
      }
    }
  }
  if (c > 0.0) {
    std::vector<Eigen::Index> pos(static_cast<std::size_t>(h.p) + 1);
    std::vector<double> coef(static_cast<std::size_t>(h.p) + 1);
    for (int j = 0; j < d; ++j) {
      for (Eigen::Index t = h.p; t < T; ++t) {
        pos[0] = idx(t, j);
        coef[0] = 1.0;
        for (int l = 1; l <= h.p; ++l) {
          pos[static_cast<std::size_t>(l)] = idx(t - l, j);
          coef[static_cast<std::size_t>(l)] = -m.phi(j, l - 1);
        }
        for (std::size_t a = 0; a < pos.size(); ++a) {
          for (std::size_t b = 0; b < pos.size(); ++b) {
            const double v = c * coef[a] * coef[b];
            if (v != 0.0) trip.emplace_back(pos[a], pos[b], v);
          }
        }
      }
    }
  }
  Eigen::SparseMatrix<double> hess(dim, dim);
  hess.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(hess);
  Eigen::VectorXd sol;
  if (solver.info() == Eigen::Success) sol = solver.solve(rhs);
  if (solver.info() != Eigen::Success || !sol.allFinite()) {
    Eigen::SparseMatrix<double> eye(dim, dim);
    eye.setIdentity();
    const double shift = 1e-10 * std::max(1.0, hess.diagonal().cwiseAbs().maxCoeff());
    hess += shift * eye;
    solver.compute(hess);
    sol = solver.solve(rhs);
  }
  for (Eigen::Index t = 0; t < T; ++t) m.Z.row(t) = sol.segment(idx(t, 0), d).transpose();
}

/// Per-factor ridge regression of z_t on its p lags.
inline void update_phi(Model& m) {
  const Hyper& h = m.hyper;
  const Eigen::Index T = m.Z.rows();
  const double c1 = h.lambda_z * h.eta_z / (static_cast<double>(T - h.p) * h.d);
  const double ridge = h.lambda_phi / (static_cast<double>(h.d) * h.p);
  if (c1 <= 0.0) {
    m.phi.setZero();
    return;
  }
  const Eigen::Index rows = T - h.p;
  for (int j = 0; j < h.d; ++j) {
    Eigen::MatrixXd x(rows, h.p);
    Eigen::VectorXd target(rows);
    for (Eigen::Index t = h.p; t < T; ++t) {
      target(t - h.p) = m.Z(t, j);
      for (int l = 1; l <= h.p; ++l) x(t - h.p, l - 1) = m.Z(t - l, j);
    }
    Eigen::MatrixXd a = c1 * x.transpose() * x;
    a.diagonal().array() += ridge;
    m.phi.row(j) = detail::spd_solve(a, c1 * x.transpose() * target).transpose();
  }
}

/// Exact minimization over F with Z fixed. Without a graph every column is an
/// independent ridge problem; with a graph the coupled problem is solved by
/// block Gauss-Seidel over columns (each block update is exact).
inline void update_f(const SeriesMatrix& y, Model& m, int threads = 1, int graph_passes = 10) {
  const Hyper& h = m.hyper;
  const Eigen::Index n = y.series();
  const double omega = static_cast<double>(y.observed_count());
  const double base = h.lambda_f / (static_cast<double>(h.d) * static_cast<double>(n));

  auto column_system = [&](Eigen::Index i, Eigen::MatrixXd& a, Eigen::VectorXd& b) {
    a.setZero(h.d, h.d);
    b.setZero(h.d);
    for (Eigen::Index t = 0; t < y.periods(); ++t) {
      if (!y.observed(t, i)) continue;
      a.noalias() += m.Z.row(t).transpose() * m.Z.row(t);
      b.noalias() += y.values(t, i) * m.Z.row(t).transpose();
    }
    a /= omega;
    b /= omega;
  };

  if (!m.graph) {
    if (y.fully_observed()) {
      Eigen::MatrixXd a = m.Z.transpose() * m.Z / omega;
      a.diagonal().array() += base;
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      const Eigen::MatrixXd rhs = m.Z.transpose() * y.values / omega;
      if (llt.info() == Eigen::Success) {
        m.F = llt.solve(rhs);
      } else {
        for (Eigen::Index i = 0; i < n; ++i) m.F.col(i) = detail::spd_solve(a, rhs.col(i));
      }
      return;
    }
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t k) {
      const auto i = static_cast<Eigen::Index>(k);
      Eigen::MatrixXd a;
      Eigen::VectorXd b;
      column_system(i, a, b);
      a.diagonal().array() += base;
      m.F.col(i) = detail::spd_solve(a, b);
    });
    return;
  }

  const Eigen::MatrixXd g = m.graph->gram();
  std::vector<Eigen::MatrixXd> as(static_cast<std::size_t>(n));
  std::vector<Eigen::VectorXd> bs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) column_system(i, as[static_cast<std::size_t>(i)], bs[static_cast<std::size_t>(i)]);
  for (int pass = 0; pass < graph_passes; ++pass) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::MatrixXd a = as[static_cast<std::size_t>(i)];
      a.diagonal().array() += base * ((1.0 - h.eta_f) + h.eta_f * g(i, i));
      Eigen::VectorXd coupling = m.F * g.col(i) - m.F.col(i) * g(i, i);
      m.F.col(i) = detail::spd_solve(a, bs[static_cast<std::size_t>(i)] - base * h.eta_f * coupling);
    }
  }
}

inline void check_input(const SeriesMatrix& y, const Hyper& h) {
  y.validate();
  h.validate(y.periods());
  for (Eigen::Index i = 0; i < y.series(); ++i) {
    if (y.observed_count(i) < h.p + 1) {
      fail(ErrorCategory::InsufficientHistory,
           "series " + std::to_string(i) + " has fewer than p + 1 observations");
    }
  }
}

/// Seeded start: Gaussian Z and F with sd 0.1, phi = 0.
inline Model initial_model(const SeriesMatrix& y, const Hyper& h, std::uint64_t seed) {
  Model m;
  m.hyper = h;
  m.seed = seed;
  Rng rng(seed);
  m.Z.resize(y.periods(), h.d);
  m.F.resize(h.d, y.series());
  for (Eigen::Index t = 0; t < m.Z.rows(); ++t) {
    for (Eigen::Index j = 0; j < m.Z.cols(); ++j) m.Z(t, j) = rng.normal(0.0, 0.1);
  }
  for (Eigen::Index i = 0; i < m.F.cols(); ++i) {
    for (Eigen::Index j = 0; j < m.F.rows(); ++j) m.F(j, i) = rng.normal(0.0, 0.1);
  }
  m.phi = Eigen::MatrixXd::Zero(h.d, h.p);
  return m;
}

/// Alternating minimization: Z, then phi, then F per sweep. Stops when the
/// relative objective improvement falls below hyper.tol.
inline Model fit(const SeriesMatrix& y, const Hyper& h, std::uint64_t seed, std::optional<Graph> graph = {},
                 int threads = 1) {
  check_input(y, h);
  if (graph && (graph->similarity.rows() != y.series() || graph->similarity.cols() != y.series())) {
    fail(ErrorCategory::ShapeError, "similarity matrix must be n x n");
  }
  Model m = initial_model(y, h, seed);
  m.graph = std::move(graph);
  double prev = objective(y, m);
  for (int s = 0; s < h.max_sweeps; ++s) {
    update_z(y, m);
    update_phi(m);
    update_f(y, m, threads);
    const double cur = objective(y, m);
    if (!std::isfinite(cur)) fail(ErrorCategory::FitError, "trmf objective diverged");
    m.objective_trace.push_back(cur);
    m.sweeps = s + 1;
    if (prev - cur < h.tol * std::max(std::abs(prev), 1e-300)) break;
    prev = cur;
  }
  return m;
}

/// h x d factor forecast by the AR recursion, lags seeded from Z.
inline Eigen::MatrixXd forecast_factors(const Model& m, int h) {
  const Eigen::Index T = m.Z.rows();
  const int p = m.hyper.p;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(std::max(0, h), m.Z.cols());
  for (Eigen::Index j = 0; j < m.Z.cols(); ++j) {
    for (int s = 0; s < h; ++s) {
      double v = 0.0;
      for (int l = 1; l <= p; ++l) {
        const int back = s - l;
        const double lag = back >= 0 ? out(back, j) : (T + back >= 0 ? m.Z(T + back, j) : 0.0);
        v += m.phi(j, l - 1) * lag;
      }
      out(s, j) = v;
    }
  }
  return out;
}

/// h x n forecasts for the fitted columns.
inline Eigen::MatrixXd forecast(const Model& m, int h) { return forecast_factors(m, h) * m.F; }

/// Ridge loadings for a series not seen during fitting, with Z frozen.
inline Eigen::VectorXd fit_loadings(const Model& m, std::span<const double> y, std::span<const bool> observed) {
  const Eigen::Index T = m.Z.rows();
  if (static_cast<Eigen::Index>(y.size()) != T || observed.size() != y.size()) {
    fail(ErrorCategory::ShapeError, "series length differs from the factor length");
  }
  const int d = m.hyper.d;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  Eigen::Index count = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!observed[static_cast<std::size_t>(t)]) continue;
    a.noalias() += m.Z.row(t).transpose() * m.Z.row(t);
    b.noalias() += y[static_cast<std::size_t>(t)] * m.Z.row(t).transpose();
    ++count;
  }
  if (count < d) fail(ErrorCategory::InsufficientHistory, "fewer observations than factors");
  a /= static_cast<double>(count);
  b /= static_cast<double>(count);
  a.diagonal().array() += m.hyper.lambda_f / d;
  return detail::spd_solve(a, b);
}

/// Masked RMSE of Z f against the observed entries of y.
inline double reconstruction_rmse(const Model& m, const Eigen::VectorXd& f, std::span<const double> y,
                                  std::span<const bool> observed) {
  const Eigen::VectorXd fitted = m.Z * f;
  double s = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index t = 0; t < m.Z.rows(); ++t) {
    if (!observed[static_cast<std::size_t>(t)]) continue;
    const double e = y[static_cast<std::size_t>(t)] - fitted(t);
    s += e * e;
    ++count;
  }
  return count == 0 ? 0.0 : std::sqrt(s / static_cast<double>(count));
}

inline nlohmann::json matrix_json(const Eigen::MatrixXd& x) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < x.cols(); ++c) row.push_back(x(r, c));
    rows.push_back(std::move(row));
  }
  return {{"rows", x.rows()}, {"cols", x.cols()}, {"data", std::move(rows)}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixXd x(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = j.at("data").at(r).at(c).get<double>();
  }
  return x;
}

inline nlohmann::json hyper_json(const Hyper& h) {
  return {{"d", h.d},           {"p", h.p},         {"lambda_f", h.lambda_f},     {"lambda_z", h.lambda_z},
          {"lambda_phi", h.lambda_phi}, {"eta_z", h.eta_z}, {"eta_f", h.eta_f}, {"max_sweeps", h.max_sweeps},
          {"tol", h.tol}};
}

inline Hyper hyper_from_json(const nlohmann::json& j) {
  Hyper h;
  h.d = j.at("d").get<int>();
  h.p = j.at("p").get<int>();
  h.lambda_f = j.at("lambda_f").get<double>();
  h.lambda_z = j.at("lambda_z").get<double>();
  h.lambda_phi = j.at("lambda_phi").get<double>();
  h.eta_z = j.at("eta_z").get<double>();
  h.eta_f = j.at("eta_f").get<double>();
  h.max_sweeps = j.at("max_sweeps").get<int>();
  h.tol = j.at("tol").get<double>();
  return h;
}

inline nlohmann::json to_json(const Model& m) {
  nlohmann::json j{{"kind", "trmf"},
                   {"seed", m.seed},
                   {"hyper", hyper_json(m.hyper)},
                   {"sweeps", m.sweeps},
                   {"objective_trace", m.objective_trace},
                   {"Z", matrix_json(m.Z)},
                   {"F", matrix_json(m.F)},
                   {"phi", matrix_json(m.phi)}};
  if (m.graph) j["similarity"] = matrix_json(m.graph->similarity);
  return j;
}

inline Model from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "trmf") fail(ErrorCategory::FormatError, "not a trmf model blob");
  Model m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.hyper = hyper_from_json(j.at("hyper"));
  m.sweeps = j.at("sweeps").get<int>();
  m.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  m.Z = matrix_from_json(j.at("Z"));
  m.F = matrix_from_json(j.at("F"));
  m.phi = matrix_from_json(j.at("phi"));
  if (j.contains("similarity")) m.graph = Graph{matrix_from_json(j.at("similarity"))};
  return m;
}

}  // namespace tcr::trmf
