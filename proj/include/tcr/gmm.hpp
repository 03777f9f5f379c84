#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "tcr/cluster.hpp"
#include "tcr/error.hpp"
#include "tcr/rng.hpp"

namespace tcr {

enum class CovarianceType { full, diagonal };

struct GMMOptions {
  int max_iter = 300;
  double tol = 1e-8;
  int n_init = 5;
  CovarianceType covariance = CovarianceType::full;
  /// Diagonal floor as a fraction of the mean per-feature variance.
  double floor_fraction = 1e-6;
};

struct GMMModel {
  int k_max = 0;
  CovarianceType covariance = CovarianceType::full;
  double floor = 0.0;
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;                   // k x m
  std::vector<Eigen::MatrixXd> covariances;  // m x m each, or m x 1 when diagonal
  /// Total log-likelihood after each E-step.
  std::vector<double> log_likelihood;
  int iterations = 0;

  bool alive(int c) const { return weights(c) > 0.0; }

  /// Per-object, per-component log(weight * density).
  Eigen::MatrixXd weighted_log_density(const Eigen::MatrixXd& data) const {
    const Eigen::Index n = data.rows(), m = data.cols();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    Eigen::MatrixXd out(n, k_max);
    for (int c = 0; c < k_max; ++c) {
      if (!alive(c)) {
        out.col(c).setConstant(-std::numeric_limits<double>::infinity());
        continue;
      }
      const double lw = std::log(weights(c));
      if (covariance == CovarianceType::diagonal) {
        const Eigen::VectorXd var = covariances[static_cast<std::size_t>(c)].col(0);
        const double logdet = var.array().log().sum();
        const Eigen::ArrayXd inv = var.array().inverse();
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::ArrayXd diff = (data.row(i) - means.row(c)).transpose().array();
          out(i, c) = lw - 0.5 * (static_cast<double>(m) * log2pi + logdet + (diff.square() * inv).sum());
        }
      } else {
        const Eigen::LLT<Eigen::MatrixXd> llt(covariances[static_cast<std::size_t>(c)]);
        const Eigen::MatrixXd l = llt.matrixL();
        const double logdet = 2.0 * l.diagonal().array().log().sum();
        Eigen::MatrixXd diff = (data.rowwise() - means.row(c)).transpose();
        llt.matrixL().solveInPlace(diff);
        const Eigen::VectorXd maha = diff.colwise().squaredNorm().transpose();
        out.col(c) = (lw - 0.5 * (static_cast<double>(m) * log2pi + logdet + maha.array())).matrix();
      }
    }
    return out;
  }

  /// Responsibilities (N x k) and total log-likelihood, via log-sum-exp.
  Eigen::MatrixXd posterior(const Eigen::MatrixXd& data, double* total_ll = nullptr) const {
    Eigen::MatrixXd lp = weighted_log_density(data);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
      const double mx = lp.row(i).maxCoeff();
      const double lse = mx + std::log((lp.row(i).array() - mx).exp().sum());
      ll += lse;
      lp.row(i) = (lp.row(i).array() - lse).exp().matrix();
    }
    if (total_ll) *total_ll = ll;
    return lp;
  }
};

namespace detail {

inline double mean_feature_variance(const Eigen::MatrixXd& data) {
  const Eigen::MatrixXd centred = data.rowwise() - data.colwise().mean();
  return centred.colwise().squaredNorm().mean() / static_cast<double>(data.rows());
}

/// log|cov| + tr(cov^-1 scatter), the per-component part of the negated
/// expected complete-data log-likelihood (up to constants and the N_k factor).
inline double covariance_cost(const Eigen::MatrixXd& cov, const Eigen::MatrixXd& scatter, bool diagonal) {
  if (diagonal) return (cov.col(0).array().log() + scatter.col(0).array() / cov.col(0).array()).sum();
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();
  return 2.0 * l.diagonal().array().log().sum() + llt.solve(scatter).trace();
}

/// Weights and means take their closed-form updates. The floored covariance
/// replaces the previous one only when it does not lower the expected
/// complete-data log-likelihood, which keeps the likelihood monotone.
inline void m_step(const Eigen::MatrixXd& data, const Eigen::MatrixXd& resp, GMMModel& g) {
  const Eigen::Index n = data.rows(), m = data.cols();
  const bool diagonal = g.covariance == CovarianceType::diagonal;
  for (int c = 0; c < g.k_max; ++c) {
    const double nk = resp.col(c).sum();
    if (nk <= 1e-10) {
      g.weights(c) = 0.0;
      continue;
    }
    g.weights(c) = nk / static_cast<double>(n);
    g.means.row(c) = (resp.col(c).transpose() * data) / nk;
    const Eigen::MatrixXd centred = data.rowwise() - g.means.row(c);
    Eigen::MatrixXd scatter;
    if (diagonal) {
      scatter = (centred.array().square().colwise() * resp.col(c).array()).colwise().sum().transpose() / nk;
    } else {
      scatter = (centred.array().colwise() * resp.col(c).array()).matrix().transpose() * centred / nk;
      scatter = 0.5 * (scatter + scatter.transpose());
    }
    Eigen::MatrixXd cov = scatter;
    if (diagonal) {
      cov.array() += g.floor;
    } else {
      cov.diagonal().array() += g.floor;
    }
    auto& slot = g.covariances[static_cast<std::size_t>(c)];
    if (slot.size() == 0 || covariance_cost(cov, scatter, diagonal) <= covariance_cost(slot, scatter, diagonal)) {
      slot = std::move(cov);
    }
  }
  (void)m;
  const double total = g.weights.sum();
  if (total > 0.0) g.weights /= total;
}

inline GMMModel gmm_single(const Eigen::MatrixXd& data, int k, std::uint64_t seed, const GMMOptions& opt,
                           double floor) {
  const Eigen::Index n = data.rows();
  GMMModel g;
  g.k_max = k;
  g.covariance = opt.covariance;
  g.floor = floor;
  g.weights = Eigen::VectorXd::Zero(k);
  g.means = cluster::plus_plus_seeds(data, k, seed);
  g.covariances.resize(static_cast<std::size_t>(k));

  // Hard assignment to the seeds gives the starting responsibilities, softened
  // by one pseudo-count per component so no component starts dead.
  Eigen::MatrixXd resp = Eigen::MatrixXd::Constant(n, k, 1.0 / static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    (g.means.rowwise() - data.row(i)).rowwise().squaredNorm().minCoeff(&best);
    resp(i, best) += 1.0;
  }
  resp.array().colwise() /= resp.rowwise().sum().array();
  m_step(data, resp, g);

  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < std::max(1, opt.max_iter); ++iter) {
    double ll = 0.0;
    resp = g.posterior(data, &ll);
    g.log_likelihood.push_back(ll);
    g.iterations = iter + 1;
    if (iter > 0 && ll - prev < opt.tol * std::max(1.0, std::abs(ll))) break;
    prev = ll;
    m_step(data, resp, g);
  }
  return g;
}

}  // namespace detail

/// EM for a k-component Gaussian mixture. Each restart seeds the means with
/// k-means++; the run with the highest final log-likelihood is kept. A
/// component whose responsibility mass vanishes is frozen with weight 0.
inline GMMModel gmm_fit(const Eigen::MatrixXd& data, int k_max, std::uint64_t seed, const GMMOptions& opt = {}) {
  if (k_max < 1 || k_max > data.rows()) {
    fail(ErrorCategory::CardinalityError,
         "k_max = " + std::to_string(k_max) + " with " + std::to_string(data.rows()) + " objects");
  }
  if (!data.allFinite()) fail(ErrorCategory::DataError, "non-finite mixture input");
  double floor = opt.floor_fraction * detail::mean_feature_variance(data);
  if (!(floor > 0.0)) floor = opt.floor_fraction;
  GMMModel best;
  for (int r = 0; r < std::max(1, opt.n_init); ++r) {
    GMMModel g = detail::gmm_single(data, k_max, derive_seed(seed, static_cast<std::uint64_t>(r)), opt, floor);
    if (r == 0 || g.log_likelihood.back() > best.log_likelihood.back()) best = std::move(g);
  }
  return best;
}

}  // namespace tcr
