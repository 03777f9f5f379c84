#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tcr/clustering.hpp"
#include "tcr/error.hpp"
#include "tcr/rng.hpp"

namespace tcr::cluster {

struct KMeansResult {
  Clustering clustering;
  Eigen::MatrixXd centroids;  // k x m
  /// Inertia after every Lloyd iteration.
  std::vector<double> inertia_trace;
  int iterations = 0;
};

/// Column-wise zero mean / unit variance; constant columns become zero.
inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& data) {
  Eigen::MatrixXd out = data;
  if (data.rows() == 0) return out;
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const double mean = data.col(j).mean();
    out.col(j).array() -= mean;
    const double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(data.rows()));
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
      out.col(j) /= sd;
    } else {
      out.col(j).setZero();
    }
  }
  return out;
}

/// Sum of squared distances of each row to the mean of its cluster.
inline double inertia_of(const Eigen::MatrixXd& data, std::span<const int> labels, int k) {
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, data.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    sums.row(labels[static_cast<std::size_t>(i)]) += data.row(i);
    counts(labels[static_cast<std::size_t>(i)]) += 1.0;
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    total += (data.row(i) - sums.row(l) / counts(l)).squaredNorm();
  }
  return total;
}

namespace detail {

inline void check_input(const Eigen::MatrixXd& data, int k) {
  if (k < 1 || k > data.rows()) {
    fail(ErrorCategory::CardinalityError,
         "k = " + std::to_string(k) + " with " + std::to_string(data.rows()) + " objects");
  }
  if (!data.allFinite()) fail(ErrorCategory::DataError, "non-finite feature values");
}

/// k-means++ seeding: first centre uniform, then D^2 sampling.
inline Eigen::MatrixXd plus_plus_seeds(const Eigen::MatrixXd& data, int k, Rng& rng) {
  const Eigen::Index n = data.rows();
  Eigen::MatrixXd centres(k, data.cols());
  centres.row(0) = data.row(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (data.row(i) - centres.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2(i);
        if (target < 0.0 && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
    }
    centres.row(c) = data.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (data.row(i) - centres.row(c)).squaredNorm());
  }
  return centres;
}

}  // namespace detail

inline Eigen::MatrixXd plus_plus_seeds(const Eigen::MatrixXd& data, int k, std::uint64_t seed) {
  detail::check_input(data, k);
  Rng rng(seed);
  return detail::plus_plus_seeds(data, k, rng);
}

/// Lloyd's algorithm from a seeded k-means++ start. Iterates until the largest
/// centroid shift drops below `tol` or `max_iter` is reached. A cluster that
/// empties is reseeded with the point farthest from its current centroid.
inline KMeansResult kmeans(const Eigen::MatrixXd& data, int k, std::uint64_t seed, int max_iter = 300,
                           double tol = 1e-8) {
  detail::check_input(data, k);
  const Eigen::Index n = data.rows();
  Rng rng(seed);
  KMeansResult res;
  res.centroids = detail::plus_plus_seeds(data, k, rng);
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd cost(n);

  for (int iter = 0; iter < std::max(1, max_iter); ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = (data.row(i) - res.centroids.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      labels[static_cast<std::size_t>(i)] = arg;
      cost(i) = best;
    }

    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] < 2) continue;
        if (far < 0 || cost(i) > cost(far)) far = i;
      }
      if (far < 0) break;
      --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
      labels[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
      cost(far) = 0.0;
    }

    Eigen::MatrixXd updated = Eigen::MatrixXd::Zero(k, data.cols());
    for (Eigen::Index i = 0; i < n; ++i) updated.row(labels[static_cast<std::size_t>(i)]) += data.row(i);
    for (int c = 0; c < k; ++c) updated.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);

    double shift = 0.0;
    for (int c = 0; c < k; ++c) shift = std::max(shift, (updated.row(c) - res.centroids.row(c)).norm());
    res.centroids = std::move(updated);
    res.iterations = iter + 1;
    res.inertia_trace.push_back(inertia_of(data, labels, k));
    if (shift < tol) break;
  }
  res.clustering.labels = std::move(labels);
  res.clustering.k = k;
  res.clustering.inertia = res.inertia_trace.back();
  return res;
}

/// Lowest-inertia fit over `restarts` independently seeded runs.
inline KMeansResult kmeans_best_of(const Eigen::MatrixXd& data, int k, std::uint64_t seed, int restarts = 10,
                                   int max_iter = 300, double tol = 1e-8) {
  KMeansResult best;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    auto fit = kmeans(data, k, derive_seed(seed, static_cast<std::uint64_t>(r)), max_iter, tol);
    if (r == 0 || fit.clustering.inertia < best.clustering.inertia) best = std::move(fit);
  }
  return best;
}

struct ElbowOptions {
  int restarts = 10;
  int max_iter = 300;
  double tol = 1e-8;
  /// Uniform reference draws for the structure check.
  int references = 10;
};

struct ElbowResult {
  int k = 1;
  std::vector<int> ks;
  std::vector<double> inertia;
  std::vector<double> second_difference;  // aligned with ks, 0 at the ends
  /// Gap at k_min and at the candidate k, and the reference spread there.
  double gap_low = 0.0, gap_high = 0.0, gap_spread = 0.0;
  bool structured = false;
};

namespace detail {

/// Uniform sample over the box spanned by the data's principal axes.
inline Eigen::MatrixXd reference_sample(const Eigen::MatrixXd& centred, const Eigen::MatrixXd& axes, Rng& rng) {
  const Eigen::MatrixXd rotated = centred * axes;
  const Eigen::RowVectorXd lo = rotated.colwise().minCoeff(), hi = rotated.colwise().maxCoeff();
  Eigen::MatrixXd sample(centred.rows(), centred.cols());
  for (Eigen::Index i = 0; i < sample.rows(); ++i) {
    for (Eigen::Index j = 0; j < sample.cols(); ++j) sample(i, j) = rng.uniform(lo(j), hi(j));
  }
  return sample * axes.transpose();
}

}  // namespace detail

/// Gap-statistic check for cluster structure: going from k_min to k groups
/// must shrink log inertia by more than it does on uniform references (plus
/// one reference standard error).
inline void structure_check(const Eigen::MatrixXd& data, int k_min, int k, std::uint64_t seed,
                            const ElbowOptions& opt, double w_low, double w_high, ElbowResult& res) {
  if (!(w_low > 0.0)) return;
  if (!(w_high > 0.0)) {
    res.structured = true;
    return;
  }
  const Eigen::MatrixXd centred = data.rowwise() - data.colwise().mean();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centred.transpose() * centred);
  const Eigen::MatrixXd& axes = eig.eigenvectors();
  Rng rng(derive_seed(seed, 0x676170ULL));
  const int b = std::max(2, opt.references);
  std::vector<double> low(static_cast<std::size_t>(b)), high(static_cast<std::size_t>(b));
  for (int r = 0; r < b; ++r) {
    const Eigen::MatrixXd ref = detail::reference_sample(centred, axes, rng);
    const std::uint64_t rs = derive_seed(seed, 0x726566ULL + static_cast<std::uint64_t>(r));
    low[static_cast<std::size_t>(r)] =
        std::log(kmeans_best_of(ref, k_min, rs, opt.restarts, opt.max_iter, opt.tol).clustering.inertia);
    high[static_cast<std::size_t>(r)] =
        std::log(kmeans_best_of(ref, k, rs, opt.restarts, opt.max_iter, opt.tol).clustering.inertia);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double mh = mean(high);
  double var = 0.0;
  for (double x : high) var += (x - mh) * (x - mh);
  res.gap_low = mean(low) - std::log(w_low);
  res.gap_high = mh - std::log(w_high);
  res.gap_spread = std::sqrt(var / b) * std::sqrt(1.0 + 1.0 / b);
  res.structured = res.gap_high - res.gap_spread > res.gap_low;
}

/// Chooses k in [k_min, k_max] at the largest second difference of the
/// best-of-restarts inertia curve. Falls back to k_min when the range has at
/// most two values or when the data shows no more cluster structure than a
/// uniform reference.
inline ElbowResult elbow_select(const Eigen::MatrixXd& data, int k_min, int k_max, std::uint64_t seed,
                                const ElbowOptions& opt = {}) {
  if (k_min < 1 || k_max < k_min) fail(ErrorCategory::CardinalityError, "empty k range");
  if (k_max > data.rows()) fail(ErrorCategory::CardinalityError, "k_max exceeds object count");
  ElbowResult res;
  res.k = k_min;
  for (int k = k_min; k <= k_max; ++k) {
    res.ks.push_back(k);
    res.inertia.push_back(kmeans_best_of(data, k, derive_seed(seed, static_cast<std::uint64_t>(k)), opt.restarts,
                                         opt.max_iter, opt.tol)
                              .clustering.inertia);
  }
  res.second_difference.assign(res.ks.size(), 0.0);
  if (res.ks.size() <= 2) return res;
  // Best-of-restarts can still be non-monotone; enforce the running minimum.
  std::vector<double> curve = res.inertia;
  for (std::size_t i = 1; i < curve.size(); ++i) curve[i] = std::min(curve[i], curve[i - 1]);
  std::size_t best = 0;
  for (std::size_t i = 1; i + 1 < curve.size(); ++i) {
    res.second_difference[i] = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
    if (best == 0 || res.second_difference[i] > res.second_difference[best]) best = i;
  }
  if (!(res.second_difference[best] > 0.0)) return res;
  structure_check(data, k_min, res.ks[best], seed, opt, curve[0], curve[best], res);
  if (res.structured) res.k = res.ks[best];
  return res;
}

}  // namespace tcr::cluster
