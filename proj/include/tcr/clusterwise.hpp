#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tcr/clustering.hpp"
#include "tcr/error.hpp"
#include "tcr/gbdt.hpp"
#include "tcr/parallel.hpp"
#include "tcr/rng.hpp"
#include "tcr/series.hpp"
#include "tcr/tda.hpp"
#include "tcr/theta.hpp"
#include "tcr/trmf.hpp"

namespace tcr::clusterwise {

enum class Backend { trmf, theta };

inline std::string to_string(Backend b) { return b == Backend::trmf ? "trmf" : "theta"; }

struct Options {
  Backend backend = Backend::trmf;
  trmf::Hyper hyper{};
  int max_rounds = 10;
  double tol = 1e-6;
  int threads = 1;
};

struct Model {
  Clustering partition;
  Backend backend = Backend::trmf;
  trmf::Hyper hyper{};
  std::uint64_t seed = 0;
  /// One fitted factor model per cluster (trmf backend only).
  std::vector<trmf::Model> cluster_models;
  std::vector<double> objective_trace;
  std::vector<double> per_series_error;
  std::vector<int> moves_per_round;
  int vetoed_moves = 0;
  std::string stop_reason;

  int clusters() const { return partition.k; }
};

inline std::uint64_t cluster_seed(std::uint64_t seed, int cluster) {
  return derive_seed(seed, 0x636c7573ULL + static_cast<std::uint64_t>(cluster));
}

inline int min_cluster_size(Backend b, const trmf::Hyper& h) { return b == Backend::trmf ? std::max(h.d, 2) : 1; }

namespace detail {

inline std::vector<double> observed_values(std::span<const double> y, std::span<const bool> mask) {
  std::vector<double> out;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (mask[t]) out.push_back(y[t]);
  }
  return out;
}

inline double score(Backend backend, const trmf::Model* cluster_model, std::span<const double> y,
                    std::span<const bool> mask) {
  if (backend == Backend::theta) return theta::insample_rmse(observed_values(y, mask));
  const Eigen::VectorXd f = trmf::fit_loadings(*cluster_model, y, mask);
  return trmf::reconstruction_rmse(*cluster_model, f, y, mask);
}

struct ColumnData {
  std::vector<double> values;
  std::unique_ptr<bool[]> mask;
  std::size_t observed = 0;
  std::span<const bool> mask_span() const { return {mask.get(), values.size()}; }
};

inline ColumnData column_data(const SeriesMatrix& y, Eigen::Index i) {
  ColumnData c;
  c.values = y.column(i);
  c.mask = std::make_unique<bool[]>(c.values.size());
  for (Eigen::Index t = 0; t < y.periods(); ++t) {
    c.mask[static_cast<std::size_t>(t)] = y.observed(t, i);
    c.observed += y.observed(t, i) ? 1 : 0;
  }
  return c;
}

}  // namespace detail

/// Error of series y under cluster c: masked RMSE of the cluster's frozen
/// factors with ridge loadings fitted to y (trmf), or the in-sample RMSE of
/// Theta on y (theta, cluster independent).
inline double score_series_under_cluster(const Model& m, int cluster, std::span<const double> y,
                                         std::span<const bool> observed) {
  if (cluster < 0 || cluster >= m.clusters()) fail(ErrorCategory::CardinalityError, "cluster index out of range");
  return detail::score(m.backend,
                       m.backend == Backend::trmf ? &m.cluster_models[static_cast<std::size_t>(cluster)] : nullptr,
                       y, observed);
}

namespace detail {

inline std::vector<trmf::Model> fit_clusters(const SeriesMatrix& y, const Clustering& part, const Options& opt,
                                             std::uint64_t seed) {
  std::vector<trmf::Model> models(static_cast<std::size_t>(part.k));
  if (opt.backend != Backend::trmf) return models;
  for (int c = 0; c < part.k; ++c) {
    const std::vector<int> mem = part.members(c);
    try {
      models[static_cast<std::size_t>(c)] = trmf::fit(y.columns(mem), opt.hyper, cluster_seed(seed, c), {}, opt.threads);
    } catch (const Error& e) {
      fail(ErrorCategory::FitError, "cluster " + std::to_string(c) + ": " + e.what());
    }
  }
  return models;
}

inline std::vector<double> own_errors(const SeriesMatrix& y, const Model& m, const std::vector<ColumnData>& cols,
                                      int threads) {
  std::vector<double> err(cols.size());
  parallel_for(cols.size(), threads, [&](std::size_t i) {
    err[i] = score_series_under_cluster(m, m.partition.labels[i], cols[i].values, cols[i].mask_span());
  });
  (void)y;
  return err;
}

/// Total squared training error: sum over series of RMSE^2 * observed count.
inline double total_error(const std::vector<double>& err, const std::vector<ColumnData>& cols) {
  double s = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const auto n = static_cast<double>(cols[i].observed);
    s += err[i] * err[i] * n;
  }
  return s;
}

}  // namespace detail

/// Alternates per-cluster fitting and error-driven relabelling. Each round,
/// series whose error exceeds their cluster's mean are scored under every
/// cluster and moved (simultaneously) to the lowest-error one, ties kept with
/// the incumbent. A move that would shrink a cluster below the minimum size is
/// vetoed. A round whose refit raises the total error is rolled back and ends
/// the fit.
inline Model fit(const SeriesMatrix& y, const Clustering& init, const Options& opt, std::uint64_t seed) {
  y.validate();
  if (static_cast<Eigen::Index>(init.size()) != y.series()) {
    fail(ErrorCategory::ShapeError, "initial labels do not cover every series");
  }
  Clustering part = Clustering::compact(init.labels);
  const int min_size = min_cluster_size(opt.backend, opt.hyper);
  for (std::size_t s : part.cluster_sizes()) {
    if (static_cast<int>(s) < min_size) {
      fail(ErrorCategory::CardinalityError,
           "cluster smaller than the minimum size " + std::to_string(min_size));
    }
  }
  std::vector<detail::ColumnData> cols;
  cols.reserve(static_cast<std::size_t>(y.series()));
  for (Eigen::Index i = 0; i < y.series(); ++i) cols.push_back(detail::column_data(y, i));

  Model m;
  m.backend = opt.backend;
  m.hyper = opt.hyper;
  m.seed = seed;
  m.partition = part;
  m.cluster_models = detail::fit_clusters(y, part, opt, seed);
  m.per_series_error = detail::own_errors(y, m, cols, opt.threads);
  double objective = detail::total_error(m.per_series_error, cols);
  m.objective_trace.push_back(objective);
  m.stop_reason = "max_rounds";

  for (int round = 0; round < opt.max_rounds; ++round) {
    const int k = m.partition.k;
    std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
    std::vector<int> size(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      mean[static_cast<std::size_t>(m.partition.labels[i])] += m.per_series_error[i];
      ++size[static_cast<std::size_t>(m.partition.labels[i])];
    }
    for (int c = 0; c < k; ++c) mean[static_cast<std::size_t>(c)] /= size[static_cast<std::size_t>(c)];

    std::vector<int> target(cols.size(), -1);
    if (k > 1) {
      parallel_for(cols.size(), opt.threads, [&](std::size_t i) {
        const int own = m.partition.labels[i];
        const double e = m.per_series_error[i];
        if (!(e > mean[static_cast<std::size_t>(own)])) return;
        int best = own;
        double best_err = e;
        for (int c = 0; c < k; ++c) {
          if (c == own) continue;
          const double s = score_series_under_cluster(m, c, cols[i].values, cols[i].mask_span());
          if (s < best_err) {
            best_err = s;
            best = c;
          }
        }
        if (best != own) target[i] = best;
      });
    }

    Clustering next = m.partition;
    int moves = 0;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (target[i] < 0) continue;
      const int from = next.labels[i];
      if (size[static_cast<std::size_t>(from)] - 1 < min_size) {
        ++m.vetoed_moves;
        continue;
      }
      --size[static_cast<std::size_t>(from)];
      ++size[static_cast<std::size_t>(target[i])];
      next.labels[i] = target[i];
      ++moves;
    }
    if (moves == 0) {
      m.stop_reason = "no_moves";
      break;
    }

    Model trial = m;
    trial.partition = next;
    trial.cluster_models = detail::fit_clusters(y, next, opt, seed);
    trial.per_series_error = detail::own_errors(y, trial, cols, opt.threads);
    const double trial_objective = detail::total_error(trial.per_series_error, cols);
    if (trial_objective > objective) {
      m.stop_reason = "no_improvement";
      break;
    }
    const double improvement = objective - trial_objective;
    trial.moves_per_round.push_back(moves);
    trial.objective_trace.push_back(trial_objective);
    m = std::move(trial);
    objective = trial_objective;
    if (improvement < opt.tol * std::max(objective, 1e-300)) {
      m.stop_reason = "converged";
      break;
    }
  }
  return m;
}

/// Per-series classifier inputs computed from a series' training window.
struct FeatureRecipe {
  std::size_t window = 4;
  std::size_t stride = 1;
  /// Sorted reference values for the recency / frequency / monetary ranks.
  std::vector<double> ref_recency, ref_frequency, ref_monetary;

  static constexpr std::size_t kSize = tda::TopoFeatureVector::kSize + 5 + 3;
  std::string id() const { return "topo-w" + std::to_string(window) + "-s" + std::to_string(stride) + "+stats+rfm"; }
};

struct RawRFM {
  double recency = 0, frequency = 0, monetary = 0;
};

/// Periods since the last positive value (T + 1 if none), count of positive
/// periods, total value.
inline RawRFM raw_rfm(std::span<const double> y) {
  RawRFM r;
  r.recency = static_cast<double>(y.size() + 1);
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (y[t] > 0) {
      r.recency = static_cast<double>(y.size() - 1 - t);
      r.frequency += 1.0;
    }
    r.monetary += y[t];
  }
  return r;
}

/// Quintile bucket (0..4) of v against a sorted reference sample.
inline int reference_bucket(const std::vector<double>& sorted, double v) {
  if (sorted.empty()) return 0;
  const auto below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
  return static_cast<int>(std::min<std::size_t>(4, below * 5 / sorted.size()));
}

inline FeatureRecipe make_recipe(const SeriesMatrix& train, std::size_t window = 4, std::size_t stride = 1) {
  FeatureRecipe r;
  r.window = window;
  r.stride = stride;
  for (Eigen::Index i = 0; i < train.series(); ++i) {
    const RawRFM raw = raw_rfm(train.column(i));
    r.ref_recency.push_back(raw.recency);
    r.ref_frequency.push_back(raw.frequency);
    r.ref_monetary.push_back(raw.monetary);
  }
  std::sort(r.ref_recency.begin(), r.ref_recency.end());
  std::sort(r.ref_frequency.begin(), r.ref_frequency.end());
  std::sort(r.ref_monetary.begin(), r.ref_monetary.end());
  return r;
}

/// Topological features ++ (mean, variance, zero fraction, last value, trend
/// slope) ++ (r, f, m) ranks in 1..5.
inline Eigen::RowVectorXd series_features(const FeatureRecipe& recipe, std::span<const double> y) {
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(FeatureRecipe::kSize));
  const auto topo = tda::series_topo_features(y, recipe.window, recipe.stride);
  for (std::size_t k = 0; k < topo.values.size(); ++k) out(static_cast<Eigen::Index>(k)) = topo.values[k];
  const double n = static_cast<double>(y.size());
  double mean = 0.0, zeros = 0.0;
  for (double v : y) {
    mean += v;
    zeros += v == 0.0;
  }
  mean /= n;
  double var = 0.0, sxy = 0.0, sxx = 0.0;
  const double tbar = (n - 1.0) / 2.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    var += (y[t] - mean) * (y[t] - mean);
    sxy += (static_cast<double>(t) - tbar) * (y[t] - mean);
    sxx += (static_cast<double>(t) - tbar) * (static_cast<double>(t) - tbar);
  }
  Eigen::Index k = static_cast<Eigen::Index>(topo.values.size());
  out(k++) = mean;
  out(k++) = var / n;
  out(k++) = zeros / n;
  out(k++) = y.empty() ? 0.0 : y.back();
  out(k++) = sxx > 0 ? sxy / sxx : 0.0;
  const RawRFM raw = raw_rfm(y);
  out(k++) = 5 - reference_bucket(recipe.ref_recency, raw.recency);
  out(k++) = 1 + reference_bucket(recipe.ref_frequency, raw.frequency);
  out(k++) = 1 + reference_bucket(recipe.ref_monetary, raw.monetary);
  return out;
}

inline Eigen::MatrixXd feature_matrix(const FeatureRecipe& recipe, const SeriesMatrix& y, int threads = 1) {
  Eigen::MatrixXd x(y.series(), static_cast<Eigen::Index>(FeatureRecipe::kSize));
  parallel_for(static_cast<std::size_t>(y.series()), threads, [&](std::size_t i) {
    x.row(static_cast<Eigen::Index>(i)) = series_features(recipe, y.column(static_cast<Eigen::Index>(i)));
  });
  return x;
}

inline gbdt::Classifier train_label_classifier(const Eigen::MatrixXd& features, const Clustering& labels,
                                               const FeatureRecipe& recipe, std::uint64_t seed,
                                               const gbdt::Options& opt = {}) {
  if (features.rows() < 10) fail(ErrorCategory::CardinalityError, "classifier needs at least 10 series");
  auto clf = gbdt::train(features, labels.labels, seed, opt);
  clf.recipe = recipe.id();
  return clf;
}

struct Assignment {
  std::vector<int> labels;
  /// Winning class score from the classifier (1 when k = 1).
  std::vector<double> scores;
  Eigen::MatrixXd forecasts;  // h x n_new
};

/// Labels new series with the classifier (every series goes to cluster 0 when
/// the model has a single cluster and `clf` is null) and forecasts each with
/// its cluster's model from its training window.
inline Assignment assign_and_forecast(const Model& m, const gbdt::Classifier* clf, const FeatureRecipe& recipe,
                                      const SeriesMatrix& y, int h, int threads = 1) {
  if (m.backend == Backend::trmf && y.periods() != m.cluster_models.front().periods()) {
    fail(ErrorCategory::ShapeError, "new series do not share the training grid");
  }
  const auto n = static_cast<std::size_t>(y.series());
  Assignment out;
  out.labels.assign(n, 0);
  out.scores.assign(n, 1.0);
  if (clf) {
    const Eigen::MatrixXd x = feature_matrix(recipe, y, threads);
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd s = clf->scores(x.row(static_cast<Eigen::Index>(i)));
      out.labels[i] = clf->predict(x.row(static_cast<Eigen::Index>(i)));
      out.scores[i] = s.maxCoeff();
    }
  } else if (m.clusters() != 1) {
    fail(ErrorCategory::ConfigError, "a classifier is required when there is more than one cluster");
  }
  out.forecasts = Eigen::MatrixXd::Zero(std::max(0, h), static_cast<Eigen::Index>(n));
  if (h <= 0) return out;
  std::vector<Eigen::MatrixXd> factor_paths;
  if (m.backend == Backend::trmf) {
    for (const auto& cm : m.cluster_models) factor_paths.push_back(trmf::forecast_factors(cm, h));
  }
  parallel_for(n, threads, [&](std::size_t i) {
    const auto col = detail::column_data(y, static_cast<Eigen::Index>(i));
    if (m.backend == Backend::trmf) {
      const auto c = static_cast<std::size_t>(out.labels[i]);
      const Eigen::VectorXd f = trmf::fit_loadings(m.cluster_models[c], col.values, col.mask_span());
      out.forecasts.col(static_cast<Eigen::Index>(i)) = factor_paths[c] * f;
    } else {
      const auto fc = theta::forecast(detail::observed_values(col.values, col.mask_span()), h);
      for (int s = 0; s < h; ++s) out.forecasts(s, static_cast<Eigen::Index>(i)) = fc[static_cast<std::size_t>(s)];
    }
  });
  return out;
}

/// CSV export `user_id,predicted_label,score`.
inline std::string assignment_csv(const Assignment& a, std::span<const std::string> ids) {
  std::string out = "user_id,predicted_label,score\n";
  char buf[64];
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", a.scores[i]);
    out += (ids.empty() ? std::to_string(i) : ids[i]) + "," + std::to_string(a.labels[i]) + "," + buf + "\n";
  }
  return out;
}

}  // namespace tcr::clusterwise
