#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "tcr/clustering.hpp"
#include "tcr/error.hpp"
#include "tcr/gmm.hpp"
#include "tcr/hungarian.hpp"

namespace tcr::ensemble {

struct EnsembleInput {
  std::vector<Clustering> clusterings;

  std::size_t size() const { return clusterings.empty() ? 0 : clusterings.front().size(); }
  std::size_t members() const { return clusterings.size(); }

  int max_k() const {
    int k = 0;
    for (const auto& c : clusterings) k = std::max(k, c.k);
    return k;
  }

  void validate() const {
    if (clusterings.size() < 2) fail(ErrorCategory::CardinalityError, "ensemble needs at least two clusterings");
    for (const auto& c : clusterings) {
      if (c.size() != size()) fail(ErrorCategory::ShapeError, "base clusterings cover different object counts");
      c.validate();
    }
  }
};

/// counts(l, l') = #objects labelled l in `ref` and l' in `other`.
inline Eigen::MatrixXi contingency(const Clustering& ref, const Clustering& other) {
  if (ref.size() != other.size()) fail(ErrorCategory::ShapeError, "contingency of unequal partitions");
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(ref.k, other.k);
  for (std::size_t i = 0; i < ref.size(); ++i) ++counts(ref.labels[i], other.labels[i]);
  return counts;
}

/// Label map for `other` (old label -> reference label) maximizing agreement
/// with `ref`. Unequal k is handled by zero-padding to a square matrix; labels
/// matched to padding receive fresh indices >= ref.k.
inline std::vector<int> matching(const Clustering& ref, const Clustering& other) {
  const Eigen::MatrixXi counts = contingency(ref, other);
  const int n = std::max(ref.k, other.k);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  // Rows are the labels being mapped, columns the reference labels.
  w.topLeftCorner(other.k, ref.k) = counts.transpose().cast<double>();
  const std::vector<int> col = hungarian_max(w);
  return {col.begin(), col.begin() + other.k};
}

inline double matching_weight(const Clustering& ref, const Clustering& other, std::span<const int> map) {
  const Eigen::MatrixXi counts = contingency(ref, other);
  double total = 0.0;
  for (int l = 0; l < other.k; ++l) {
    const int r = map[static_cast<std::size_t>(l)];
    if (r < ref.k) total += counts(r, l);
  }
  return total;
}

inline Clustering apply_map(const Clustering& c, std::span<const int> map) {
  Clustering out;
  out.k = 0;
  out.labels.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out.labels[i] = map[static_cast<std::size_t>(c.labels[i])];
  for (int l : map) out.k = std::max(out.k, l + 1);
  out.inertia = c.inertia;
  return out;
}

/// Aligns every clustering to the reference by maximum-weight matching of
/// their contingency table.
inline EnsembleInput relabel(const EnsembleInput& in, std::size_t reference = 0) {
  in.validate();
  if (reference >= in.members()) fail(ErrorCategory::CardinalityError, "reference index out of range");
  EnsembleInput out;
  const Clustering& ref = in.clusterings[reference];
  for (std::size_t g = 0; g < in.members(); ++g) {
    if (g == reference) {
      out.clusterings.push_back(ref);
      continue;
    }
    out.clusterings.push_back(apply_map(in.clusterings[g], matching(ref, in.clusterings[g])));
  }
  return out;
}

/// RV(i, c) = number of (relabelled) clusterings that put object i in c.
inline Eigen::MatrixXi voting_matrix(const EnsembleInput& relabeled) {
  const int k = relabeled.max_k();
  Eigen::MatrixXi rv = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(relabeled.size()), k);
  for (const auto& c : relabeled.clusterings) {
    for (std::size_t i = 0; i < c.size(); ++i) ++rv(static_cast<Eigen::Index>(i), c.labels[i]);
  }
  return rv;
}

/// CO(i, j) = number of clusterings that put i and j together.
inline Eigen::MatrixXi coassociation(const EnsembleInput& in) {
  in.validate();
  const auto n = static_cast<Eigen::Index>(in.size());
  Eigen::MatrixXi co = Eigen::MatrixXi::Zero(n, n);
  for (const auto& c : in.clusterings) {
    for (int l = 0; l < c.k; ++l) {
      const std::vector<int> mem = c.members(l);
      for (int i : mem) {
        for (int j : mem) ++co(i, j);
      }
    }
  }
  return co;
}

struct Consensus {
  Clustering clustering;
  std::vector<double> posterior_max;
  GMMModel model;
};

struct ConsensusOptions {
  /// 0 selects the largest base k.
  int k_max = 0;
  std::size_t reference = 0;
  GMMOptions gmm{};
  /// Rows wider than this use diagonal covariances.
  Eigen::Index full_covariance_limit = 200;
};

namespace detail {

inline Consensus consensus_from_rows(const Eigen::MatrixXd& rows, int k_max, std::uint64_t seed, GMMOptions gopt,
                                     const ConsensusOptions& opt) {
  k_max = std::min<int>(k_max, static_cast<int>(rows.rows()));
  gopt.covariance = rows.cols() > opt.full_covariance_limit && rows.rows() > opt.full_covariance_limit
                        ? CovarianceType::diagonal
                        : CovarianceType::full;
  Consensus out;
  out.model = gmm_fit(rows, k_max, seed, gopt);
  const Eigen::MatrixXd post = out.model.posterior(rows);
  std::vector<int> raw(static_cast<std::size_t>(rows.rows()));
  out.posterior_max.resize(raw.size());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    Eigen::Index arg = 0;
    out.posterior_max[static_cast<std::size_t>(i)] = post.row(i).maxCoeff(&arg);
    raw[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  out.clustering = Clustering::compact(raw);
  return out;
}

}  // namespace detail

/// Relabel, vote, then fit a Gaussian mixture on the vote rows; each object
/// takes its most probable component.
inline Consensus gmm_voting(const EnsembleInput& in, std::uint64_t seed, const ConsensusOptions& opt = {}) {
  const EnsembleInput aligned = relabel(in, opt.reference);
  const Eigen::MatrixXd rv = voting_matrix(aligned).cast<double>();
  return detail::consensus_from_rows(rv, opt.k_max > 0 ? opt.k_max : in.max_k(), seed, opt.gmm, opt);
}

/// Gaussian mixture on the rows of the co-association matrix.
inline Consensus gmm_pair(const EnsembleInput& in, std::uint64_t seed, const ConsensusOptions& opt = {}) {
  const Eigen::MatrixXd co = coassociation(in).cast<double>();
  return detail::consensus_from_rows(co, opt.k_max > 0 ? opt.k_max : in.max_k(), seed, opt.gmm, opt);
}

/// CSV export `object_id,label,posterior_max`.
inline std::string consensus_csv(const Consensus& c, std::span<const std::string> ids = {}) {
  std::string out = "object_id,label,posterior_max\n";
  char buf[64];
  for (std::size_t i = 0; i < c.clustering.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", c.posterior_max[i]);
    out += (ids.empty() ? std::to_string(i) : ids[i]) + "," + std::to_string(c.clustering.labels[i]) + "," + buf +
           "\n";
  }
  return out;
}

}  // namespace tcr::ensemble
