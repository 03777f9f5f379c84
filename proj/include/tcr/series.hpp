#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tcr/error.hpp"

namespace tcr {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// T x n observation matrix: column i is the time series of object i. Entries
/// with observed(t, i) == false are ignored by every loss.
struct SeriesMatrix {
  Eigen::MatrixXd values;
  Mask observed;

  static SeriesMatrix dense(Eigen::MatrixXd v) {
    SeriesMatrix m;
    m.observed = Mask::Constant(v.rows(), v.cols(), true);
    m.values = std::move(v);
    return m;
  }

  Eigen::Index periods() const { return values.rows(); }
  Eigen::Index series() const { return values.cols(); }

  Eigen::Index observed_count() const { return observed.count(); }
  Eigen::Index observed_count(Eigen::Index col) const { return observed.col(col).count(); }

  bool fully_observed() const { return observed.all(); }

  /// First `t` periods of every series.
  SeriesMatrix head(Eigen::Index t) const {
    return {values.topRows(t), observed.topRows(t)};
  }

  /// Periods [t, T) of every series.
  SeriesMatrix tail_from(Eigen::Index t) const {
    return {values.bottomRows(values.rows() - t), observed.bottomRows(observed.rows() - t)};
  }

  SeriesMatrix columns(std::span<const int> idx) const {
    SeriesMatrix out;
    out.values.resize(values.rows(), static_cast<Eigen::Index>(idx.size()));
    out.observed.resize(values.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.values.col(static_cast<Eigen::Index>(k)) = values.col(idx[k]);
      out.observed.col(static_cast<Eigen::Index>(k)) = observed.col(idx[k]);
    }
    return out;
  }

  std::vector<double> column(Eigen::Index col) const {
    std::vector<double> out(static_cast<std::size_t>(values.rows()));
    for (Eigen::Index t = 0; t < values.rows(); ++t) out[static_cast<std::size_t>(t)] = values(t, col);
    return out;
  }

  std::vector<bool> column_mask(Eigen::Index col) const {
    std::vector<bool> out(static_cast<std::size_t>(values.rows()));
    for (Eigen::Index t = 0; t < values.rows(); ++t) out[static_cast<std::size_t>(t)] = observed(t, col);
    return out;
  }

  /// Throws ShapeError / DataError when the invariants do not hold.
  void validate() const {
    if (values.rows() != observed.rows() || values.cols() != observed.cols()) {
      fail(ErrorCategory::ShapeError, "values and mask shapes differ");
    }
    for (Eigen::Index i = 0; i < values.cols(); ++i) {
      if (observed_count(i) == 0) {
        fail(ErrorCategory::DataError, "series " + std::to_string(i) + " has no observed entries");
      }
      for (Eigen::Index t = 0; t < values.rows(); ++t) {
        if (observed(t, i) && !std::isfinite(values(t, i))) {
          fail(ErrorCategory::DataError, "non-finite observed value in series " + std::to_string(i));
        }
      }
    }
  }
};

}  // namespace tcr
