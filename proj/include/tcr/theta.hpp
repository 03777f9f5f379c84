#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "tcr/error.hpp"

namespace tcr::theta {

/// Theta(0, 2): OLS line a + b t (t = 0..T-1) and SES on 2 y - line.
struct Model {
  double intercept = 0.0;
  double slope = 0.0;
  double alpha = 0.0;
  /// SES level after the last observation.
  double level = 0.0;
  std::size_t length = 0;
};

namespace detail {

inline double ses_sse(std::span<const double> x, double alpha, double* final_level = nullptr) {
  double level = x[0], sse = 0.0;
  for (std::size_t t = 1; t < x.size(); ++t) {
    const double e = x[t] - level;
    sse += e * e;
    level += alpha * e;
  }
  if (final_level) *final_level = level;
  return sse;
}

}  // namespace detail

inline Model fit(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n < 3) fail(ErrorCategory::InsufficientHistory, "theta needs at least 3 observations");
  Model m;
  m.length = n;
  const double tn = static_cast<double>(n);
  const double tbar = (tn - 1.0) / 2.0;
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= tn;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double dt = static_cast<double>(t) - tbar;
    sxy += dt * (y[t] - ybar);
    sxx += dt * dt;
  }
  m.slope = sxy / sxx;
  m.intercept = ybar - m.slope * tbar;

  std::vector<double> theta2(n);
  for (std::size_t t = 0; t < n; ++t) theta2[t] = 2.0 * y[t] - (m.intercept + m.slope * static_cast<double>(t));

  double best = std::numeric_limits<double>::infinity();
  for (int step = 1; step <= 99; ++step) {
    const double alpha = step / 100.0;
    const double sse = detail::ses_sse(theta2, alpha);
    if (sse < best) {
      best = sse;
      m.alpha = alpha;
    }
  }
  detail::ses_sse(theta2, m.alpha, &m.level);
  return m;
}

/// Equal-weight combination of the extrapolated line and the flat SES level.
inline std::vector<double> forecast(const Model& m, int h) {
  std::vector<double> out;
  for (int k = 1; k <= h; ++k) {
    const double line = m.intercept + m.slope * (static_cast<double>(m.length) - 1.0 + k);
    out.push_back(0.5 * line + 0.5 * m.level);
  }
  return out;
}

inline std::vector<double> forecast(std::span<const double> y, int h) { return forecast(fit(y), h); }

/// One-step-ahead in-sample fit; the first point uses the initial level.
inline std::vector<double> fitted(const Model& m, std::span<const double> y) {
  std::vector<double> out(y.size());
  double level = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double line = m.intercept + m.slope * static_cast<double>(t);
    const double x = 2.0 * y[t] - line;
    if (t == 0) level = x;
    out[t] = 0.5 * line + 0.5 * level;
    level += m.alpha * (x - level);
  }
  return out;
}

inline double insample_rmse(std::span<const double> y) {
  const Model m = fit(y);
  const std::vector<double> f = fitted(m, y);
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) s += (y[t] - f[t]) * (y[t] - f[t]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

}  // namespace tcr::theta
