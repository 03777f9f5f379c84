#pragma once

#include <cmath>
#include <map>
#include <span>
#include <utility>

#include "tcr/error.hpp"

namespace tcr {

/// sqrt(mean((a - b)^2)).
inline double rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCategory::ShapeError, "rmse arguments differ in length");
  if (a.empty()) fail(ErrorCategory::ShapeError, "rmse of empty series");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.size()));
}

/// Hubert-Arabie adjusted Rand index. Two single-cluster partitions score 1.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) fail(ErrorCategory::ShapeError, "partitions differ in size");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
  }
  auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, c] : joint) index += choose2(c);
  for (const auto& [key, c] : ca) sa += choose2(c);
  for (const auto& [key, c] : cb) sb += choose2(c);
  const double expected = sa * sb / choose2(n);
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace tcr
