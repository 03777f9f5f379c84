#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "tcr/error.hpp"

namespace tcr {

/// Hard partition of N objects into k labelled groups [0, k).
struct Clustering {
  std::vector<int> labels;
  int k = 0;
  /// Within-cluster sum of squared distances when produced by k-means; 0 otherwise.
  double inertia = 0.0;

  std::size_t size() const { return labels.size(); }

  std::vector<std::size_t> cluster_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    return sizes;
  }

  std::vector<int> members(int cluster) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cluster) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  void validate() const {
    for (int l : labels) {
      if (l < 0 || l >= k) fail(ErrorCategory::DataError, "label " + std::to_string(l) + " outside [0, k)");
    }
  }

  /// Relabels so labels appear in order of first occurrence and no label is
  /// unused.
  static Clustering compact(std::span<const int> raw) {
    Clustering c;
    c.labels.resize(raw.size());
    std::vector<int> map;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const int r = raw[i];
      if (r >= static_cast<int>(map.size())) map.resize(static_cast<std::size_t>(r) + 1, -1);
      if (map[static_cast<std::size_t>(r)] < 0) map[static_cast<std::size_t>(r)] = c.k++;
      c.labels[i] = map[static_cast<std::size_t>(r)];
    }
    return c;
  }
};

/// CSV export `object_id,label`.
inline std::string labels_csv(const Clustering& c, std::span<const std::string> ids = {}) {
  std::string out = "object_id,label\n";
  for (std::size_t i = 0; i < c.labels.size(); ++i) {
    out += (ids.empty() ? std::to_string(i) : ids[i]) + "," + std::to_string(c.labels[i]) + "\n";
  }
  return out;
}

}  // namespace tcr
