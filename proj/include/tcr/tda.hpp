#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tcr/error.hpp"

namespace tcr::tda {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Points of equal dimension stored row-major.
struct PointCloud {
  std::size_t dim = 0;
  std::vector<double> coords;

  std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }
  bool empty() const { return size() == 0; }

  std::span<const double> point(std::size_t i) const { return {coords.data() + i * dim, dim}; }

  static PointCloud from_rows(const std::vector<std::vector<double>>& rows) {
    PointCloud pc;
    if (rows.empty()) return pc;
    pc.dim = rows.front().size();
    for (const auto& r : rows) {
      if (r.size() != pc.dim) fail(ErrorCategory::ShapeError, "points of unequal dimension");
      pc.coords.insert(pc.coords.end(), r.begin(), r.end());
    }
    return pc;
  }
};

/// Sliding-window delay embedding: points (x_t, ..., x_{t+w-1}) for
/// t = 0, s, 2s, ... while t + w <= T.
inline PointCloud delay_embed(std::span<const double> series, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) fail(ErrorCategory::WindowError, "window and stride must be positive");
  if (window > series.size()) {
    fail(ErrorCategory::WindowError, "window " + std::to_string(window) + " exceeds series length " +
                                         std::to_string(series.size()));
  }
  PointCloud pc;
  pc.dim = window;
  const std::size_t count = (series.size() - window) / stride + 1;
  pc.coords.reserve(count * window);
  for (std::size_t k = 0; k < count; ++k) {
    const auto start = series.begin() + static_cast<std::ptrdiff_t>(k * stride);
    pc.coords.insert(pc.coords.end(), start, start + static_cast<std::ptrdiff_t>(window));
  }
  return pc;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// min over points of the distance to the farthest other point. The Rips
/// complex at this scale is a cone, so no homology survives past it.
inline double enclosing_radius(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  double best = kInfinity;
  for (std::size_t i = 0; i < n; ++i) {
    double far = 0.0;
    for (std::size_t j = 0; j < n; ++j) far = std::max(far, distance(cloud.point(i), cloud.point(j)));
    best = std::min(best, far);
  }
  return n == 0 ? 0.0 : best;
}

struct PersistencePair {
  int dim = 0;
  double birth = 0.0;
  double death = kInfinity;

  bool infinite() const { return std::isinf(death); }
  friend bool operator==(const PersistencePair&, const PersistencePair&) = default;
};

inline bool bar_less(const PersistencePair& a, const PersistencePair& b) {
  if (a.dim != b.dim) return a.dim < b.dim;
  if (a.birth != b.birth) return a.birth < b.birth;
  return a.death < b.death;
}

struct PersistenceDiagram {
  std::vector<PersistencePair> pairs;

  std::size_t count(int dim) const {
    return static_cast<std::size_t>(
        std::count_if(pairs.begin(), pairs.end(), [dim](const auto& p) { return p.dim == dim; }));
  }
};

/// Interval view of a diagram, sorted by (dim, birth, death).
struct Barcode {
  std::vector<PersistencePair> bars;

  std::vector<PersistencePair> dimension(int dim) const {
    std::vector<PersistencePair> out;
    for (const auto& b : bars) {
      if (b.dim == dim) out.push_back(b);
    }
    return out;
  }
};

namespace detail {

using Column = std::vector<std::uint32_t>;

/// Z/2 column addition of two sorted index sets.
inline void add_column(Column& target, const Column& source, Column& scratch) {
  scratch.clear();
  std::set_symmetric_difference(target.begin(), target.end(), source.begin(), source.end(),
                                std::back_inserter(scratch));
  target.swap(scratch);
}

/// Standard left-to-right reduction step: adds earlier reduced columns while
/// the lowest entry collides with an existing pivot.
inline void reduce_column(Column& col, const std::vector<std::int32_t>& pivot_owner,
                          const std::vector<Column>& reduced, Column& scratch) {
  while (!col.empty()) {
    const std::int32_t owner = pivot_owner[col.back()];
    if (owner < 0) return;
    add_column(col, reduced[static_cast<std::size_t>(owner)], scratch);
  }
}

}  // namespace detail

/// Vietoris-Rips persistence (Euclidean distance, Z/2 coefficients) in
/// dimensions 0..max_dim, max_dim in {0, 1}. Simplices enter at the length of
/// their longest edge and are ordered by (value, dimension, vertex tuple); the
/// boundary matrix is reduced column by column. Every point contributes one H0
/// pair (duplicates die at 0); H1 pairs of zero length are not reported.
inline PersistenceDiagram rips_persistence(const PointCloud& cloud, double max_scale, int max_dim) {
  if (cloud.empty()) fail(ErrorCategory::DataError, "point cloud is empty");
  if (!(max_scale > 0.0)) fail(ErrorCategory::DataError, "max_scale must be positive");
  if (max_dim < 0 || max_dim > 1) fail(ErrorCategory::DataError, "max_dim must be 0 or 1");
  for (double c : cloud.coords) {
    if (!std::isfinite(c)) fail(ErrorCategory::DataError, "non-finite coordinate in point cloud");
  }

  // Duplicate points change nothing but the number of zero-length H0 pairs,
  // so the complex is built on distinct points only.
  const std::size_t total = cloud.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto lex_less = [&](std::size_t a, std::size_t b) {
    auto pa = cloud.point(a), pb = cloud.point(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  };
  std::stable_sort(order.begin(), order.end(), lex_less);
  std::vector<std::size_t> distinct;
  for (std::size_t k = 0; k < total; ++k) {
    if (k == 0 || lex_less(order[k - 1], order[k])) distinct.push_back(order[k]);
  }
  std::sort(distinct.begin(), distinct.end());
  const std::size_t n = distinct.size();

  PersistenceDiagram diagram;
  for (std::size_t k = n; k < total; ++k) diagram.pairs.push_back({0, 0.0, 0.0});

  struct Edge {
    double length;
    std::uint32_t a, b;
  };
  std::vector<Edge> edges;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = i + 1; j < n; ++j) {
      const double d = distance(cloud.point(distinct[i]), cloud.point(distinct[j]));
      if (d <= max_scale) edges.push_back({d, i, j});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.length != y.length) return x.length < y.length;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  detail::Column scratch;

  // H0: reduce edge boundaries against vertices.
  std::vector<std::int32_t> vertex_owner(n, -1);
  std::vector<detail::Column> edge_reduced;
  std::vector<bool> edge_negative(edges.size(), false);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    detail::Column col{edges[e].a, edges[e].b};
    detail::reduce_column(col, vertex_owner, edge_reduced, scratch);
    if (col.empty()) continue;
    vertex_owner[col.back()] = static_cast<std::int32_t>(edge_reduced.size());
    edge_reduced.push_back(std::move(col));
    edge_negative[e] = true;
    diagram.pairs.push_back({0, 0.0, edges[e].length});
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (vertex_owner[v] < 0) diagram.pairs.push_back({0, 0.0, kInfinity});
  }

  if (max_dim >= 1) {
    std::vector<std::int32_t> edge_index(n * n, -1);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      edge_index[edges[e].a * n + edges[e].b] = static_cast<std::int32_t>(e);
    }
    struct Triangle {
      double value;
      std::uint32_t a, b, c;
    };
    std::vector<Triangle> triangles;
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) {
        const std::int32_t ij = edge_index[i * n + j];
        if (ij < 0) continue;
        for (std::uint32_t k = j + 1; k < n; ++k) {
          const std::int32_t ik = edge_index[i * n + k];
          const std::int32_t jk = edge_index[j * n + k];
          if (ik < 0 || jk < 0) continue;
          const double v = std::max({edges[ij].length, edges[ik].length, edges[jk].length});
          triangles.push_back({v, i, j, k});
        }
      }
    }
    std::sort(triangles.begin(), triangles.end(), [](const Triangle& x, const Triangle& y) {
      if (x.value != y.value) return x.value < y.value;
      if (x.a != y.a) return x.a < y.a;
      if (x.b != y.b) return x.b < y.b;
      return x.c < y.c;
    });

    std::vector<std::int32_t> edge_owner(edges.size(), -1);
    std::vector<detail::Column> tri_reduced;
    for (const auto& t : triangles) {
      detail::Column col{static_cast<std::uint32_t>(edge_index[t.a * n + t.b]),
                         static_cast<std::uint32_t>(edge_index[t.a * n + t.c]),
                         static_cast<std::uint32_t>(edge_index[t.b * n + t.c])};
      std::sort(col.begin(), col.end());
      detail::reduce_column(col, edge_owner, tri_reduced, scratch);
      if (col.empty()) continue;
      const std::uint32_t low = col.back();
      edge_owner[low] = static_cast<std::int32_t>(tri_reduced.size());
      tri_reduced.push_back(std::move(col));
      if (edges[low].length < t.value) diagram.pairs.push_back({1, edges[low].length, t.value});
    }
    for (std::size_t e = 0; e < edges.size(); ++e) {
      if (!edge_negative[e] && edge_owner[e] < 0) diagram.pairs.push_back({1, edges[e].length, kInfinity});
    }
  }
  return diagram;
}

inline Barcode barcode(const PersistenceDiagram& diagram) {
  Barcode bc{diagram.pairs};
  std::sort(bc.bars.begin(), bc.bars.end(), bar_less);
  return bc;
}

/// Per homology dimension 0 and 1: (bar count, max, mean and sum of
/// persistence, persistence entropy), concatenated.
struct TopoFeatureVector {
  static constexpr std::size_t kPerDim = 5;
  static constexpr std::size_t kSize = 2 * kPerDim;
  std::array<double, kSize> values{};

  double bar_count(int dim) const { return values[static_cast<std::size_t>(dim) * kPerDim + 0]; }
  double max_persistence(int dim) const { return values[static_cast<std::size_t>(dim) * kPerDim + 1]; }
  double mean_persistence(int dim) const { return values[static_cast<std::size_t>(dim) * kPerDim + 2]; }
  double sum_persistence(int dim) const { return values[static_cast<std::size_t>(dim) * kPerDim + 3]; }
  double entropy(int dim) const { return values[static_cast<std::size_t>(dim) * kPerDim + 4]; }
};

/// Infinite deaths are capped at `cap_scale` and kept as bars; bars of zero
/// length carry no information and are skipped.
inline TopoFeatureVector barcode_features(const Barcode& bc, double cap_scale) {
  TopoFeatureVector out;
  for (int dim = 0; dim <= 1; ++dim) {
    std::vector<double> lengths;
    for (const auto& b : bc.bars) {
      if (b.dim != dim) continue;
      const double death = b.infinite() ? cap_scale : b.death;
      const double len = death - b.birth;
      if (len > 0.0) lengths.push_back(len);
    }
    auto* f = out.values.data() + static_cast<std::size_t>(dim) * TopoFeatureVector::kPerDim;
    if (lengths.empty()) continue;
    const double sum = std::accumulate(lengths.begin(), lengths.end(), 0.0);
    double entropy = 0.0;
    for (double l : lengths) {
      const double p = l / sum;
      if (p > 0.0) entropy -= p * std::log(p);
    }
    f[0] = static_cast<double>(lengths.size());
    f[1] = *std::max_element(lengths.begin(), lengths.end());
    f[2] = sum / static_cast<double>(lengths.size());
    f[3] = sum;
    f[4] = std::max(0.0, entropy);
  }
  return out;
}

/// Features of one series: embed, take Rips persistence up to the enclosing
/// radius, summarize. A cloud with a single distinct point has all-zero
/// features.
inline TopoFeatureVector series_topo_features(std::span<const double> series, std::size_t window,
                                              std::size_t stride) {
  const auto cloud = delay_embed(series, window, stride);
  const double radius = enclosing_radius(cloud);
  if (!(radius > 0.0)) return {};
  return barcode_features(barcode(rips_persistence(cloud, radius, 1)), radius);
}

/// CSV export `dim,birth,death` with `inf` for unpaired classes.
inline std::string diagram_csv(const Barcode& bc) {
  auto fmt = [](double v) -> std::string {
    if (std::isinf(v)) return "inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  };
  std::string out = "dim,birth,death\n";
  for (const auto& b : bc.bars) {
    out += std::to_string(b.dim) + "," + fmt(b.birth) + "," + fmt(b.death) + "\n";
  }
  return out;
}

}  // namespace tcr::tda
