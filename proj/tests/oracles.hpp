#pragma once
// Slow, obviously-correct reference implementations used only by tests.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tcr/rng.hpp"
#include "tcr/tda.hpp"

namespace oracle {

using tcr::tda::PersistencePair;

inline std::vector<PersistencePair> sorted(std::vector<PersistencePair> v) {
  std::sort(v.begin(), v.end(), tcr::tda::bar_less);
  return v;
}

/// H0 by Kruskal over every point (duplicates included): each merge kills
/// the younger component at the edge length.
inline std::vector<PersistencePair> union_find_h0(const tcr::tda::PointCloud& pc, double max_scale) {
  const std::size_t n = pc.size();
  struct E {
    double d;
    std::size_t a, b;
  };
  std::vector<E> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = tcr::tda::distance(pc.point(i), pc.point(j));
      if (d <= max_scale) edges.push_back({d, i, j});
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const E& x, const E& y) { return x.d < y.d; });
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<PersistencePair> out;
  for (const auto& e : edges) {
    const auto ra = find(e.a), rb = find(e.b);
    if (ra == rb) continue;
    parent[ra] = rb;
    out.push_back({0, 0.0, e.d});
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (find(i) == i) out.push_back({0, 0.0, tcr::tda::kInfinity});
  }
  return sorted(out);
}

/// H0 and H1 of the Rips complex by the textbook algorithm: every simplex up
/// to dimension 2 in one filtration, a dense Z/2 boundary matrix and plain
/// left-to-right column reduction. H1 pairs of length zero are dropped.
inline std::vector<PersistencePair> naive_persistence(const tcr::tda::PointCloud& pc, double max_scale) {
  const std::size_t n = pc.size();
  struct S {
    double value;
    int dim;
    std::vector<std::size_t> v;
  };
  std::vector<S> simplices;
  auto dist = [&](std::size_t i, std::size_t j) { return tcr::tda::distance(pc.point(i), pc.point(j)); };
  for (std::size_t i = 0; i < n; ++i) simplices.push_back({0.0, 0, {i}});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (dist(i, j) <= max_scale) simplices.push_back({dist(i, j), 1, {i, j}});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t k = j + 1; k < n; ++k) {
        const double v = std::max({dist(i, j), dist(i, k), dist(j, k)});
        if (v <= max_scale) simplices.push_back({v, 2, {i, j, k}});
      }
    }
  }
  std::stable_sort(simplices.begin(), simplices.end(), [](const S& a, const S& b) {
    if (a.value != b.value) return a.value < b.value;
    return a.dim < b.dim;
  });
  const std::size_t m = simplices.size();
  auto index_of = [&](const std::vector<std::size_t>& face) {
    for (std::size_t s = 0; s < m; ++s) {
      if (simplices[s].v == face) return s;
    }
    return m;
  };
  std::vector<std::vector<char>> col(m, std::vector<char>(m, 0));
  for (std::size_t s = 0; s < m; ++s) {
    const auto& v = simplices[s].v;
    if (v.size() < 2) continue;
    for (std::size_t drop = 0; drop < v.size(); ++drop) {
      std::vector<std::size_t> face;
      for (std::size_t q = 0; q < v.size(); ++q) {
        if (q != drop) face.push_back(v[q]);
      }
      col[s][index_of(face)] ^= 1;
    }
  }
  auto low = [&](std::size_t s) -> long {
    for (std::size_t r = m; r-- > 0;) {
      if (col[s][r]) return static_cast<long>(r);
    }
    return -1;
  };
  std::vector<long> lows(m, -1);
  std::vector<bool> paired(m, false);
  std::vector<PersistencePair> out;
  for (std::size_t s = 0; s < m; ++s) {
    bool changed = true;
    while (changed) {
      changed = false;
      const long l = low(s);
      if (l < 0) break;
      for (std::size_t t = 0; t < s; ++t) {
        if (lows[t] == l) {
          for (std::size_t r = 0; r < m; ++r) col[s][r] ^= col[t][r];
          changed = true;
          break;
        }
      }
    }
    lows[s] = low(s);
    if (lows[s] >= 0) {
      const auto b = static_cast<std::size_t>(lows[s]);
      paired[b] = paired[s] = true;
      const int dim = simplices[b].dim;
      const double birth = simplices[b].value, death = simplices[s].value;
      if (dim == 0 || birth < death) out.push_back({dim, birth, death});
    }
  }
  for (std::size_t s = 0; s < m; ++s) {
    if (!paired[s] && simplices[s].dim <= 1) out.push_back({simplices[s].dim, simplices[s].value, tcr::tda::kInfinity});
  }
  return sorted(out);
}

inline tcr::tda::PointCloud random_cloud(tcr::Rng& rng, std::size_t n, std::size_t dim) {
  tcr::tda::PointCloud pc;
  pc.dim = dim;
  for (std::size_t i = 0; i < n * dim; ++i) pc.coords.push_back(rng.uniform(-1.0, 1.0));
  return pc;
}

/// Maximum of sum_i w(i, p(i)) over every permutation p.
inline double brute_force_assignment(const Eigen::MatrixXd& w) {
  std::vector<int> p(static_cast<std::size_t>(w.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = -1e300;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += w(static_cast<Eigen::Index>(i), p[i]);
    best = std::max(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

/// Factor objective written term by term with plain loops.
inline double trmf_objective(const Eigen::MatrixXd& y, const Eigen::Array<bool, -1, -1>& obs, const Eigen::MatrixXd& z,
                             const Eigen::MatrixXd& f, const Eigen::MatrixXd& phi, double lf, double lz, double lphi,
                             double eta_z) {
  const long T = z.rows(), d = z.cols(), n = f.cols(), p = phi.cols();
  double fit = 0.0, count = 0.0;
  for (long t = 0; t < T; ++t) {
    for (long i = 0; i < n; ++i) {
      if (!obs(t, i)) continue;
      double pred = 0.0;
      for (long j = 0; j < d; ++j) pred += z(t, j) * f(j, i);
      fit += (y(t, i) - pred) * (y(t, i) - pred);
      count += 1.0;
    }
  }
  double ff = 0.0, zz = 0.0, pp = 0.0, ar = 0.0;
  for (long j = 0; j < d; ++j) {
    for (long i = 0; i < n; ++i) ff += f(j, i) * f(j, i);
    for (long t = 0; t < T; ++t) zz += z(t, j) * z(t, j);
    for (long l = 0; l < p; ++l) pp += phi(j, l) * phi(j, l);
    for (long t = p; t < T; ++t) {
      double e = z(t, j);
      for (long l = 1; l <= p; ++l) e -= phi(j, l - 1) * z(t - l, j);
      ar += e * e;
    }
  }
  const double dd = static_cast<double>(d);
  return fit / (2 * count) + lf / 2 * ff / (dd * static_cast<double>(n)) + lphi / 2 * pp / (dd * static_cast<double>(p)) +
         lz / 2 * ((1 - eta_z) * zz / (static_cast<double>(T) * dd) + eta_z * ar / (static_cast<double>(T - p) * dd));
}

/// Theta(0, 2) coded from the definition: least-squares line through a
/// design matrix, brute-force SES over the alpha grid, average of the two.
inline std::vector<double> theta_reference(const std::vector<double>& y, int h) {
  const long n = static_cast<long>(y.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd v(n);
  for (long t = 0; t < n; ++t) {
    x(t, 0) = 1.0;
    x(t, 1) = static_cast<double>(t + 1);
    v(t) = y[static_cast<std::size_t>(t)];
  }
  const Eigen::Vector2d coef = x.colPivHouseholderQr().solve(v);
  const Eigen::VectorXd line = x * coef;
  const Eigen::VectorXd two = 2.0 * v - line;
  double best_sse = 1e300, best_level = 0.0;
  for (int a = 1; a <= 99; ++a) {
    const double alpha = a * 0.01;
    double level = two(0), sse = 0.0;
    for (long t = 1; t < n; ++t) {
      sse += (two(t) - level) * (two(t) - level);
      level = alpha * two(t) + (1 - alpha) * level;
    }
    if (sse < best_sse) {
      best_sse = sse;
      best_level = level;
    }
  }
  std::vector<double> out;
  for (int k = 1; k <= h; ++k) out.push_back((coef(0) + coef(1) * static_cast<double>(n + k) + best_level) / 2.0);
  return out;
}

}  // namespace oracle
