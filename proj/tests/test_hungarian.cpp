#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <numeric>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "tcr/ensemble.hpp"
#include "tcr/hungarian.hpp"

using namespace tcr;

TEST(Hungarian, IdentityIsOptimalOnDiagonal) {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(4, 4) * 5.0;
  EXPECT_EQ(hungarian_max(w), (std::vector<int>{0, 1, 2, 3}));
}

TEST(Hungarian, ReturnsPermutationWithOptimalWeight) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng.index(6));
    Eigen::MatrixXd w(k, k);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = static_cast<double>(rng.index(20));
    const auto p = hungarian_max(w);
    ASSERT_EQ(p.size(), static_cast<std::size_t>(k));
    EXPECT_EQ(std::set<int>(p.begin(), p.end()).size(), p.size());
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += w(i, p[static_cast<std::size_t>(i)]);
    EXPECT_EQ(s, oracle::brute_force_assignment(w)) << "trial " << trial;
  }
}

TEST(Hungarian, MatchingWeightOnRandomPartitions) {
  Rng rng(57);
  for (int trial = 0; trial < 100; ++trial) {
    const int k_ref = 2 + static_cast<int>(rng.index(5));
    const int k_other = 2 + static_cast<int>(rng.index(5));
    const std::size_t n = 10 + rng.index(40);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(k_ref)));
      b[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(k_other)));
    }
    const Clustering ref = Clustering::compact(a), other = Clustering::compact(b);
    const auto map = ensemble::matching(ref, other);
    const Eigen::MatrixXi counts = ensemble::contingency(ref, other);
    const int m = std::max(ref.k, other.k);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
    w.topLeftCorner(other.k, ref.k) = counts.transpose().cast<double>();
    EXPECT_EQ(ensemble::matching_weight(ref, other, map), oracle::brute_force_assignment(w)) << "trial " << trial;
    std::set<int> used(map.begin(), map.end());
    EXPECT_EQ(used.size(), map.size());
  }
}
