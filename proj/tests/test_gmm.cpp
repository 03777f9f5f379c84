#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

#include "tcr/gmm.hpp"

using namespace tcr;

namespace {

Eigen::MatrixXd random_2d(Rng& rng, int n) {
  Eigen::MatrixXd x(n, 2);
  const int groups = 1 + static_cast<int>(rng.index(4));
  for (int i = 0; i < n; ++i) {
    const double c = 3.0 * static_cast<double>(i % groups);
    x(i, 0) = rng.normal(c, 1.0);
    x(i, 1) = rng.normal(-c, 0.5 + rng.uniform());
  }
  return x;
}

}  // namespace

TEST(GMM, SingleComponentClosedForm) {
  Rng rng(4);
  const Eigen::MatrixXd x = random_2d(rng, 50);
  const auto g = gmm_fit(x, 1, 7);
  EXPECT_NEAR(g.weights(0), 1.0, 1e-12);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  EXPECT_TRUE(g.means.row(0).isApprox(mean, 1e-10));
  const Eigen::MatrixXd c = x.rowwise() - mean;
  Eigen::MatrixXd cov = c.transpose() * c / 50.0;
  cov.diagonal().array() += g.floor;
  EXPECT_TRUE(g.covariances[0].isApprox(cov, 1e-10));
}

TEST(GMM, FarApartGivesOneHotPosterior) {
  Rng rng(12);
  Eigen::MatrixXd x(40, 2);
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = rng.normal(i < 20 ? 0.0 : 100.0, 1.0);
    x(i, 1) = rng.normal(0.0, 1.0);
  }
  const auto g = gmm_fit(x, 2, 3);
  const Eigen::MatrixXd post = g.posterior(x);
  for (int i = 0; i < 40; ++i) EXPECT_GT(post.row(i).maxCoeff(), 1.0 - 1e-6);
  Eigen::Index a = 0, b = 0;
  post.row(0).maxCoeff(&a);
  post.row(39).maxCoeff(&b);
  EXPECT_NE(a, b);
}

TEST(GMM, LogLikelihoodNonDecreasing) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const Eigen::MatrixXd x = random_2d(rng, 30 + static_cast<int>(rng.index(60)));
    GMMOptions opt;
    opt.n_init = 1;
    const auto g = gmm_fit(x, 1 + static_cast<int>(rng.index(4)), seed, opt);
    for (std::size_t i = 1; i < g.log_likelihood.size(); ++i) {
      EXPECT_GE(g.log_likelihood[i] - g.log_likelihood[i - 1], -1e-9) << "seed " << seed << " step " << i;
    }
  }
}

TEST(GMM, WeightsOnSimplexAndCovariancesFloored) {
  Rng rng(9);
  Eigen::MatrixXd x(30, 3);
  for (int i = 0; i < 30; ++i) x.row(i) << static_cast<double>(i % 3), 1.0, static_cast<double>(i % 3);
  const auto g = gmm_fit(x, 3, 1);
  EXPECT_NEAR(g.weights.sum(), 1.0, 1e-12);
  EXPECT_GT(g.floor, 0.0);
  for (int c = 0; c < 3; ++c) {
    if (!g.alive(c)) continue;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.covariances[static_cast<std::size_t>(c)]);
    EXPECT_GE(es.eigenvalues().minCoeff(), g.floor * (1 - 1e-9));
  }
}

TEST(GMM, Diagonal) {
  Rng rng(2);
  const Eigen::MatrixXd x = random_2d(rng, 60);
  GMMOptions opt;
  opt.covariance = CovarianceType::diagonal;
  const auto g = gmm_fit(x, 2, 5, opt);
  EXPECT_EQ(g.covariances[0].cols(), 1);
  for (std::size_t i = 1; i < g.log_likelihood.size(); ++i) {
    EXPECT_GE(g.log_likelihood[i] - g.log_likelihood[i - 1], -1e-9);
  }
}

TEST(GMM, Deterministic) {
  Rng rng(6);
  const Eigen::MatrixXd x = random_2d(rng, 40);
  const auto a = gmm_fit(x, 3, 11), b = gmm_fit(x, 3, 11);
  EXPECT_EQ(a.log_likelihood, b.log_likelihood);
  EXPECT_EQ(a.means, b.means);
}

TEST(GMM, TooManyComponents) {
  try {
    gmm_fit(Eigen::MatrixXd::Zero(2, 2), 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::CardinalityError);
  }
}
