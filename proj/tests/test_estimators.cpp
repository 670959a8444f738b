#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "missforecast/estimators.hpp"
#include "missforecast/quadrature.hpp"
#include "reference.hpp"

using namespace missforecast;
using namespace missforecast::reference;

TEST(Ols, MatchesSvdReference) {
  Rng rng = make_rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = random_design(200, 4, rng);
    const Eigen::VectorXd y = x * Eigen::Vector4d(1, -2, 0.5, 3) +
                              Eigen::VectorXd::NullaryExpr(200, [&] { return std::normal_distribution<double>()(rng); });
    const auto fit = ols(x, y);
    const Eigen::VectorXd ref = x.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
    EXPECT_LE((fit.coef - ref).lpNorm<Eigen::Infinity>(), 1e-10);
    EXPECT_NEAR(fit.resid_var, (y - x * ref).squaredNorm() / (200 - 4), 1e-10);
    EXPECT_LE((fit.xtx_inv - (x.transpose() * x).inverse()).lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(Ols, SingularDesignNamesColumn) {
  Rng rng = make_rng(2);
  auto x = random_design(50, 3, rng);
  x.col(2) = 2.0 * x.col(1);
  const std::vector<std::string> names{"(intercept)", "a", "b"};
  try {
    ols(x, Eigen::VectorXd::Ones(50), names);
    FAIL() << "expected SingularDesignError";
  } catch (const SingularDesignError& e) {
    EXPECT_EQ(e.column(), "b");
  }
  EXPECT_THROW(ols(random_design(3, 3, rng), Eigen::VectorXd::Ones(3)), TrainingError);
}

TEST(Irls, MatchesNewtonAndTruth) {
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector3d truth(-0.5, 1.0, -0.7);
  const auto x = random_design(4000, 3, rng);
  Eigen::VectorXd y(4000);
  for (Eigen::Index i = 0; i < 4000; ++i) y(i) = u(rng) < logistic(x.row(i).dot(truth)) ? 1.0 : 0.0;
  const auto fit = irls_logistic(x, y);
  EXPECT_TRUE(fit.converged);
  EXPECT_LE((fit.coef - newton_logistic(x, y)).lpNorm<Eigen::Infinity>(), 1e-10);
  for (Eigen::Index k = 0; k < 3; ++k)
    EXPECT_LE(std::abs(fit.coef(k) - truth(k)), 3.0 * std::sqrt(fit.cov(k, k))) << k;
  for (std::size_t k = 1; k < fit.deviance_trace.size(); ++k)
    EXPECT_LE(fit.deviance_trace[k], fit.deviance_trace[k - 1] + 1e-9);
}

TEST(Irls, WeightsEqualReplication) {
  Rng rng = make_rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto x = random_design(300, 2, rng);
  Eigen::VectorXd y(300);
  for (Eigen::Index i = 0; i < 300; ++i) y(i) = u(rng) < 0.4 ? 1.0 : 0.0;
  Eigen::MatrixXd x2(600, 2);
  Eigen::VectorXd y2(600);
  x2 << x, x;
  y2 << y, y;
  std::vector<double> w(300, 2.0);
  EXPECT_LE((irls_logistic(x, y, {}, w).coef - irls_logistic(x2, y2).coef).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(Irls, SeparationAndBadInput) {
  Eigen::MatrixXd x(6, 2);
  x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  EXPECT_THROW(irls_logistic(x, y), SeparationError);
  y(0) = 0.5;
  EXPECT_THROW(irls_logistic(x, y), InputError);
}

TEST(Em, LoglikMatchesReferenceEvaluator) {
  Rng rng = make_rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = fuzz_mvn(rng, 300, 3, 0.25);
    const auto fit = em_mvn(d);
    EXPECT_NEAR(fit.loglik, reference_loglik(d, fit.mean, fit.cov), 1e-8);
    EXPECT_NEAR(mvn_observed_loglik(d, fit.mean, fit.cov), reference_loglik(d, fit.mean, fit.cov), 1e-8);
  }
}

TEST(Em, MonotoneOnFuzzedInstances) {
  Rng rng = make_rng(6);
  std::uniform_int_distribution<std::size_t> nd(30, 200), dd(2, 4);
  std::uniform_real_distribution<double> md(0.05, 0.5);
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = fuzz_mvn(rng, nd(rng), dd(rng), md(rng));
    const auto fit = em_mvn(d);
    for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k)
      ASSERT_GE(fit.loglik_trace[k], fit.loglik_trace[k - 1] - 1e-9) << "instance " << rep;
  }
}

TEST(Em, CompleteDataGivesSampleMoments) {
  Rng rng = make_rng(7);
  const auto d = fuzz_mvn(rng, 100, 3, 0.0);
  Eigen::MatrixXd v(100, 3);
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t j = 0; j < 3; ++j) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d(i, j);
  const auto fit = em_mvn(d);
  const Eigen::VectorXd m = v.colwise().mean();
  const Eigen::MatrixXd c = v.rowwise() - m.transpose();
  EXPECT_LE((fit.mean - m).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LE((fit.cov - c.transpose() * c / 100.0).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(Em, MaskedCellsCannotBeRead) {
  Eigen::MatrixXd v(2, 2);
  v << 1, 2, 3, 4;
  const MaskedMatrix d(v, {0, 1, 0, 0});
  EXPECT_THROW(d(0, 1), ContractViolation);
  EXPECT_THROW(em_mvn(d), TrainingError);
}

TEST(Quadrature, StandardNormalMoments) {
  const auto& r = standard_normal_rule(20);
  double m0 = 0, m2 = 0, m4 = 0, m6 = 0;
  for (std::size_t k = 0; k < r.nodes.size(); ++k) {
    const double z2 = r.nodes[k] * r.nodes[k];
    m0 += r.weights[k];
    m2 += r.weights[k] * z2;
    m4 += r.weights[k] * z2 * z2;
    m6 += r.weights[k] * z2 * z2 * z2;
  }
  EXPECT_NEAR(m0, 1.0, 1e-12);
  EXPECT_NEAR(m2, 1.0, 1e-12);
  EXPECT_NEAR(m4, 3.0, 1e-11);
  EXPECT_NEAR(m6, 15.0, 1e-10);
}

TEST(PosteriorDraw, CentredOnEstimate) {
  Rng rng = make_rng(8);
  const auto x = random_design(100, 2, rng);
  const Eigen::VectorXd y = x * Eigen::Vector2d(1, 2) +
                            Eigen::VectorXd::NullaryExpr(100, [&] { return std::normal_distribution<double>()(rng); });
  const auto fit = ols(x, y);
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  const int draws = 20000;
  for (int k = 0; k < draws; ++k) acc += posterior_draw(fit, rng).coef;
  acc /= draws;
  for (Eigen::Index k = 0; k < 2; ++k)
    EXPECT_NEAR(acc(k), fit.coef(k), 5.0 * std::sqrt(fit.resid_var * fit.xtx_inv(k, k) / draws) * 1.2);
}
