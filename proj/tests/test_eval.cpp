#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "missforecast/datagen.hpp"
#include "missforecast/eval.hpp"

using namespace missforecast;

TEST(Scores, HandExamples) {
  const std::vector<double> half{0.5, 0.5}, y{0.0, 1.0};
  EXPECT_DOUBLE_EQ(brier(half, y), 0.25);
  EXPECT_DOUBLE_EQ(brier(y, y), 0.0);
  const std::vector<double> p{1.0, 2.0}, z{0.0, 0.0};
  EXPECT_DOUBLE_EQ(mse(p, z), 2.5);
  const std::vector<double> bad{1.5, 0.0};
  EXPECT_THROW(brier(bad, y), InputError);
  const std::vector<double> nonbinary{0.5, 0.5};
  EXPECT_THROW(brier(half, nonbinary), InputError);
  EXPECT_THROW(mse(p, std::vector<double>{0.0}), InputError);
}

TEST(Scores, ConstantForecastBrier) {
  Rng rng = make_rng(1);
  std::bernoulli_distribution b(0.3);
  std::vector<double> y(100000), p(100000, 0.3);
  for (auto& v : y) v = b(rng) ? 1.0 : 0.0;
  EXPECT_NEAR(brier(p, y), 0.3 * 0.7, 0.003);
}

TEST(Bootstrap, ConstantScores) {
  const std::vector<double> s(50, 0.7);
  const auto ci = bootstrap_ci(s, 200);
  EXPECT_DOUBLE_EQ(ci.low, 0.7);
  EXPECT_DOUBLE_EQ(ci.high, 0.7);
  EXPECT_THROW(bootstrap_ci(s, 99), ConfigError);
  EXPECT_THROW(bootstrap_ci(s, 200, 1.0), ConfigError);
}

TEST(Bootstrap, CoverageOfTheMean) {
  Rng rng = make_rng(2);
  std::normal_distribution<double> z(0.0, 1.0);
  int covered = 0;
  const int reps = 500;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> s(200);
    for (auto& v : s) v = z(rng);
    const auto ci = bootstrap_ci(s, 1000, 0.95, static_cast<std::uint64_t>(r));
    covered += (ci.low <= 0.0 && 0.0 <= ci.high) ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(covered) / reps, 0.95, 0.03);
}

TEST(Bootstrap, Deterministic) {
  const std::vector<double> s{0.1, 0.4, 0.2, 0.9, 0.3, 0.6};
  const auto a = bootstrap_ci(s, 500, 0.95, 9), b = bootstrap_ci(s, 500, 0.95, 9);
  EXPECT_EQ(a.low, b.low);
  EXPECT_EQ(a.high, b.high);
}

TEST(Stratify, GroupsRecombine) {
  const std::vector<Pattern> pats{Pattern::parse("00"), Pattern::parse("10"), Pattern::parse("00"),
                                  Pattern::parse("01"), Pattern::parse("10")};
  const std::vector<double> s{1, 2, 3, 4, 5};
  MetricRecord base;
  base.scenario = "S1";
  base.procedure = "PS";
  StratifyOptions opt;
  opt.bootstrap = 200;
  const auto recs = stratify(s, pats, base, opt);
  ASSERT_EQ(recs.size(), 6u);
  EXPECT_EQ(recs[0].subgroup, "overall");
  EXPECT_DOUBLE_EQ(recs[0].value, 3.0);
  EXPECT_EQ(recs[1].subgroup, "complete");
  EXPECT_DOUBLE_EQ(recs[1].value, 2.0);
  EXPECT_EQ(recs[2].subgroup, "incomplete");
  EXPECT_DOUBLE_EQ(recs[2].value, 11.0 / 3.0);
  std::size_t n_pat = 0;
  double weighted = 0;
  for (const auto& r : recs) {
    EXPECT_LE(*r.ci_low, r.value);
    EXPECT_GE(*r.ci_high, r.value);
    if (r.subgroup.rfind("pattern=", 0) == 0) {
      n_pat += r.n_subgroup;
      weighted += r.value * static_cast<double>(r.n_subgroup);
    }
  }
  EXPECT_EQ(n_pat, 5u);
  EXPECT_DOUBLE_EQ(weighted / 5.0, recs[0].value);
}

TEST(MetricsCsv, HeaderAndRows) {
  std::ostringstream os;
  MetricRecord r{"S4", "MI", 0.3, 2, "pattern=10", "mse", 1.25, std::nullopt, std::nullopt, 17};
  write_metrics_csv(os, {r});
  EXPECT_EQ(os.str(),
            "scenario,procedure,target_prop,replicate,subgroup,metric,value,ci_low,ci_high,n_subgroup\n"
            "S4,MI,0.3000,2,pattern=10,mse,1.25,,,17\n");
}

namespace {

MaskedDataset linear_data(std::size_t n, std::uint64_t seed) {
  const auto rows = draw_complete(default_spec(Scenario::S1), n, seed);
  return MaskedDataset::complete(rows.leftCols(2), rows.col(2), simulation_columns());
}

}  // namespace

// Leave-one-out residual of least squares is e_i / (1 - h_ii).
TEST(Loocv, MatchesHatMatrixIdentity) {
  const auto ds = linear_data(60, 3);
  Eigen::MatrixXd x(60, 3);
  Eigen::VectorXd y(60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    x(i, 0) = 1;
    x(i, 1) = ds.x(static_cast<std::size_t>(i), 0);
    x(i, 2) = ds.x(static_cast<std::size_t>(i), 1);
    y(i) = ds.y(static_cast<std::size_t>(i));
  }
  const Eigen::MatrixXd h = x * (x.transpose() * x).inverse() * x.transpose();
  const Eigen::VectorXd e = y - h * y;
  const auto cv = loocv(ds, OutcomeKind::Gaussian, procedure_config(ProcedureName::PS));
  for (Eigen::Index i = 0; i < 60; ++i)
    EXPECT_NEAR(cv.predictions[static_cast<std::size_t>(i)], y(i) - e(i) / (1 - h(i, i)), 1e-9);
  EXPECT_EQ(cv.n_fallback(), 0u);
}

TEST(Loocv, UnservedPatternFallsBackToMean) {
  auto base = linear_data(40, 4);
  Eigen::MatrixXd x(40, 2);
  Eigen::VectorXd y(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x(static_cast<Eigen::Index>(i), 0) = base.x(i, 0);
    x(static_cast<Eigen::Index>(i), 1) = base.x(i, 1);
    y(static_cast<Eigen::Index>(i)) = base.y(i);
  }
  std::vector<std::uint8_t> mask(80, 0);
  mask[0] = 1;
  const MaskedDataset ds(x, mask, y, std::vector<std::uint8_t>(40, 0), simulation_columns());
  const auto cv = loocv(ds, OutcomeKind::Gaussian, procedure_config(ProcedureName::PS));
  EXPECT_EQ(cv.n_fallback(), 1u);
  EXPECT_FALSE(cv.fallback_reason[0].empty());
  EXPECT_NEAR(cv.predictions[0], (y.sum() - y(0)) / 39.0, 1e-12);
}

TEST(Loocv, EveryFoldFailingIsAnError) {
  const auto ds = linear_data(2, 5);
  EXPECT_THROW(loocv(ds, OutcomeKind::Gaussian, procedure_config(ProcedureName::PS)), EvaluationError);
  EXPECT_THROW(loocv(ds.subset(std::vector<std::size_t>{0}), OutcomeKind::Gaussian,
                     procedure_config(ProcedureName::PS)),
               InputError);
}

TEST(Loocv, PermutationInvariantForDeterministicProcedure) {
  const auto ds = linear_data(30, 6);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::reverse(perm.begin(), perm.end());
  const auto a = loocv(ds, OutcomeKind::Gaussian, procedure_config(ProcedureName::PS));
  const auto b = loocv(ds.subset(perm), OutcomeKind::Gaussian, procedure_config(ProcedureName::PS));
  for (std::size_t k = 0; k < 30; ++k) EXPECT_NEAR(a.predictions[perm[k]], b.predictions[k], 1e-12);
}

TEST(Loocv, DeterministicForStochasticProcedure) {
  const auto ds = make_trauma_analogue().subset([] {
    std::vector<std::size_t> r(120);
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
  }());
  auto cfg = procedure_config(ProcedureName::MI, 8);
  cfg.m_imputations = 2;
  cfg.deployment_draws = 10;
  const auto a = loocv(ds, OutcomeKind::Bernoulli, cfg);
  const auto b = loocv(ds, OutcomeKind::Bernoulli, cfg);
  EXPECT_EQ(a.predictions, b.predictions);
}

TEST(PredictAll, RecordsUnsupportedRows) {
  const auto ds = linear_data(50, 7);
  const auto f = train_cca(ds, OutcomeKind::Gaussian);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 2);
  const MaskedDataset test(x, {1, 0, 0, 0}, Eigen::VectorXd::Zero(2), {0, 0}, simulation_columns());
  const auto out = predict_all(f, test);
  EXPECT_FALSE(out.point[0].has_value());
  EXPECT_TRUE(out.point[1].has_value());
  EXPECT_EQ(out.failures.size(), 1u);
}
