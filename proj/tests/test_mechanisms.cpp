#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "missforecast/datagen.hpp"
#include "missforecast/mechanisms.hpp"

using namespace missforecast;
using namespace missforecast::mechanisms;

namespace {

// Brute-force probability of a partial assignment, decoding cells by hand.
double brute(const DiscreteJoint& j, const std::map<std::string, int>& ev) {
  const auto& vars = j.variables();
  double s = 0.0;
  for (std::size_t cell = 0; cell < j.cells(); ++cell) {
    std::size_t rest = cell;
    std::vector<int> cfg(vars.size());
    for (std::size_t k = vars.size(); k-- > 0;) {
      cfg[k] = static_cast<int>(rest % static_cast<std::size_t>(vars[k].domain));
      rest /= static_cast<std::size_t>(vars[k].domain);
    }
    bool ok = true;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      const auto it = ev.find(vars[k].name);
      if (it != ev.end() && it->second != cfg[k]) ok = false;
    }
    if (ok) s += j.table()[cell];
  }
  return s;
}

double cond_y(const DiscreteJoint& j, std::map<std::string, int> given) {
  const double den = brute(j, given);
  given["Y"] = 1;
  return brute(j, given) / den;
}

// Pr(Y=1 | X_o, M_X=m) against Pr(Y=1 | X_o) over positive cells. Two
// binary predictors X1, X2; `only_complete` restricts to m = 00 (NICO).
bool brute_nimo(const DiscreteJoint& j, bool only_complete) {
  for (int m1 = 0; m1 < 2; ++m1)
    for (int m2 = 0; m2 < 2; ++m2) {
      if (only_complete && (m1 || m2)) continue;
      for (int x1 = 0; x1 < 2; ++x1)
        for (int x2 = 0; x2 < 2; ++x2) {
          std::map<std::string, int> xo;
          if (!m1) xo["X1"] = x1;
          if (!m2) xo["X2"] = x2;
          auto with_m = xo;
          with_m["M_X1"] = m1;
          with_m["M_X2"] = m2;
          if (brute(j, with_m) <= 0.0) continue;
          if (std::abs(cond_y(j, with_m) - cond_y(j, xo)) > 1e-9) return false;
        }
    }
  return true;
}

bool brute_mcar(const DiscreteJoint& j) {
  for (int m = 0; m < 8; ++m) {
    const std::map<std::string, int> ev{{"M_X1", m & 1}, {"M_X2", (m >> 1) & 1}, {"M_Y", (m >> 2) & 1}};
    const double marg = brute(j, ev);
    for (int v = 0; v < 8; ++v) {
      std::map<std::string, int> xy{{"X1", v & 1}, {"X2", (v >> 1) & 1}, {"Y", (v >> 2) & 1}};
      const double pxy = brute(j, xy);
      if (pxy <= 0.0) continue;
      auto both = xy;
      both.insert(ev.begin(), ev.end());
      if (std::abs(brute(j, both) / pxy - marg) > 1e-9) return false;
    }
  }
  return true;
}

}  // namespace

TEST(CheckCi, ProductDistributionIsIndependent) {
  std::vector<Variable> vars = {predictor("A"), outcome("B"), predictor("C", 3), indicator("A"),
                                indicator("B"), indicator("C")};
  const double pa = 0.3, pb = 0.6, pc[3] = {0.2, 0.5, 0.3};
  const auto j = DiscreteJoint::from_function(vars, [&](const std::vector<int>& c) {
    double m = (c[0] ? pa : 1 - pa) * (c[1] ? pb : 1 - pb) * pc[c[2]];
    return m * (c[3] ? 0.5 : 0.5) * (c[4] ? 0.0 : 1.0) * (c[5] ? 0.0 : 1.0);
  });
  EXPECT_TRUE(check_ci(j, Event{{"A", 1}}, {"B"}, {"C"}).holds);
  EXPECT_TRUE(check_ci(j, std::vector<std::string>{"A"}, {"B", "C"}, {}).holds);
  EXPECT_THROW(check_ci(j, Event{{"Q", 1}}, {"B"}, {}), InputError);
}

TEST(MarCounterexample, ConditionalTablesByHand) {
  const MarCounterexampleParams prm;
  const auto j = mar_counterexample_joint(prm);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      const std::map<std::string, int> xy{{"X", x}, {"Y", y}};
      auto mx1 = xy;
      mx1["M_X"] = 1;
      // Pr(M_X = 1 | X, Y) = a + (b or c by Y)
      EXPECT_NEAR(brute(j, mx1) / brute(j, xy), prm.a + (y ? prm.c : prm.b), 1e-12);
    }
}

TEST(MarCounterexample, MarHoldsOthersFail) {
  const auto j = mar_counterexample_joint();
  // The three MAR statements listed for the table.
  EXPECT_TRUE(check_ci(j, Event{{"M_X", 1}, {"M_Y", 0}}, {"X"}, {"Y"}).holds);
  EXPECT_TRUE(check_ci(j, Event{{"M_X", 0}, {"M_Y", 1}}, {"Y"}, {"X"}).holds);
  EXPECT_TRUE(check_ci(j, Event{{"M_X", 1}, {"M_Y", 1}}, {"X", "Y"}, {}).holds);
  const auto bad = check_ci(j, Event{{"M_X", 0}}, {"Y"}, {"X"});
  EXPECT_FALSE(bad.holds);
  ASSERT_TRUE(bad.witness.has_value());
  EXPECT_GT(bad.witness->gap(), 0.0);

  const auto rep = classify(j);
  EXPECT_TRUE(rep.mar.holds());
  EXPECT_TRUE(rep.marx_yo.holds());
  EXPECT_TRUE(rep.marx_ym.fails());
  EXPECT_TRUE(rep.nimo.fails());
  EXPECT_TRUE(rep.nico.fails());
  EXPECT_TRUE(rep.mcar.fails());
  EXPECT_FALSE(rep.nico.witness.empty());
  EXPECT_TRUE(lattice_violations(rep).empty());
}

TEST(MarCounterexample, EqualBAndCMakesXMissingnessIgnorable) {
  const auto rep = classify(mar_counterexample_joint({0.1, 0.1, 0.1, 0.1, 0.1}));
  EXPECT_TRUE(rep.nico.holds());
  EXPECT_TRUE(rep.nimo.holds());
  EXPECT_TRUE(rep.mar.holds());
}

TEST(Classify, FullyIndependentMissingness) {
  std::vector<Variable> vars = {predictor("X"), outcome("Y"), indicator("X"), indicator("Y")};
  const auto j = DiscreteJoint::from_function(vars, [](const std::vector<int>& c) {
    const double pxy[4] = {0.1, 0.2, 0.3, 0.4};
    return pxy[c[0] * 2 + c[1]] * (c[2] ? 0.3 : 0.7) * (c[3] ? 0.2 : 0.8);
  });
  const auto rep = classify(j);
  for (const auto& [name, f] : rep.entries()) EXPECT_TRUE(f->holds()) << name;
}

TEST(Classify, MarUndefinedWithoutMissingOutcome) {
  std::vector<Variable> vars = {predictor("X"), outcome("Y"), indicator("X"), indicator("Y")};
  const auto j = DiscreteJoint::from_function(vars, [](const std::vector<int>& c) {
    return c[3] ? 0.0 : 0.25 * (c[2] ? 0.4 : 0.6);
  });
  const auto rep = classify(j);
  EXPECT_EQ(rep.mar.status, Status::Undefined);
  EXPECT_TRUE(rep.mcar.holds());
}

TEST(Classify, AgreesWithBruteForce) {
  Rng rng = make_rng(99);
  int compared = 0;
  for (int k = 0; k < 300; ++k) {
    const auto j = random_joint(rng);
    const auto rep = classify(j);
    if (rep.nimo.status != Status::Undefined) {
      EXPECT_EQ(rep.nimo.holds(), brute_nimo(j, false));
      ++compared;
    }
    if (rep.nico.status != Status::Undefined) {
      EXPECT_EQ(rep.nico.holds(), brute_nimo(j, true));
    }
    if (rep.mcar.status != Status::Undefined) {
      EXPECT_EQ(rep.mcar.holds(), brute_mcar(j));
    }
  }
  EXPECT_GT(compared, 250);
}

TEST(Lattice, RandomJointsRespectImplications) {
  Rng rng = make_rng(2026);
  std::vector<DiscreteJoint> joints;
  for (int k = 0; k < 1000; ++k) joints.push_back(random_joint(rng));
  const auto rep = verify_lattice(joints);
  EXPECT_EQ(rep.joints, 1000u);
  EXPECT_EQ(rep.violations, 0u);
  // Every flag must be exercised in both directions.
  for (const char* name : {"MCAR", "MAR", "MARX-YM", "MARX-YO", "NIMO", "NICO"}) {
    EXPECT_GT(rep.holds_count.at(name), 0u) << name;
    EXPECT_LT(rep.holds_count.at(name), 1000u) << name;
  }
  // Same implications restated independently of lattice_implications().
  for (const auto& j : joints) {
    const auto r = classify(j);
    auto imp = [](const Flag& a, const Flag& b) { return !(a.holds() && b.fails()); };
    EXPECT_TRUE(imp(r.mcar, r.mar));
    EXPECT_TRUE(imp(r.mcar, r.marx_ym));
    EXPECT_TRUE(imp(r.mar, r.marx_yo));
    EXPECT_TRUE(imp(r.marx_ym, r.marx_yo));
    EXPECT_TRUE(imp(r.marx_ym, r.nimo));
    EXPECT_TRUE(imp(r.nimo, r.nico));
    EXPECT_FALSE(r.nimo.holds() && r.marx_yo.holds() && r.marx_ym.fails());
  }
}

TEST(Lattice, ReorderingVariablesKeepsFlags) {
  const auto a = mar_counterexample_joint();
  std::vector<Variable> vars = {indicator("Y"), outcome("Y"), indicator("X"), predictor("X")};
  const auto b = DiscreteJoint::from_function(vars, [&](const std::vector<int>& c) {
    return brute(a, {{"X", c[3]}, {"Y", c[1]}, {"M_X", c[2]}, {"M_Y", c[0]}});
  });
  const auto ra = classify(a), rb = classify(b);
  for (std::size_t k = 0; k < ra.entries().size(); ++k)
    EXPECT_EQ(ra.entries()[k].second->status, rb.entries()[k].second->status);
}

// Rows of the scenario property table (MCAR, MAR, MARX-YM, MARX-YO, NIMO, NICO).
TEST(ScenarioTable, DiscreteAnalogues) {
  const std::map<Scenario, std::array<bool, 6>> expected{
      {Scenario::S1, {true, true, true, true, true, true}},
      {Scenario::S2, {false, true, true, true, true, true}},
      {Scenario::S3, {false, false, false, false, false, true}},
      {Scenario::S4, {false, false, false, false, false, false}},
      {Scenario::S5, {false, false, false, true, false, false}},
  };
  for (const auto& [s, row] : expected) {
    const auto rep = classify(discrete_scenario_joint(s));
    const auto e = rep.entries();
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_NE(e[k].second->status, Status::Undefined) << to_string(s) << " " << e[k].first;
      EXPECT_EQ(e[k].second->holds(), row[k]) << to_string(s) << " " << e[k].first;
    }
  }
}

TEST(CcsCounterexample, GapsAgainstBruteForce) {
  const auto ce = ccs_counterexample();
  const auto& j = ce.joint;
  const double ccs = cond_y(j, {{"X1", 1}, {"M_X1", 0}});
  const double mu = cond_y(j, {{"X1", 1}});
  const double mc = cond_y(j, {{"X1", 1}, {"M_X1", 0}, {"M_X2", 1}});
  EXPECT_NEAR(ce.demo.p_ccs, ccs, 1e-12);
  EXPECT_NEAR(ce.demo.p_mu, mu, 1e-12);
  EXPECT_NEAR(ce.demo.p_mc, mc, 1e-12);
  EXPECT_GE(std::abs(ccs - mu), 0.01);
  EXPECT_GE(std::abs(ccs - mc), 0.01);
  EXPECT_TRUE(classify(j).mar.fails());
}

TEST(CcsCounterexample, DegenerateCaseCoincides) {
  const auto ce = ccs_counterexample(true);
  EXPECT_NEAR(ce.demo.gap_mu(), 0.0, 1e-12);
  EXPECT_NEAR(ce.demo.gap_mc(), 0.0, 1e-12);
}

TEST(LoadJointCsv, RoundTripAndErrors) {
  std::istringstream in("X,Y,M_X,M_Y,prob\n0,0,0,0,0.25\n0,1,0,0,0.25\n1,0,1,0,0.25\n1,1,0,0,0.25\n");
  const auto j = load_joint_csv(in);
  EXPECT_EQ(j.variables().size(), 4u);
  EXPECT_NEAR(brute(j, {{"M_X", 1}}), 0.25, 1e-15);
  std::istringstream no_prob("X,Y,M_X,M_Y\n0,0,0,0\n");
  EXPECT_THROW(load_joint_csv(no_prob), InputError);
  std::istringstream not_dist("X,Y,M_X,M_Y,prob\n0,0,0,0,0.5\n");
  EXPECT_THROW(load_joint_csv(not_dist), InputError);
  std::istringstream bad_ind("X,Y,M_X,M_Y,prob\n0,0,2,0,1.0\n");
  EXPECT_THROW(load_joint_csv(bad_ind), InputError);
  std::istringstream no_indicator("X,Y,M_Y,prob\n0,0,0,1.0\n");
  EXPECT_THROW(load_joint_csv(no_indicator), InputError);
}
