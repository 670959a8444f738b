#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "datagen.hpp"
#include "error.hpp"
#include "gaussian.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"

namespace missforecast {

inline constexpr int kDefaultOracleNodes = 64;
inline constexpr double kMinPatternProb = 1e-12;

namespace detail {

inline void check_simulation_query(const Pattern& pattern, std::span<const double> x_obs) {
  if (pattern.size() != 2) throw ContractViolation("oracle queries have two predictors");
  if (x_obs.size() != 2) throw ContractViolation("oracle query values need two slots");
}

inline std::vector<Eigen::Index> observed_block(const Pattern& pattern) {
  std::vector<Eigen::Index> out;
  for (auto j : pattern.observed_indices()) out.push_back(static_cast<Eigen::Index>(j));
  return out;
}

}  // namespace detail

// Pr(Y | X_o = x_o) under the joint Gaussian of (X1, X2, Y). Missing slots of
// x_obs are ignored.
inline PredictiveDistribution conditional_gaussian(const GenerativeSpec& spec, const Pattern& pattern,
                                                   std::span<const double> x_obs) {
  detail::check_simulation_query(pattern, x_obs);
  const auto given = detail::observed_block(pattern);
  Eigen::VectorXd vals(static_cast<Eigen::Index>(given.size()));
  for (std::size_t k = 0; k < given.size(); ++k)
    vals(static_cast<Eigen::Index>(k)) = x_obs[static_cast<std::size_t>(given[k])];
  const auto cg = condition_gaussian(spec.joint_mean(), spec.joint_cov(), given, vals);
  const auto last = static_cast<Eigen::Index>(cg.free.size()) - 1;  // Y is the last free coordinate
  return PredictiveDistribution::gaussian(cg.mean(last), std::max(0.0, cg.cov(last, last)));
}

// Probability of observing pattern `pattern` under spec. Only X1 is missable.
inline double pattern_probability(const GenerativeSpec& spec, const Pattern& pattern,
                                  int nodes = kDefaultOracleNodes) {
  if (pattern.size() != 2) throw ContractViolation("oracle patterns have two predictors");
  if (pattern.missing(1)) return 0.0;
  const auto& a = spec.miss_logit;
  if (!a.enabled) return pattern.missing(0) ? 0.0 : 1.0;
  const Eigen::Vector3d s(a.x1, a.x2, a.y);
  const double mean = a.intercept + s.dot(spec.joint_mean());
  const double sd = std::sqrt(std::max(0.0, s.dot(spec.joint_cov() * s)));
  const auto& rule = standard_normal_rule(nodes);
  double p1 = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k)
    p1 += rule.weights[k] * logistic(mean + sd * rule.nodes[k]);
  return pattern.missing(0) ? p1 : 1.0 - p1;
}

// Moments of Y | X_o = x_o, M_X = pattern. The conditional Gaussian of the
// free block (missing X and Y) is reweighted by Pr(M1 = m1 | x, y) and
// integrated on a tensor Gauss-Hermite grid.
inline PredictiveDistribution mc_predict(const GenerativeSpec& spec, const Pattern& pattern,
                                         std::span<const double> x_obs,
                                         int nodes = kDefaultOracleNodes) {
  detail::check_simulation_query(pattern, x_obs);
  if (pattern_probability(spec, pattern, nodes) < kMinPatternProb)
    throw UnsupportedPatternError("pattern " + pattern.to_string() +
                                  " has zero probability under this law");
  const auto given = detail::observed_block(pattern);
  Eigen::VectorXd vals(static_cast<Eigen::Index>(given.size()));
  for (std::size_t k = 0; k < given.size(); ++k)
    vals(static_cast<Eigen::Index>(k)) = x_obs[static_cast<std::size_t>(given[k])];
  const auto cg = condition_gaussian(spec.joint_mean(), spec.joint_cov(), given, vals);
  const auto d = static_cast<Eigen::Index>(cg.free.size());
  if (d > 2) throw ContractViolation("mc_predict integrates over at most two coordinates");

  Eigen::LLT<Eigen::MatrixXd> llt(cg.cov);
  if (llt.info() != Eigen::Success) throw NumericError("conditional covariance is singular");
  const Eigen::MatrixXd l = llt.matrixL();
  const auto& rule = standard_normal_rule(nodes);
  const bool m1 = pattern.missing(0);
  const std::size_t k_n = rule.nodes.size();
  const std::size_t total = d == 1 ? k_n : k_n * k_n;

  double z0 = 0.0, z1 = 0.0, z2 = 0.0;
  Eigen::Vector3d full;
  for (std::size_t j = 0; j < 2; ++j)
    if (pattern.observed(j)) full(static_cast<Eigen::Index>(j)) = x_obs[j];
  for (std::size_t t = 0; t < total; ++t) {
    Eigen::VectorXd z(d);
    double w = rule.weights[t % k_n];
    z(0) = rule.nodes[t % k_n];
    if (d == 2) {
      z(1) = rule.nodes[t / k_n];
      w *= rule.weights[t / k_n];
    }
    const Eigen::VectorXd v = cg.mean + l * z;
    for (Eigen::Index k = 0; k < d; ++k) full(cg.free[static_cast<std::size_t>(k)]) = v(k);
    const double pm = spec.miss_logit.prob(full(0), full(1), full(2));
    const double lik = m1 ? pm : 1.0 - pm;
    z0 += w * lik;
    z1 += w * lik * full(2);
    z2 += w * lik * full(2) * full(2);
  }
  if (!(z0 > 1e-300))
    throw NumericError("oracle normalizer underflowed; increase the quadrature node count");
  const double mean = z1 / z0;
  return PredictiveDistribution::gaussian(mean, std::max(0.0, z2 / z0 - mean * mean));
}

struct OracleForecaster {
  GenerativeSpec spec;
  Target target = Target::MU;
  int nodes = kDefaultOracleNodes;

  PredictiveDistribution predict(const Query& q) const {
    std::vector<double> v(q.size(), kMissingSentinel);
    for (std::size_t j = 0; j < q.size(); ++j)
      if (!q.missing(j)) v[j] = q.value(j);
    return target == Target::MC ? mc_predict(spec, q.pattern(), v, nodes)
                                : conditional_gaussian(spec, q.pattern(), v);
  }
};

inline std::vector<double> oracle_predictions(const GenerativeSpec& spec, Target target,
                                              const MaskedDataset& test) {
  const OracleForecaster f{spec, target, kDefaultOracleNodes};
  std::vector<double> out(test.n());
  parallel_for(test.n(), [&](std::size_t i) { out[i] = f.predict(test.query(i)).point(); });
  return out;
}

inline double oracle_risk(const GenerativeSpec& spec, Target target, const MaskedDataset& test) {
  const auto pred = oracle_predictions(spec, target, test);
  double s = 0.0;
  for (std::size_t i = 0; i < test.n(); ++i) {
    const double r = test.y(i) - pred[i];
    s += r * r;
  }
  return s / static_cast<double>(test.n());
}

}  // namespace missforecast
