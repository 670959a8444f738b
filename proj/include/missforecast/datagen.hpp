#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "mechanisms.hpp"
#include "rng.hpp"

namespace missforecast {

enum class Scenario { S1 = 1, S2, S3, S4, S5 };

inline std::string to_string(Scenario s) { return "S" + std::to_string(static_cast<int>(s)); }

inline Scenario parse_scenario(const std::string& s) {
  if (s.size() == 2 && (s[0] == 'S' || s[0] == 's') && s[1] >= '1' && s[1] <= '5')
    return static_cast<Scenario>(s[1] - '0');
  throw ConfigError("unknown scenario '" + s + "' (expected S1..S5)");
}

inline const std::array<Scenario, 5>& all_scenarios() {
  static const std::array<Scenario, 5> v{Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4,
                                         Scenario::S5};
  return v;
}

// Logit of Pr(M1 = 1 | X1, X2, Y). Disabled means X1 is never missing.
struct MissingnessLogit {
  double intercept = 0.0;
  double x1 = 0.0, x2 = 0.0, y = 0.0;
  bool enabled = true;

  double slope_part(double v1, double v2, double vy) const { return x1 * v1 + x2 * v2 + y * vy; }
  double prob(double v1, double v2, double vy) const {
    return enabled ? logistic(intercept + slope_part(v1, v2, vy)) : 0.0;
  }
};

struct GenerativeSpec {
  Eigen::Vector2d mu_x = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_x = (Eigen::Matrix2d() << 1.0, 0.5, 0.5, 1.0).finished();
  Eigen::Vector3d beta = Eigen::Vector3d(0.0, 1.0, 1.0);
  double sigma2_y = 1.0;
  Scenario scenario = Scenario::S1;
  MissingnessLogit miss_logit;
  double y_miss_prob = 0.0;

  void validate() const {
    if (!(sigma2_y > 0.0)) throw InputError("sigma2_y must be positive");
    if (std::abs(sigma_x(0, 1) - sigma_x(1, 0)) > 1e-12)
      throw InputError("sigma_x must be symmetric");
    Eigen::LLT<Eigen::Matrix2d> llt(sigma_x);
    if (llt.info() != Eigen::Success || sigma_x.determinant() <= 0.0)
      throw InputError("sigma_x must be positive definite");
    if (!(y_miss_prob >= 0.0 && y_miss_prob < 1.0))
      throw InputError("y_miss_prob must lie in [0, 1)");
    const auto& a = miss_logit;
    bool ok = true;
    switch (scenario) {
      case Scenario::S1: ok = a.x1 == 0 && a.x2 == 0 && a.y == 0; break;
      case Scenario::S2: ok = a.x1 == 0 && a.y == 0; break;
      case Scenario::S3: ok = a.x2 == 0 && a.y == 0; break;
      case Scenario::S4: ok = a.x2 == 0; break;
      case Scenario::S5: ok = a.x1 == 0 && a.x2 == 0; break;
    }
    if (!ok)
      throw InputError("missingness slopes do not match the " + to_string(scenario) + " graph");
  }

  double var_y() const {
    const Eigen::Vector2d b = beta.tail<2>();
    return b.dot(sigma_x * b) + sigma2_y;
  }

  // Mean and covariance of (X1, X2, Y).
  Eigen::Vector3d joint_mean() const {
    return {mu_x(0), mu_x(1), beta(0) + beta.tail<2>().dot(mu_x)};
  }
  Eigen::Matrix3d joint_cov() const {
    Eigen::Matrix3d c;
    const Eigen::Vector2d b = beta.tail<2>();
    const Eigen::Vector2d cxy = sigma_x * b;
    c.topLeftCorner<2, 2>() = sigma_x;
    c.block<2, 1>(0, 2) = cxy;
    c.block<1, 2>(2, 0) = cxy.transpose();
    c(2, 2) = var_y();
    return c;
  }
};

inline constexpr double kDefaultMissSlope = 1.5;

// Default law shared by every scenario; only the active parents of M1 differ.
inline GenerativeSpec default_spec(Scenario s) {
  GenerativeSpec g;
  g.scenario = s;
  switch (s) {
    case Scenario::S1: break;
    case Scenario::S2: g.miss_logit.x2 = kDefaultMissSlope; break;
    case Scenario::S3: g.miss_logit.x1 = kDefaultMissSlope; break;
    case Scenario::S4:
      g.miss_logit.x1 = kDefaultMissSlope;
      g.miss_logit.y = kDefaultMissSlope;
      break;
    case Scenario::S5: g.miss_logit.y = kDefaultMissSlope; break;
  }
  return g;
}

inline const std::vector<std::string>& simulation_columns() {
  static const std::vector<std::string> names{"X1", "X2"};
  return names;
}

// n x 3 matrix of complete (X1, X2, Y) rows.
inline Eigen::MatrixXd draw_complete(const GenerativeSpec& spec, std::size_t n,
                                     std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw InputError("draw_complete: n must be at least 1");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const Eigen::Matrix2d l = spec.sigma_x.llt().matrixL();
  const double sy = std::sqrt(spec.sigma2_y);
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double z1 = z(rng), z2 = z(rng), e = z(rng);
    const Eigen::Vector2d x = spec.mu_x + l * Eigen::Vector2d(z1, z2);
    rows(i, 0) = x(0);
    rows(i, 1) = x(1);
    rows(i, 2) = spec.beta(0) + spec.beta(1) * x(0) + spec.beta(2) * x(1) + sy * e;
  }
  return rows;
}

// M1 from the logistic model, X2 always observed, M_Y independent Bernoulli.
inline MaskedDataset apply_missingness(const Eigen::MatrixXd& rows, const GenerativeSpec& spec,
                                       std::uint64_t seed, bool mask_outcome = true) {
  if (rows.cols() != 3) throw InputError("apply_missingness expects (X1, X2, Y) rows");
  const auto n = static_cast<std::size_t>(rows.rows());
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x = rows.leftCols(2);
  Eigen::VectorXd y = rows.col(2);
  std::vector<std::uint8_t> mx(n * 2, 0), my(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double pm = spec.miss_logit.prob(rows(r, 0), rows(r, 1), rows(r, 2));
    const double u1 = u(rng), u2 = u(rng);  // both always drawn to keep streams aligned
    mx[i * 2] = u1 < pm ? 1 : 0;
    my[i] = mask_outcome && u2 < spec.y_miss_prob ? 1 : 0;
  }
  return MaskedDataset(std::move(x), std::move(mx), std::move(y), std::move(my),
                       simulation_columns(), "Y");
}

inline constexpr std::uint64_t kCalibrationSeed = 0x6a09e667f3bcc908ULL;
inline constexpr std::size_t kCalibrationDraws = 1'000'000;
inline constexpr double kMaxTargetProp = 0.7;

// Solves E[logistic(a0 + slopes . (X1, X2, Y))] = target for a0 by bisection,
// with the expectation taken over one fixed Monte Carlo sample.
class Calibrator {
 public:
  explicit Calibrator(GenerativeSpec spec, std::size_t draws = kCalibrationDraws,
                      std::uint64_t seed = kCalibrationSeed)
      : spec_(std::move(spec)) {
    spec_.validate();
    const auto& a = spec_.miss_logit;
    constant_ = a.x1 == 0.0 && a.x2 == 0.0 && a.y == 0.0;
    if (constant_) return;
    const Eigen::MatrixXd rows = draw_complete(spec_, draws, seed);
    eta_.resize(draws);
    for (std::size_t i = 0; i < draws; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      eta_[i] = a.slope_part(rows(r, 0), rows(r, 1), rows(r, 2));
    }
  }

  double mean_prob(double a0) const {
    if (constant_) return logistic(a0);
    double s = 0.0;
    for (double e : eta_) s += logistic(a0 + e);
    return s / static_cast<double>(eta_.size());
  }

  // nullopt means the mechanism is switched off (target 0).
  std::optional<double> intercept(double target) const {
    if (!(target >= 0.0 && target <= kMaxTargetProp))
      throw InputError("target proportion must lie in [0, 0.7]");
    if (target == 0.0) return std::nullopt;
    if (constant_) return std::log(target / (1.0 - target));
    double lo = -30.0, hi = 30.0;
    if (mean_prob(lo) > target || mean_prob(hi) < target)
      throw NumericError("calibration target outside the reachable range");
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (mean_prob(mid) < target ? lo : hi) = mid;
      if (hi - lo < 1e-10) return 0.5 * (lo + hi);
    }
    throw NumericError("calibration bisection did not converge in 200 iterations");
  }

  // Copy of the spec with the intercept set for `target`.
  GenerativeSpec calibrated(double target) const {
    GenerativeSpec out = spec_;
    const auto a0 = intercept(target);
    out.miss_logit.enabled = a0.has_value();
    out.miss_logit.intercept = a0.value_or(0.0);
    return out;
  }

  const GenerativeSpec& spec() const { return spec_; }

 private:
  GenerativeSpec spec_;
  bool constant_ = false;
  std::vector<double> eta_;
};

inline double calibrate_intercept(const GenerativeSpec& spec, double target_prop) {
  const auto a0 = Calibrator(spec).intercept(target_prop);
  if (!a0) return -std::numeric_limits<double>::infinity();
  return *a0;
}

// Shares calibrations across cells. One base law (mu_x, sigma_x, beta) per cache.
class CalibrationCache {
 public:
  GenerativeSpec calibrated(const GenerativeSpec& spec, double target) {
    const Key key{static_cast<int>(spec.scenario), spec.miss_logit.x1, spec.miss_logit.x2,
                  spec.miss_logit.y, target};
    std::unique_lock lock(mutex_);
    auto it = intercepts_.find(key);
    if (it == intercepts_.end()) {
      auto cal = calibrators_.find(spec.scenario);
      if (cal == calibrators_.end()) cal = calibrators_.emplace(spec.scenario, Calibrator(spec)).first;
      it = intercepts_.emplace(key, cal->second.intercept(target)).first;
    }
    GenerativeSpec out = spec;
    out.miss_logit.enabled = it->second.has_value();
    out.miss_logit.intercept = it->second.value_or(0.0);
    return out;
  }

 private:
  using Key = std::tuple<int, double, double, double, double>;
  std::mutex mutex_;
  std::map<Scenario, Calibrator> calibrators_;
  std::map<Key, std::optional<double>> intercepts_;
};

struct DatasetPair {
  MaskedDataset train;
  MaskedDataset test;  // outcome never masked: it is the scoring truth
};

// `spec` must already carry its calibrated intercept.
inline DatasetPair make_pair(const GenerativeSpec& spec, std::size_t n_train, std::size_t n_test,
                             std::uint64_t seed) {
  const auto train_rows = draw_complete(spec, n_train, derive_seed(seed, {1, 1}));
  const auto test_rows = draw_complete(spec, n_test, derive_seed(seed, {2, 1}));
  return {apply_missingness(train_rows, spec, derive_seed(seed, {1, 2}), true),
          apply_missingness(test_rows, spec, derive_seed(seed, {2, 2}), false)};
}

// Exact binary analogue of a scenario graph: X1 -> X2, (X1, X2) -> Y, and M1
// with the scenario's parents. M_X2 is identically zero.
inline mechanisms::DiscreteJoint discrete_scenario_joint(Scenario s, double y_miss_prob = 0.2) {
  using namespace mechanisms;
  std::vector<Variable> vars = {predictor("X1"), predictor("X2"), outcome("Y"),
                                indicator("X1"), indicator("X2"), indicator("Y")};
  const double px2[2] = {0.3, 0.7};
  const double py[2][2] = {{0.2, 0.5}, {0.6, 0.85}};
  const auto spec = default_spec(s);
  const auto& a = spec.miss_logit;
  return DiscreteJoint::from_function(vars, [&](const std::vector<int>& c) {
    const int x1 = c[0], x2 = c[1], y = c[2];
    double m = 0.5 * (x2 ? px2[x1] : 1.0 - px2[x1]);
    m *= y ? py[x1][x2] : 1.0 - py[x1][x2];
    const double p1 = logistic(-1.0 + a.x1 * x1 + a.x2 * x2 + a.y * y);
    m *= c[3] ? p1 : 1.0 - p1;
    m *= c[4] ? 0.0 : 1.0;
    m *= c[5] ? y_miss_prob : 1.0 - y_miss_prob;
    return m;
  });
}

// Synthetic stand-in for the trauma cohort: 678 patients, 147 severe, age
// always observed and three binary signs missing in eight patterns.
struct TraumaPatternCount {
  const char* pattern;  // over (age, ams, hypox, coag)
  std::size_t count;
};

inline const std::vector<TraumaPatternCount>& trauma_pattern_counts() {
  static const std::vector<TraumaPatternCount> v{
      {"0000", 424}, {"0010", 93}, {"0001", 78}, {"0100", 45},
      {"0011", 15},  {"0110", 11}, {"0101", 10}, {"0111", 2}};
  return v;
}

inline constexpr std::size_t kTraumaRows = 678;
inline constexpr std::size_t kTraumaSevere = 147;

inline MaskedDataset make_trauma_analogue(std::uint64_t seed = 678147) {
  Rng rng = make_rng(seed);
  const std::size_t n = kTraumaRows;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < kTraumaSevere; ++k) y(static_cast<Eigen::Index>(order[k])) = 1.0;

  // Class-conditional laws echo the cohort's published marginals.
  const double age_mu[2] = {38.5, 44.0}, age_sd[2] = {17.0, 18.0};
  const double p_ams[2] = {0.075, 0.177}, p_hypox[2] = {0.077, 0.061},
               p_coag[2] = {0.068, 0.129};
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int c = y(r) > 0.5 ? 1 : 0;
    x(r, 0) = std::clamp(std::round(age_mu[c] + age_sd[c] * z(rng)), 18.0, 95.0);
    x(r, 1) = u(rng) < p_ams[c] ? 1.0 : 0.0;
    x(r, 2) = u(rng) < p_hypox[c] ? 1.0 : 0.0;
    x(r, 3) = u(rng) < p_coag[c] ? 1.0 : 0.0;
  }

  // Incomplete rows drawn by weighted keys so severe patients are more often incomplete.
  std::vector<std::pair<double, std::size_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = y(static_cast<Eigen::Index>(i)) > 0.5 ? 1.8 : 1.0;
    keys[i] = {std::pow(u(rng), 1.0 / w), i};
  }
  std::sort(keys.begin(), keys.end(), std::greater<>());
  std::vector<std::string> patterns;
  for (const auto& pc : trauma_pattern_counts())
    if (std::string(pc.pattern) != "0000") patterns.insert(patterns.end(), pc.count, pc.pattern);
  std::shuffle(patterns.begin(), patterns.end(), rng);

  std::vector<std::uint8_t> mask(n * 4, 0);
  for (std::size_t k = 0; k < patterns.size(); ++k) {
    const std::size_t i = keys[k].second;
    for (std::size_t j = 0; j < 4; ++j) mask[i * 4 + j] = patterns[k][j] == '1' ? 1 : 0;
  }
  return MaskedDataset(std::move(x), std::move(mask), std::move(y),
                       std::vector<std::uint8_t>(n, 0), {"age", "ams", "hypox", "coag"},
                       "severe");
}

}  // namespace missforecast
