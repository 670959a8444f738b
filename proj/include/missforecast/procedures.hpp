#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "gaussian.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace missforecast {

enum class ProcedureName { PS, CCS, CCA, MI, MIMI, MLE_M, MLEMI_M, ITR };

inline std::string to_string(ProcedureName n) {
  switch (n) {
    case ProcedureName::PS: return "PS";
    case ProcedureName::CCS: return "CCS";
    case ProcedureName::CCA: return "CCA";
    case ProcedureName::MI: return "MI";
    case ProcedureName::MIMI: return "MIMI";
    case ProcedureName::MLE_M: return "MLE_M";
    case ProcedureName::MLEMI_M: return "MLEMI_M";
    case ProcedureName::ITR: return "ITR";
  }
  return "?";
}

inline ProcedureName parse_procedure(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  std::replace(s.begin(), s.end(), '-', '_');
  for (auto n : {ProcedureName::PS, ProcedureName::CCS, ProcedureName::CCA, ProcedureName::MI,
                 ProcedureName::MIMI, ProcedureName::MLE_M, ProcedureName::MLEMI_M,
                 ProcedureName::ITR})
    if (to_string(n) == s) return n;
  throw ConfigError("unknown procedure '" + s + "'");
}

enum class ItrFill { Zero, UnconditionalMean, ConditionalMean };
enum class ItrLearner { Linear, LinearWithIndicatorInteractions };
enum class MlemiMode { Stratified, IndicatorCovariate };
enum class Marginalisation { Analytic, MonteCarlo };

inline std::string to_string(ItrFill f) {
  switch (f) {
    case ItrFill::Zero: return "zero";
    case ItrFill::UnconditionalMean: return "unconditional_mean";
    case ItrFill::ConditionalMean: return "conditional_mean";
  }
  return "?";
}
inline std::string to_string(ItrLearner l) {
  return l == ItrLearner::Linear ? "linear" : "linear_with_indicator_interactions";
}
inline std::string to_string(MlemiMode m) {
  return m == MlemiMode::Stratified ? "stratified" : "indicator_covariate";
}
inline std::string to_string(Marginalisation m) {
  return m == Marginalisation::Analytic ? "analytic" : "monte_carlo";
}

inline ItrFill parse_itr_fill(const std::string& s) {
  for (auto f : {ItrFill::Zero, ItrFill::UnconditionalMean, ItrFill::ConditionalMean})
    if (to_string(f) == s) return f;
  throw ConfigError("unknown ITR fill '" + s + "'");
}
inline ItrLearner parse_itr_learner(const std::string& s) {
  for (auto l : {ItrLearner::Linear, ItrLearner::LinearWithIndicatorInteractions})
    if (to_string(l) == s) return l;
  throw ConfigError("unknown ITR learner '" + s + "'");
}
inline MlemiMode parse_mlemi_mode(const std::string& s) {
  for (auto m : {MlemiMode::Stratified, MlemiMode::IndicatorCovariate})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown MLEMI-M mode '" + s + "'");
}
inline Marginalisation parse_marginalisation(const std::string& s) {
  for (auto m : {Marginalisation::Analytic, Marginalisation::MonteCarlo})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown marginalisation '" + s + "'");
}

struct ProcedureConfig {
  ProcedureName name = ProcedureName::PS;
  int m_imputations = 20;
  int mc_draws = 2000;
  bool restrict_to_observed_y = true;
  bool mimi_interactions = true;
  int fcs_iterations = 5;
  int deployment_draws = 200;  // Gibbs sweeps for Bernoulli outcomes
  ItrFill itr_fill = ItrFill::ConditionalMean;
  ItrLearner itr_learner = ItrLearner::LinearWithIndicatorInteractions;
  MlemiMode mlemi_mode = MlemiMode::Stratified;
  Marginalisation marginalisation = Marginalisation::Analytic;
  std::uint64_t seed = 1;

  // Short label used in CSV output, e.g. "MI" or "MI[all_y]".
  std::string label() const {
    std::string s = to_string(name);
    if ((name == ProcedureName::MI || name == ProcedureName::MLE_M ||
         name == ProcedureName::MIMI || name == ProcedureName::MLEMI_M) &&
        !restrict_to_observed_y)
      s += "[all_y]";
    if (name == ProcedureName::MIMI && !mimi_interactions) s += "[no_int]";
    if (name == ProcedureName::ITR &&
        (itr_fill != ItrFill::ConditionalMean ||
         itr_learner != ItrLearner::LinearWithIndicatorInteractions))
      s += "[" + to_string(itr_fill) + "," + to_string(itr_learner) + "]";
    if (name == ProcedureName::MLEMI_M && mlemi_mode != MlemiMode::Stratified)
      s += "[" + to_string(mlemi_mode) + "]";
    return s;
  }

  void validate() const {
    const bool mi_family = name == ProcedureName::MI || name == ProcedureName::MIMI;
    if (mi_family && m_imputations < 2) throw ConfigError("m_imputations must be at least 2");
    if (mc_draws < 100) throw ConfigError("mc_draws must be at least 100");
    if (fcs_iterations < 1) throw ConfigError("fcs_iterations must be at least 1");
    if (deployment_draws < 1) throw ConfigError("deployment_draws must be at least 1");
  }
};

inline ProcedureConfig procedure_config(ProcedureName n, std::uint64_t seed = 1) {
  ProcedureConfig c;
  c.name = n;
  c.seed = seed;
  return c;
}

inline Target declared_target(const ProcedureConfig& c) {
  switch (c.name) {
    case ProcedureName::PS:
    case ProcedureName::CCA:
    case ProcedureName::MIMI:
    case ProcedureName::MLEMI_M: return Target::MC;
    case ProcedureName::MI:
    case ProcedureName::MLE_M: return Target::MU;
    case ProcedureName::CCS: return Target::None;
    case ProcedureName::ITR:
      return c.itr_learner == ItrLearner::LinearWithIndicatorInteractions ? Target::MC
                                                                          : Target::None;
  }
  return Target::None;
}

// A fitted linear or logistic model over a feature vector. Aliased feature
// columns are dropped at fit time; `terms` lists the kept design columns
// (0 is the intercept, k is feature k-1).
struct GlmModel {
  OutcomeKind kind = OutcomeKind::Gaussian;
  std::vector<std::size_t> terms;
  Eigen::VectorXd coef;
  double resid_var = 0.0;
  bool augmented = false;

  double eta(std::span<const double> f) const {
    double e = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k)
      e += coef(static_cast<Eigen::Index>(k)) * (terms[k] == 0 ? 1.0 : f[terms[k] - 1]);
    return e;
  }
  double mean(std::span<const double> f) const {
    const double e = eta(f);
    return kind == OutcomeKind::Gaussian ? e : logistic(e);
  }
  PredictiveDistribution predict(std::span<const double> f) const {
    return kind == OutcomeKind::Gaussian ? PredictiveDistribution::gaussian(eta(f), resid_var)
                                         : PredictiveDistribution::bernoulli(logistic(eta(f)));
  }
};

namespace detail {

inline Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
  return out;
}

// Logistic fit with pseudo-observations at mean +/- sd of each column for
// both outcomes, total weight equal to the number of coefficients.
inline LogisticFit augmented_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  const Eigen::Index n = design.rows(), q = design.cols();
  std::vector<Eigen::VectorXd> extra;
  const Eigen::VectorXd mean = design.colwise().mean();
  for (Eigen::Index k = 1; k < q; ++k) {
    const double sd = std::sqrt((design.col(k).array() - mean(k)).square().mean());
    for (double s : {-1.0, 1.0}) {
      Eigen::VectorXd row = mean;
      row(k) += s * sd;
      extra.push_back(row);
    }
  }
  if (extra.empty()) extra.push_back(mean);
  const auto a = static_cast<Eigen::Index>(extra.size());
  Eigen::MatrixXd x(n + 2 * a, q);
  Eigen::VectorXd yy(n + 2 * a);
  std::vector<double> w(static_cast<std::size_t>(n + 2 * a), 1.0);
  x.topRows(n) = design;
  yy.head(n) = y;
  const double wa = static_cast<double>(q) / static_cast<double>(2 * a);
  for (Eigen::Index k = 0; k < a; ++k) {
    for (int out = 0; out < 2; ++out) {
      const Eigen::Index r = n + 2 * k + out;
      x.row(r) = extra[static_cast<std::size_t>(k)].transpose();
      yy(r) = out;
      w[static_cast<std::size_t>(r)] = wa;
    }
  }
  return irls_logistic(x, yy, {}, w);
}

struct DrawableFit {
  GlmModel model;
  std::optional<LinearFit> linear;
  std::optional<LogisticFit> logit;
};

inline DrawableFit fit_glm_full(const Eigen::MatrixXd& features, const Eigen::VectorXd& y,
                                OutcomeKind kind, bool allow_augment) {
  const Eigen::MatrixXd design = with_intercept(features);
  const auto keep = independent_columns(design);
  const Eigen::MatrixXd x = select_columns(design, keep);
  DrawableFit out;
  out.model.kind = kind;
  for (auto k : keep) out.model.terms.push_back(static_cast<std::size_t>(k));
  if (x.rows() < x.cols() + 2)
    throw TrainingError("too few rows (" + std::to_string(x.rows()) + ") for " +
                        std::to_string(x.cols()) + " coefficients");
  if (kind == OutcomeKind::Gaussian) {
    out.linear = ols(x, y);
    out.model.coef = out.linear->coef;
    out.model.resid_var = out.linear->resid_var;
  } else {
    try {
      out.logit = irls_logistic(x, y);
    } catch (const SeparationError&) {
      if (!allow_augment) throw;
      out.logit = augmented_logistic(x, y);
      out.model.augmented = true;
    }
    out.model.coef = out.logit->coef;
  }
  return out;
}

inline GlmModel fit_glm(const Eigen::MatrixXd& features, const Eigen::VectorXd& y,
                        OutcomeKind kind, bool allow_augment = false) {
  return fit_glm_full(features, y, kind, allow_augment).model;
}

// Model with coefficients (and residual sd) drawn from their posterior.
inline GlmModel draw_model(const DrawableFit& f, Rng& rng) {
  GlmModel m = f.model;
  if (f.linear) {
    const auto d = posterior_draw(*f.linear, rng);
    m.coef = d.coef;
    m.resid_var = d.sigma * d.sigma;
  } else {
    m.coef = logistic_posterior_draw(*f.logit, rng);
  }
  return m;
}

inline double draw_value(const GlmModel& m, std::span<const double> f, Rng& rng) {
  const double e = m.eta(f);
  if (m.kind == OutcomeKind::Gaussian) {
    std::normal_distribution<double> z(0.0, 1.0);
    return e + std::sqrt(std::max(0.0, m.resid_var)) * z(rng);
  }
  std::bernoulli_distribution b(logistic(e));
  return b(rng) ? 1.0 : 0.0;
}

inline std::uint64_t query_seed(std::uint64_t seed, const Query& q) {
  std::uint64_t h = hash_label(q.pattern().to_string());
  for (std::size_t j = 0; j < q.size(); ++j)
    if (!q.missing(j)) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(q.value(j)));
  return derive_seed(seed, {h});
}

inline void check_query(const Query& q, std::size_t p) {
  if (q.size() != p)
    throw ContractViolation("query has " + std::to_string(q.size()) + " predictors, model has " +
                            std::to_string(p));
}

inline bool is_binary_column(const MaskedDataset& ds, std::size_t j,
                             std::span<const std::size_t> rows) {
  bool any = false;
  for (auto i : rows) {
    if (ds.x_missing(i, j)) continue;
    const double v = ds.x(i, j);
    if (v != 0.0 && v != 1.0) return false;
    any = true;
  }
  return any;
}

}  // namespace detail

// ---------------------------------------------------------------- sub-models

// One outcome model per pattern (PS, CCS) or a single complete-case model (CCA).
// Each model regresses on the pattern's observed predictors, in column order.
struct SubmodelSet {
  std::map<Pattern, GlmModel> models;
  std::map<Pattern, std::string> untrainable;

  PredictiveDistribution predict(const Query& q) const {
    const auto it = models.find(q.pattern());
    if (it == models.end()) {
      const auto u = untrainable.find(q.pattern());
      throw UnsupportedPatternError("pattern " + q.pattern().to_string() +
                                    (u == untrainable.end() ? " was not trained"
                                                            : " is untrainable: " + u->second));
    }
    std::vector<double> f;
    for (auto j : q.pattern().observed_indices()) f.push_back(q.value(j));
    return it->second.predict(f);
  }
};

// ---------------------------------------------------------------- imputation

// Layout of the outcome-model feature vector: predictors, then one indicator
// per missable column, then indicator x predictor interactions.
struct FeatureLayout {
  std::size_t p = 0;
  std::vector<std::size_t> indicators;  // missable columns that get an indicator
  bool interactions = false;

  std::vector<double> outcome_features(std::span<const double> x, const Pattern& m) const {
    std::vector<double> f(x.begin(), x.end());
    for (auto j : indicators) f.push_back(m.missing(j) ? 1.0 : 0.0);
    if (interactions)
      for (auto j : indicators)
        for (std::size_t k = 0; k < p; ++k) f.push_back(m.missing(j) ? x[k] : 0.0);
    return f;
  }

  // Features for the deployment imputation model of column `target`.
  std::vector<double> imputation_features(std::span<const double> x, const Pattern& m,
                                          std::size_t target) const {
    std::vector<double> f;
    for (std::size_t k = 0; k < p; ++k)
      if (k != target) f.push_back(x[k]);
    for (auto j : indicators) f.push_back(m.missing(j) ? 1.0 : 0.0);
    if (interactions)
      for (auto j : indicators)
        for (std::size_t k = 0; k < p; ++k)
          if (k != target) f.push_back(m.missing(j) ? x[k] : 0.0);
    return f;
  }
};

struct ImputationMember {
  GlmModel outcome;
  std::map<std::size_t, GlmModel> deploy;  // per missable column
  std::vector<double> column_means;
};

// MI, MIMI and ITR. ITR is a single member whose deployment fill is fixed.
struct ImputationEnsemble {
  FeatureLayout layout;
  std::vector<ImputationMember> members;
  bool stochastic = false;  // Gibbs sweeps instead of the conditional-mean fixed point
  int deployment_draws = 200;
  std::uint64_t seed = 1;

  // ITR only: deterministic fill rule.
  std::optional<ItrFill> itr_fill;
  Eigen::VectorXd fill_mean;  // unconditional means or MVN mean of X
  Eigen::MatrixXd fill_cov;   // MVN covariance of X (conditional-mean fill)

  std::vector<double> deterministic_fill(const Query& q) const {
    const std::size_t p = layout.p;
    std::vector<double> x(p, 0.0);
    std::vector<Eigen::Index> obs;
    Eigen::VectorXd vals(static_cast<Eigen::Index>(p - q.pattern().n_missing()));
    Eigen::Index k = 0;
    for (std::size_t j = 0; j < p; ++j) {
      if (q.missing(j)) continue;
      x[j] = q.value(j);
      obs.push_back(static_cast<Eigen::Index>(j));
      vals(k++) = x[j];
    }
    if (q.pattern().n_missing() == 0) return x;
    if (*itr_fill == ItrFill::UnconditionalMean) {
      for (std::size_t j = 0; j < p; ++j)
        if (q.missing(j)) x[j] = fill_mean(static_cast<Eigen::Index>(j));
    } else if (*itr_fill == ItrFill::ConditionalMean) {
      const auto cg = condition_gaussian(fill_mean, fill_cov, obs, vals);
      for (std::size_t t = 0; t < cg.free.size(); ++t)
        x[static_cast<std::size_t>(cg.free[t])] = cg.mean(static_cast<Eigen::Index>(t));
    }
    return x;
  }

  PredictiveDistribution predict(const Query& q) const {
    detail::check_query(q, layout.p);
    const auto& pat = q.pattern();
    const auto mis = pat.missing_indices();
    if (itr_fill) {
      const auto x = deterministic_fill(q);
      return members.front().outcome.predict(layout.outcome_features(x, pat));
    }
    for (auto j : mis)
      if (members.front().deploy.find(j) == members.front().deploy.end())
        throw UnsupportedPatternError("column " + std::to_string(j) +
                                      " was complete in training; no imputation model");

    const bool gaussian = members.front().outcome.kind == OutcomeKind::Gaussian;
    double sum_mean = 0.0, sum_sq = 0.0, sum_var = 0.0;
    Rng rng = make_rng(detail::query_seed(seed, q));
    for (const auto& mem : members) {
      std::vector<double> x(layout.p);
      for (std::size_t j = 0; j < layout.p; ++j) x[j] = pat.missing(j) ? mem.column_means[j] : q.value(j);
      double mean = 0.0, var = 0.0;
      if (!stochastic || mis.empty()) {
        // Conditional-mean fixed point over the missing block.
        for (int it = 0; it < (mis.size() <= 1 ? 1 : 100); ++it) {
          double change = 0.0;
          for (auto j : mis) {
            const double v = mem.deploy.at(j).mean(layout.imputation_features(x, pat, j));
            change = std::max(change, std::abs(v - x[j]));
            x[j] = v;
          }
          if (change < 1e-12) break;
        }
        const auto pd = mem.outcome.predict(layout.outcome_features(x, pat));
        mean = pd.point();
        var = gaussian ? pd.as_gaussian().variance : 0.0;
      } else {
        const int burn = 20;
        double acc = 0.0;
        for (int s = 0; s < burn + deployment_draws; ++s) {
          for (auto j : mis)
            x[j] = detail::draw_value(mem.deploy.at(j), layout.imputation_features(x, pat, j), rng);
          if (s >= burn) acc += mem.outcome.mean(layout.outcome_features(x, pat));
        }
        mean = acc / deployment_draws;
      }
      sum_mean += mean;
      sum_sq += mean * mean;
      sum_var += var;
    }
    const double m = static_cast<double>(members.size());
    const double pooled = sum_mean / m;
    if (!gaussian) return PredictiveDistribution::bernoulli(std::clamp(pooled, 0.0, 1.0));
    const double between = std::max(0.0, sum_sq / m - pooled * pooled);
    return PredictiveDistribution::gaussian(pooled, sum_var / m + between);
  }
};

// ---------------------------------------------------------------- joint Gaussian

// Joint normal law of (covariates, Y) per stratum. `columns` names which
// dataset predictors are the leading coordinates; indicator coordinates (for
// the indicator-covariate mode) follow them, and Y is last.
struct GaussianStratum {
  std::vector<std::size_t> columns;
  std::vector<std::size_t> indicator_columns;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct GaussianJointStrata {
  std::size_t p = 0;
  bool by_pattern = false;
  std::map<Pattern, GaussianStratum> strata;  // key is the complete pattern when not stratified
  std::map<Pattern, std::string> untrainable;
  Marginalisation marginalisation = Marginalisation::Analytic;
  int mc_draws = 2000;
  std::uint64_t seed = 1;

  PredictiveDistribution predict(const Query& q) const {
    detail::check_query(q, p);
    const Pattern key = by_pattern ? q.pattern() : Pattern::complete(p);
    const auto it = strata.find(key);
    if (it == strata.end()) {
      const auto u = untrainable.find(key);
      throw UnsupportedPatternError("pattern " + key.to_string() +
                                    (u == untrainable.end() ? " has no fitted stratum"
                                                            : " is untrainable: " + u->second));
    }
    const auto& s = it->second;
    const auto d = static_cast<Eigen::Index>(s.mean.size());
    std::vector<Eigen::Index> given;
    std::vector<double> vals;
    for (std::size_t k = 0; k < s.columns.size(); ++k) {
      if (q.missing(s.columns[k])) continue;
      given.push_back(static_cast<Eigen::Index>(k));
      vals.push_back(q.value(s.columns[k]));
    }
    for (std::size_t k = 0; k < s.indicator_columns.size(); ++k) {
      given.push_back(static_cast<Eigen::Index>(s.columns.size() + k));
      vals.push_back(q.missing(s.indicator_columns[k]) ? 1.0 : 0.0);
    }
    for (std::size_t j = 0; j < p; ++j)
      if (!q.missing(j) && std::find(s.columns.begin(), s.columns.end(), j) == s.columns.end())
        throw UnsupportedPatternError("stratum does not model observed column " + std::to_string(j));
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    const auto cg = condition_gaussian(s.mean, s.cov, given, v);
    const auto y_pos = static_cast<Eigen::Index>(cg.free.size()) - 1;
    if (marginalisation == Marginalisation::Analytic || cg.free.size() == 1)
      return PredictiveDistribution::gaussian(cg.mean(y_pos), std::max(0.0, cg.cov(y_pos, y_pos)));

    // Monte Carlo: draw the missing covariates, then average E[Y | all covariates].
    const Eigen::Index nm = y_pos;
    const Eigen::MatrixXd cxx = cg.cov.topLeftCorner(nm, nm);
    Eigen::LLT<Eigen::MatrixXd> llt(cxx);
    if (llt.info() != Eigen::Success) throw NumericError("missing-block covariance is singular");
    const Eigen::MatrixXd l = llt.matrixL();
    const Eigen::VectorXd cxy = cg.cov.col(y_pos).head(nm);
    const Eigen::VectorXd slope = llt.solve(cxy);
    const double resid = cg.cov(y_pos, y_pos) - cxy.dot(slope);
    Rng rng = make_rng(detail::query_seed(seed, q));
    double s1 = 0.0, s2 = 0.0;
    for (int t = 0; t < mc_draws; ++t) {
      const Eigen::VectorXd dx = l * standard_normal(nm, rng);
      const double m = cg.mean(y_pos) + slope.dot(dx);
      s1 += m;
      s2 += m * m;
    }
    const double mean = s1 / mc_draws;
    (void)d;
    return PredictiveDistribution::gaussian(mean,
                                            std::max(0.0, resid + s2 / mc_draws - mean * mean));
  }
};

// ---------------------------------------------------------------- forecaster

struct TrainingDiagnostics {
  std::size_t n_train = 0;
  std::size_t n_used = 0;
  std::vector<std::string> notes;
};

// Trained procedure. Immutable; predict is re-entrant.
class Forecaster {
 public:
  using Model = std::variant<SubmodelSet, ImputationEnsemble, GaussianJointStrata>;

  Forecaster(ProcedureConfig cfg, OutcomeKind kind, std::vector<std::string> columns, Model model,
             TrainingDiagnostics diag = {})
      : cfg_(std::move(cfg)),
        kind_(kind),
        columns_(std::move(columns)),
        model_(std::move(model)),
        diag_(std::move(diag)) {}

  const ProcedureConfig& config() const { return cfg_; }
  std::string procedure() const { return cfg_.label(); }
  Target target() const { return declared_target(cfg_); }
  OutcomeKind outcome_kind() const { return kind_; }
  std::size_t p() const { return columns_.size(); }
  const std::vector<std::string>& column_names() const { return columns_; }
  const Model& model() const { return model_; }
  const TrainingDiagnostics& diagnostics() const { return diag_; }

  PredictiveDistribution predict(const Query& q) const {
    detail::check_query(q, p());
    return std::visit([&](const auto& m) { return m.predict(q); }, model_);
  }

  bool supports(const Pattern& pattern) const {
    if (pattern.size() != p()) return false;
    if (const auto* s = std::get_if<SubmodelSet>(&model_)) return s->models.count(pattern) > 0;
    if (const auto* g = std::get_if<GaussianJointStrata>(&model_))
      return g->strata.count(g->by_pattern ? pattern : Pattern::complete(p())) > 0;
    const auto& e = std::get<ImputationEnsemble>(model_);
    if (e.itr_fill) return true;
    for (auto j : pattern.missing_indices())
      if (!e.members.front().deploy.count(j)) return false;
    return true;
  }

 private:
  ProcedureConfig cfg_;
  OutcomeKind kind_;
  std::vector<std::string> columns_;
  Model model_;
  TrainingDiagnostics diag_;
};

// ---------------------------------------------------------------- training

namespace detail {

inline void check_outcome(const MaskedDataset& ds, OutcomeKind kind) {
  if (kind != OutcomeKind::Bernoulli) return;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (!ds.y_missing(i) && ds.y(i) != 0.0 && ds.y(i) != 1.0)
      throw InputError("Bernoulli outcome must be coded 0/1");
}

// Rows with an observed outcome, optionally restricted to a predicate on the pattern.
template <class Pred>
std::vector<std::size_t> outcome_rows(const MaskedDataset& ds, Pred&& keep) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (!ds.y_missing(i) && keep(ds.pattern(i))) rows.push_back(i);
  return rows;
}

// Fits y on the predictors observed in `pattern`, over `rows`.
inline GlmModel fit_on_observed(const MaskedDataset& ds, const Pattern& pattern,
                                const std::vector<std::size_t>& rows, OutcomeKind kind) {
  const auto obs = pattern.observed_indices();
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (rows.size() < obs.size() + 3)
    throw TrainingError(std::to_string(rows.size()) + " rows for " +
                        std::to_string(obs.size() + 1) + " coefficients");
  Eigen::MatrixXd f(n, static_cast<Eigen::Index>(obs.size()));
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    for (std::size_t k = 0; k < obs.size(); ++k) f(r, static_cast<Eigen::Index>(k)) = ds.x(i, obs[k]);
    y(r) = ds.y(i);
  }
  auto m = fit_glm(f, y, kind, false);
  // Dropped (aliased) columns keep the observed-column feature indexing intact.
  return m;
}

inline std::vector<Pattern> all_patterns(std::size_t p) {
  if (p > 10) throw ConfigError("CCS enumerates 2^p patterns; p > 10 is not supported");
  std::vector<Pattern> out;
  for (std::size_t t = 0; t < (std::size_t{1} << p); ++t) {
    std::vector<std::uint8_t> bits(p);
    for (std::size_t j = 0; j < p; ++j) bits[j] = static_cast<std::uint8_t>((t >> j) & 1);
    out.emplace_back(bits);
  }
  return out;
}

inline std::vector<std::size_t> usable_rows(const MaskedDataset& ds, bool restrict_y) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (restrict_y && ds.y_missing(i)) continue;
    bool any_obs = !ds.y_missing(i);
    for (std::size_t j = 0; j < ds.p() && !any_obs; ++j) any_obs = !ds.x_missing(i, j);
    if (any_obs) rows.push_back(i);
  }
  return rows;
}

}  // namespace detail

inline Forecaster train_ps(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg = procedure_config(ProcedureName::PS)) {
  detail::check_outcome(ds, kind);
  cfg.name = ProcedureName::PS;
  SubmodelSet set;
  std::set<Pattern> seen;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (!ds.y_missing(i)) seen.insert(ds.pattern(i));
  TrainingDiagnostics diag{ds.n(), 0, {}};
  for (const auto& pat : seen) {
    const auto rows = detail::outcome_rows(ds, [&](const Pattern& m) { return m == pat; });
    try {
      set.models.emplace(pat, detail::fit_on_observed(ds, pat, rows, kind));
      diag.n_used += rows.size();
    } catch (const TrainingError& e) {
      set.untrainable.emplace(pat, e.what());
    } catch (const NumericError& e) {
      set.untrainable.emplace(pat, e.what());
    }
  }
  for (const auto& [pat, why] : set.untrainable) diag.notes.push_back("pattern " + pat.to_string() + " untrainable: " + why);
  return Forecaster(cfg, kind, ds.column_names(), std::move(set), std::move(diag));
}

inline Forecaster train_ccs(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg = procedure_config(ProcedureName::CCS)) {
  detail::check_outcome(ds, kind);
  cfg.name = ProcedureName::CCS;
  SubmodelSet set;
  TrainingDiagnostics diag{ds.n(), 0, {}};
  for (const auto& pat : detail::all_patterns(ds.p())) {
    const auto rows =
        detail::outcome_rows(ds, [&](const Pattern& m) { return pat.observed_subset_of(m); });
    if (rows.empty()) {
      set.untrainable.emplace(pat, "no rows observe the pattern's predictors");
      continue;
    }
    try {
      set.models.emplace(pat, detail::fit_on_observed(ds, pat, rows, kind));
    } catch (const TrainingError& e) {
      set.untrainable.emplace(pat, e.what());
    } catch (const NumericError& e) {
      set.untrainable.emplace(pat, e.what());
    }
  }
  diag.n_used = detail::outcome_rows(ds, [](const Pattern&) { return true; }).size();
  return Forecaster(cfg, kind, ds.column_names(), std::move(set), std::move(diag));
}

inline Forecaster train_cca(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg = procedure_config(ProcedureName::CCA)) {
  detail::check_outcome(ds, kind);
  cfg.name = ProcedureName::CCA;
  const Pattern full = Pattern::complete(ds.p());
  const auto rows = detail::outcome_rows(ds, [&](const Pattern& m) { return m == full; });
  SubmodelSet set;
  set.models.emplace(full, detail::fit_on_observed(ds, full, rows, kind));
  return Forecaster(cfg, kind, ds.column_names(), std::move(set),
                    TrainingDiagnostics{ds.n(), rows.size(), {}});
}

namespace detail {

// Chained-equation imputation of every incomplete column (and of Y when rows
// with a missing outcome are kept). Returns the completed (n x (p+1)) matrix
// over `rows`, Y in the last column.
inline Eigen::MatrixXd fcs_complete(const MaskedDataset& ds, const std::vector<std::size_t>& rows,
                                    OutcomeKind kind, int iterations, Rng& rng) {
  const std::size_t p = ds.p();
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd z(n, static_cast<Eigen::Index>(p + 1));
  std::vector<std::vector<Eigen::Index>> miss(p + 1), obs(p + 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    for (std::size_t j = 0; j <= p; ++j) {
      const bool m = j < p ? ds.x_missing(i, j) : ds.y_missing(i);
      (m ? miss[j] : obs[j]).push_back(r);
      z(r, static_cast<Eigen::Index>(j)) = m ? 0.0 : (j < p ? ds.x(i, j) : ds.y(i));
    }
  }
  std::vector<std::size_t> incomplete;
  std::vector<char> binary(p + 1, 0);
  for (std::size_t j = 0; j <= p; ++j) {
    if (miss[j].empty()) continue;
    if (obs[j].size() < 2)
      throw TrainingError("column " + std::to_string(j) + " has too few observed values to impute");
    incomplete.push_back(j);
    binary[j] = j < p ? is_binary_column(ds, j, rows) : kind == OutcomeKind::Bernoulli;
    std::uniform_int_distribution<std::size_t> pick(0, obs[j].size() - 1);
    for (auto r : miss[j]) z(r, static_cast<Eigen::Index>(j)) = z(obs[j][pick(rng)], static_cast<Eigen::Index>(j));
  }
  const int iters = incomplete.size() <= 1 ? 1 : iterations;
  for (int it = 0; it < iters; ++it) {
    for (auto j : incomplete) {
      std::vector<Eigen::Index> others;
      for (std::size_t k = 0; k <= p; ++k)
        if (k != j) others.push_back(static_cast<Eigen::Index>(k));
      const Eigen::MatrixXd all_f = select_columns(z, others);
      Eigen::MatrixXd f(static_cast<Eigen::Index>(obs[j].size()), all_f.cols());
      Eigen::VectorXd y(static_cast<Eigen::Index>(obs[j].size()));
      for (std::size_t r = 0; r < obs[j].size(); ++r) {
        f.row(static_cast<Eigen::Index>(r)) = all_f.row(obs[j][r]);
        y(static_cast<Eigen::Index>(r)) = z(obs[j][r], static_cast<Eigen::Index>(j));
      }
      const auto fit = fit_glm_full(f, y, binary[j] ? OutcomeKind::Bernoulli : OutcomeKind::Gaussian, true);
      const GlmModel drawn = draw_model(fit, rng);
      std::vector<double> row(static_cast<std::size_t>(all_f.cols()));
      for (auto r : miss[j]) {
        for (Eigen::Index k = 0; k < all_f.cols(); ++k) row[static_cast<std::size_t>(k)] = all_f(r, k);
        z(r, static_cast<Eigen::Index>(j)) = draw_value(drawn, row, rng);
      }
    }
  }
  return z;
}

}  // namespace detail

// MI (with_indicators = false) and MIMI (true).
inline Forecaster train_mi_family(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg,
                                  bool with_indicators) {
  detail::check_outcome(ds, kind);
  cfg.name = with_indicators ? ProcedureName::MIMI : ProcedureName::MI;
  cfg.validate();
  const auto rows = detail::usable_rows(ds, cfg.restrict_to_observed_y);
  if (rows.empty()) throw TrainingError("no usable training rows");
  const std::size_t p = ds.p();

  ImputationEnsemble ens;
  ens.layout.p = p;
  std::vector<std::size_t> missable;
  for (std::size_t j = 0; j < p; ++j)
    for (auto i : rows)
      if (ds.x_missing(i, j)) {
        missable.push_back(j);
        break;
      }
  if (with_indicators) {
    ens.layout.indicators = missable;
    ens.layout.interactions = cfg.mimi_interactions;
  }
  ens.stochastic = kind == OutcomeKind::Bernoulli;
  ens.deployment_draws = cfg.deployment_draws;
  ens.seed = derive_seed(cfg.seed, {hash_label("deploy")});

  std::vector<char> binary(p, 0);
  for (auto j : missable) binary[j] = detail::is_binary_column(ds, j, rows);

  TrainingDiagnostics diag{ds.n(), rows.size(), {}};
  ens.members.resize(static_cast<std::size_t>(cfg.m_imputations));
  for (int m = 0; m < cfg.m_imputations; ++m) {
    Rng rng = make_rng(derive_seed(cfg.seed, {hash_label("impute"), static_cast<std::uint64_t>(m)}));
    const Eigen::MatrixXd z = detail::fcs_complete(ds, rows, kind, cfg.fcs_iterations, rng);
    const auto n = z.rows();
    auto& mem = ens.members[static_cast<std::size_t>(m)];
    mem.column_means.resize(p);
    for (std::size_t j = 0; j < p; ++j) mem.column_means[j] = z.col(static_cast<Eigen::Index>(j)).mean();

    std::vector<std::vector<double>> feats(static_cast<std::size_t>(n));
    std::vector<Pattern> pats(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto i = rows[static_cast<std::size_t>(r)];
      pats[static_cast<std::size_t>(r)] = ds.pattern(i);
      std::vector<double> x(p);
      for (std::size_t j = 0; j < p; ++j) x[j] = z(r, static_cast<Eigen::Index>(j));
      feats[static_cast<std::size_t>(r)] = std::move(x);
    }
    auto to_matrix = [&](auto&& make) {
      const auto first = make(feats[0], pats[0]);
      Eigen::MatrixXd f(n, static_cast<Eigen::Index>(first.size()));
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto v = make(feats[static_cast<std::size_t>(r)], pats[static_cast<std::size_t>(r)]);
        for (std::size_t k = 0; k < v.size(); ++k) f(r, static_cast<Eigen::Index>(k)) = v[k];
      }
      return f;
    };
    const Eigen::MatrixXd fo = to_matrix([&](const auto& x, const Pattern& pt) {
      return ens.layout.outcome_features(x, pt);
    });
    const Eigen::VectorXd y = z.col(static_cast<Eigen::Index>(p));
    mem.outcome = detail::fit_glm(fo, y, kind, true);
    if (mem.outcome.augmented && m == 0) diag.notes.push_back("outcome model needed augmentation");

    for (auto j : missable) {
      const Eigen::MatrixXd fi = to_matrix([&](const auto& x, const Pattern& pt) {
        return ens.layout.imputation_features(x, pt, j);
      });
      const Eigen::VectorXd xj = z.col(static_cast<Eigen::Index>(j));
      mem.deploy.emplace(j, detail::fit_glm(fi, xj, binary[j] ? OutcomeKind::Bernoulli : OutcomeKind::Gaussian, true));
    }
  }
  return Forecaster(cfg, kind, ds.column_names(), std::move(ens), std::move(diag));
}

inline Forecaster train_mi(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg = procedure_config(ProcedureName::MI)) {
  return train_mi_family(ds, kind, std::move(cfg), false);
}

inline Forecaster train_mimi(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg = procedure_config(ProcedureName::MIMI)) {
  return train_mi_family(ds, kind, std::move(cfg), true);
}

namespace detail {

inline MaskedMatrix masked_block(const MaskedDataset& ds, const std::vector<std::size_t>& rows,
                                 const std::vector<std::size_t>& cols, bool with_y,
                                 const std::vector<std::size_t>& indicator_cols = {}) {
  const std::size_t d = cols.size() + indicator_cols.size() + (with_y ? 1 : 0);
  Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  std::vector<std::uint8_t> mask(rows.size() * d, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = rows[r];
    std::size_t c = 0;
    auto put = [&](bool missing, double value) {
      mask[r * d + c] = missing ? 1 : 0;
      v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = missing ? 0.0 : value;
      ++c;
    };
    for (auto j : cols) put(ds.x_missing(i, j), ds.x_missing(i, j) ? 0.0 : ds.x(i, j));
    for (auto j : indicator_cols) put(false, ds.x_missing(i, j) ? 1.0 : 0.0);
    if (with_y) put(ds.y_missing(i), ds.y_missing(i) ? 0.0 : ds.y(i));
  }
  return MaskedMatrix(std::move(v), std::move(mask));
}

}  // namespace detail

// Marginalisation over the fitted joint normal of (X, Y): MLE-M without
// indicators, MLEMI-M with them.
inline Forecaster train_mle_marg(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg,
                                 bool with_indicators) {
  if (kind != OutcomeKind::Gaussian)
    throw ConfigError("MLE-M and MLEMI-M model a joint normal law and need a Gaussian outcome");
  cfg.name = with_indicators ? ProcedureName::MLEMI_M : ProcedureName::MLE_M;
  cfg.validate();
  const auto rows = detail::usable_rows(ds, cfg.restrict_to_observed_y);
  if (rows.empty()) throw TrainingError("no usable training rows");
  const std::size_t p = ds.p();
  GaussianJointStrata g;
  g.p = p;
  g.marginalisation = cfg.marginalisation;
  g.mc_draws = cfg.mc_draws;
  g.seed = derive_seed(cfg.seed, {hash_label("marginalise")});
  TrainingDiagnostics diag{ds.n(), rows.size(), {}};

  std::vector<std::size_t> all_cols(p);
  for (std::size_t j = 0; j < p; ++j) all_cols[j] = j;

  if (!with_indicators || cfg.mlemi_mode == MlemiMode::IndicatorCovariate) {
    std::vector<std::size_t> ind;
    if (with_indicators)
      for (std::size_t j = 0; j < p; ++j)
        for (auto i : rows)
          if (ds.x_missing(i, j)) {
            ind.push_back(j);
            break;
          }
    const auto fit = em_mvn(detail::masked_block(ds, rows, all_cols, true, ind));
    if (fit.ridge_repaired) diag.notes.push_back("EM covariance needed ridge repair");
    g.strata.emplace(Pattern::complete(p), GaussianStratum{all_cols, ind, fit.mean, fit.cov});
  } else {
    g.by_pattern = true;
    std::map<Pattern, std::vector<std::size_t>> groups;
    for (auto i : rows) groups[ds.pattern(i)].push_back(i);
    for (const auto& [pat, grows] : groups) {
      const auto obs = pat.observed_indices();
      try {
        std::size_t with_y = 0;
        for (auto i : grows) with_y += ds.y_missing(i) ? 0 : 1;
        if (with_y < obs.size() + 3)
          throw TrainingError(std::to_string(with_y) + " outcome rows for " +
                              std::to_string(obs.size() + 1) + "-dimensional law");
        const auto fit = em_mvn(detail::masked_block(ds, grows, obs, true));
        if (Eigen::LLT<Eigen::MatrixXd>(fit.cov).info() != Eigen::Success)
          throw NumericError("stratum covariance is singular");
        g.strata.emplace(pat, GaussianStratum{obs, {}, fit.mean, fit.cov});
      } catch (const TrainingError& e) {
        g.untrainable.emplace(pat, e.what());
      } catch (const NumericError& e) {
        g.untrainable.emplace(pat, e.what());
      }
    }
  }
  return Forecaster(cfg, kind, ds.column_names(), std::move(g), std::move(diag));
}

inline Forecaster train_itr(const MaskedDataset& ds, OutcomeKind kind, ProcedureConfig cfg = procedure_config(ProcedureName::ITR)) {
  detail::check_outcome(ds, kind);
  cfg.name = ProcedureName::ITR;
  const std::size_t p = ds.p();
  const auto rows = detail::outcome_rows(ds, [](const Pattern&) { return true; });
  if (rows.empty()) throw TrainingError("no rows with an observed outcome");
  ImputationEnsemble ens;
  ens.layout.p = p;
  ens.itr_fill = cfg.itr_fill;
  if (cfg.itr_learner == ItrLearner::LinearWithIndicatorInteractions) {
    for (std::size_t j = 0; j < p; ++j)
      for (auto i : rows)
        if (ds.x_missing(i, j)) {
          ens.layout.indicators.push_back(j);
          break;
        }
    ens.layout.interactions = true;
  }
  std::vector<std::size_t> all_cols(p);
  for (std::size_t j = 0; j < p; ++j) all_cols[j] = j;
  ens.fill_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  if (cfg.itr_fill == ItrFill::UnconditionalMean) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0;
      std::size_t c = 0;
      for (auto i : rows)
        if (!ds.x_missing(i, j)) {
          s += ds.x(i, j);
          ++c;
        }
      if (c == 0) throw TrainingError("column " + std::to_string(j) + " is never observed");
      ens.fill_mean(static_cast<Eigen::Index>(j)) = s / static_cast<double>(c);
    }
  } else if (cfg.itr_fill == ItrFill::ConditionalMean) {
    const auto fit = em_mvn(detail::masked_block(ds, rows, all_cols, false));
    ens.fill_mean = fit.mean;
    ens.fill_cov = fit.cov;
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  std::vector<std::vector<double>> feats;
  for (auto i : rows) feats.push_back(ens.layout.outcome_features(ens.deterministic_fill(ds.query(i)), ds.pattern(i)));
  Eigen::MatrixXd f(n, static_cast<Eigen::Index>(feats.front().size()));
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < feats[static_cast<std::size_t>(r)].size(); ++k)
      f(r, static_cast<Eigen::Index>(k)) = feats[static_cast<std::size_t>(r)][k];
    y(r) = ds.y(rows[static_cast<std::size_t>(r)]);
  }
  ImputationMember mem;
  mem.outcome = detail::fit_glm(f, y, kind, false);
  ens.members.push_back(std::move(mem));
  return Forecaster(cfg, kind, ds.column_names(), std::move(ens),
                    TrainingDiagnostics{ds.n(), rows.size(), {}});
}

inline Forecaster train(const MaskedDataset& ds, OutcomeKind kind, const ProcedureConfig& cfg) {
  cfg.validate();
  switch (cfg.name) {
    case ProcedureName::PS: return train_ps(ds, kind, cfg);
    case ProcedureName::CCS: return train_ccs(ds, kind, cfg);
    case ProcedureName::CCA: return train_cca(ds, kind, cfg);
    case ProcedureName::MI: return train_mi(ds, kind, cfg);
    case ProcedureName::MIMI: return train_mimi(ds, kind, cfg);
    case ProcedureName::MLE_M: return train_mle_marg(ds, kind, cfg, false);
    case ProcedureName::MLEMI_M: return train_mle_marg(ds, kind, cfg, true);
    case ProcedureName::ITR: return train_itr(ds, kind, cfg);
  }
  throw ConfigError("unknown procedure");
}

// ---------------------------------------------------------------- serialization

inline constexpr int kForecasterFormatVersion = 1;

namespace detail {

using nlohmann::json;

inline json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
inline Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}
inline json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}
inline Eigen::MatrixXd json_mat(const json& j) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), j.empty() ? 0 : static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = json_vec(j[i]).transpose();
  return m;
}

inline json glm_json(const GlmModel& g) {
  return {{"kind", to_string(g.kind)}, {"terms", g.terms}, {"coef", vec_json(g.coef)},
          {"resid_var", g.resid_var}, {"augmented", g.augmented}};
}
inline GlmModel json_glm(const json& j) {
  GlmModel g;
  g.kind = j.at("kind") == "gaussian" ? OutcomeKind::Gaussian : OutcomeKind::Bernoulli;
  g.terms = j.at("terms").get<std::vector<std::size_t>>();
  g.coef = json_vec(j.at("coef"));
  g.resid_var = j.at("resid_var");
  g.augmented = j.at("augmented");
  return g;
}

inline json config_json(const ProcedureConfig& c) {
  return {{"name", to_string(c.name)},
          {"m_imputations", c.m_imputations},
          {"mc_draws", c.mc_draws},
          {"restrict_to_observed_y", c.restrict_to_observed_y},
          {"mimi_interactions", c.mimi_interactions},
          {"fcs_iterations", c.fcs_iterations},
          {"deployment_draws", c.deployment_draws},
          {"itr_fill", to_string(c.itr_fill)},
          {"itr_learner", to_string(c.itr_learner)},
          {"mlemi_mode", to_string(c.mlemi_mode)},
          {"marginalisation", to_string(c.marginalisation)},
          {"seed", c.seed}};
}
inline ProcedureConfig json_config(const json& j) {
  ProcedureConfig c;
  c.name = parse_procedure(j.at("name"));
  c.m_imputations = j.at("m_imputations");
  c.mc_draws = j.at("mc_draws");
  c.restrict_to_observed_y = j.at("restrict_to_observed_y");
  c.mimi_interactions = j.at("mimi_interactions");
  c.fcs_iterations = j.at("fcs_iterations");
  c.deployment_draws = j.at("deployment_draws");
  c.itr_fill = parse_itr_fill(j.at("itr_fill"));
  c.itr_learner = parse_itr_learner(j.at("itr_learner"));
  c.mlemi_mode = parse_mlemi_mode(j.at("mlemi_mode"));
  c.marginalisation = parse_marginalisation(j.at("marginalisation"));
  c.seed = j.at("seed");
  return c;
}

template <class V>
json pattern_map_json(const std::map<Pattern, V>& m, auto&& conv) {
  json out = json::object();
  for (const auto& [k, v] : m) out[k.to_string()] = conv(v);
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const Forecaster& f) {
  using detail::json;
  json j;
  j["format_version"] = kForecasterFormatVersion;
  j["procedure"] = to_string(f.config().name);
  j["target"] = to_string(f.target());
  j["outcome_kind"] = to_string(f.outcome_kind());
  j["columns"] = f.column_names();
  j["config"] = detail::config_json(f.config());
  j["diagnostics"] = {{"n_train", f.diagnostics().n_train},
                      {"n_used", f.diagnostics().n_used},
                      {"notes", f.diagnostics().notes}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        json mj;
        if constexpr (std::is_same_v<T, SubmodelSet>) {
          mj["type"] = "submodels";
          mj["models"] = detail::pattern_map_json(m.models, detail::glm_json);
          mj["untrainable"] = detail::pattern_map_json(m.untrainable, [](const std::string& s) { return s; });
        } else if constexpr (std::is_same_v<T, ImputationEnsemble>) {
          mj["type"] = "imputation";
          mj["layout"] = {{"p", m.layout.p}, {"indicators", m.layout.indicators},
                          {"interactions", m.layout.interactions}};
          mj["stochastic"] = m.stochastic;
          mj["deployment_draws"] = m.deployment_draws;
          mj["seed"] = m.seed;
          if (m.itr_fill) {
            mj["itr_fill"] = to_string(*m.itr_fill);
            mj["fill_mean"] = detail::vec_json(m.fill_mean);
            mj["fill_cov"] = detail::mat_json(m.fill_cov);
          }
          json members = json::array();
          for (const auto& mem : m.members) {
            json d = json::object();
            for (const auto& [col, g] : mem.deploy) d[std::to_string(col)] = detail::glm_json(g);
            members.push_back({{"outcome", detail::glm_json(mem.outcome)}, {"deploy", d},
                               {"column_means", mem.column_means}});
          }
          mj["members"] = members;
        } else {
          mj["type"] = "joint_gaussian";
          mj["p"] = m.p;
          mj["by_pattern"] = m.by_pattern;
          mj["marginalisation"] = to_string(m.marginalisation);
          mj["mc_draws"] = m.mc_draws;
          mj["seed"] = m.seed;
          mj["strata"] = detail::pattern_map_json(m.strata, [](const GaussianStratum& s) {
            return json{{"columns", s.columns}, {"indicator_columns", s.indicator_columns},
                        {"mean", detail::vec_json(s.mean)}, {"cov", detail::mat_json(s.cov)}};
          });
          mj["untrainable"] = detail::pattern_map_json(m.untrainable, [](const std::string& s) { return s; });
        }
        j["model"] = mj;
      },
      f.model());
  return j;
}

inline Forecaster forecaster_from_json(const nlohmann::json& j) {
  using detail::json;
  try {
    if (j.at("format_version") != kForecasterFormatVersion)
      throw InputError("unsupported forecaster format version");
    const auto cfg = detail::json_config(j.at("config"));
    const auto kind = j.at("outcome_kind") == "gaussian" ? OutcomeKind::Gaussian : OutcomeKind::Bernoulli;
    const auto cols = j.at("columns").get<std::vector<std::string>>();
    TrainingDiagnostics diag{j.at("diagnostics").at("n_train"), j.at("diagnostics").at("n_used"),
                             j.at("diagnostics").at("notes").get<std::vector<std::string>>()};
    const auto& mj = j.at("model");
    const std::string type = mj.at("type");
    if (type == "submodels") {
      SubmodelSet s;
      for (const auto& [k, v] : mj.at("models").items()) s.models.emplace(Pattern::parse(k), detail::json_glm(v));
      for (const auto& [k, v] : mj.at("untrainable").items()) s.untrainable.emplace(Pattern::parse(k), v.get<std::string>());
      return Forecaster(cfg, kind, cols, std::move(s), std::move(diag));
    }
    if (type == "imputation") {
      ImputationEnsemble e;
      e.layout.p = mj.at("layout").at("p");
      e.layout.indicators = mj.at("layout").at("indicators").get<std::vector<std::size_t>>();
      e.layout.interactions = mj.at("layout").at("interactions");
      e.stochastic = mj.at("stochastic");
      e.deployment_draws = mj.at("deployment_draws");
      e.seed = mj.at("seed");
      if (mj.contains("itr_fill")) {
        e.itr_fill = parse_itr_fill(mj.at("itr_fill"));
        e.fill_mean = detail::json_vec(mj.at("fill_mean"));
        e.fill_cov = detail::json_mat(mj.at("fill_cov"));
      }
      for (const auto& mem : mj.at("members")) {
        ImputationMember m;
        m.outcome = detail::json_glm(mem.at("outcome"));
        for (const auto& [k, v] : mem.at("deploy").items()) m.deploy.emplace(std::stoul(k), detail::json_glm(v));
        m.column_means = mem.at("column_means").get<std::vector<double>>();
        e.members.push_back(std::move(m));
      }
      if (e.members.empty()) throw InputError("imputation model has no members");
      return Forecaster(cfg, kind, cols, std::move(e), std::move(diag));
    }
    if (type == "joint_gaussian") {
      GaussianJointStrata g;
      g.p = mj.at("p");
      g.by_pattern = mj.at("by_pattern");
      g.marginalisation = parse_marginalisation(mj.at("marginalisation"));
      g.mc_draws = mj.at("mc_draws");
      g.seed = mj.at("seed");
      for (const auto& [k, v] : mj.at("strata").items())
        g.strata.emplace(Pattern::parse(k),
                         GaussianStratum{v.at("columns").get<std::vector<std::size_t>>(),
                                         v.at("indicator_columns").get<std::vector<std::size_t>>(),
                                         detail::json_vec(v.at("mean")), detail::json_mat(v.at("cov"))});
      for (const auto& [k, v] : mj.at("untrainable").items()) g.untrainable.emplace(Pattern::parse(k), v.get<std::string>());
      return Forecaster(cfg, kind, cols, std::move(g), std::move(diag));
    }
    throw InputError("unknown forecaster model type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed forecaster document: ") + e.what());
  }
}

}  // namespace missforecast
