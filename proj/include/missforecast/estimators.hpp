#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "gaussian.hpp"
#include "rng.hpp"

namespace missforecast {

inline double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
inline double log1pexp(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

namespace detail {

inline std::string column_label(std::span<const std::string> names, Eigen::Index j) {
  if (static_cast<std::size_t>(j) < names.size()) return names[static_cast<std::size_t>(j)];
  return "column " + std::to_string(j);
}

inline constexpr double kRankTolerance = 1e-9;

inline Eigen::Index numeric_rank(const Eigen::MatrixXd& x) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(kRankTolerance);
  return qr.rank();
}

// Throws naming the first column that is a linear combination of earlier ones.
inline void require_full_rank(const Eigen::MatrixXd& x, std::span<const std::string> names) {
  if (numeric_rank(x) == x.cols()) return;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (numeric_rank(x.leftCols(j + 1)) < j + 1) {
      const auto label = column_label(names, j);
      throw SingularDesignError(label, "singular design: column '" + label +
                                           "' is collinear with earlier columns");
    }
  }
}

}  // namespace detail

// Indices of a maximal set of linearly independent columns, chosen greedily
// left to right. Constant columns after the first are dropped as aliased.
inline std::vector<Eigen::Index> independent_columns(const Eigen::MatrixXd& x) {
  std::vector<Eigen::Index> keep;
  if (detail::numeric_rank(x) == x.cols()) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) keep.push_back(j);
    return keep;
  }
  Eigen::MatrixXd acc(x.rows(), 0);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::MatrixXd trial(x.rows(), acc.cols() + 1);
    trial << acc, x.col(j);
    if (detail::numeric_rank(trial) == trial.cols()) {
      acc = std::move(trial);
      keep.push_back(j);
    }
  }
  return keep;
}

struct LinearFit {
  Eigen::VectorXd coef;
  double resid_var = 0.0;
  std::size_t n_used = 0;
  Eigen::MatrixXd xtx_inv;
};

// Least squares on an explicit design (include the intercept column yourself).
inline LinearFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                     std::span<const std::string> names = {}) {
  const Eigen::Index n = x.rows(), q = x.cols();
  if (y.size() != n) throw InputError("ols: design and outcome lengths differ");
  if (n <= q) throw TrainingError("ols: need more rows than columns");
  detail::require_full_rank(x, names);

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
  LinearFit fit;
  fit.coef = qr.solve(y);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(q, q));
  fit.xtx_inv = r_inv * r_inv.transpose();
  fit.xtx_inv = 0.5 * (fit.xtx_inv + fit.xtx_inv.transpose());
  const double rss = (y - x * fit.coef).squaredNorm();
  fit.resid_var = std::max(0.0, rss / static_cast<double>(n - q));
  fit.n_used = static_cast<std::size_t>(n);
  return fit;
}

struct LogisticOptions {
  double tol = 1e-8;
  int max_iter = 50;
  // Linear predictor magnitude beyond which the MLE is treated as infinite.
  double separation_eta = 30.0;
};

struct LogisticFit {
  Eigen::VectorXd coef;
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  Eigen::MatrixXd cov;  // inverse observed information at coef
  std::vector<double> deviance_trace;
};

// Newton-Raphson on the (optionally weighted) Bernoulli likelihood with
// step-halving whenever the deviance would increase.
inline LogisticFit irls_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                 const LogisticOptions& opt = {},
                                 std::span<const double> weights = {},
                                 std::span<const std::string> names = {}) {
  const Eigen::Index n = x.rows(), q = x.cols();
  if (y.size() != n) throw InputError("irls_logistic: design and outcome lengths differ");
  for (Eigen::Index i = 0; i < n; ++i)
    if (y(i) != 0.0 && y(i) != 1.0) throw InputError("irls_logistic: outcome must be 0/1");
  if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n)
    throw InputError("irls_logistic: weights length differs from rows");
  if (n < q) throw TrainingError("irls_logistic: fewer rows than columns");
  detail::require_full_rank(x, names);

  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  if (!weights.empty()) w = Eigen::Map<const Eigen::VectorXd>(weights.data(), n);

  auto deviance_of = [&](const Eigen::VectorXd& eta) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) dev += w(i) * (log1pexp(eta(i)) - y(i) * eta(i));
    return 2.0 * dev;
  };

  LogisticFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  double dev = deviance_of(eta);
  fit.deviance_trace.push_back(dev);
  Eigen::MatrixXd info(q, q);
  Eigen::VectorXd p(n), wv(n);
  for (int it = 1; it <= opt.max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = logistic(eta(i));
      wv(i) = w(i) * p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd grad = x.transpose() * (w.cwiseProduct(y - p));
    info.noalias() = x.transpose() * (x.array().colwise() * wv.array()).matrix();
    fit.iterations = it - 1;
    if (grad.lpNorm<Eigen::Infinity>() <= opt.tol) {
      fit.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
      throw SeparationError("irls_logistic: information matrix degenerate (quasi-separation)");
    const Eigen::VectorXd step = ldlt.solve(grad);
    const Eigen::VectorXd eta_step = x * step;
    double scale = 1.0;
    Eigen::VectorXd next_eta = eta + eta_step;
    double next_dev = deviance_of(next_eta);
    for (int h = 0; h < 30 && next_dev > dev + 1e-12 * (1.0 + std::abs(dev)); ++h) {
      scale *= 0.5;
      next_eta = eta + scale * eta_step;
      next_dev = deviance_of(next_eta);
    }
    beta += scale * step;
    eta = next_eta;
    dev = next_dev;
    fit.deviance_trace.push_back(dev);
    if (eta.lpNorm<Eigen::Infinity>() > opt.separation_eta)
      throw SeparationError("irls_logistic: coefficients diverge (separation)");
    fit.iterations = it;
  }
  if (!fit.converged) {
    // Final gradient check after the last update.
    eta = x * beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = logistic(eta(i));
      wv(i) = w(i) * p(i) * (1.0 - p(i));
    }
    info.noalias() = x.transpose() * (x.array().colwise() * wv.array()).matrix();
    fit.converged =
        (x.transpose() * (w.cwiseProduct(y - p))).lpNorm<Eigen::Infinity>() <= opt.tol;
  }
  fit.coef = beta;
  fit.deviance = dev;
  fit.cov = info.ldlt().solve(Eigen::MatrixXd::Identity(q, q));
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  return fit;
}

// Dense real matrix with an observation mask; masked reads fault.
class MaskedMatrix {
 public:
  MaskedMatrix(Eigen::MatrixXd values, std::vector<std::uint8_t> mask)
      : values_(std::move(values)), mask_(std::move(mask)) {
    if (mask_.size() != static_cast<std::size_t>(values_.size()))
      throw InputError("mask size differs from matrix size");
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index j = 0; j < values_.cols(); ++j)
        if (missing(static_cast<std::size_t>(i), static_cast<std::size_t>(j)))
          values_(i, j) = std::numeric_limits<double>::quiet_NaN();
  }
  std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values_.cols()); }
  bool missing(std::size_t i, std::size_t j) const { return mask_[i * cols() + j] != 0; }
  double operator()(std::size_t i, std::size_t j) const {
    if (missing(i, j)) throw ContractViolation("read of masked matrix cell");
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

 private:
  Eigen::MatrixXd values_;
  std::vector<std::uint8_t> mask_;
};

struct EmOptions {
  double tol = 1e-8;
  int max_iter = 1000;
};

struct MvnFit {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double loglik = 0.0;
  int iterations = 0;
  std::vector<double> loglik_trace;
  bool ridge_repaired = false;
  std::size_t n_used = 0;
};

namespace detail {

struct PatternGroup {
  std::vector<Eigen::Index> obs, mis;
  std::vector<std::size_t> rows;
};

inline std::vector<PatternGroup> group_by_pattern(const MaskedMatrix& data) {
  std::map<std::vector<char>, PatternGroup> groups;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    std::vector<char> key(data.cols());
    bool any_obs = false;
    for (std::size_t j = 0; j < data.cols(); ++j) {
      key[j] = data.missing(i, j) ? 1 : 0;
      any_obs = any_obs || !key[j];
    }
    if (!any_obs) continue;  // rows without evidence carry no likelihood
    auto& g = groups[key];
    if (g.rows.empty())
      for (std::size_t j = 0; j < data.cols(); ++j)
        (key[j] ? g.mis : g.obs).push_back(static_cast<Eigen::Index>(j));
    g.rows.push_back(i);
  }
  std::vector<PatternGroup> out;
  for (auto& [k, g] : groups) out.push_back(std::move(g));
  return out;
}

}  // namespace detail

// Observed-data log-likelihood evaluated row by row from the marginal Gaussian
// of each row's observed coordinates.
inline double mvn_observed_loglik(const MaskedMatrix& data, const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& cov) {
  double ll = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    std::vector<Eigen::Index> obs;
    for (std::size_t j = 0; j < data.cols(); ++j)
      if (!data.missing(i, j)) obs.push_back(static_cast<Eigen::Index>(j));
    if (obs.empty()) continue;
    Eigen::VectorXd x(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k)
      x(static_cast<Eigen::Index>(k)) = data(i, static_cast<std::size_t>(obs[k]));
    ll += log_normal_density(x, take(mean, obs), take(cov, obs, obs));
  }
  return ll;
}

// EM for the mean and covariance of a multivariate normal with missing cells.
inline MvnFit em_mvn(const MaskedMatrix& data, const EmOptions& opt = {}) {
  const std::size_t d = data.cols();
  const auto groups = detail::group_by_pattern(data);
  std::size_t n = 0;
  for (const auto& g : groups) n += g.rows.size();
  for (std::size_t j = 0; j < d; ++j) {
    std::size_t seen = 0;
    for (std::size_t i = 0; i < data.rows(); ++i) seen += data.missing(i, j) ? 0 : 1;
    if (seen < 2)
      throw TrainingError("em_mvn: column " + std::to_string(j) + " observed fewer than twice");
  }

  const auto dd = static_cast<Eigen::Index>(d);
  MvnFit fit;
  fit.n_used = n;
  fit.mean = Eigen::VectorXd::Zero(dd);
  fit.cov = Eigen::MatrixXd::Zero(dd, dd);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0, s2 = 0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      if (data.missing(i, j)) continue;
      const double v = data(i, j);
      s += v;
      s2 += v * v;
      ++c;
    }
    const double m = s / static_cast<double>(c);
    fit.mean(static_cast<Eigen::Index>(j)) = m;
    fit.cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) =
        std::max(s2 / static_cast<double>(c) - m * m, 1e-8);
  }

  // E-step: expected sufficient statistics and observed log-likelihood at (mean, cov).
  auto e_step = [&](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Eigen::VectorXd& t1,
                    Eigen::MatrixXd& t2) {
    t1 = Eigen::VectorXd::Zero(dd);
    t2 = Eigen::MatrixXd::Zero(dd, dd);
    double ll = 0.0;
    for (const auto& g : groups) {
      const Eigen::VectorXd mu_o = take(mean, g.obs);
      const Eigen::MatrixXd s_oo = take(cov, g.obs, g.obs);
      Eigen::LLT<Eigen::MatrixXd> llt(s_oo);
      if (llt.info() != Eigen::Success) throw NumericError("em_mvn: observed block not PD");
      const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      Eigen::MatrixXd b;  // regression of missing on observed
      Eigen::MatrixXd c;  // conditional covariance of missing block
      if (!g.mis.empty()) {
        const Eigen::MatrixXd s_mo = take(cov, g.mis, g.obs);
        b = llt.solve(s_mo.transpose()).transpose();
        c = take(cov, g.mis, g.mis) - b * s_mo.transpose();
      }
      const double k_o = static_cast<double>(g.obs.size());
      for (auto i : g.rows) {
        Eigen::VectorXd full(dd);
        Eigen::VectorXd xo(static_cast<Eigen::Index>(g.obs.size()));
        for (std::size_t k = 0; k < g.obs.size(); ++k) {
          xo(static_cast<Eigen::Index>(k)) = data(i, static_cast<std::size_t>(g.obs[k]));
          full(g.obs[k]) = xo(static_cast<Eigen::Index>(k));
        }
        const Eigen::VectorXd r = xo - mu_o;
        ll += -0.5 * (k_o * std::log(2.0 * std::numbers::pi) + logdet +
                      r.dot(llt.solve(r)));
        if (!g.mis.empty()) {
          const Eigen::VectorXd xm = take(mean, g.mis) + b * r;
          for (std::size_t k = 0; k < g.mis.size(); ++k)
            full(g.mis[k]) = xm(static_cast<Eigen::Index>(k));
        }
        t1 += full;
        t2 += full * full.transpose();
        if (!g.mis.empty())
          for (std::size_t a = 0; a < g.mis.size(); ++a)
            for (std::size_t bb = 0; bb < g.mis.size(); ++bb)
              t2(g.mis[a], g.mis[bb]) +=
                  c(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(bb));
      }
    }
    return ll;
  };

  Eigen::VectorXd t1;
  Eigen::MatrixXd t2;
  double ll = e_step(fit.mean, fit.cov, t1, t2);
  fit.loglik_trace.push_back(ll);
  const double nn = static_cast<double>(n);
  for (int it = 1; it <= opt.max_iter; ++it) {
    Eigen::VectorXd mean = t1 / nn;
    Eigen::MatrixXd cov = t2 / nn - mean * mean.transpose();
    cov = 0.5 * (cov + cov.transpose());
    if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success) {
      cov += 1e-10 * Eigen::MatrixXd::Identity(dd, dd);
      fit.ridge_repaired = true;
      if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success)
        throw NumericError("em_mvn: covariance lost positive definiteness");
    }
    fit.mean = mean;
    fit.cov = cov;
    fit.iterations = it;
    const double next = e_step(fit.mean, fit.cov, t1, t2);
    fit.loglik_trace.push_back(next);
    const double gain = next - ll;
    ll = next;
    if (gain <= opt.tol) break;
  }
  fit.loglik = ll;
  return fit;
}

struct CoefDraw {
  Eigen::VectorXd coef;
  double sigma = 0.0;
};

inline Eigen::VectorXd standard_normal(Eigen::Index k, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd v(k);
  for (Eigen::Index i = 0; i < k; ++i) v(i) = z(rng);
  return v;
}

// One draw from the noninformative-prior posterior of a linear regression:
// sigma^2 ~ scaled inverse chi-square on n-q d.f., coef ~ N(coef, sigma^2 (X'X)^-1).
inline CoefDraw posterior_draw(const LinearFit& fit, Rng& rng) {
  const auto q = static_cast<std::size_t>(fit.coef.size());
  if (fit.n_used <= q) throw TrainingError("posterior_draw: fit has no residual d.f.");
  CoefDraw out;
  if (fit.resid_var <= 0.0) {
    out.coef = fit.coef;
    return out;
  }
  const double df = static_cast<double>(fit.n_used - q);
  std::chi_squared_distribution<double> chi(df);
  const double sigma2 = fit.resid_var * df / chi(rng);
  out.sigma = std::sqrt(sigma2);
  Eigen::LLT<Eigen::MatrixXd> llt(fit.xtx_inv);
  const Eigen::MatrixXd l = llt.matrixL();
  out.coef = fit.coef + out.sigma * (l * standard_normal(fit.coef.size(), rng));
  return out;
}

// Gaussian approximation to the posterior of logistic coefficients.
inline Eigen::VectorXd logistic_posterior_draw(const LogisticFit& fit, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(fit.cov);
  if (llt.info() != Eigen::Success) return fit.coef;
  const Eigen::MatrixXd l = llt.matrixL();
  return fit.coef + l * standard_normal(fit.coef.size(), rng);
}

}  // namespace missforecast
