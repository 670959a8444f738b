#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace missforecast {

struct ConditionalGaussian {
  std::vector<Eigen::Index> free;  // indices of the unconditioned coordinates
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(idx[k]);
  return out;
}

inline Eigen::MatrixXd take(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows,
                            const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(cols.size()));
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = m(rows[a], cols[b]);
  return out;
}

// Law of the coordinates not in `given` when those are fixed at `values`,
// via the Schur complement of the given block.
inline ConditionalGaussian condition_gaussian(const Eigen::VectorXd& mean,
                                              const Eigen::MatrixXd& cov,
                                              const std::vector<Eigen::Index>& given,
                                              const Eigen::VectorXd& values) {
  const Eigen::Index d = mean.size();
  std::vector<char> is_given(static_cast<std::size_t>(d), 0);
  for (auto g : given) is_given[static_cast<std::size_t>(g)] = 1;
  ConditionalGaussian out;
  for (Eigen::Index k = 0; k < d; ++k)
    if (!is_given[static_cast<std::size_t>(k)]) out.free.push_back(k);

  const Eigen::VectorXd mu_f = take(mean, out.free);
  const Eigen::MatrixXd s_ff = take(cov, out.free, out.free);
  if (given.empty()) {
    out.mean = mu_f;
    out.cov = s_ff;
    return out;
  }
  const Eigen::VectorXd mu_g = take(mean, given);
  const Eigen::MatrixXd s_gg = take(cov, given, given);
  const Eigen::MatrixXd s_fg = take(cov, out.free, given);
  Eigen::LLT<Eigen::MatrixXd> llt(s_gg);
  if (llt.info() != Eigen::Success)
    throw NumericError("observed-block covariance is singular");
  out.mean = mu_f + s_fg * llt.solve(values - mu_g);
  out.cov = s_ff - s_fg * llt.solve(s_fg.transpose());
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

inline double log_normal_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                                 const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is not positive definite");
  const Eigen::VectorXd z = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet +
                 z.squaredNorm());
}

}  // namespace missforecast
