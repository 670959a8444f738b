#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace missforecast {

// Gauss-Hermite rule for the weight exp(-t^2), from the eigenproblem of the
// Jacobi matrix (Golub-Welsch).
struct HermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline HermiteRule gauss_hermite(int n) {
  if (n < 1) throw InputError("gauss_hermite: need at least one node");
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double off = std::sqrt(static_cast<double>(k) / 2.0);
    j(k - 1, k) = off;
    j(k, k - 1) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
  HermiteRule rule;
  for (int k = 0; k < n; ++k) {
    rule.nodes.push_back(es.eigenvalues()(k));
    const double v0 = es.eigenvectors()(0, k);
    rule.weights.push_back(std::sqrt(std::numbers::pi) * v0 * v0);
  }
  return rule;
}

// Same rule rescaled to integrate against the standard normal density:
// E[f(Z)] ~ sum w_k f(z_k). Rules are built once per node count.
inline const HermiteRule& standard_normal_rule(int n) {
  static std::mutex mutex;
  static std::map<int, HermiteRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) {
    HermiteRule r = gauss_hermite(n);
    for (std::size_t k = 0; k < r.nodes.size(); ++k) {
      r.nodes[k] *= std::sqrt(2.0);
      r.weights[k] /= std::sqrt(std::numbers::pi);
    }
    it = cache.emplace(n, std::move(r)).first;
  }
  return it->second;
}

}  // namespace missforecast
