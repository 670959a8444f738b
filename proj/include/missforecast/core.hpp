#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace missforecast {

inline constexpr double kMissingSentinel = std::numeric_limits<double>::quiet_NaN();

// Observation pattern over p predictors: bit j is 1 when predictor j is missing.
// Serialized little-endian over column order, so "10" means the first column is
// missing and the second observed.
class Pattern {
 public:
  Pattern() = default;
  explicit Pattern(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto& b : bits_) b = b ? 1 : 0;
  }
  static Pattern complete(std::size_t p) { return Pattern(std::vector<std::uint8_t>(p, 0)); }

  static Pattern parse(const std::string& s) {
    std::vector<std::uint8_t> bits;
    for (char c : s) {
      if (c == '0' || c == '1')
        bits.push_back(static_cast<std::uint8_t>(c - '0'));
      else
        throw InputError("pattern string must contain only 0/1: '" + s + "'");
    }
    if (bits.empty()) throw InputError("empty pattern string");
    return Pattern(std::move(bits));
  }

  std::size_t size() const { return bits_.size(); }
  bool missing(std::size_t j) const { return bits_.at(j) != 0; }
  bool observed(std::size_t j) const { return bits_.at(j) == 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  bool is_complete() const {
    return std::all_of(bits_.begin(), bits_.end(), [](auto b) { return b == 0; });
  }
  std::size_t n_missing() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  std::vector<std::size_t> observed_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < bits_.size(); ++j)
      if (!bits_[j]) out.push_back(j);
    return out;
  }
  std::vector<std::size_t> missing_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < bits_.size(); ++j)
      if (bits_[j]) out.push_back(j);
    return out;
  }

  // True when every predictor observed here is also observed in `other`.
  bool observed_subset_of(const Pattern& other) const {
    if (other.size() != size()) return false;
    for (std::size_t j = 0; j < bits_.size(); ++j)
      if (!bits_[j] && other.bits_[j]) return false;
    return true;
  }

  std::string to_string() const {
    std::string s;
    s.reserve(bits_.size());
    for (auto b : bits_) s.push_back(b ? '1' : '0');
    return s;
  }

  auto operator<=>(const Pattern&) const = default;

 private:
  std::vector<std::uint8_t> bits_;
};

enum class Target { MU, MC, None };

inline std::string to_string(Target t) {
  switch (t) {
    case Target::MU: return "MU";
    case Target::MC: return "MC";
    case Target::None: return "none";
  }
  return "none";
}

enum class OutcomeKind { Gaussian, Bernoulli };

inline std::string to_string(OutcomeKind k) {
  return k == OutcomeKind::Gaussian ? "gaussian" : "bernoulli";
}

struct GaussianPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

struct BernoulliPrediction {
  double prob = 0.5;
};

// Closed sum of the two predictive families. Point predictions are functionals
// of it: the mean for the Gaussian, the probability for the Bernoulli.
class PredictiveDistribution {
 public:
  static PredictiveDistribution gaussian(double mean, double variance) {
    if (!(variance >= 0.0) || !std::isfinite(mean))
      throw NumericError("gaussian prediction needs finite mean and variance >= 0");
    return PredictiveDistribution(GaussianPrediction{mean, variance});
  }
  static PredictiveDistribution bernoulli(double prob) {
    if (!(prob >= 0.0 && prob <= 1.0))
      throw NumericError("bernoulli prediction needs prob in [0,1]");
    return PredictiveDistribution(BernoulliPrediction{prob});
  }

  bool is_gaussian() const { return std::holds_alternative<GaussianPrediction>(value_); }
  bool is_bernoulli() const { return std::holds_alternative<BernoulliPrediction>(value_); }
  const GaussianPrediction& as_gaussian() const { return std::get<GaussianPrediction>(value_); }
  const BernoulliPrediction& as_bernoulli() const { return std::get<BernoulliPrediction>(value_); }

  double point() const {
    return is_gaussian() ? as_gaussian().mean : as_bernoulli().prob;
  }

 private:
  explicit PredictiveDistribution(std::variant<GaussianPrediction, BernoulliPrediction> v)
      : value_(v) {}
  std::variant<GaussianPrediction, BernoulliPrediction> value_;
};

// A deployment query: the pattern plus a p-vector whose masked slots hold the
// sentinel and must never be read.
class Query {
 public:
  Query(Pattern pattern, std::vector<double> values)
      : pattern_(std::move(pattern)), values_(std::move(values)) {
    if (values_.size() != pattern_.size())
      throw ContractViolation("query values length does not match pattern");
    for (std::size_t j = 0; j < values_.size(); ++j)
      if (pattern_.missing(j)) values_[j] = kMissingSentinel;
  }

  const Pattern& pattern() const { return pattern_; }
  std::size_t size() const { return values_.size(); }
  bool missing(std::size_t j) const { return pattern_.missing(j); }
  double value(std::size_t j) const {
    if (pattern_.missing(j))
      throw ContractViolation("read of masked query cell " + std::to_string(j));
    return values_[j];
  }

 private:
  Pattern pattern_;
  std::vector<double> values_;
};

struct Partition {
  std::vector<std::size_t> observed;
  std::vector<double> observed_values;
  std::vector<std::size_t> missing;
};

// Splits a row into observed and missing coordinates. `row_mask` must agree
// with `pattern`; masked values are never read.
inline Partition partition(const Pattern& pattern, std::span<const double> row,
                           std::span<const std::uint8_t> row_mask) {
  if (row.size() != pattern.size() || row_mask.size() != pattern.size())
    throw ContractViolation("row length does not match pattern length");
  Partition out;
  for (std::size_t j = 0; j < pattern.size(); ++j) {
    if ((row_mask[j] != 0) != pattern.missing(j))
      throw ContractViolation("row mask disagrees with pattern at column " + std::to_string(j));
    if (pattern.missing(j)) {
      out.missing.push_back(j);
    } else {
      out.observed.push_back(j);
      out.observed_values.push_back(row[j]);
    }
  }
  return out;
}

// n x p predictors with an observation mask and an outcome with its own mask.
// The mask is authoritative: masked cells hold a NaN sentinel and every
// accessor faults on them.
class MaskedDataset {
 public:
  MaskedDataset() = default;

  MaskedDataset(Eigen::MatrixXd x, std::vector<std::uint8_t> mask_x, Eigen::VectorXd y,
                std::vector<std::uint8_t> mask_y, std::vector<std::string> column_names,
                std::string outcome_name = "Y")
      : x_(std::move(x)),
        mask_x_(std::move(mask_x)),
        y_(std::move(y)),
        mask_y_(std::move(mask_y)),
        names_(std::move(column_names)),
        outcome_name_(std::move(outcome_name)) {
    const auto n = static_cast<std::size_t>(x_.rows());
    const auto p = static_cast<std::size_t>(x_.cols());
    if (n < 1 || p < 1) throw InputError("dataset needs n >= 1 and p >= 1");
    if (mask_x_.size() != n * p) throw InputError("predictor mask has wrong size");
    if (static_cast<std::size_t>(y_.size()) != n || mask_y_.size() != n)
      throw InputError("outcome or outcome mask has wrong length");
    if (names_.size() != p) throw InputError("column_names must have p entries");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        auto& m = mask_x_[i * p + j];
        m = m ? 1 : 0;
        if (m) x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kMissingSentinel;
      }
      auto& my = mask_y_[i];
      my = my ? 1 : 0;
      if (my) y_(static_cast<Eigen::Index>(i)) = kMissingSentinel;
    }
  }

  // Fully observed convenience constructor.
  static MaskedDataset complete(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                std::vector<std::string> names = {}) {
    const auto p = static_cast<std::size_t>(x.cols());
    if (names.empty())
      for (std::size_t j = 0; j < p; ++j) names.push_back("X" + std::to_string(j + 1));
    return MaskedDataset(x, std::vector<std::uint8_t>(static_cast<std::size_t>(x.size()), 0), y,
                         std::vector<std::uint8_t>(static_cast<std::size_t>(y.size()), 0),
                         std::move(names));
  }

  std::size_t n() const { return static_cast<std::size_t>(x_.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(x_.cols()); }
  const std::vector<std::string>& column_names() const { return names_; }
  const std::string& outcome_name() const { return outcome_name_; }

  bool x_missing(std::size_t i, std::size_t j) const { return mask_x_.at(i * p() + j) != 0; }
  bool y_missing(std::size_t i) const { return mask_y_.at(i) != 0; }

  double x(std::size_t i, std::size_t j) const {
    if (x_missing(i, j))
      throw ContractViolation("read of masked cell (" + std::to_string(i) + ", " +
                              std::to_string(j) + ")");
    return x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  double y(std::size_t i) const {
    if (y_missing(i)) throw ContractViolation("read of masked outcome " + std::to_string(i));
    return y_(static_cast<Eigen::Index>(i));
  }

  Pattern pattern(std::size_t i) const {
    const auto first = mask_x_.begin() + static_cast<std::ptrdiff_t>(i * p());
    return Pattern(std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(p())));
  }

  std::span<const std::uint8_t> row_mask(std::size_t i) const {
    return std::span<const std::uint8_t>(mask_x_).subspan(i * p(), p());
  }

  Query query(std::size_t i) const {
    std::vector<double> v(p(), kMissingSentinel);
    for (std::size_t j = 0; j < p(); ++j)
      if (!x_missing(i, j)) v[j] = x(i, j);
    return Query(pattern(i), std::move(v));
  }

  Partition partition_row(std::size_t i) const {
    std::vector<double> v(p(), kMissingSentinel);
    for (std::size_t j = 0; j < p(); ++j)
      if (!x_missing(i, j)) v[j] = x(i, j);
    return partition(pattern(i), v, row_mask(i));
  }

  bool column_has_missing(std::size_t j) const {
    for (std::size_t i = 0; i < n(); ++i)
      if (x_missing(i, j)) return true;
    return false;
  }
  bool any_y_missing() const {
    return std::any_of(mask_y_.begin(), mask_y_.end(), [](auto m) { return m != 0; });
  }

  MaskedDataset subset(std::span<const std::size_t> rows) const {
    if (rows.empty()) throw InputError("subset needs at least one row");
    const auto m = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd xs(m, x_.cols());
    Eigen::VectorXd ys(m);
    std::vector<std::uint8_t> mx(rows.size() * p()), my(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto i = rows[r];
      xs.row(static_cast<Eigen::Index>(r)) = x_.row(static_cast<Eigen::Index>(i));
      ys(static_cast<Eigen::Index>(r)) = y_(static_cast<Eigen::Index>(i));
      std::copy_n(mask_x_.begin() + static_cast<std::ptrdiff_t>(i * p()), p(),
                  mx.begin() + static_cast<std::ptrdiff_t>(r * p()));
      my[r] = mask_y_[i];
    }
    return MaskedDataset(std::move(xs), std::move(mx), std::move(ys), std::move(my), names_,
                         outcome_name_);
  }

  // Copy with extra outcome cells masked. Cells already masked stay masked.
  MaskedDataset with_outcome_mask(std::vector<std::uint8_t> mask_y) const {
    if (mask_y.size() != n()) throw InputError("outcome mask has wrong length");
    for (std::size_t i = 0; i < n(); ++i) mask_y[i] = (mask_y[i] || mask_y_[i]) ? 1 : 0;
    Eigen::VectorXd ys = y_;
    return MaskedDataset(x_, mask_x_, std::move(ys), std::move(mask_y), names_, outcome_name_);
  }

 private:
  Eigen::MatrixXd x_;
  std::vector<std::uint8_t> mask_x_;
  Eigen::VectorXd y_;
  std::vector<std::uint8_t> mask_y_;
  std::vector<std::string> names_;
  std::string outcome_name_ = "Y";
};

struct PatternCount {
  Pattern pattern;
  std::size_t count = 0;
};

// Distinct observation patterns with counts, sorted by descending count and
// then lexicographically.
inline std::vector<PatternCount> enumerate_patterns(const MaskedDataset& ds) {
  std::map<Pattern, std::size_t> counts;
  for (std::size_t i = 0; i < ds.n(); ++i) ++counts[ds.pattern(i)];
  std::vector<PatternCount> out;
  out.reserve(counts.size());
  for (auto& [pat, c] : counts) out.push_back({pat, c});
  std::stable_sort(out.begin(), out.end(), [](const PatternCount& a, const PatternCount& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.pattern.to_string() < b.pattern.to_string();
  });
  return out;
}

}  // namespace missforecast
