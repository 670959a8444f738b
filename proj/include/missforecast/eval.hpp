#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "procedures.hpp"
#include "rng.hpp"

namespace missforecast {

class EvaluationError : public Error {
 public:
  using Error::Error;
};

inline double mse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw InputError("mse: lengths differ");
  if (pred.empty()) throw InputError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - truth[i];
    s += r * r;
  }
  return s / static_cast<double>(pred.size());
}

inline double brier(std::span<const double> prob, std::span<const double> outcome) {
  if (prob.size() != outcome.size()) throw InputError("brier: lengths differ");
  if (prob.empty()) throw InputError("brier: empty input");
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (!(prob[i] >= 0.0 && prob[i] <= 1.0)) throw InputError("brier: probability outside [0,1]");
    if (outcome[i] != 0.0 && outcome[i] != 1.0) throw InputError("brier: outcome must be 0/1");
  }
  return mse(prob, outcome);
}

inline std::vector<double> squared_errors(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw InputError("squared_errors: lengths differ");
  std::vector<double> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return out;
}

inline constexpr int kDefaultBootstrap = 10000;
inline constexpr double kDefaultLevel = 0.95;

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Percentile interval of the mean score over `b` row resamples.
inline Interval bootstrap_ci(std::span<const double> scores, int b = kDefaultBootstrap,
                             double level = kDefaultLevel, std::uint64_t seed = 1) {
  if (b < 100) throw ConfigError("bootstrap needs at least 100 replicates");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap level must be in (0,1)");
  if (scores.empty()) throw InputError("bootstrap_ci: empty input");
  const std::size_t n = scores.size();
  std::vector<double> means(static_cast<std::size_t>(b));
  parallel_for(static_cast<std::size_t>(b), [&](std::size_t r) {
    Rng rng = make_rng(derive_seed(seed, {r}));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += scores[pick(rng)];
    means[r] = s / static_cast<double>(n);
  });
  std::sort(means.begin(), means.end());
  // Type-7 quantiles.
  auto q = [&](double p) {
    const double h = p * static_cast<double>(b - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, static_cast<std::size_t>(b - 1));
    return means[lo] + (h - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double a = (1.0 - level) / 2.0;
  return {q(a), q(1.0 - a)};
}

// ---------------------------------------------------------------- records

struct MetricRecord {
  std::string scenario;
  std::string procedure;
  double target_prop = 0.0;
  std::size_t replicate = 0;
  std::string subgroup;  // overall, complete, incomplete, pattern=<bits>
  std::string metric;    // mse or brier
  double value = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::size_t n_subgroup = 0;
};

inline constexpr const char* kMetricsHeader =
    "scenario,procedure,target_prop,replicate,subgroup,metric,value,ci_low,ci_high,n_subgroup";

inline std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string format_prop(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

inline void write_metrics_header(std::ostream& os) { os << kMetricsHeader << '\n'; }

inline void write_metric(std::ostream& os, const MetricRecord& r) {
  os << r.scenario << ',' << r.procedure << ',' << format_prop(r.target_prop) << ',' << r.replicate
     << ',' << r.subgroup << ',' << r.metric << ',' << format_real(r.value) << ','
     << (r.ci_low ? format_real(*r.ci_low) : "") << ',' << (r.ci_high ? format_real(*r.ci_high) : "")
     << ',' << r.n_subgroup << '\n';
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRecord>& rows) {
  write_metrics_header(os);
  for (const auto& r : rows) write_metric(os, r);
}

// ---------------------------------------------------------------- stratify

struct Subgroup {
  std::string name;
  std::vector<std::size_t> rows;
};

inline std::string pattern_subgroup(const Pattern& p) { return "pattern=" + p.to_string(); }

// overall, complete, incomplete, then one group per pattern in pattern order.
// Empty groups are left out.
inline std::vector<Subgroup> subgroups(std::span<const Pattern> patterns) {
  Subgroup all{"overall", {}}, complete{"complete", {}}, incomplete{"incomplete", {}};
  std::map<Pattern, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    all.rows.push_back(i);
    (patterns[i].is_complete() ? complete : incomplete).rows.push_back(i);
    by[patterns[i]].push_back(i);
  }
  std::vector<Subgroup> out;
  for (auto* g : {&all, &complete, &incomplete})
    if (!g->rows.empty()) out.push_back(std::move(*g));
  for (auto& [p, rows] : by) out.push_back({pattern_subgroup(p), std::move(rows)});
  return out;
}

struct StratifyOptions {
  std::string metric = "mse";
  int bootstrap = 0;  // 0 = no intervals
  double level = kDefaultLevel;
  std::uint64_t seed = 1;
};

// Mean score per subgroup. `scores` are per-row losses (squared errors).
inline std::vector<MetricRecord> stratify(std::span<const double> scores,
                                          std::span<const Pattern> patterns,
                                          const MetricRecord& base,
                                          const StratifyOptions& opt = {}) {
  if (scores.size() != patterns.size()) throw InputError("stratify: lengths differ");
  std::vector<MetricRecord> out;
  for (const auto& g : subgroups(patterns)) {
    std::vector<double> s;
    s.reserve(g.rows.size());
    for (auto i : g.rows) s.push_back(scores[i]);
    double sum = 0.0;
    for (double v : s) sum += v;
    MetricRecord r = base;
    r.subgroup = g.name;
    r.metric = opt.metric;
    r.value = sum / static_cast<double>(s.size());
    r.n_subgroup = s.size();
    if (opt.bootstrap > 0) {
      const auto ci = bootstrap_ci(s, opt.bootstrap, opt.level, derive_seed(opt.seed, {hash_label(g.name)}));
      // Percentile bounds can miss the point estimate by rounding only.
      r.ci_low = std::min(ci.low, r.value);
      r.ci_high = std::max(ci.high, r.value);
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- prediction

struct ScoredPredictions {
  std::vector<std::optional<double>> point;  // empty when the pattern is unsupported
  std::map<std::string, std::size_t> failures;
};

inline ScoredPredictions predict_all(const Forecaster& f, const MaskedDataset& test) {
  ScoredPredictions out;
  out.point.resize(test.n());
  std::vector<std::string> why(test.n());
  parallel_for(test.n(), [&](std::size_t i) {
    try {
      out.point[i] = f.predict(test.query(i)).point();
    } catch (const UnsupportedPatternError& e) {
      why[i] = e.what();
    } catch (const NumericError& e) {
      why[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < test.n(); ++i)
    if (!out.point[i]) ++out.failures[why[i]];
  return out;
}

// ---------------------------------------------------------------- LOOCV

struct LoocvResult {
  std::vector<double> predictions;
  std::vector<std::string> fallback_reason;  // non-empty where the fold fell back
  std::size_t n_fallback() const {
    return static_cast<std::size_t>(
        std::count_if(fallback_reason.begin(), fallback_reason.end(), [](const auto& s) { return !s.empty(); }));
  }
};

// Leave-one-out predictions. A fold whose procedure cannot be trained, or
// cannot serve the held-out row's pattern, falls back to the fold's
// intercept-only model (mean outcome).
inline LoocvResult loocv(const MaskedDataset& ds, OutcomeKind kind, const ProcedureConfig& cfg) {
  if (ds.n() < 2) throw InputError("loocv needs at least two rows");
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (ds.y_missing(i)) throw InputError("loocv needs an observed outcome on every row");
  cfg.validate();
  LoocvResult out;
  out.predictions.assign(ds.n(), 0.0);
  out.fallback_reason.assign(ds.n(), "");
  double total = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) total += ds.y(i);
  parallel_for(ds.n(), [&](std::size_t i) {
    std::vector<std::size_t> rows;
    rows.reserve(ds.n() - 1);
    for (std::size_t k = 0; k < ds.n(); ++k)
      if (k != i) rows.push_back(k);
    const MaskedDataset fold = ds.subset(rows);
    ProcedureConfig fc = cfg;
    fc.seed = derive_seed(cfg.seed, {hash_label("fold"), i});
    try {
      const Forecaster f = train(fold, kind, fc);
      out.predictions[i] = f.predict(ds.query(i)).point();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      out.fallback_reason[i] = e.what();
      out.predictions[i] = (total - ds.y(i)) / static_cast<double>(ds.n() - 1);
    }
  });
  if (out.n_fallback() == ds.n()) throw EvaluationError("every LOOCV fold was untrainable");
  return out;
}

}  // namespace missforecast
