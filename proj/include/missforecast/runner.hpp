#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "core.hpp"
#include "csv.hpp"
#include "datagen.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "json.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "procedures.hpp"
#include "rng.hpp"

namespace missforecast {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr std::uint64_t kDefaultMasterSeed = 20260318;

struct SweepConfig {
  std::vector<Scenario> scenarios{all_scenarios().begin(), all_scenarios().end()};
  double prop_start = 0.0;
  double prop_stop = 0.7;
  double prop_step = 0.01;
  std::vector<double> props;  // explicit grid; overrides start/stop/step when set
  std::size_t n_train = 1000;
  std::size_t n_test = 1000;
  std::size_t replicates = 1;
  std::vector<ProcedureConfig> procedures;
  std::uint64_t master_seed = kDefaultMasterSeed;
  std::string output_dir = "out";
  double y_miss_prob = 0.0;
  bool y_miss_set = false;
  unsigned threads = 0;

  std::vector<double> grid() const {
    if (!props.empty()) return props;
    std::vector<double> g;
    const auto k = static_cast<long>(std::floor((prop_stop - prop_start) / prop_step + 1e-9));
    for (long i = 0; i <= k; ++i)
      g.push_back(std::round((prop_start + static_cast<double>(i) * prop_step) * 1e6) / 1e6);
    return g;
  }

  void validate() const {
    if (scenarios.empty()) throw ConfigError("no scenarios configured");
    if (props.empty()) {
      if (!(prop_start >= 0.0 && prop_start <= prop_stop && prop_stop <= kMaxTargetProp))
        throw ConfigError("need 0 <= prop_start <= prop_stop <= 0.7");
      if (!(prop_step > 0.0)) throw ConfigError("prop_step must be positive");
    }
    for (double p : props)
      if (!(p >= 0.0 && p <= kMaxTargetProp)) throw ConfigError("proportions must lie in [0, 0.7]");
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    if (n_train < 10 || n_test < 1) throw ConfigError("n_train must be >= 10 and n_test >= 1");
    if (!(y_miss_prob >= 0.0 && y_miss_prob < 1.0)) throw ConfigError("y_miss_prob must lie in [0, 1)");
    if (procedures.empty()) throw ConfigError("no procedures configured");
    for (const auto& p : procedures) p.validate();
  }
};

inline std::vector<ProcedureConfig> default_procedures() {
  std::vector<ProcedureConfig> out;
  for (auto n : {ProcedureName::PS, ProcedureName::CCS, ProcedureName::CCA, ProcedureName::MI,
                 ProcedureName::MIMI, ProcedureName::MLE_M, ProcedureName::MLEMI_M, ProcedureName::ITR})
    out.push_back(procedure_config(n));
  return out;
}

// ---------------------------------------------------------------- config file

namespace detail {

inline std::string unquote(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    return s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> parse_list(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated list: " + s);
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' is out of range");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace detail

// Flat `key = value` lines; `#` starts a comment, `[section]` lines are ignored,
// lists are `[a, b]` or comma separated. Procedure options apply to every
// configured procedure.
inline SweepConfig parse_sweep_config(std::istream& in) {
  SweepConfig cfg;
  ProcedureConfig opts;
  std::vector<std::string> names;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
      if (line[k] == '"') quoted = !quoted;
      if (line[k] == '#' && !quoted) {
        line.resize(k);
        break;
      }
    }
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    const std::string val = detail::unquote(raw);
    if (key == "scenarios") {
      cfg.scenarios.clear();
      for (const auto& s : detail::parse_list(raw)) cfg.scenarios.push_back(parse_scenario(s));
    } else if (key == "prop_start") {
      cfg.prop_start = detail::parse_real(key, val);
    } else if (key == "prop_stop") {
      cfg.prop_stop = detail::parse_real(key, val);
    } else if (key == "prop_step") {
      cfg.prop_step = detail::parse_real(key, val);
    } else if (key == "props") {
      cfg.props.clear();
      for (const auto& s : detail::parse_list(raw)) cfg.props.push_back(detail::parse_real(key, s));
    } else if (key == "n_train") {
      cfg.n_train = detail::parse_count(key, val);
    } else if (key == "n_test") {
      cfg.n_test = detail::parse_count(key, val);
    } else if (key == "replicates") {
      cfg.replicates = detail::parse_count(key, val);
    } else if (key == "procedures") {
      names = detail::parse_list(raw);
    } else if (key == "master_seed") {
      cfg.master_seed = detail::parse_count(key, val);
    } else if (key == "output_dir") {
      cfg.output_dir = val;
    } else if (key == "y_miss_prob") {
      cfg.y_miss_prob = detail::parse_real(key, val);
      cfg.y_miss_set = true;
    } else if (key == "threads") {
      cfg.threads = static_cast<unsigned>(detail::parse_count(key, val));
    } else if (key == "m_imputations") {
      opts.m_imputations = static_cast<int>(detail::parse_count(key, val));
    } else if (key == "mc_draws") {
      opts.mc_draws = static_cast<int>(detail::parse_count(key, val));
    } else if (key == "fcs_iterations") {
      opts.fcs_iterations = static_cast<int>(detail::parse_count(key, val));
    } else if (key == "deployment_draws") {
      opts.deployment_draws = static_cast<int>(detail::parse_count(key, val));
    } else if (key == "restrict_to_observed_y") {
      opts.restrict_to_observed_y = detail::parse_bool(key, val);
    } else if (key == "mimi_interactions") {
      opts.mimi_interactions = detail::parse_bool(key, val);
    } else if (key == "itr_fill") {
      opts.itr_fill = parse_itr_fill(val);
    } else if (key == "itr_learner") {
      opts.itr_learner = parse_itr_learner(val);
    } else if (key == "mlemi_mode") {
      opts.mlemi_mode = parse_mlemi_mode(val);
    } else if (key == "marginalisation") {
      opts.marginalisation = parse_marginalisation(val);
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (names.empty())
    for (const auto& p : default_procedures()) names.push_back(to_string(p.name));
  for (const auto& n : names) {
    ProcedureConfig p = opts;
    p.name = parse_procedure(n);
    cfg.procedures.push_back(p);
  }
  cfg.validate();
  return cfg;
}

inline SweepConfig load_sweep_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_sweep_config(in);
}

inline void use_paper_scale(SweepConfig& cfg) {
  cfg.props.clear();
  cfg.prop_start = 0.0;
  cfg.prop_stop = kMaxTargetProp;
  cfg.prop_step = 0.001;
}

inline nlohmann::json to_json(const SweepConfig& c) {
  nlohmann::json procs = nlohmann::json::array();
  for (const auto& p : c.procedures) procs.push_back(detail::config_json(p));
  std::vector<std::string> sc;
  for (auto s : c.scenarios) sc.push_back(to_string(s));
  return {{"scenarios", sc},       {"grid", c.grid()},           {"n_train", c.n_train},
          {"n_test", c.n_test},    {"replicates", c.replicates}, {"procedures", procs},
          {"master_seed", c.master_seed}, {"output_dir", c.output_dir},
          {"y_miss_prob", c.y_miss_prob}};
}

// ---------------------------------------------------------------- cells

struct Cell {
  Scenario scenario = Scenario::S1;
  double prop = 0.0;
  std::size_t replicate = 0;
};

// Proportions enter seeds in millionths so a cell's seed does not depend on
// which grid it was drawn from.
inline std::uint64_t prop_key(double prop) { return static_cast<std::uint64_t>(std::llround(prop * 1e6)); }

inline std::uint64_t cell_seed(std::uint64_t master, const Cell& c, std::string_view role) {
  return derive_seed(master, {hash_label(role), static_cast<std::uint64_t>(c.scenario), prop_key(c.prop),
                              static_cast<std::uint64_t>(c.replicate)});
}

// "S4:0.30:0"
inline Cell parse_cell(const std::string& s) {
  const auto a = s.find(':'), b = s.rfind(':');
  if (a == std::string::npos || a == b) throw ConfigError("cell must look like S4:0.30:0");
  Cell c;
  c.scenario = parse_scenario(s.substr(0, a));
  c.prop = detail::parse_real("cell", s.substr(a + 1, b - a - 1));
  c.replicate = detail::parse_count("cell", s.substr(b + 1));
  if (!(c.prop >= 0.0 && c.prop <= kMaxTargetProp)) throw ConfigError("cell proportion must lie in [0, 0.7]");
  return c;
}

struct CellFailure {
  Cell cell;
  std::string procedure;
  std::string reason;
};

struct CellResult {
  std::vector<MetricRecord> records;
  std::vector<CellFailure> failures;
};

namespace detail {

// MSE records for every subgroup whose rows all have predictions.
inline void score_into(CellResult& out, const Cell& cell, const std::string& label,
                       const std::vector<std::optional<double>>& pred, const MaskedDataset& test) {
  std::vector<Pattern> pats(test.n());
  for (std::size_t i = 0; i < test.n(); ++i) pats[i] = test.pattern(i);
  MetricRecord base;
  base.scenario = to_string(cell.scenario);
  base.procedure = label;
  base.target_prop = cell.prop;
  base.replicate = cell.replicate;
  base.metric = "mse";
  for (const auto& g : subgroups(pats)) {
    double s = 0.0;
    std::size_t missing = 0;
    for (auto i : g.rows) {
      if (!pred[i]) {
        ++missing;
        continue;
      }
      const double r = *pred[i] - test.y(i);
      s += r * r;
    }
    if (missing > 0) {
      out.failures.push_back({cell, label, g.name + ": " + std::to_string(missing) + " of " +
                                               std::to_string(g.rows.size()) + " rows unsupported"});
      continue;
    }
    MetricRecord r = base;
    r.subgroup = g.name;
    r.value = s / static_cast<double>(g.rows.size());
    r.n_subgroup = g.rows.size();
    out.records.push_back(std::move(r));
  }
}

}  // namespace detail

inline CellResult run_cell(const SweepConfig& cfg, const Cell& cell, CalibrationCache& cache,
                           const std::vector<ProcedureConfig>& procedures) {
  CellResult out;
  GenerativeSpec base = default_spec(cell.scenario);
  base.y_miss_prob = cfg.y_miss_prob;
  GenerativeSpec spec;
  DatasetPair pair;
  try {
    spec = cache.calibrated(base, cell.prop);
    pair = make_pair(spec, cfg.n_train, cfg.n_test, cell_seed(cfg.master_seed, cell, "pair"));
  } catch (const Error& e) {
    out.failures.push_back({cell, "*", std::string("data generation: ") + e.what()});
    return out;
  }
  for (auto [label, target] : {std::pair{"ORACLE_MU", Target::MU}, std::pair{"ORACLE_MC", Target::MC}}) {
    const OracleForecaster oracle{spec, target, kDefaultOracleNodes};
    std::vector<std::optional<double>> pred(pair.test.n());
    for (std::size_t i = 0; i < pair.test.n(); ++i) {
      try {
        pred[i] = oracle.predict(pair.test.query(i)).point();
      } catch (const Error&) {
      }
    }
    detail::score_into(out, cell, label, pred, pair.test);
  }
  for (const auto& pc : procedures) {
    ProcedureConfig c = pc;
    // Keyed on the name, so variants of one procedure share imputation draws.
    c.seed = cell_seed(cfg.master_seed, cell, "procedure:" + to_string(pc.name));
    try {
      const Forecaster f = train(pair.train, OutcomeKind::Gaussian, c);
      const auto sp = predict_all(f, pair.test);
      detail::score_into(out, cell, c.label(), sp.point, pair.test);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      out.failures.push_back({cell, c.label(), std::string("training: ") + e.what()});
    }
  }
  return out;
}

struct SweepResult {
  std::vector<MetricRecord> records;
  std::vector<CellFailure> failures;
  std::vector<Cell> cells;
  double wall_seconds = 0.0;
};

inline std::vector<Cell> enumerate_cells(const SweepConfig& cfg) {
  std::vector<Cell> cells;
  for (auto s : cfg.scenarios)
    for (double p : cfg.grid())
      for (std::size_t r = 0; r < cfg.replicates; ++r) cells.push_back({s, p, r});
  return cells;
}

inline SweepResult run_cells(const SweepConfig& cfg, const std::vector<Cell>& cells,
                             const std::vector<ProcedureConfig>& procedures) {
  const auto t0 = std::chrono::steady_clock::now();
  CalibrationCache cache;
  std::vector<CellResult> results(cells.size());
  parallel_for(cells.size(), [&](std::size_t k) { results[k] = run_cell(cfg, cells[k], cache, procedures); },
               cfg.threads);
  SweepResult out;
  out.cells = cells;
  for (auto& r : results) {
    out.records.insert(out.records.end(), r.records.begin(), r.records.end());
    out.failures.insert(out.failures.end(), r.failures.begin(), r.failures.end());
  }
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline SweepResult run_sweep(const SweepConfig& cfg, std::optional<Cell> only = std::nullopt) {
  cfg.validate();
  return run_cells(cfg, only ? std::vector<Cell>{*only} : enumerate_cells(cfg), cfg.procedures);
}

inline constexpr double kExploreDefaultYMiss = 0.3;

// MI and MLE-M on S5, each trained with and without the rows whose outcome is missing.
inline SweepResult run_explore_missing_y(SweepConfig cfg, std::optional<Cell> only = std::nullopt) {
  for (auto s : cfg.scenarios)
    if (s != Scenario::S5) throw ConfigError("the missing-outcome exploration runs on S5 only");
  cfg.scenarios = {Scenario::S5};
  if (!cfg.y_miss_set) cfg.y_miss_prob = kExploreDefaultYMiss;
  std::vector<ProcedureConfig> procs;
  for (auto n : {ProcedureName::MI, ProcedureName::MLE_M})
    for (bool restrict_y : {true, false}) {
      ProcedureConfig p = cfg.procedures.empty() ? procedure_config(n) : cfg.procedures.front();
      p.name = n;
      p.restrict_to_observed_y = restrict_y;
      procs.push_back(p);
    }
  cfg.procedures = procs;
  cfg.validate();
  if (only && only->scenario != Scenario::S5) throw ConfigError("the missing-outcome exploration runs on S5 only");
  return run_cells(cfg, only ? std::vector<Cell>{*only} : enumerate_cells(cfg), procs);
}

inline nlohmann::json manifest_json(const SweepConfig& cfg, const SweepResult& res, const std::string& command) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : res.failures)
    failures.push_back({{"scenario", to_string(f.cell.scenario)}, {"target_prop", f.cell.prop},
                        {"replicate", f.cell.replicate}, {"procedure", f.procedure}, {"reason", f.reason}});
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& c : res.cells)
    seeds.push_back({{"scenario", to_string(c.scenario)}, {"target_prop", c.prop}, {"replicate", c.replicate},
                     {"pair_seed", cell_seed(cfg.master_seed, c, "pair")}});
  return {{"command", command},
          {"version", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__},
          {"config", to_json(cfg)},
          {"seed_rule", "derive_seed(master_seed, {hash(role), scenario, round(prop * 1e6), replicate})"},
          {"cells", res.cells.size()},
          {"records", res.records.size()},
          {"wall_time_seconds", res.wall_seconds},
          {"failures", failures},
          {"seeds", seeds}};
}

// Writes <dir>/<stem>.csv and <dir>/<stem>.manifest.json.
inline void write_sweep_outputs(const SweepConfig& cfg, const SweepResult& res, const std::string& stem,
                                const std::string& command) {
  std::filesystem::create_directories(cfg.output_dir);
  const auto dir = std::filesystem::path(cfg.output_dir);
  {
    std::ofstream os(dir / (stem + ".csv"), std::ios::binary);
    if (!os) throw InputError("cannot write to " + (dir / (stem + ".csv")).string());
    write_metrics_csv(os, res.records);
  }
  std::ofstream ms(dir / (stem + ".manifest.json"), std::ios::binary);
  ms << manifest_json(cfg, res, command).dump(2) << '\n';
}

// ---------------------------------------------------------------- application

struct ApplyOptions {
  std::vector<ProcedureConfig> procedures;
  int bootstrap = kDefaultBootstrap;
  double level = kDefaultLevel;
  std::uint64_t seed = kDefaultMasterSeed;
};

inline constexpr std::size_t kUnreliableSubgroup = 10;

struct ApplyReport {
  std::vector<std::string> procedures;
  std::vector<MetricRecord> records;  // brier per procedure and subgroup
  std::map<std::string, std::size_t> fallbacks;
  std::map<std::string, std::vector<std::string>> fallback_reasons;
  std::vector<std::string> column_names;

  const MetricRecord* find(const std::string& proc, const std::string& subgroup) const {
    for (const auto& r : records)
      if (r.procedure == proc && r.subgroup == subgroup) return &r;
    return nullptr;
  }

  // Overall row, then one row per pattern by decreasing size.
  std::vector<std::pair<std::string, std::size_t>> table_rows() const {
    std::vector<std::pair<std::string, std::size_t>> rows;
    for (const auto& r : records)
      if (r.procedure == procedures.front() && r.subgroup.rfind("pattern=", 0) == 0)
        rows.emplace_back(r.subgroup, r.n_subgroup);
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (const auto* o = find(procedures.front(), "overall")) rows.insert(rows.begin(), {"overall", o->n_subgroup});
    return rows;
  }

  std::string describe(const std::string& subgroup) const {
    if (subgroup == "overall") return "Overall";
    const auto bits = Pattern::parse(subgroup.substr(8));
    std::string s;
    for (auto j : bits.missing_indices()) s += (s.empty() ? "" : ", ") + column_names[j];
    return s.empty() ? "No missing" : "Missing " + s;
  }

  std::string table() const {
    std::ostringstream os;
    os << std::left << std::setw(34) << "Subgroup" << std::right << std::setw(6) << "n";
    for (const auto& p : procedures) os << "  " << std::left << std::setw(24) << p;
    os << '\n';
    bool any_small = false;
    for (const auto& [sub, n] : table_rows()) {
      const bool small = n < kUnreliableSubgroup;
      any_small |= small;
      os << std::left << std::setw(34) << (describe(sub) + (small ? " *" : "")) << std::right << std::setw(6) << n;
      for (const auto& p : procedures) {
        const auto* r = find(p, sub);
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(3) << r->value;
        if (r->ci_low) cell << " [" << *r->ci_low << "; " << *r->ci_high << "]";
        os << "  " << std::left << std::setw(24) << cell.str();
      }
      os << '\n';
    }
    if (any_small) os << "* fewer than " << kUnreliableSubgroup << " rows; interval is indicative only\n";
    return os.str();
  }
};

// LOOCV Brier score per procedure, overall and per pattern, with bootstrap intervals.
inline ApplyReport run_apply(const MaskedDataset& ds, const ApplyOptions& opt) {
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.y_missing(i)) throw InputError("outcome is missing on row " + std::to_string(i + 2));
    if (ds.y(i) != 0.0 && ds.y(i) != 1.0) throw InputError("outcome must be binary (0/1)");
  }
  if (opt.procedures.empty()) throw ConfigError("no procedures requested");
  ApplyReport rep;
  rep.column_names = ds.column_names();
  std::vector<Pattern> pats(ds.n());
  std::vector<double> y(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    pats[i] = ds.pattern(i);
    y[i] = ds.y(i);
  }
  for (const auto& pc0 : opt.procedures) {
    ProcedureConfig pc = pc0;
    pc.seed = derive_seed(opt.seed, {hash_label("apply:" + pc.label())});
    const auto cv = loocv(ds, OutcomeKind::Bernoulli, pc);
    const std::string label = pc.label();
    rep.procedures.push_back(label);
    rep.fallbacks[label] = cv.n_fallback();
    for (std::size_t i = 0; i < ds.n(); ++i)
      if (!cv.fallback_reason[i].empty())
        rep.fallback_reasons[label].push_back("row " + std::to_string(i + 2) + ": " + cv.fallback_reason[i]);
    brier(cv.predictions, y);  // validates the probabilities
    const auto scores = squared_errors(cv.predictions, y);
    MetricRecord base;
    base.scenario = "application";
    base.procedure = label;
    StratifyOptions so;
    so.metric = "brier";
    so.bootstrap = opt.bootstrap;
    so.level = opt.level;
    so.seed = derive_seed(opt.seed, {hash_label("bootstrap:" + label)});
    for (auto& r : stratify(scores, pats, base, so)) rep.records.push_back(std::move(r));
  }
  return rep;
}

}  // namespace missforecast
