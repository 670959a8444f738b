#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "missforecast/missforecast.hpp"

namespace mf = missforecast;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mf::InputError("cannot open '" + path + "'");
  return in;
}

int cmd_simulate(const std::string& config, bool paper_scale, const std::string& cell,
                 const std::string& out_dir, bool explore) {
  auto cfg = mf::load_sweep_config(config);
  if (paper_scale) mf::use_paper_scale(cfg);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  std::optional<mf::Cell> only;
  if (!cell.empty()) only = mf::parse_cell(cell);
  const auto res = explore ? mf::run_explore_missing_y(cfg, only) : mf::run_sweep(cfg, only);
  const std::string stem = explore ? "explore_ymiss" : "metrics";
  std::string command = explore ? "explore-ymiss" : "simulate";
  command += " --config " + config + (paper_scale ? " --paper-scale" : "") + (cell.empty() ? "" : " --cell " + cell);
  mf::write_sweep_outputs(cfg, res, stem, command);
  std::cout << res.cells.size() << " cells, " << res.records.size() << " records, " << res.failures.size()
            << " failures -> " << cfg.output_dir << "/" << stem << ".csv\n";
  return 0;
}

int cmd_apply(const std::string& data, const std::string& outcome, const std::vector<std::string>& procs,
              int bootstrap, bool no_interactions, int m, std::uint64_t seed, const std::string& output,
              const std::string& save_model) {
  auto in = open_input(data);
  const auto ds = mf::read_dataset_csv(in, outcome);
  mf::ApplyOptions opt;
  opt.bootstrap = bootstrap;
  opt.seed = seed;
  for (const auto& p : procs) {
    auto c = mf::procedure_config(mf::parse_procedure(p));
    c.mimi_interactions = !no_interactions;
    c.m_imputations = m;
    opt.procedures.push_back(c);
  }
  const auto rep = mf::run_apply(ds, opt);
  std::cout << "LOOCV Brier score (" << ds.n() << " rows, " << bootstrap << " bootstrap replicates)\n\n"
            << rep.table();
  for (const auto& [proc, n] : rep.fallbacks)
    if (n > 0)
      std::cerr << "warning: " << proc << ": " << n << " fold(s) fell back to the intercept-only model\n";
  if (!output.empty()) {
    std::ofstream os(output, std::ios::binary);
    if (!os) throw mf::InputError("cannot write '" + output + "'");
    mf::write_metrics_csv(os, rep.records);
  }
  if (!save_model.empty()) {
    auto c = opt.procedures.front();
    c.seed = seed;
    const auto f = mf::train(ds, mf::OutcomeKind::Bernoulli, c);
    std::ofstream os(save_model, std::ios::binary);
    if (!os) throw mf::InputError("cannot write '" + save_model + "'");
    os << mf::to_json(f).dump(1) << '\n';
  }
  return 0;
}

int cmd_predict(const std::string& model, const std::string& data, const std::string& outcome,
                const std::string& output) {
  auto min = open_input(model);
  nlohmann::json j;
  try {
    min >> j;
  } catch (const nlohmann::json::exception& e) {
    throw mf::InputError(std::string("model file is not JSON: ") + e.what());
  }
  const auto f = mf::forecaster_from_json(j);
  auto din = open_input(data);
  const auto ds = mf::read_dataset_csv(din, outcome);
  if (ds.column_names() != f.column_names()) throw mf::InputError("dataset columns differ from the model's");
  std::ofstream file;
  if (!output.empty()) {
    file.open(output, std::ios::binary);
    if (!file) throw mf::InputError("cannot write '" + output + "'");
  }
  std::ostream& os = output.empty() ? std::cout : file;
  os << "row,pattern,prediction\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    os << i + 1 << ',' << ds.pattern(i).to_string() << ',';
    try {
      os << mf::format_real(f.predict(ds.query(i)).point());
    } catch (const mf::UnsupportedPatternError&) {
      os << "NA";
    }
    os << '\n';
  }
  return 0;
}

int cmd_check_mechanism(const std::string& table, const std::string& outcome) {
  auto in = open_input(table);
  const auto joint = mf::mechanisms::load_joint_csv(in, outcome);
  std::cout << mf::mechanisms::classify(joint).format();
  return 0;
}

int cmd_oracle(const std::string& scenario, double prop, const std::string& pattern,
               std::optional<double> x1, std::optional<double> x2, double y_miss, int nodes) {
  auto base = mf::default_spec(mf::parse_scenario(scenario));
  base.y_miss_prob = y_miss;
  const auto spec = mf::Calibrator(base).calibrated(prop);
  const auto pat = mf::Pattern::parse(pattern);
  if (pat.size() != 2) throw mf::ConfigError("pattern must have two digits (X1 X2)");
  std::vector<double> v(2, mf::kMissingSentinel);
  const std::optional<double> given[2] = {x1, x2};
  for (std::size_t j = 0; j < 2; ++j) {
    if (pat.observed(j) && !given[j]) throw mf::ConfigError("pattern observes X" + std::to_string(j + 1) + "; pass --x" + std::to_string(j + 1));
    if (pat.observed(j)) v[j] = *given[j];
  }
  const auto mu = mf::conditional_gaussian(spec, pat, v).as_gaussian();
  std::cout << std::setprecision(10) << "scenario " << scenario << ", target missingness " << prop
            << ", intercept " << (spec.miss_logit.enabled ? spec.miss_logit.intercept : 0.0) << "\n"
            << "pattern " << pattern << " probability " << mf::pattern_probability(spec, pat, nodes) << "\n"
            << "MU  mean " << mu.mean << "  variance " << mu.variance << "\n";
  const auto mc = mf::mc_predict(spec, pat, v, nodes).as_gaussian();
  std::cout << "MC  mean " << mc.mean << "  variance " << mc.variance << "\n";
  return 0;
}

int cmd_generate(const std::string& scenario, double prop, std::size_t n, std::uint64_t seed, double y_miss,
                 const std::string& output) {
  auto base = mf::default_spec(mf::parse_scenario(scenario));
  base.y_miss_prob = y_miss;
  const auto spec = mf::Calibrator(base).calibrated(prop);
  const auto rows = mf::draw_complete(spec, n, mf::derive_seed(seed, {1}));
  const auto ds = mf::apply_missingness(rows, spec, mf::derive_seed(seed, {2}), true);
  std::ofstream os(output, std::ios::binary);
  if (!os) throw mf::InputError("cannot write '" + output + "'");
  mf::write_dataset_csv(os, ds);
  return 0;
}

int cmd_synth_trauma(const std::string& output, std::uint64_t seed) {
  const auto ds = mf::make_trauma_analogue(seed);
  std::ofstream os(output, std::ios::binary);
  if (!os) throw mf::InputError("cannot write '" + output + "'");
  mf::write_dataset_csv(os, ds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forecasting with missing predictors: procedures, oracles and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mf::kVersion);

  std::string config, cell, out_dir;
  bool paper_scale = false;
  auto* sim = app.add_subcommand("simulate", "Run the scenario sweep");
  sim->add_option("--config", config, "Sweep config file")->required();
  sim->add_flag("--paper-scale", paper_scale, "Use the 0.1% proportion grid");
  sim->add_option("--cell", cell, "Run one cell, e.g. S4:0.30:0");
  sim->add_option("--output-dir", out_dir, "Override output_dir");

  auto* exp = app.add_subcommand("explore-ymiss", "Missing-outcome exploration on S5");
  exp->add_option("--config", config, "Sweep config file")->required();
  exp->add_flag("--paper-scale", paper_scale, "Use the 0.1% proportion grid");
  exp->add_option("--cell", cell, "Run one cell, e.g. S5:0.30:0");
  exp->add_option("--output-dir", out_dir, "Override output_dir");

  std::string data, outcome = "severe", output, save_model, model;
  std::vector<std::string> procs{"PS"};
  int bootstrap = mf::kDefaultBootstrap, m = 20;
  bool no_interactions = false;
  std::uint64_t seed = mf::kDefaultMasterSeed;
  auto* apply = app.add_subcommand("apply", "LOOCV Brier report on a dataset with a binary outcome");
  apply->add_option("--data", data, "Dataset CSV")->required();
  apply->add_option("--outcome", outcome, "Outcome column");
  apply->add_option("--procedure", procs, "Procedure(s): ps, mi, mimi, ...")->expected(1, -1);
  apply->add_option("--bootstrap", bootstrap, "Bootstrap replicates");
  apply->add_option("--m", m, "Imputations for MI/MIMI");
  apply->add_flag("--no-interactions", no_interactions, "MIMI without indicator x predictor terms");
  apply->add_option("--seed", seed, "Master seed");
  apply->add_option("--output", output, "Write metric records CSV");
  apply->add_option("--save-model", save_model, "Train the first procedure on all rows and save it as JSON");

  auto* predict = app.add_subcommand("predict", "Apply a saved model without retraining");
  predict->add_option("--model", model, "Model JSON")->required();
  predict->add_option("--data", data, "Dataset CSV")->required();
  predict->add_option("--outcome", outcome, "Outcome column");
  predict->add_option("--output", output, "Predictions CSV (default stdout)");

  std::string table, joint_outcome = "Y";
  auto* check = app.add_subcommand("check-mechanism", "Classify a discrete joint table");
  check->add_option("table", table, "CSV with variable columns and prob")->required();
  check->add_option("--outcome", joint_outcome, "Outcome variable name");

  std::string scenario = "S1", pattern = "00";
  double prop = 0.3, y_miss = 0.0;
  std::optional<double> x1, x2;
  int nodes = mf::kDefaultOracleNodes;
  auto* oracle = app.add_subcommand("oracle", "MU and MC oracle predictions for one query");
  oracle->add_option("--scenario", scenario, "S1..S5")->required();
  oracle->add_option("--prop", prop, "Target missingness proportion");
  oracle->add_option("--pattern", pattern, "Pattern over (X1, X2), 1 = missing");
  oracle->add_option("--x1", x1, "Observed X1");
  oracle->add_option("--x2", x2, "Observed X2");
  oracle->add_option("--nodes", nodes, "Gauss-Hermite nodes per dimension");

  std::size_t n = 1000;
  auto* gen = app.add_subcommand("generate", "Export one simulated training dataset");
  gen->add_option("--scenario", scenario, "S1..S5")->required();
  gen->add_option("--prop", prop, "Target missingness proportion");
  gen->add_option("--n", n, "Rows");
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("--y-miss", y_miss, "Outcome missingness probability");
  gen->add_option("--output", output, "Output CSV")->required();

  auto* synth = app.add_subcommand("synth-trauma", "Write the synthetic application dataset");
  synth->add_option("--output", output, "Output CSV")->required();
  std::uint64_t synth_seed = 678147;
  synth->add_option("--seed", synth_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*sim) return cmd_simulate(config, paper_scale, cell, out_dir, false);
    if (*exp) return cmd_simulate(config, paper_scale, cell, out_dir, true);
    if (*apply) return cmd_apply(data, outcome, procs, bootstrap, no_interactions, m, seed, output, save_model);
    if (*predict) return cmd_predict(model, data, outcome, output);
    if (*check) return cmd_check_mechanism(table, joint_outcome);
    if (*oracle) return cmd_oracle(scenario, prop, pattern, x1, x2, y_miss, nodes);
    if (*gen) return cmd_generate(scenario, prop, n, seed, y_miss, output);
    if (*synth) return cmd_synth_trauma(output, synth_seed);
  } catch (const mf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mf::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mf::ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mf::Error& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return 0;
}
