#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace missforecast::mechanisms {

enum class Role { Predictor, Outcome, Indicator };

struct Variable {
  std::string name;
  int domain = 2;
  Role role = Role::Predictor;
  std::string indicator_of;  // for indicators: the variable they flag
};

inline std::string indicator_name(const std::string& var) { return "M_" + var; }

// Finite probability table over predictors, the outcome, and one binary
// missingness indicator per predictor and for the outcome. Configurations are
// stored in mixed radix with the first variable varying slowest.
class DiscreteJoint {
 public:
  DiscreteJoint(std::vector<Variable> vars, std::vector<double> table)
      : vars_(std::move(vars)), table_(std::move(table)) {
    std::size_t cells = 1;
    for (const auto& v : vars_) {
      if (v.domain < 1) throw InputError("variable '" + v.name + "' has empty domain");
      cells *= static_cast<std::size_t>(v.domain);
    }
    if (table_.size() != cells) throw InputError("joint table has wrong number of cells");
    double total = 0.0;
    for (double m : table_) {
      if (!(m >= 0.0)) throw InputError("joint table has negative or NaN mass");
      total += m;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InputError("joint table does not sum to 1");
    strides_.assign(vars_.size(), 1);
    for (std::size_t k = vars_.size(); k-- > 1;)
      strides_[k - 1] = strides_[k] * static_cast<std::size_t>(vars_[k].domain);
    validate_roles();
  }

  template <class Fn>
  static DiscreteJoint from_function(std::vector<Variable> vars, Fn&& mass) {
    std::size_t cells = 1;
    for (const auto& v : vars) cells *= static_cast<std::size_t>(v.domain);
    std::vector<double> table(cells);
    std::vector<int> cfg(vars.size(), 0);
    for (std::size_t c = 0; c < cells; ++c) {
      std::size_t rem = c;
      for (std::size_t k = vars.size(); k-- > 0;) {
        cfg[k] = static_cast<int>(rem % static_cast<std::size_t>(vars[k].domain));
        rem /= static_cast<std::size_t>(vars[k].domain);
      }
      table[c] = mass(cfg);
    }
    return DiscreteJoint(std::move(vars), std::move(table));
  }

  const std::vector<Variable>& variables() const { return vars_; }
  const std::vector<double>& table() const { return table_; }
  std::size_t cells() const { return table_.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t k = 0; k < vars_.size(); ++k)
      if (vars_[k].name == name) return k;
    throw InputError("unknown variable '" + name + "'");
  }

  void config(std::size_t cell, std::vector<int>& out) const {
    out.resize(vars_.size());
    for (std::size_t k = 0; k < vars_.size(); ++k)
      out[k] = static_cast<int>((cell / strides_[k]) % static_cast<std::size_t>(vars_[k].domain));
  }

  std::vector<std::size_t> predictors() const { return by_role(Role::Predictor); }
  std::size_t outcome() const { return by_role(Role::Outcome).front(); }
  std::size_t indicator_for(std::size_t var) const {
    for (std::size_t k = 0; k < vars_.size(); ++k)
      if (vars_[k].role == Role::Indicator && vars_[k].indicator_of == vars_[var].name) return k;
    throw InputError("no indicator for '" + vars_[var].name + "'");
  }

  // Probability that the listed variables take the listed values.
  double prob(const std::vector<std::pair<std::size_t, int>>& event) const {
    std::vector<int> cfg;
    double s = 0.0;
    for (std::size_t c = 0; c < table_.size(); ++c) {
      if (table_[c] == 0.0) continue;
      config(c, cfg);
      bool ok = true;
      for (auto [k, v] : event) ok = ok && cfg[k] == v;
      if (ok) s += table_[c];
    }
    return s;
  }

 private:
  std::vector<std::size_t> by_role(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < vars_.size(); ++k)
      if (vars_[k].role == r) out.push_back(k);
    return out;
  }

  void validate_roles() const {
    std::set<std::string> names;
    for (const auto& v : vars_)
      if (!names.insert(v.name).second) throw InputError("duplicate variable '" + v.name + "'");
    if (by_role(Role::Outcome).size() != 1) throw InputError("joint needs exactly one outcome");
    if (by_role(Role::Predictor).empty()) throw InputError("joint needs at least one predictor");
    for (std::size_t k = 0; k < vars_.size(); ++k) {
      if (vars_[k].role == Role::Indicator) {
        if (vars_[k].domain != 2)
          throw InputError("indicator '" + vars_[k].name + "' must have domain {0,1}");
        continue;
      }
      int count = 0;
      for (const auto& v : vars_)
        if (v.role == Role::Indicator && v.indicator_of == vars_[k].name) ++count;
      if (count != 1)
        throw InputError("variable '" + vars_[k].name + "' needs exactly one indicator");
    }
    for (const auto& v : vars_)
      if (v.role == Role::Indicator &&
          std::none_of(vars_.begin(), vars_.end(), [&](const Variable& w) {
            return w.role != Role::Indicator && w.name == v.indicator_of;
          }))
        throw InputError("indicator '" + v.name + "' flags an unknown variable");
  }

  std::vector<Variable> vars_;
  std::vector<double> table_;
  std::vector<std::size_t> strides_;
};

// Assignment of values to a set of variables; A in check_ci.
using Event = std::vector<std::pair<std::string, int>>;

struct Witness {
  std::vector<std::pair<std::string, int>> b_cell;
  std::vector<std::pair<std::string, int>> c_cell;
  double p_a_given_bc = 0.0;
  double p_a_given_c = 0.0;
  double gap() const { return std::abs(p_a_given_bc - p_a_given_c); }
  std::string describe() const {
    std::ostringstream os;
    auto put = [&](const auto& cell) {
      for (std::size_t k = 0; k < cell.size(); ++k)
        os << (k ? "," : "") << cell[k].first << "=" << cell[k].second;
    };
    os << "P(A|";
    put(b_cell);
    if (!c_cell.empty()) {
      os << ";";
      put(c_cell);
    }
    os << ")=" << p_a_given_bc << " vs P(A|";
    put(c_cell);
    os << ")=" << p_a_given_c;
    return os.str();
  }
};

struct CiResult {
  bool holds = true;
  bool any_positive_cell = false;
  std::optional<Witness> witness;
};

inline constexpr double kDefaultTolerance = 1e-9;

namespace detail {

inline std::vector<std::size_t> resolve(const DiscreteJoint& j, const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  for (const auto& n : names) out.push_back(j.index_of(n));
  return out;
}

// Context-specific CI of an event given resolved indices.
inline CiResult check_ci_resolved(const DiscreteJoint& joint,
                                  const std::vector<std::pair<std::size_t, int>>& a,
                                  const std::vector<std::size_t>& b,
                                  const std::vector<std::size_t>& c, double tol) {
  struct Acc {
    double total = 0.0, with_a = 0.0;
  };
  std::map<std::vector<int>, Acc> bc, cc;
  std::vector<int> cfg;
  for (std::size_t cell = 0; cell < joint.cells(); ++cell) {
    const double m = joint.table()[cell];
    if (m == 0.0) continue;
    joint.config(cell, cfg);
    bool in_a = true;
    for (auto [k, v] : a) in_a = in_a && cfg[k] == v;
    std::vector<int> key_c, key_bc;
    for (auto k : c) key_c.push_back(cfg[k]);
    key_bc = key_c;
    for (auto k : b) key_bc.push_back(cfg[k]);
    auto& x = bc[key_bc];
    x.total += m;
    if (in_a) x.with_a += m;
    auto& y = cc[key_c];
    y.total += m;
    if (in_a) y.with_a += m;
  }
  CiResult res;
  for (const auto& [key_bc, acc] : bc) {
    if (acc.total <= 0.0) continue;
    res.any_positive_cell = true;
    const std::vector<int> key_c(key_bc.begin(), key_bc.begin() + static_cast<std::ptrdiff_t>(c.size()));
    const auto& accc = cc.at(key_c);
    const double p_bc = acc.with_a / acc.total;
    const double p_c = accc.with_a / accc.total;
    if (std::abs(p_bc - p_c) > tol) {
      Witness w;
      for (std::size_t k = 0; k < c.size(); ++k)
        w.c_cell.emplace_back(joint.variables()[c[k]].name, key_bc[k]);
      for (std::size_t k = 0; k < b.size(); ++k)
        w.b_cell.emplace_back(joint.variables()[b[k]].name, key_bc[c.size() + k]);
      w.p_a_given_bc = p_bc;
      w.p_a_given_c = p_c;
      res.holds = false;
      res.witness = w;
      return res;
    }
  }
  return res;
}

}  // namespace detail

// Event a independent of variables b given variables c, checked cell by cell
// on every (b, c) cell of positive mass.
inline CiResult check_ci(const DiscreteJoint& joint, const Event& a,
                         const std::vector<std::string>& b, const std::vector<std::string>& c,
                         double tol = kDefaultTolerance) {
  if (!(tol > 0.0)) throw InputError("check_ci: tolerance must be positive");
  std::vector<std::pair<std::size_t, int>> ra;
  for (const auto& [name, v] : a) ra.emplace_back(joint.index_of(name), v);
  return detail::check_ci_resolved(joint, ra, detail::resolve(joint, b), detail::resolve(joint, c),
                                   tol);
}

// Variable form: every value combination of `a` must satisfy the event form.
inline CiResult check_ci(const DiscreteJoint& joint, const std::vector<std::string>& a,
                         const std::vector<std::string>& b, const std::vector<std::string>& c,
                         double tol = kDefaultTolerance) {
  if (!(tol > 0.0)) throw InputError("check_ci: tolerance must be positive");
  const auto ia = detail::resolve(joint, a);
  std::size_t combos = 1;
  for (auto k : ia) combos *= static_cast<std::size_t>(joint.variables()[k].domain);
  CiResult res;
  for (std::size_t t = 0; t < combos; ++t) {
    std::vector<std::pair<std::size_t, int>> ev;
    std::size_t rem = t;
    for (auto k : ia) {
      const auto d = static_cast<std::size_t>(joint.variables()[k].domain);
      ev.emplace_back(k, static_cast<int>(rem % d));
      rem /= d;
    }
    auto r = detail::check_ci_resolved(joint, ev, detail::resolve(joint, b),
                                       detail::resolve(joint, c), tol);
    res.any_positive_cell = res.any_positive_cell || r.any_positive_cell;
    if (!r.holds) return r;
  }
  return res;
}

enum class Status { Holds, Fails, Undefined };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::Holds: return "holds";
    case Status::Fails: return "fails";
    case Status::Undefined: return "undefined";
  }
  return "undefined";
}

struct Flag {
  Status status = Status::Undefined;
  std::string witness;  // pattern and cell of the first violation
  bool holds() const { return status == Status::Holds; }
  bool fails() const { return status == Status::Fails; }
};

struct MechanismReport {
  Flag mcar, mar, marx_ym, marx_yo, nimo, nico;

  std::vector<std::pair<std::string, const Flag*>> entries() const {
    return {{"MCAR", &mcar},     {"MAR", &mar},   {"MARX-YM", &marx_ym},
            {"MARX-YO", &marx_yo}, {"NIMO", &nimo}, {"NICO", &nico}};
  }

  std::string format() const {
    std::ostringstream os;
    for (const auto& [name, f] : entries()) {
      os << name;
      for (std::size_t k = name.size(); k < 9; ++k) os << ' ';
      os << to_string(f->status);
      if (f->fails()) os << "  [" << f->witness << "]";
      os << '\n';
    }
    return os.str();
  }
};

namespace detail {

// Accumulates a conjunction of CI checks into one flag.
class FlagBuilder {
 public:
  void add(const CiResult& r, const std::string& context) {
    tested_ = true;
    if (!r.holds && flag_.status != Status::Fails) {
      flag_.status = Status::Fails;
      flag_.witness = context + ": " + r.witness->describe();
    }
  }
  Flag finish() {
    if (!tested_) return Flag{};
    if (flag_.status != Status::Fails) flag_.status = Status::Holds;
    return flag_;
  }

 private:
  bool tested_ = false;
  Flag flag_;
};

inline std::string pattern_label(const std::vector<int>& m) {
  std::string s;
  for (int b : m) s.push_back(b ? '1' : '0');
  return s;
}

}  // namespace detail

// Decides the six mechanism properties. Each is the conjunction of
// context-specific CI checks over patterns of positive probability; a property
// with no positive-probability pattern to test is reported undefined.
inline MechanismReport classify(const DiscreteJoint& joint, double tol = kDefaultTolerance) {
  const auto xs = joint.predictors();
  const auto y = joint.outcome();
  const auto my = joint.indicator_for(y);
  std::vector<std::size_t> mx;
  for (auto k : xs) mx.push_back(joint.indicator_for(k));
  const std::size_t p = xs.size();

  std::vector<std::size_t> all_values(xs);
  all_values.push_back(y);

  MechanismReport rep;

  {  // MCAR: (M_X, M_Y) independent of (X, Y)
    detail::FlagBuilder fb;
    std::vector<std::size_t> inds(mx);
    inds.push_back(my);
    for (std::size_t t = 0; t < (std::size_t{1} << inds.size()); ++t) {
      std::vector<std::pair<std::size_t, int>> ev;
      for (std::size_t k = 0; k < inds.size(); ++k) ev.emplace_back(inds[k], (t >> k) & 1);
      if (joint.prob(ev) <= 0.0) continue;
      fb.add(detail::check_ci_resolved(joint, ev, all_values, {}, tol), "MCAR");
    }
    rep.mcar = fb.finish();
  }

  detail::FlagBuilder mar_obs_y, mar_mis_y, marx_ym, marx_yo, nimo;
  bool mar_mis_y_tested = false;
  for (std::size_t t = 0; t < (std::size_t{1} << p); ++t) {
    std::vector<int> m(p);
    std::vector<std::pair<std::size_t, int>> ev_m;
    std::vector<std::size_t> x_obs, x_mis;
    for (std::size_t k = 0; k < p; ++k) {
      m[k] = static_cast<int>((t >> k) & 1);
      ev_m.emplace_back(mx[k], m[k]);
      (m[k] ? x_mis : x_obs).push_back(xs[k]);
    }
    const std::string label = "pattern " + detail::pattern_label(m);
    if (joint.prob(ev_m) > 0.0) {
      std::vector<std::size_t> xm_y(x_mis);
      xm_y.push_back(y);
      std::vector<std::size_t> xo_y(x_obs);
      xo_y.push_back(y);
      marx_ym.add(detail::check_ci_resolved(joint, ev_m, xm_y, x_obs, tol), label);
      marx_yo.add(detail::check_ci_resolved(joint, ev_m, x_mis, xo_y, tol), label);
      nimo.add(detail::check_ci_resolved(joint, ev_m, {y}, x_obs, tol), label);
    }
    auto ev0 = ev_m;
    ev0.emplace_back(my, 0);
    if (joint.prob(ev0) > 0.0) {
      std::vector<std::size_t> xo_y(x_obs);
      xo_y.push_back(y);
      mar_obs_y.add(detail::check_ci_resolved(joint, ev0, x_mis, xo_y, tol), label + ", Y observed");
    }
    auto ev1 = ev_m;
    ev1.emplace_back(my, 1);
    if (joint.prob(ev1) > 0.0) {
      std::vector<std::size_t> xm_y(x_mis);
      xm_y.push_back(y);
      mar_mis_y.add(detail::check_ci_resolved(joint, ev1, xm_y, x_obs, tol), label + ", Y missing");
      mar_mis_y_tested = true;
    }
  }
  {
    // Both clauses must be testable; a vacuous clause leaves MAR undefined.
    const Flag a = mar_obs_y.finish();
    const Flag b = mar_mis_y.finish();
    if (a.fails()) rep.mar = a;
    else if (b.fails()) rep.mar = b;
    else if (a.holds() && b.holds() && mar_mis_y_tested) rep.mar.status = Status::Holds;
    else rep.mar.status = Status::Undefined;
  }
  rep.marx_ym = marx_ym.finish();
  rep.marx_yo = marx_yo.finish();
  rep.nimo = nimo.finish();

  {  // NICO: only the fully observed pattern
    detail::FlagBuilder fb;
    std::vector<std::pair<std::size_t, int>> ev0;
    for (auto k : mx) ev0.emplace_back(k, 0);
    if (joint.prob(ev0) > 0.0)
      fb.add(detail::check_ci_resolved(joint, ev0, {y}, xs, tol), "complete pattern");
    rep.nico = fb.finish();
  }
  return rep;
}

struct Implication {
  std::string name;
  std::vector<const Flag MechanismReport::*> premises;
  const Flag MechanismReport::* conclusion;
};

inline std::vector<Implication> lattice_implications() {
  using R = MechanismReport;
  return {
      {"MCAR => MAR", {&R::mcar}, &R::mar},
      {"MCAR => MARX-YM", {&R::mcar}, &R::marx_ym},
      {"MAR => MARX-YO", {&R::mar}, &R::marx_yo},
      {"MARX-YM => MARX-YO", {&R::marx_ym}, &R::marx_yo},
      {"MARX-YM => NIMO", {&R::marx_ym}, &R::nimo},
      {"NIMO => NICO", {&R::nimo}, &R::nico},
      {"NIMO & MARX-YO => MARX-YM", {&R::nimo, &R::marx_yo}, &R::marx_ym},
  };
}

// Names of the implications a report violates: all premises hold while the
// conclusion fails. Undefined conclusions are not violations.
inline std::vector<std::string> lattice_violations(const MechanismReport& rep) {
  std::vector<std::string> out;
  for (const auto& imp : lattice_implications()) {
    const bool premised = std::all_of(imp.premises.begin(), imp.premises.end(),
                                      [&](auto f) { return (rep.*f).holds(); });
    if (premised && (rep.*imp.conclusion).fails()) out.push_back(imp.name);
  }
  return out;
}

struct LatticeReport {
  std::size_t joints = 0;
  std::size_t violations = 0;
  std::map<std::string, std::size_t> holds_count;  // how often each flag held
  std::vector<std::string> first_violations;
};

inline LatticeReport verify_lattice(const std::vector<DiscreteJoint>& joints,
                                    double tol = kDefaultTolerance) {
  if (joints.empty()) throw InputError("verify_lattice needs at least one joint");
  LatticeReport out;
  for (const auto& j : joints) {
    const auto rep = classify(j, tol);
    ++out.joints;
    for (const auto& [name, f] : rep.entries())
      if (f->holds()) ++out.holds_count[name];
    const auto v = lattice_violations(rep);
    out.violations += v.size();
    if (!v.empty() && out.first_violations.empty()) out.first_violations = v;
  }
  return out;
}

inline Variable predictor(std::string name, int domain = 2) {
  return {std::move(name), domain, Role::Predictor, {}};
}
inline Variable outcome(std::string name, int domain = 2) {
  return {std::move(name), domain, Role::Outcome, {}};
}
inline Variable indicator(const std::string& of) {
  return {indicator_name(of), 2, Role::Indicator, of};
}

// Two binary predictors, a binary outcome and their three indicators. Mostly
// structured: missingness of X1 (and sometimes X2, Y) depends on a random
// subset of parents, so every property holds on a nontrivial share of draws.
inline DiscreteJoint random_joint(Rng& rng) {
  std::vector<Variable> vars = {predictor("X1"), predictor("X2"), outcome("Y"),
                                indicator("X1"), indicator("X2"), indicator("Y")};
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  std::gamma_distribution<double> gam(1.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> kind_dist(0, 3);
  const int kind = kind_dist(rng);

  if (kind == 0) {  // unstructured Dirichlet over (X1, X2, Y, M1, MY); M2 == 0
    std::vector<double> w(32);
    double s = 0;
    for (auto& v : w) s += (v = gam(rng));
    for (auto& v : w) v /= s;
    return DiscreteJoint::from_function(vars, [&](const std::vector<int>& c) {
      if (c[4] == 1) return 0.0;
      return w[static_cast<std::size_t>(c[0] * 16 + c[1] * 8 + c[2] * 4 + c[3] * 2 + c[5])];
    });
  }

  std::vector<double> pxy(8);
  double s = 0;
  for (auto& v : pxy) s += (v = gam(rng));
  for (auto& v : pxy) v /= s;

  // A conditional Bernoulli table over a random parent subset of earlier variables.
  struct Cpt {
    std::vector<std::size_t> parents;
    std::map<std::vector<int>, double> p1;
  };
  auto make_cpt = [&](std::vector<std::size_t> candidates, bool active) {
    Cpt t;
    if (!active) return t;
    for (auto c : candidates)
      if (coin(rng)) t.parents.push_back(c);
    for (std::size_t k = 0; k < (std::size_t{1} << t.parents.size()); ++k) {
      std::vector<int> key;
      for (std::size_t b = 0; b < t.parents.size(); ++b) key.push_back(static_cast<int>((k >> b) & 1));
      t.p1[key] = unif(rng);
    }
    return t;
  };
  auto eval = [](const Cpt& t, const std::vector<int>& c) {
    if (t.p1.empty()) return 0.0;
    std::vector<int> key;
    for (auto pidx : t.parents) key.push_back(c[pidx]);
    return t.p1.at(key);
  };
  const Cpt m1 = make_cpt({0, 1, 2}, true);
  const Cpt m2 = make_cpt({0, 1, 2, 3}, kind == 3);
  const Cpt my = make_cpt({0, 1, 2, 3}, kind >= 2);
  return DiscreteJoint::from_function(vars, [&](const std::vector<int>& c) {
    double m = pxy[static_cast<std::size_t>(c[0] * 4 + c[1] * 2 + c[2])];
    const double a = eval(m1, c);
    m *= c[3] ? a : 1.0 - a;
    const double b = eval(m2, c);
    m *= c[4] ? b : 1.0 - b;
    const double d = eval(my, c);
    m *= c[5] ? d : 1.0 - d;
    return m;
  });
}

struct MarCounterexampleParams {
  double a = 0.1, b = 0.1, c = 0.3, d = 0.1, e = 0.2;
};

// Binary X and Y with Pr(M_X, M_Y | X, Y) laid out so that missingness is MAR
// while M_X depends on Y: MARX-YM, NIMO and NICO fail. b != c is what breaks
// them; with b == c the missingness of X is independent of everything.
inline DiscreteJoint mar_counterexample_joint(const MarCounterexampleParams& prm = {},
                                    const std::vector<double>& pxy = {0.25, 0.25, 0.25, 0.25}) {
  if (pxy.size() != 4) throw InputError("mar_counterexample_joint: Pr(X,Y) needs 4 cells");
  std::vector<Variable> vars = {predictor("X"), outcome("Y"), indicator("X"), indicator("Y")};
  return DiscreteJoint::from_function(vars, [&](const std::vector<int>& c) {
    const int x = c[0], y = c[1], mx = c[2], my = c[3];
    const double bx = y == 0 ? prm.b : prm.c;
    const double dx = x == 0 ? prm.d : prm.e;
    double cond = 0.0;
    if (mx == 0 && my == 0) cond = 1.0 - (prm.a + bx + dx);
    if (mx == 0 && my == 1) cond = dx;
    if (mx == 1 && my == 0) cond = bx;
    if (mx == 1 && my == 1) cond = prm.a;
    if (cond <= 0.0 || cond >= 1.0) throw InputError("mar_counterexample_joint: probabilities leave (0,1)");
    return pxy[static_cast<std::size_t>(x * 2 + y)] * cond;
  });
}

struct CcsDemonstration {
  int x1 = 1;
  double p_ccs = 0.0;  // Pr(Y=1 | X1=x1, M1=0): the CCS limit for pattern (0,1)
  double p_mu = 0.0;   // Pr(Y=1 | X1=x1)
  double p_mc = 0.0;   // Pr(Y=1 | X1=x1, M1=0, M2=1)
  double gap_mu() const { return std::abs(p_ccs - p_mu); }
  double gap_mc() const { return std::abs(p_ccs - p_mc); }
};

struct CcsCounterexample {
  DiscreteJoint joint;
  CcsDemonstration demo;
};

// Conditional probability Pr(Y=1 | fixed) by exact summation.
inline double conditional_outcome(const DiscreteJoint& j,
                                  const std::vector<std::pair<std::size_t, int>>& given) {
  auto with_y = given;
  with_y.emplace_back(j.outcome(), 1);
  const double den = j.prob(given);
  if (den <= 0.0) throw NumericError("conditioning event has zero probability");
  return j.prob(with_y) / den;
}

// Two missable binary predictors whose indicators each depend on (X1, X2).
// With `degenerate`, both indicators depend on X1 only and the CCS limit
// coincides with MU and MC.
inline CcsCounterexample ccs_counterexample(bool degenerate = false) {
  std::vector<Variable> vars = {predictor("X1"), predictor("X2"), outcome("Y"),
                                indicator("X1"), indicator("X2"), indicator("Y")};
  const double px2[2] = {0.3, 0.7};                   // Pr(X2=1 | X1)
  const double py[2][2] = {{0.1, 0.5}, {0.4, 0.9}};   // Pr(Y=1 | X1, X2)
  const double pm1[2][2] = {{0.1, 0.3}, {0.2, 0.6}};  // Pr(M1=1 | X1, X2)
  const double pm2[2][2] = {{0.2, 0.7}, {0.1, 0.6}};  // Pr(M2=1 | X1, X2)
  const double pmy = 0.2;
  auto joint = DiscreteJoint::from_function(vars, [&](const std::vector<int>& c) {
    const int x1 = c[0], x2 = c[1], y = c[2];
    const int k2 = degenerate ? 0 : x2;
    double m = 0.5 * (x2 ? px2[x1] : 1.0 - px2[x1]);
    m *= y ? py[x1][x2] : 1.0 - py[x1][x2];
    m *= c[3] ? pm1[x1][k2] : 1.0 - pm1[x1][k2];
    m *= c[4] ? pm2[x1][k2] : 1.0 - pm2[x1][k2];
    m *= c[5] ? pmy : 1.0 - pmy;
    return m;
  });
  const auto ix1 = joint.index_of("X1"), im1 = joint.index_of("M_X1"),
             im2 = joint.index_of("M_X2");
  CcsDemonstration d;
  d.x1 = 1;
  d.p_ccs = conditional_outcome(joint, {{ix1, 1}, {im1, 0}});
  d.p_mu = conditional_outcome(joint, {{ix1, 1}});
  d.p_mc = conditional_outcome(joint, {{ix1, 1}, {im1, 0}, {im2, 1}});
  return {std::move(joint), d};
}

// Reads a joint from CSV: one row per configuration, columns are variable
// values plus `prob`. Columns named M_<var> are indicators; `outcome_name`
// names the outcome; every other column is a predictor. Absent configurations
// carry zero mass.
inline DiscreteJoint load_joint_csv(std::istream& in, const std::string& outcome_name = "Y") {
  std::string line;
  if (!std::getline(in, line)) throw InputError("joint CSV is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) {
      while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
      while (!f.empty() && f.front() == ' ') f.erase(f.begin());
      out.push_back(f);
    }
    return out;
  };
  const auto header = split(line);
  std::size_t prob_col = header.size();
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == "prob") prob_col = k;
  if (prob_col == header.size()) throw InputError("joint CSV lacks a 'prob' column");

  std::vector<std::vector<int>> rows;
  std::vector<double> probs;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \r\t") == std::string::npos) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw InputError("joint CSV row has wrong field count");
    std::vector<int> r;
    for (std::size_t k = 0; k < f.size(); ++k) {
      if (k == prob_col) continue;
      try {
        r.push_back(std::stoi(f[k]));
      } catch (const std::exception&) {
        throw InputError("joint CSV value is not an integer: '" + f[k] + "'");
      }
    }
    try {
      probs.push_back(std::stod(f[prob_col]));
    } catch (const std::exception&) {
      throw InputError("joint CSV prob is not a number: '" + f[prob_col] + "'");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw InputError("joint CSV has no rows");

  std::vector<std::string> names;
  for (std::size_t k = 0; k < header.size(); ++k)
    if (k != prob_col) names.push_back(header[k]);
  std::vector<Variable> vars;
  std::vector<std::map<int, int>> code(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::set<int> levels;
    for (const auto& r : rows) levels.insert(r[k]);
    const bool is_ind = names[k].rfind("M_", 0) == 0;
    if (is_ind) {
      for (int v : levels)
        if (v != 0 && v != 1) throw InputError("indicator '" + names[k] + "' must be 0/1");
      code[k] = {{0, 0}, {1, 1}};
      vars.push_back(indicator(names[k].substr(2)));
    } else {
      int next = 0;
      for (int v : levels) code[k][v] = next++;
      const int dom = std::max(1, next);
      vars.push_back(names[k] == outcome_name ? outcome(names[k], dom) : predictor(names[k], dom));
    }
  }
  std::vector<std::size_t> strides(vars.size(), 1);
  std::size_t cells = 1;
  for (std::size_t k = vars.size(); k-- > 0;) {
    strides[k] = cells;
    cells *= static_cast<std::size_t>(vars[k].domain);
  }
  std::vector<double> table(cells, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t cell = 0;
    for (std::size_t k = 0; k < vars.size(); ++k)
      cell += strides[k] * static_cast<std::size_t>(code[k].at(rows[r][k]));
    table[cell] += probs[r];
  }
  return DiscreteJoint(std::move(vars), std::move(table));
}

}  // namespace missforecast::mechanisms
