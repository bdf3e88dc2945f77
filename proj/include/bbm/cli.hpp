#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bbm/barrier.hpp"
#include "bbm/error.hpp"
#include "bbm/hypergradient.hpp"
#include "bbm/lower_solver.hpp"
#include "bbm/outer_solver.hpp"
#include "bbm/path_following.hpp"
#include "bbm/problem.hpp"
#include "bbm/testbed.hpp"

namespace bbm::cli {

/// Raised for invalid configuration; commands map it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;
  std::string problem = "example1";
  std::optional<double> t;
  double t0 = 0.1;
  double eps = 1e-3;
  double eps0 = 1e-2;
  int rounds = 4;
  int max_outer = 100;
  std::optional<Vector> x0;
  std::uint64_t seed = 1;
  std::string out;
  std::string suite = "all";
  InnerVariant inner_variant = InnerVariant::Standard;
  bool augment_ball = false;
  BallRate ball_rate = BallRate::Conservative;
  // Family parameters.
  double ex1_x_lower = -1, ex1_x_upper = 1;
  PriceSettingDims price;
  SvmDims svm;
  SvmOptions svm_opts;
};

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for " + key + ": '" + v + "'");
  }
}

inline int parse_int(const std::string& key, const std::string& v) {
  const double d = parse_real(key, v);
  if (d != std::floor(d) || std::abs(d) > 1e9) {
    throw ConfigError("invalid integer for " + key + ": '" + v + "'");
  }
  return static_cast<int>(d);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

inline Vector parse_vector(const std::string& key, const std::string& v) {
  std::vector<double> vals;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) vals.push_back(parse_real(key, item));
  if (vals.empty()) throw ConfigError("empty vector for " + key);
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Applies one key/value setting. Keys use the flag spelling without dashes
/// (max-outer and max_outer are both accepted) or dotted family keys.
inline void apply_setting(RunConfig& c, std::string key, const std::string& v) {
  for (auto& ch : key) {
    if (ch == '-') ch = '_';
  }
  if (key == "problem") c.problem = v;
  else if (key == "t") c.t = parse_real(key, v);
  else if (key == "t0") c.t0 = parse_real(key, v);
  else if (key == "eps") c.eps = parse_real(key, v);
  else if (key == "eps0") c.eps0 = parse_real(key, v);
  else if (key == "rounds") c.rounds = parse_int(key, v);
  else if (key == "max_outer") c.max_outer = parse_int(key, v);
  else if (key == "x0") c.x0 = parse_vector(key, v);
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, v));
  else if (key == "out") c.out = v;
  else if (key == "suite") c.suite = v;
  else if (key == "inner_variant" || key == "inner.variant") {
    if (v == "standard") c.inner_variant = InnerVariant::Standard;
    else if (v == "verbatim") c.inner_variant = InnerVariant::Verbatim;
    else throw ConfigError("inner variant must be standard or verbatim");
  } else if (key == "augment_ball") c.augment_ball = parse_bool(key, v);
  else if (key == "barrier.ball_rate") {
    if (v == "conservative") c.ball_rate = BallRate::Conservative;
    else if (v == "unsquared") c.ball_rate = BallRate::Unsquared;
    else throw ConfigError("barrier.ball_rate must be conservative or unsquared");
  } else if (key == "example1.x_lower") c.ex1_x_lower = parse_real(key, v);
  else if (key == "example1.x_upper") c.ex1_x_upper = parse_real(key, v);
  else if (key == "price.n_tax") c.price.n_tax = parse_int(key, v);
  else if (key == "price.n_free") c.price.n_free = parse_int(key, v);
  else if (key == "price.n_demand") c.price.n_demand = parse_int(key, v);
  else if (key == "svm.n_train") c.svm.n_train = parse_int(key, v);
  else if (key == "svm.n_val") c.svm.n_val = parse_int(key, v);
  else if (key == "svm.dim") c.svm.dim = parse_int(key, v);
  else if (key == "svm.mu0") c.svm_opts.mu0 = parse_real(key, v);
  else if (key == "svm.c_lower") c.svm_opts.c_lower = parse_real(key, v);
  else if (key == "svm.c_upper") c.svm_opts.c_upper = parse_real(key, v);
  else throw ConfigError("unknown configuration key: " + key);
}

/// Reads `key = value` lines; `#` starts a comment and `[section]` prefixes
/// the following keys with `section.`.
inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    apply_setting(c, key, trim(line.substr(eq + 1)));
  }
}

inline const std::vector<std::string>& problem_names() {
  static const std::vector<std::string> names{"example1", "price_setting", "svm", "toy_qp"};
  return names;
}

/// Example 1 with a deliberately wrong grad_y g, for negative controls.
inline BilevelProblem corrupted_example1(const ExampleOneOptions& o = {}) {
  BilevelProblem p = example1_problem(o);
  p.name = "example1_corrupted";
  p.oracles.grad_g_y = [](const Vector& x, const Vector&) {
    Vector v(2);
    v << x[0] + 0.5, 1;
    return v;
  };
  return p;
}

inline BilevelProblem make_problem(const RunConfig& c, const std::string& name) {
  BilevelProblem p;
  ExampleOneOptions e1;
  e1.x_lower = c.ex1_x_lower;
  e1.x_upper = c.ex1_x_upper;
  if (name == "example1") p = example1_problem(e1);
  else if (name == "example1_corrupted") p = corrupted_example1(e1);
  else if (name == "price_setting") p = price_setting_problem(c.price, c.seed);
  else if (name == "svm") p = svm_problem(c.svm, c.seed, c.svm_opts);
  else if (name == "toy_qp") p = toy_qp_problem();
  else throw ConfigError("unknown problem: '" + name + "'");
  return c.augment_ball ? augment_with_norm_ball(std::move(p)) : p;
}

/// Resolves --problem: a built-in name, or a config file whose `problem`
/// key names the family.
inline BilevelProblem make_problem(RunConfig& c) {
  if (c.problem.empty()) throw ConfigError("unknown problem: no problem given");
  std::error_code ec;
  if (std::filesystem::is_regular_file(c.problem, ec)) {
    const std::string path = c.problem;
    c.problem.clear();
    load_config_file(c, path);
    if (c.problem.empty() || std::filesystem::is_regular_file(c.problem, ec)) {
      throw ConfigError("unknown problem: config file " + path + " names no family");
    }
  }
  return make_problem(c, c.problem);
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline const char* kTraceHeader =
    "s,t,d_s,m_s,eta_s,grad_norm,stationarity,phi_tilde,inner_iters,wall_ms";

inline void write_trace(std::ostream& os, const OuterTrace& trace) {
  os << kTraceHeader << '\n';
  for (const auto& r : trace.rows) {
    os << r.s << ',' << fmt(r.t) << ',' << fmt(r.d_s) << ',' << fmt(r.m_s) << ','
       << fmt(r.eta_s) << ',' << fmt(r.grad_norm) << ',' << fmt(r.stationarity) << ','
       << fmt(r.phi_tilde) << ',' << r.inner_iters << ',' << fmt(r.wall_ms) << '\n';
  }
}

inline void write_rounds(std::ostream& os, const PathTrace& trace) {
  os << "i,t_i,eps_i,best_stationarity,status\n";
  for (const auto& r : trace.rounds) {
    os << r.i << ',' << fmt(r.t) << ',' << fmt(r.eps) << ','
       << fmt(r.result.best_stationarity) << ',' << to_string(r.result.status) << '\n';
  }
}

inline int exit_code(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return 0;
    case RunStatus::BudgetExhausted: return 2;
    case RunStatus::Failed: return 1;
  }
  return 1;
}

namespace detail {

inline Vector start_point(const RunConfig& c, const BilevelProblem& p) {
  if (!c.x0) return p.upper_set.center();
  if (c.x0->size() != p.n) {
    throw ConfigError("x0 has " + std::to_string(c.x0->size()) + " entries, problem needs " +
                      std::to_string(p.n));
  }
  if (!p.upper_set.contains(*c.x0)) throw ConfigError("x0 lies outside the upper set");
  return *c.x0;
}

inline double check_t(double t, const BilevelProblem& p, const char* what) {
  if (!(t > 0) || t > p.constants.T) {
    throw ConfigError(std::string(what) + " must lie in (0, " + fmt(p.constants.T) +
                      "] for " + p.name);
  }
  return t;
}

inline OuterOptions outer_options(const RunConfig& c) {
  OuterOptions o;
  o.lower.variant = c.inner_variant;
  return o;
}

/// Opens --out, or returns stdout when no path is given.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw ConfigError("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace detail

/// Runs the outer solver once and writes the trace CSV.
inline int cmd_solve(RunConfig c, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const BilevelProblem p = make_problem(c);
    const double t = detail::check_t(c.t.value_or(std::min(0.1, p.constants.T)), p, "t");
    if (!(c.eps > 0)) throw ConfigError("eps must be positive");
    if (c.max_outer < 0) throw ConfigError("max-outer must be nonnegative");
    const Vector x0 = detail::start_point(c, p);
    const auto start = std::chrono::steady_clock::now();
    BarrierContext ctx(p, t, c.ball_rate);
    const RunResult r = run_bfbm(ctx, x0, c.eps, c.max_outer, detail::outer_options(c));
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    detail::Output out(c.out);
    write_trace(out.stream(), r.trace);
    err << "problem " << p.name << ": status " << to_string(r.status) << ", best stationarity "
        << fmt(r.best_stationarity) << ", iterations " << r.trace.rows.size() << ", wall "
        << fmt(std::round(ms)) << " ms\n";
    if (r.status == RunStatus::Failed) err << "reason: " << r.failure_reason << '\n';
    return exit_code(r.status);
  });
}

/// Runs path following; writes the round CSV and one trace CSV per round
/// next to it (`<out>.round<i>.csv`).
inline int cmd_pathfollow(RunConfig c, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const BilevelProblem p = make_problem(c);
    const double t0 = detail::check_t(c.t.value_or(c.t0), p, "t0");
    if (!(c.eps0 > 0)) throw ConfigError("eps0 must be positive");
    if (c.rounds < 1) throw ConfigError("rounds must be >= 1");
    if (c.max_outer < 0) throw ConfigError("max-outer must be nonnegative");
    const Vector x0 = detail::start_point(c, p);
    const auto start = std::chrono::steady_clock::now();
    const PathTrace tr = run_pathfollow(p, x0, t0, c.eps0, c.rounds, c.max_outer,
                                        detail::outer_options(c), c.ball_rate);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    detail::Output out(c.out);
    write_rounds(out.stream(), tr);
    if (!c.out.empty()) {
      for (const auto& r : tr.rounds) {
        std::ofstream f(c.out + ".round" + std::to_string(r.i) + ".csv");
        write_trace(f, r.result.trace);
      }
    }
    const auto& last = tr.rounds.back();
    err << "problem " << p.name << ": " << tr.rounds.size() << " rounds, final status "
        << to_string(tr.status) << ", final best stationarity "
        << fmt(last.result.best_stationarity) << " (eps " << fmt(last.eps) << "), wall "
        << fmt(std::round(ms)) << " ms\n";
    if (tr.status == RunStatus::Failed) err << "reason: " << last.result.failure_reason << '\n';
    return exit_code(tr.status);
  });
}

// ---------------------------------------------------------------------------
// Verification suites
// ---------------------------------------------------------------------------

struct SuiteReport {
  std::string suite;
  std::string problem;
  int checks = 0;
  int passes = 0;
  /// Smallest (allowed - observed) over all checks; negative means a failure.
  double worst_slack = std::numeric_limits<double>::infinity();
  std::vector<std::string> notes;

  void record(double allowed, double observed) {
    ++checks;
    const double slack = allowed - observed;
    if (slack >= 0) ++passes;
    worst_slack = std::min(worst_slack, std::isnan(slack) ? -std::numeric_limits<double>::infinity()
                                                          : slack);
  }
  bool ok() const { return checks == passes; }
};

namespace detail {

inline std::vector<std::pair<Vector, double>> sample_points(const BilevelProblem& p,
                                                            int count, double t_lo,
                                                            double t_hi,
                                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Box hull = p.upper_set.hull();
  std::vector<std::pair<Vector, double>> out;
  while (static_cast<int>(out.size()) < count) {
    Vector x(p.n);
    for (int i = 0; i < p.n; ++i) {
      x[i] = hull.lower[i] + unit(rng) * (hull.upper[i] - hull.lower[i]);
    }
    if (!p.upper_set.contains(x)) continue;
    const double t = t_lo * std::pow(t_hi / t_lo, unit(rng));
    out.emplace_back(std::move(x), t);
  }
  return out;
}

/// Barrier parameters each family can be solved at within the inner budget.
/// Tight inner accuracy (finite differences) costs a larger budget, which the
/// badly conditioned SVM instance only affords in the upper half.
inline std::pair<double, double> t_range(const BilevelProblem& p, bool tight = false) {
  const double T = p.constants.T;
  if (p.setting == Setting::LinearLP && p.name.rfind("price_setting", 0) == 0) {
    return {0.5 * T, T};
  }
  if (tight && p.name.rfind("svm", 0) == 0) return {0.5 * T, T};
  return {0.125 * T, T};
}

inline OracleMode exact_mode(const BilevelProblem& p) {
  if (p.setting == Setting::LinearLP) return VertexMode{};
  return ActiveSetMode{};
}

}  // namespace detail

inline SuiteReport suite_derivatives(const BilevelProblem& p, std::uint64_t seed) {
  SuiteReport r{"derivatives", p.name};
  const ConsistencyReport rep = check_derivative_consistency(p, 20, 1e-4, seed);
  for (const auto& e : rep.entries) {
    r.record(e.threshold, e.max_rel_error);
    if (e.flagged) r.notes.push_back("flagged " + e.name);
  }
  for (const auto& c : check_constants(p, 100, seed + 1)) {
    r.record(c.registered * (1 + 1e-9) + 1e-12, c.observed);
    if (!c.ok()) r.notes.push_back("constant " + c.name + " exceeded");
  }
  return r;
}

inline SuiteReport suite_margin(const BilevelProblem& p, std::uint64_t seed, int count = 8) {
  SuiteReport r{"margin", p.name};
  const auto [lo, hi] = detail::t_range(p);
  for (const auto& [x, t] : detail::sample_points(p, count, lo, hi, seed)) {
    BarrierContext ctx(p, t);
    const LowerSolution sol = solve_lower(ctx, x, 1e-6);
    r.record(-sol.m_s + 1e-9, eval_constraints(p, x, sol.y_tilde).maxCoeff());
    const Vector y_ref = barrier_minimizer_newton(ctx, x);
    r.record(-sol.m_s + 1e-9, eval_constraints(p, x, y_ref).maxCoeff());
  }
  return r;
}

inline SuiteReport suite_gap(const BilevelProblem& p, std::uint64_t seed, int count = 8) {
  SuiteReport r{"gap", p.name};
  const auto [lo, hi] = detail::t_range(p);
  for (const auto& [x, t] : detail::sample_points(p, count, lo, hi, seed)) {
    BarrierContext ctx(p, t);
    const double eps_s = 1e-6;
    const LowerSolution sol = solve_lower(ctx, x, eps_s);
    const KktCertificate cert = brute_force_lower(p, x, detail::exact_mode(p));
    r.record(p.k * t + 10 * eps_s * p.constants.L_g,
             p.oracles.g(x, sol.y_tilde) - cert.g_value);
  }
  return r;
}

inline SuiteReport suite_hypergrad(const BilevelProblem& p, std::uint64_t seed, int count = 3) {
  SuiteReport r{"hypergrad", p.name};
  const double step = 1e-4;
  const auto [lo, hi] = detail::t_range(p, true);
  // Keep the difference stencil inside X.
  BilevelProblem inner = p;
  if (p.upper_set.is_box()) {
    const Box b = p.upper_set.as_box();
    inner.upper_set = UpperSet::box(b.lower.array() + 2 * step, b.upper.array() - 2 * step);
  }
  for (const auto& [x, t] : detail::sample_points(inner, count, lo, hi, seed)) {
    BarrierContext ctx(p, t);
    const LowerSolution sol = solve_lower(ctx, x, 1e-12);
    const HypergradResult hg = approx_hypergradient(ctx, x, sol);
    const Vector fd = fd_hyperfunction_grad(ctx, x, step, 1e-12);
    const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    r.record(hg.error_bound + 100 * step * step * scale, (hg.grad - fd).norm());
  }
  return r;
}

inline SuiteReport suite_value_bound(const BilevelProblem& p, std::uint64_t seed,
                                     int count = 3) {
  SuiteReport r{"value-bound", p.name};
  const auto [lo, hi] = detail::t_range(p);
  const auto& c = p.constants;
  for (const auto& [x, t] : detail::sample_points(p, count, lo, hi, seed)) {
    BarrierContext ctx(p, t);
    const double eps_s = 1e-6;
    const LowerSolution sol = solve_lower(ctx, x, eps_s);
    const double gap = std::abs(p.oracles.f(x, sol.y_tilde) - brute_force_hyperfunction(p, x));
    double bound = 0;
    if (p.setting == Setting::StronglyConvex) {
      bound = c.L_f * std::sqrt(2 * c.k * t / c.mu_g);
    } else {
      double tau = 0;
      try {
        tau = estimate_tau(p, x);
      } catch (const Error&) {
        r.notes.push_back("skipped a point with a non-unique lower optimum");
        continue;
      }
      const KktCertificate cert = brute_force_lower(p, x, VertexMode{});
      bound = c.L_f * c.k * t / (tau * p.oracles.grad_g_y(x, cert.y_star).norm());
    }
    r.record(bound + c.L_f * eps_s, gap);
  }
  return r;
}

/// max_i |t / (-h_i(x, y)) - lambda_i|.
inline double multiplier_gap(const BilevelProblem& p, const Vector& x, const Vector& y,
                             double t, const Vector& lambdas) {
  const Vector h = eval_constraints(p, x, y);
  return (t / (-h.array()) - lambdas.array()).abs().maxCoeff();
}

/// Multiplier gaps along t, t/2, t/4, t/8, t/16 at a probe point.
inline std::vector<double> multiplier_gaps(const BilevelProblem& p, const Vector& x,
                                           double t0, int halvings = 4) {
  const KktCertificate cert = brute_force_lower(p, x, detail::exact_mode(p));
  std::vector<double> gaps;
  std::optional<Vector> warm;
  double t = t0;
  for (int i = 0; i <= halvings; ++i, t *= 0.5) {
    BarrierContext ctx(p, t);
    const LowerSolution sol = solve_lower(ctx, x, 1e-8, warm);
    warm = sol.y_tilde;
    gaps.push_back(multiplier_gap(p, x, sol.y_tilde, t, cert.lambdas));
  }
  return gaps;
}

inline SuiteReport suite_multipliers(const BilevelProblem& p) {
  SuiteReport r{"multipliers", p.name};
  std::vector<std::pair<Vector, double>> probes;
  const std::string& n = p.name;
  if (n.rfind("example1", 0) == 0) probes.emplace_back(Vector::Constant(1, 0.5), 0.1);
  else if (n.rfind("toy_qp", 0) == 0) {
    probes.emplace_back(Vector::Constant(1, -0.5), 0.1);
    probes.emplace_back(Vector::Constant(1, 1.0), 0.1);
  } else if (n.rfind("svm", 0) == 0) {
    probes.emplace_back(p.upper_set.center(), 0.1);
  } else {
    r.notes.push_back("no probe registered for this family");
    return r;
  }
  for (const auto& [x, t0] : probes) {
    const auto gaps = multiplier_gaps(p, x, std::min(t0, p.constants.T));
    for (std::size_t i = 1; i < gaps.size(); ++i) r.record(1.1 * gaps[i - 1], gaps[i]);
    r.record(0.05, gaps.back());
  }
  return r;
}

inline nlohmann::json to_json(const SuiteReport& r) {
  nlohmann::json j;
  j["suite"] = r.suite;
  j["problem"] = r.problem;
  j["checks"] = r.checks;
  j["passes"] = r.passes;
  j["worst_slack"] = std::isfinite(r.worst_slack) ? nlohmann::json(r.worst_slack)
                                                  : nlohmann::json(nullptr);
  if (!r.notes.empty()) j["notes"] = r.notes;
  return j;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"derivatives", "margin",      "gap",
                                              "hypergrad",   "value-bound", "multipliers"};
  return names;
}

inline SuiteReport run_suite(const std::string& suite, const BilevelProblem& p,
                             std::uint64_t seed) {
  if (suite == "derivatives") return suite_derivatives(p, seed);
  if (suite == "margin") return suite_margin(p, seed);
  if (suite == "gap") return suite_gap(p, seed);
  if (suite == "hypergrad") return suite_hypergrad(p, seed);
  if (suite == "value-bound") return suite_value_bound(p, seed);
  if (suite == "multipliers") return suite_multipliers(p);
  throw ConfigError("unknown suite: " + suite);
}

/// Runs verification suites and writes a JSON report; exit 0 iff every
/// check passes.
inline int cmd_verify(RunConfig c, std::ostream& err = std::cerr,
                      bool problem_given = true) {
  return detail::guarded(err, [&] {
    std::vector<std::string> suites;
    if (c.suite == "all") {
      suites = suite_names();
    } else if (std::find(suite_names().begin(), suite_names().end(), c.suite) !=
               suite_names().end()) {
      suites = {c.suite};
    } else {
      throw ConfigError("unknown suite: " + c.suite);
    }
    std::vector<BilevelProblem> problems;
    if (problem_given) {
      problems.push_back(make_problem(c));
    } else {
      for (const auto& n : problem_names()) problems.push_back(make_problem(c, n));
    }
    nlohmann::json report = nlohmann::json::array();
    bool all_ok = true;
    for (const auto& s : suites) {
      for (const auto& p : problems) {
        SuiteReport r;
        try {
          r = run_suite(s, p, c.seed);
        } catch (const Error& e) {
          r = SuiteReport{s, p.name};
          r.checks = 1;
          r.worst_slack = -std::numeric_limits<double>::infinity();
          r.notes.push_back(e.what());
        }
        all_ok = all_ok && r.ok();
        report.push_back(to_json(r));
        err << s << " [" << p.name << "]: " << r.passes << "/" << r.checks << " passed\n";
      }
    }
    nlohmann::json doc;
    doc["suites"] = report;
    doc["passed"] = all_ok;
    detail::Output out(c.out);
    out.stream() << doc.dump(2) << '\n';
    return all_ok ? 0 : 1;
  });
}

/// Central differences of the brute-force hyperfunction.
inline Vector fd_true_hypergradient(const BilevelProblem& p, const Vector& x,
                                    double step = 1e-4) {
  Vector g(p.n);
  for (int i = 0; i < p.n; ++i) {
    Vector xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (brute_force_hyperfunction(p, xp) - brute_force_hyperfunction(p, xm)) / (2 * step);
  }
  return g;
}

struct SweepRow {
  double t = 0;
  Vector x_probe;
  double value_gap = 0;
  double value_bound = 0;
  double hypergrad_gap = 0;
  double multiplier_gap = 0;
};

inline std::vector<SweepRow> sweep_t(const BilevelProblem& p, const Vector& x, double t0,
                                     int points) {
  std::vector<SweepRow> rows;
  const auto& c = p.constants;
  const double phi = brute_force_hyperfunction(p, x);
  const Vector true_grad = fd_true_hypergradient(p, x);
  std::optional<KktCertificate> cert;
  try {
    const KktCertificate k = brute_force_lower(p, x, detail::exact_mode(p));
    if (k.optimal_set.size() == 1) cert = k;
  } catch (const Error&) {
  }
  double tau = std::numeric_limits<double>::quiet_NaN();
  if (p.setting == Setting::LinearLP) {
    try {
      tau = estimate_tau(p, x);
    } catch (const Error&) {
    }
  }
  std::optional<Vector> warm;
  double t = t0;
  for (int i = 0; i < points; ++i, t *= 0.5) {
    BarrierContext ctx(p, t);
    const LowerSolution sol = solve_lower(ctx, x, 1e-8, warm);
    warm = sol.y_tilde;
    SweepRow row;
    row.t = t;
    row.x_probe = x;
    row.value_gap = std::abs(p.oracles.f(x, sol.y_tilde) - phi);
    if (p.setting == Setting::StronglyConvex) {
      row.value_bound = c.L_f * std::sqrt(2 * c.k * t / c.mu_g);
    } else if (cert && std::isfinite(tau)) {
      row.value_bound = c.L_f * c.k * t / (tau * p.oracles.grad_g_y(x, cert->y_star).norm());
    } else {
      row.value_bound = std::numeric_limits<double>::quiet_NaN();
    }
    row.hypergrad_gap = (approx_hypergradient(ctx, x, sol).grad - true_grad).norm();
    row.multiplier_gap = cert ? multiplier_gap(p, x, sol.y_tilde, t, cert->lambdas)
                              : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_sweep(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "t,x_probe,value_gap,value_bound,hypergrad_gap,multiplier_gap\n";
  for (const auto& r : rows) {
    std::string xs;
    for (Eigen::Index i = 0; i < r.x_probe.size(); ++i) {
      xs += (i ? ";" : "") + fmt(r.x_probe[i]);
    }
    os << fmt(r.t) << ',' << xs << ',' << fmt(r.value_gap) << ',' << fmt(r.value_bound)
       << ',' << fmt(r.hypergrad_gap) << ',' << fmt(r.multiplier_gap) << '\n';
  }
}

/// Sweeps t over t0, t0/2, ... (rounds points) at the probe x0.
inline int cmd_sweep_t(RunConfig c, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const BilevelProblem p = make_problem(c);
    const double t0 = detail::check_t(c.t.value_or(c.t0), p, "t0");
    if (c.rounds < 1) throw ConfigError("rounds must be >= 1");
    const Vector x = detail::start_point(c, p);
    const auto rows = sweep_t(p, x, t0, c.rounds);
    detail::Output out(c.out);
    write_sweep(out.stream(), rows);
    err << "problem " << p.name << ": " << rows.size() << " sweep rows\n";
    return 0;
  });
}

inline int run_command(RunConfig c, std::ostream& err = std::cerr, bool problem_given = true) {
  if (c.command == "solve") return cmd_solve(std::move(c), err);
  if (c.command == "pathfollow") return cmd_pathfollow(std::move(c), err);
  if (c.command == "verify") return cmd_verify(std::move(c), err, problem_given);
  if (c.command == "sweep-t") return cmd_sweep_t(std::move(c), err);
  err << "error: unknown command '" << c.command << "'\n";
  return 1;
}

}  // namespace bbm::cli
