#include "sparsedyn/pipeline.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <json.hpp>
#include <sstream>

#include "sparsedyn/errors.hpp"
#include "sparsedyn/io.hpp"

namespace sparsedyn {

namespace fs = std::filesystem;

std::string version_string() { return "0.1.0"; }

ExperimentConfig default_config(SystemName system) {
  ExperimentConfig c;
  c.system = system;
  switch (system) {
    case SystemName::lorenz63:
      c.degree = 3;
      c.predict_until = 10.0;
      break;
    case SystemName::duffing:
    case SystemName::vanderpol:
      c.degree = 4;
      break;
    case SystemName::springmass:
      c.degree = 2;
      c.noise_levels = {1e-3};
      c.constraint_handling = ConstraintHandling::detect_and_reduce;
      c.constraint.strategy = DropStrategy::drop_highest_degree;
      break;
    case SystemName::euler_rigid:
      c.degree = 3;
      c.t_a = 0.5;
      c.t_b = 10.5;
      c.noise_levels = {1e-3};
      c.constraint_handling = ConstraintHandling::detect_and_reduce;
      c.constraint.known_rank = 12;
      c.constraint.strategy = DropStrategy::drop_dependent_set;
      break;
  }
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCategory::configuration, key + ": expected a number, got '" + v + "'");
}

long long to_integer(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCategory::configuration, key + ": expected an integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCategory::configuration, key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.system", [](auto&, auto&, auto&) {}},
      {"experiment.degree", [](auto& c, auto& k, auto& v) { c.degree = static_cast<int>(to_integer(k, v)); }},
      {"experiment.t_a", [](auto& c, auto& k, auto& v) { c.t_a = to_double(k, v); }},
      {"experiment.t_b", [](auto& c, auto& k, auto& v) { c.t_b = to_double(k, v); }},
      {"experiment.dt", [](auto& c, auto& k, auto& v) { c.dt = to_double(k, v); }},
      {"experiment.t_end", [](auto& c, auto& k, auto& v) { c.t_end = to_double(k, v); }},
      {"experiment.dt_internal", [](auto& c, auto& k, auto& v) { c.dt_internal = to_double(k, v); }},
      {"experiment.noise_levels",
       [](auto& c, auto& k, auto& v) {
         c.noise_levels.clear();
         for (const auto& s : to_list(v)) c.noise_levels.push_back(to_double(k, s));
       }},
      {"experiment.seed",
       [](auto& c, auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_integer(k, v)); }},
      {"experiment.exact_derivatives", [](auto& c, auto& k, auto& v) { c.exact_derivatives = to_bool(k, v); }},
      {"experiment.snr_convention",
       [](auto& c, auto& k, auto& v) {
         if (v == "mean_power") c.snr = SnrConvention::mean_power;
         else if (v == "total_energy") c.snr = SnrConvention::total_energy;
         else throw Error(ErrorCategory::configuration, k + ": expected mean_power or total_energy");
       }},
      {"experiment.predict_until", [](auto& c, auto& k, auto& v) { c.predict_until = to_double(k, v); }},
      {"experiment.divergence_fraction",
       [](auto& c, auto& k, auto& v) { c.divergence_fraction = to_double(k, v); }},
      {"experiment.pareto_points",
       [](auto& c, auto& k, auto& v) { c.pareto_points = static_cast<int>(to_integer(k, v)); }},
      {"experiment.output_dir", [](auto& c, auto&, auto& v) { c.output_dir = v; }},
      {"lambda.strategy",
       [](auto& c, auto& k, auto& v) {
         if (v == "pareto_corner") c.lambda.kind = LambdaStrategyKind::pareto_corner;
         else if (v == "cv") c.lambda.kind = LambdaStrategyKind::cv;
         else if (v == "fixed") c.lambda.kind = LambdaStrategyKind::fixed;
         else throw Error(ErrorCategory::configuration, k + ": expected pareto_corner, cv or fixed");
       }},
      {"lambda.fixed", [](auto& c, auto& k, auto& v) { c.lambda.fixed_lambda = to_double(k, v); }},
      {"lambda.cv_folds",
       [](auto& c, auto& k, auto& v) { c.lambda.cv_folds = static_cast<int>(to_integer(k, v)); }},
      {"lambda.cv_grid_points",
       [](auto& c, auto& k, auto& v) { c.lambda.cv_grid_points = static_cast<int>(to_integer(k, v)); }},
      {"solver.q", [](auto& c, auto& k, auto& v) { c.solver.q = to_double(k, v); }},
      {"solver.eps", [](auto& c, auto& k, auto& v) { c.solver.eps = to_double(k, v); }},
      {"solver.k_max", [](auto& c, auto& k, auto& v) { c.solver.k_max = static_cast<int>(to_integer(k, v)); }},
      {"solver.opt_tol", [](auto& c, auto& k, auto& v) { c.solver.opt_tol = to_double(k, v); }},
      {"solver.conv_tol", [](auto& c, auto& k, auto& v) { c.solver.conv_tol = to_double(k, v); }},
      {"solver.max_inner_iterations",
       [](auto& c, auto& k, auto& v) { c.solver.max_inner_iterations = to_integer(k, v); }},
      {"solver.polish_every",
       [](auto& c, auto& k, auto& v) { c.solver.polish_every = static_cast<int>(to_integer(k, v)); }},
      {"solver.normalize_columns",
       [](auto& c, auto& k, auto& v) { c.solver.normalize_columns = to_bool(k, v); }},
      {"solver.lambda_lo_fraction",
       [](auto& c, auto& k, auto& v) { c.solver.lambda_lo_fraction = to_double(k, v); }},
      {"solver.corner_tol", [](auto& c, auto& k, auto& v) { c.solver.corner_tol = to_double(k, v); }},
      {"solver.discrepancy_factor",
       [](auto& c, auto& k, auto& v) { c.solver.discrepancy_factor = to_double(k, v); }},
      {"solver.support_threshold",
       [](auto& c, auto& k, auto& v) { c.solver.support_threshold = to_double(k, v); }},
      {"differentiation.alpha_min", [](auto& c, auto& k, auto& v) { c.diff.alpha_range.first = to_double(k, v); }},
      {"differentiation.alpha_max", [](auto& c, auto& k, auto& v) { c.diff.alpha_range.second = to_double(k, v); }},
      {"differentiation.tol", [](auto& c, auto& k, auto& v) { c.diff.tol = to_double(k, v); }},
      {"differentiation.extension", [](auto& c, auto& k, auto& v) { c.diff.extension = to_double(k, v); }},
      {"differentiation.midpoint_rule",
       [](auto& c, auto& k, auto& v) {
         if (v == "cubic") c.diff.midpoint_rule = MidpointRule::cubic;
         else if (v == "average") c.diff.midpoint_rule = MidpointRule::average;
         else throw Error(ErrorCategory::configuration, k + ": expected cubic or average");
       }},
      {"constraints.handling",
       [](auto& c, auto& k, auto& v) {
         if (v == "off") c.constraint_handling = ConstraintHandling::off;
         else if (v == "detect") c.constraint_handling = ConstraintHandling::detect;
         else if (v == "detect_and_reduce") c.constraint_handling = ConstraintHandling::detect_and_reduce;
         else throw Error(ErrorCategory::configuration, k + ": expected off, detect or detect_and_reduce");
       }},
      {"constraints.gap_factor", [](auto& c, auto& k, auto& v) { c.constraint.gap_factor = to_double(k, v); }},
      {"constraints.known_rank",
       [](auto& c, auto& k, auto& v) {
         if (v == "none" || v.empty()) c.constraint.known_rank.reset();
         else c.constraint.known_rank = static_cast<int>(to_integer(k, v));
       }},
      {"constraints.tau", [](auto& c, auto& k, auto& v) { c.constraint.tau = to_double(k, v); }},
      {"constraints.drop_columns",
       [](auto& c, auto& k, auto& v) {
         c.constraint.drop_columns.clear();
         if (v == "none") return;
         for (const auto& s : to_list(v)) {
           const long long i = to_integer(k, s);
           if (i < 1) throw Error(ErrorCategory::configuration, k + ": indices are 1-based");
           c.constraint.drop_columns.push_back(static_cast<int>(i - 1));
         }
       }},
      {"constraints.strategy",
       [](auto& c, auto&, auto& v) { c.constraint.strategy = parse_drop_strategy(v); }},
      {"baselines.run",
       [](auto& c, auto& k, auto& v) {
         c.baselines.clear();
         for (const auto& b : to_list(v)) {
           if (b != "stls_cv" && b != "stls_pareto")
             throw Error(ErrorCategory::configuration, k + ": unknown baseline '" + b + "'");
           c.baselines.push_back(b);
         }
       }},
      {"baselines.grid_points",
       [](auto& c, auto& k, auto& v) { c.baseline_grid_points = static_cast<int>(to_integer(k, v)); }},
  };
  return table;
}

void validate(const ExperimentConfig& c) {
  auto bad = [](const std::string& m) { throw Error(ErrorCategory::configuration, m); };
  if (c.degree < 1) bad("degree must be at least 1");
  if (!(c.dt > 0)) bad("dt must be positive");
  if (!(c.t_b > c.t_a) || c.t_a < 0) bad("training span must satisfy 0 <= t_a < t_b");
  if (c.noise_levels.empty()) bad("at least one noise level is required");
  for (double s : c.noise_levels)
    if (!(s >= 0)) bad("noise levels must be non-negative");
  if (!(c.diff.extension >= 0)) bad("extension must be non-negative");
  const double ext = c.diff.extension * (c.t_b - c.t_a);
  if (c.t_a - ext < -1e-12) bad("training span plus extension starts before t = 0");
  if (c.t_end > 0 && c.t_end + 1e-12 < c.t_b + ext)
    bad("simulated span does not cover the training span plus the extension");
  if (c.baseline_grid_points < 3) bad("baseline grid needs at least 3 points");
  if (c.pareto_points < 0) bad("pareto_points must be non-negative");
  if (!(c.divergence_fraction > 0)) bad("divergence_fraction must be positive");
  if (!(c.solver.q > 0) || !(c.solver.eps > 0)) bad("q and eps must be positive");
  if (c.solver.k_max < 0) bad("k_max must be non-negative");
  if (c.solver.polish_every < 1 || c.solver.max_inner_iterations < 1)
    bad("polish_every and max_inner_iterations must be positive");
  if (!(c.solver.lambda_lo_fraction > 0 && c.solver.lambda_lo_fraction < 1))
    bad("lambda_lo_fraction must lie in (0, 1)");
  if (!(c.solver.corner_tol > 0)) bad("corner_tol must be positive");
  if (!(c.solver.discrepancy_factor >= 0)) bad("discrepancy_factor must be non-negative");
  if (c.constraint.tau < 0) bad("tau must be non-negative");
  if (!(c.constraint.gap_factor > 1)) bad("gap_factor must exceed 1");
  if (!c.constraint.drop_columns.empty()) {
    std::vector<int> d = c.constraint.drop_columns;
    std::sort(d.begin(), d.end());
    const int p = make_benchmark(c.system, c.degree).basis.p();
    if (std::adjacent_find(d.begin(), d.end()) != d.end() || d.back() >= p)
      bad("drop_columns must list distinct indices of the basis");
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCategory::configuration, std::string("malformed configuration: ") + e.what());
  }
  ExperimentConfig cfg;
  if (auto sys = tree.get_optional<std::string>("experiment.system"))
    cfg = default_config(parse_system_name(trim(*sys)));
  for (const auto& [section, body] : tree) {
    if (section == "run") continue;
    if (body.empty() && !body.data().empty())
      throw Error(ErrorCategory::configuration, "key '" + section + "' must be inside a section");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      const auto it = setters().find(full);
      if (it == setters().end()) throw Error(ErrorCategory::configuration, "unknown configuration key '" + full + "'");
      it->second(cfg, full, trim(node.data()));
    }
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::io, "cannot open configuration " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  auto d = [](double v) {
    if (!std::isfinite(v)) return format_double(v);
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  };
  os << "[experiment]\n"
     << "system = " << to_string(c.system) << "\n"
     << "degree = " << c.degree << "\n"
     << "t_a = " << d(c.t_a) << "\n"
     << "t_b = " << d(c.t_b) << "\n"
     << "dt = " << d(c.dt) << "\n"
     << "t_end = " << d(c.t_end) << "\n"
     << "dt_internal = " << d(c.dt_internal) << "\n"
     << "noise_levels = ";
  for (size_t i = 0; i < c.noise_levels.size(); ++i) os << (i ? ", " : "") << d(c.noise_levels[i]);
  os << "\nseed = " << c.seed << "\n"
     << "exact_derivatives = " << (c.exact_derivatives ? "true" : "false") << "\n"
     << "snr_convention = " << (c.snr == SnrConvention::mean_power ? "mean_power" : "total_energy") << "\n"
     << "predict_until = " << d(c.predict_until) << "\n"
     << "divergence_fraction = " << d(c.divergence_fraction) << "\n"
     << "pareto_points = " << c.pareto_points << "\n"
     << "output_dir = " << c.output_dir << "\n\n";
  const char* kinds[] = {"pareto_corner", "fixed", "cv"};
  os << "[lambda]\n"
     << "strategy = " << kinds[static_cast<int>(c.lambda.kind)] << "\n"
     << "fixed = " << d(c.lambda.fixed_lambda) << "\n"
     << "cv_folds = " << c.lambda.cv_folds << "\n"
     << "cv_grid_points = " << c.lambda.cv_grid_points << "\n\n";
  os << "[solver]\n"
     << "q = " << d(c.solver.q) << "\n"
     << "eps = " << d(c.solver.eps) << "\n"
     << "k_max = " << c.solver.k_max << "\n"
     << "opt_tol = " << d(c.solver.opt_tol) << "\n"
     << "conv_tol = " << d(c.solver.conv_tol) << "\n"
     << "max_inner_iterations = " << c.solver.max_inner_iterations << "\n"
     << "polish_every = " << c.solver.polish_every << "\n"
     << "normalize_columns = " << (c.solver.normalize_columns ? "true" : "false") << "\n"
     << "lambda_lo_fraction = " << d(c.solver.lambda_lo_fraction) << "\n"
     << "corner_tol = " << d(c.solver.corner_tol) << "\n"
     << "discrepancy_factor = " << d(c.solver.discrepancy_factor) << "\n"
     << "support_threshold = " << d(c.solver.support_threshold) << "\n\n";
  os << "[differentiation]\n"
     << "alpha_min = " << d(c.diff.alpha_range.first) << "\n"
     << "alpha_max = " << d(c.diff.alpha_range.second) << "\n"
     << "tol = " << d(c.diff.tol) << "\n"
     << "extension = " << d(c.diff.extension) << "\n"
     << "midpoint_rule = " << (c.diff.midpoint_rule == MidpointRule::cubic ? "cubic" : "average") << "\n\n";
  const char* handling[] = {"off", "detect", "detect_and_reduce"};
  os << "[constraints]\n"
     << "handling = " << handling[static_cast<int>(c.constraint_handling)] << "\n"
     << "gap_factor = " << d(c.constraint.gap_factor) << "\n"
     << "known_rank = " << (c.constraint.known_rank ? std::to_string(*c.constraint.known_rank) : "none") << "\n"
     << "tau = " << d(c.constraint.tau) << "\n"
     << "strategy = " << to_string(c.constraint.strategy) << "\n"
     << "drop_columns = ";
  if (c.constraint.drop_columns.empty()) os << "none";
  for (size_t i = 0; i < c.constraint.drop_columns.size(); ++i)
    os << (i ? ", " : "") << c.constraint.drop_columns[i] + 1;
  os << "\n\n";
  os << "[baselines]\nrun = ";
  for (size_t i = 0; i < c.baselines.size(); ++i) os << (i ? ", " : "") << c.baselines[i];
  os << "\ngrid_points = " << c.baseline_grid_points << "\n";
  return os.str();
}

double simulation_end(const ExperimentConfig& c) {
  if (c.t_end > 0) return c.t_end;
  const double need = c.t_b + c.diff.extension * (c.t_b - c.t_a);
  return std::ceil(need / c.dt - 1e-9) * c.dt;
}

Errors compute_errors(const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_true,
                      const Eigen::VectorXd& dx, const Eigen::VectorXd& dx_true) {
  if (xi.size() != xi_true.size() || dx.size() != dx_true.size())
    throw Error(ErrorCategory::size, "error metrics need vectors of matching length");
  Errors e;
  const double nx = xi_true.norm(), nd = dx_true.norm();
  e.xi_undefined = nx == 0.0;
  e.dx_undefined = nd == 0.0;
  e.e_xi = e.xi_undefined ? std::nan("") : (xi - xi_true).norm() / nx;
  e.e_dx = e.dx_undefined ? std::nan("") : (dx - dx_true).norm() / nd;
  return e;
}

double divergence_time(const Trajectory& exact, const Eigen::MatrixXd& coeffs, const BasisSpec& basis,
                       double fraction, double dt_internal) {
  const double rms = std::sqrt(exact.states.rowwise().squaredNorm().mean());
  const double radius = fraction * rms;
  Trajectory pred;
  try {
    pred = predict_trajectory(coeffs, basis, exact.states.row(0).transpose(), exact.t0, exact.t_end(),
                              exact.dt, dt_internal);
  } catch (const IntegrationError& e) {
    return e.time();
  }
  for (int k = 0; k < exact.samples(); ++k)
    if ((pred.states.row(k) - exact.states.row(k)).norm() > radius) return exact.time(k);
  return std::nan("");
}

CurveEval wbpdn_iteration_evaluator(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                                    const WbpdnResult& result, int iteration, const SolverConfig& config,
                                    double* lambda_lo, double* lambda_hi) {
  if (iteration < 0 || iteration >= static_cast<int>(result.history.size()))
    throw Error(ErrorCategory::argument, "no such reweighting iteration");
  const Eigen::VectorXd& s = result.column_scale;
  const Eigen::MatrixXd Pn = Phi * s.cwiseInverse().asDiagonal();
  const WbpdnIteration& it = result.history[static_cast<size_t>(iteration)];
  const Eigen::VectorXd w = it.solution.weights.cwiseQuotient(s);
  const bool searched = it.search_hi > 0;
  if (lambda_hi) *lambda_hi = searched ? it.search_hi : it.lambda_max;
  if (lambda_lo) *lambda_lo = searched ? it.search_lo : config.lambda_lo_fraction * it.lambda_max;
  return pareto_evaluator(Pn, dx, w, config);
}

ParetoCurve wbpdn_iteration_curve(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                                  const WbpdnResult& result, int iteration, int points,
                                  const SolverConfig& config) {
  if (iteration < 0 || iteration >= static_cast<int>(result.history.size()))
    throw Error(ErrorCategory::argument, "no such reweighting iteration");
  const Eigen::VectorXd& s = result.column_scale;
  const Eigen::MatrixXd Pn = Phi * s.cwiseInverse().asDiagonal();
  const WbpdnIteration& it = result.history[static_cast<size_t>(iteration)];
  const Eigen::VectorXd w = it.solution.weights.cwiseQuotient(s);
  if (!(it.lambda_max > 0)) return {};
  const auto grid = log_grid(config.lambda_lo_fraction * it.lambda_max, it.lambda_max, points);
  ParetoCurve c = sample_pareto_curve(Pn, dx, w, grid, config);
  mark_grid_corner(c);
  return c;
}

namespace {

std::string describe(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e))
    return std::string(category_name(err->category())) + ": " + err->what();
  return std::string("internal: ") + e.what();
}

BaselineResult run_baseline(const std::string& method, const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                            const std::vector<int>& active, const Eigen::VectorXd& xi_true, int grid_points) {
  BaselineResult b;
  b.method = method;
  const int p = static_cast<int>(xi_true.size());
  try {
    const Eigen::VectorXd ls = Phi.completeOrthogonalDecomposition().solve(dx);
    const double top = ls.cwiseAbs().maxCoeff();
    if (!(top > 0)) throw Error(ErrorCategory::solver, "least-squares solution is zero");
    const auto grid = log_grid(1e-6 * top, top, grid_points);
    b.parameter = method == "stls_cv" ? select_gamma_cv(Phi, dx, grid, 5).lambda
                                      : select_gamma_pareto(Phi, dx, grid);
    const SparseSolution s = solve_stls(Phi, dx, b.parameter);
    b.xi = expand_coefficients(s.xi, active, p);
    b.support = report_support(b.xi, 0.0);
    b.e_xi = (b.xi - xi_true).norm() / xi_true.norm();
  } catch (const std::exception& e) {
    b.error = describe(e);
    b.xi = Eigen::VectorXd::Zero(p);
    b.e_xi = std::nan("");
  }
  return b;
}

Eigen::MatrixXd training_nodes(const Trajectory& traj, const ExperimentConfig& cfg) {
  std::vector<int> rows;
  for (int k = 0; k < traj.samples(); ++k) {
    const double t = traj.time(k);
    if (t >= cfg.t_a - 1e-9 && t <= cfg.t_b + 1e-9) rows.push_back(k);
  }
  Eigen::MatrixXd nodes(static_cast<Eigen::Index>(rows.size()), traj.dim());
  for (size_t r = 0; r < rows.size(); ++r) nodes.row(r) = traj.states.row(rows[r]);
  return nodes;
}

}  // namespace

IdentificationInput prepare_input(const Trajectory& measured, const ExperimentConfig& cfg) {
  IdentificationInput in;
  const DerivativeEstimate est = extended_window_derivatives(measured, {cfg.t_a, cfg.t_b}, cfg.diff);
  in.midpoint_times = est.midpoint_times;
  in.states = est.states;
  in.dx = est.values;
  in.alphas = est.alpha;
  in.nodes = training_nodes(measured, cfg);
  return in;
}

Identification identify(const IdentificationInput& in, const BasisSpec& basis, const ExperimentConfig& cfg) {
  if (in.states.rows() != in.dx.rows() || in.states.cols() != in.dx.cols())
    throw Error(ErrorCategory::size, "states and derivatives differ in shape");
  if (in.states.cols() != basis.n) throw Error(ErrorCategory::size, "state dimension does not match the basis");
  Identification id;
  id.matrix = evaluate_basis_matrix(in.states, basis);
  if (cfg.constraint_handling != ConstraintHandling::off) {
    const MeasurementMatrix Mn = evaluate_basis_matrix(in.nodes, basis);
    id.constraints = analyze_constraints(Mn.values, basis, cfg.constraint);
    if (cfg.constraint_handling == ConstraintHandling::detect_and_reduce && !id.constraints->dropped.empty())
      id.matrix = reduce_columns(id.matrix, id.constraints->dropped);
  }
  const int n = basis.n, p = basis.p();
  id.coeffs = Eigen::MatrixXd::Zero(p, n);
  for (int j = 0; j < n; ++j) {
    try {
      WbpdnResult r = solve_wbpdn(id.matrix.values, in.dx.col(j), cfg.lambda, cfg.solver);
      id.coeffs.col(j) = expand_coefficients(r.final.xi, id.matrix.active_columns, p);
      id.results.emplace_back(std::move(r));
      id.errors.emplace_back();
    } catch (const std::exception& e) {
      id.results.emplace_back(std::nullopt);
      id.errors.push_back(describe(e));
    }
  }
  return id;
}

LevelReport run_identification(const ExperimentConfig& cfg, double sigma, std::uint64_t noise_index) {
  LevelReport rep;
  rep.sigma = sigma;
  rep.noise_index = noise_index;
  try {
    validate(cfg);
    if (!(sigma >= 0)) throw Error(ErrorCategory::argument, "noise level must be non-negative");
    const SystemSpec sys = make_benchmark(cfg.system, cfg.degree);
    const int n = sys.n, p = sys.basis.p();
    rep.coeffs = Eigen::MatrixXd::Zero(p, n);
    const double T = simulation_end(cfg);

    // Half-step output gives the nodes (even rows) and exact midpoints (odd rows).
    const Trajectory fine = integrate_rk4(sys, 0.0, T, 0.5 * cfg.dt, cfg.dt_internal);
    Trajectory exact;
    exact.t0 = 0.0;
    exact.dt = cfg.dt;
    exact.states.resize((fine.samples() + 1) / 2, n);
    for (int k = 0; k < exact.states.rows(); ++k) exact.states.row(k) = fine.states.row(2 * k);
    const Trajectory noisy = add_noise(exact, sigma, cfg.seed, noise_index);
    const Eigen::VectorXd snr = sigma > 0 ? snr_db(exact.states, sigma, cfg.snr)
                                          : Eigen::VectorXd::Constant(n, HUGE_VAL);

    IdentificationInput in;
    if (cfg.exact_derivatives) {
      in.nodes = training_nodes(noisy, cfg);
      std::vector<int> rows;
      for (int k = 0; k + 1 < exact.samples(); ++k) {
        const double t = exact.time(k) + 0.5 * cfg.dt;
        if (t > cfg.t_a + 1e-12 && t < cfg.t_b - 1e-12) rows.push_back(k);
      }
      in.midpoint_times.resize(static_cast<Eigen::Index>(rows.size()));
      in.states.resize(static_cast<Eigen::Index>(rows.size()), n);
      for (size_t r = 0; r < rows.size(); ++r) {
        in.midpoint_times(r) = exact.time(rows[r]) + 0.5 * cfg.dt;
        in.states.row(r) = fine.states.row(2 * rows[r] + 1);
      }
      in.dx.resize(in.states.rows(), n);
      for (Eigen::Index r = 0; r < in.states.rows(); ++r)
        in.dx.row(r) = sys.rhs(in.states.row(r).transpose()).transpose();
    } else {
      in = prepare_input(noisy, cfg);
    }
    rep.midpoint_times = in.midpoint_times;
    rep.derivatives = in.dx;
    rep.samples = static_cast<int>(in.states.rows());

    Eigen::MatrixXd dx_true(in.states.rows(), n);
    for (Eigen::Index r = 0; r < in.states.rows(); ++r) {
      const long k = std::lround((rep.midpoint_times(r) - 0.5 * cfg.dt) / cfg.dt);
      dx_true.row(r) = sys.rhs(fine.states.row(2 * k + 1).transpose()).transpose();
    }

    const auto t_start = std::chrono::steady_clock::now();
    const Identification id = identify(in, sys.basis, cfg);
    const double per_state_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count() / n;
    rep.constraints = id.constraints;
    rep.active_columns = id.matrix.active_columns;
    rep.cond = id.matrix.cond_normalized;
    rep.coeffs = id.coeffs;

    bool all_ok = true;
    for (int j = 0; j < n; ++j) {
      StateResult sr;
      sr.state = j;
      sr.snr_db = snr(j);
      sr.wall_seconds = per_state_seconds;
      if (!in.alphas.empty()) {
        sr.alpha = in.alphas[static_cast<size_t>(j)].alpha;
        sr.alpha_flagged = in.alphas[static_cast<size_t>(j)].flagged;
      }
      const Eigen::VectorXd xi_true = sys.true_coeffs.col(j);
      const Eigen::VectorXd y = in.dx.col(j);
      sr.xi = id.coeffs.col(j);
      const auto& res = id.results[static_cast<size_t>(j)];
      if (!res) {
        sr.error = id.errors[static_cast<size_t>(j)];
        sr.e_xi = std::nan("");
        sr.e_dx = compute_errors(sr.xi, xi_true, y, dx_true.col(j)).e_dx;
        all_ok = false;
        rep.states.push_back(std::move(sr));
        continue;
      }
      try {
        const Errors e = compute_errors(sr.xi, xi_true, y, dx_true.col(j));
        sr.e_xi = e.e_xi;
        sr.e_dx = e.e_dx;
        sr.lambda = res->final.lambda;
        sr.iterations = res->final.iterations;
        sr.support = report_support(sr.xi, cfg.solver.support_threshold);
        for (size_t k = 0; k < res->history.size(); ++k) {
          const WbpdnIteration& h = res->history[k];
          IterationRecord rec;
          rec.iteration = h.solution.iterations;
          rec.lambda = h.solution.lambda;
          rec.lambda_max = h.lambda_max;
          rec.e_xi = compute_errors(expand_coefficients(h.solution.xi, id.matrix.active_columns, p), xi_true, y, y)
                         .e_xi;
          rec.residual = h.solution.residual_2norm;
          rec.weighted_l1 = h.solution.weighted_l1;
          rec.corner_curvature = h.corner_curvature;
          rec.corner_fallback = h.corner_fallback;
          if (cfg.pareto_points > 0)
            rec.curve = wbpdn_iteration_curve(id.matrix.values, y, *res, static_cast<int>(k), cfg.pareto_points,
                                              cfg.solver);
          sr.history.push_back(std::move(rec));
        }
        for (const auto& b : cfg.baselines)
          sr.baselines.push_back(
              run_baseline(b, id.matrix.values, y, id.matrix.active_columns, xi_true, cfg.baseline_grid_points));
      } catch (const std::exception& e) {
        sr.error = describe(e);
        all_ok = false;
      }
      rep.states.push_back(std::move(sr));
    }

    if (cfg.predict_until > 0 && all_ok) {
      const Trajectory long_exact = integrate_rk4(sys, 0.0, cfg.predict_until, cfg.dt, cfg.dt_internal);
      rep.divergence_time = divergence_time(long_exact, rep.coeffs, sys.basis, cfg.divergence_fraction,
                                            cfg.dt_internal);
      rep.diverged = !std::isnan(rep.divergence_time);
    }
  } catch (const std::exception& e) {
    rep.error = describe(e);
  }
  return rep;
}

ExperimentReport run_noise_sweep(const ExperimentConfig& config) {
  validate(config);
  ExperimentReport report;
  report.config = config;
  std::vector<std::future<LevelReport>> jobs;
  for (size_t i = 0; i < config.noise_levels.size(); ++i)
    jobs.push_back(std::async(std::launch::async, [&config, i] {
      return run_identification(config, config.noise_levels[i], static_cast<std::uint64_t>(i));
    }));
  for (auto& j : jobs) report.levels.push_back(j.get());
  return report;
}

namespace {

std::string join_indices(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i] + 1);
  return s;
}

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

void export_csv(const ExperimentReport& report, const fs::path& dir) {
  const ExperimentConfig& cfg = report.config;
  const SystemSpec sys = make_benchmark(cfg.system, cfg.degree);
  std::ostringstream errors, iters, levels, timing, base;
  errors << "sigma,state,e_dx,e_xi,snr_db,lambda,iterations,support,alpha,alpha_flagged,error\n";
  iters << "sigma,state,iteration,lambda,lambda_max,e_xi,residual,weighted_l1,corner_curvature,corner_fallback\n";
  levels << "level,sigma,noise_index,samples,cond,divergence_time,diverged,rank,no_gap,cond_before,cond_after,dropped,error\n";
  timing << "sigma,state,wall_seconds\n";
  base << "sigma,state,method,parameter,e_xi,support,error\n";
  for (size_t li = 0; li < report.levels.size(); ++li) {
    const LevelReport& L = report.levels[li];
    const std::string sg = format_double(L.sigma);
    const std::string tag = "level" + std::to_string(li);
    levels << li << "," << sg << "," << L.noise_index << "," << L.samples << "," << format_double(L.cond) << ","
           << format_double(L.divergence_time) << "," << (L.diverged ? 1 : 0) << ",";
    if (L.constraints) {
      const auto& C = *L.constraints;
      levels << C.rank.rank << "," << (C.rank.no_gap ? 1 : 0) << "," << format_double(C.cond_before) << ","
             << format_double(C.cond_after) << "," << join_indices(C.dropped);
    } else {
      levels << ",,,,";
    }
    levels << "," << csv_text(L.error) << "\n";
    for (const StateResult& s : L.states) {
      errors << sg << "," << s.state + 1 << "," << format_double(s.e_dx) << "," << format_double(s.e_xi) << ","
             << format_double(s.snr_db) << "," << format_double(s.lambda) << "," << s.iterations << ","
             << join_indices(s.support) << "," << format_double(s.alpha) << "," << (s.alpha_flagged ? 1 : 0)
             << "," << csv_text(s.error) << "\n";
      timing << sg << "," << s.state + 1 << "," << format_double(s.wall_seconds) << "\n";
      for (const IterationRecord& h : s.history) {
        iters << sg << "," << s.state + 1 << "," << h.iteration << "," << format_double(h.lambda) << ","
              << format_double(h.lambda_max) << "," << format_double(h.e_xi) << "," << format_double(h.residual)
              << "," << format_double(h.weighted_l1) << "," << format_double(h.corner_curvature) << ","
              << (h.corner_fallback ? 1 : 0) << "\n";
        if (!h.curve.points.empty())
          write_pareto_csv(dir / ("pareto_" + tag + "_x" + std::to_string(s.state + 1) + "_it" +
                                  std::to_string(h.iteration) + ".csv"),
                           h.curve);
      }
      for (const BaselineResult& b : s.baselines)
        base << sg << "," << s.state + 1 << "," << b.method << "," << format_double(b.parameter) << ","
             << format_double(b.e_xi) << "," << join_indices(b.support) << "," << csv_text(b.error) << "\n";
      if (s.xi.size() == sys.basis.p())
        write_coefficients_csv(dir / ("coefficients_" + tag + "_x" + std::to_string(s.state + 1) + ".csv"),
                               sys.basis, s.xi);
    }
    if (L.constraints && !L.constraints->id.J.empty()) {
      const auto& C = *L.constraints;
      write_singular_values_csv(dir / ("singular_values_" + tag + ".csv"), C.rank.singular_values);
      write_dependency_csv(dir / ("dependency_" + tag + ".csv"), dependency_report(C.id, cfg.constraint.tau));
      for (const auto& g : C.constraints)
        write_constraint_csv(dir / ("constraint_" + tag + "_l" + std::to_string(g.dependent_column + 1) + ".csv"),
                             sys.basis, g);
    }
  }
  write_text_file(dir / "errors.csv", errors.str());
  write_text_file(dir / "iterations.csv", iters.str());
  write_text_file(dir / "levels.csv", levels.str());
  write_text_file(dir / "baselines.csv", base.str());
  write_text_file(dir / "timing.csv", timing.str());
}

void export_text(const ExperimentReport& report, const fs::path& dir) {
  using nlohmann::json;
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); };
  json j;
  j["version"] = version_string();
  j["levels"] = json::array();
  for (const LevelReport& L : report.levels) {
    json l;
    l["sigma"] = L.sigma;
    l["noise_index"] = L.noise_index;
    l["samples"] = L.samples;
    l["cond"] = num(L.cond);
    l["divergence_time"] = num(L.divergence_time);
    l["error"] = L.error;
    l["states"] = json::array();
    for (const StateResult& s : L.states) {
      json sj;
      sj["state"] = s.state + 1;
      sj["e_dx"] = num(s.e_dx);
      sj["e_xi"] = num(s.e_xi);
      sj["snr_db"] = num(s.snr_db);
      sj["lambda"] = num(s.lambda);
      sj["iterations"] = s.iterations;
      std::vector<int> sup;
      for (int i : s.support) sup.push_back(i + 1);
      sj["support"] = sup;
      sj["error"] = s.error;
      l["states"].push_back(sj);
    }
    if (L.constraints) {
      const auto& C = *L.constraints;
      json cj;
      cj["rank"] = C.rank.rank;
      cj["no_gap"] = C.rank.no_gap;
      cj["cond_before"] = num(C.cond_before);
      cj["cond_after"] = num(C.cond_after);
      std::vector<int> dropped;
      for (int i : C.dropped) dropped.push_back(i + 1);
      cj["dropped"] = dropped;
      l["constraints"] = cj;
    }
    j["levels"].push_back(l);
  }
  write_text_file(dir / "report.json", j.dump(2) + "\n");
}

}  // namespace

void export_report(const ExperimentReport& report, const fs::path& dir, ReportFormat format) {
  std::ostringstream manifest;
  manifest << config_to_text(report.config) << "\n[run]\nversion = " << version_string() << "\nlevels = ";
  for (size_t i = 0; i < report.levels.size(); ++i)
    manifest << (i ? ", " : "") << format_double(report.levels[i].sigma) << ":" << report.levels[i].noise_index;
  manifest << "\n";
  write_text_file(dir / "manifest.ini", manifest.str());
  if (report.levels.empty()) return;
  if (format == ReportFormat::csv)
    export_csv(report, dir);
  else
    export_text(report, dir);
}

}  // namespace sparsedyn
