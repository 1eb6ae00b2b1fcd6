#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "sparsedyn/constraints.hpp"
#include "sparsedyn/differentiation.hpp"
#include "sparsedyn/dynamics.hpp"
#include "sparsedyn/errors.hpp"
#include "sparsedyn/io.hpp"
#include "sparsedyn/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparsedyn;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string input;
  std::optional<double> sigma;
};

json number(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? default_config(SystemName::lorenz63) : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

double noise_level(const Common& c, const ExperimentConfig& cfg) { return c.sigma ? *c.sigma : cfg.noise_levels.front(); }

// The measured trajectory: read from --input, or simulated from the
// configured benchmark at the first noise level.
Trajectory measured_trajectory(const Common& c, const ExperimentConfig& cfg) {
  if (!c.input.empty()) return read_trajectory_csv(c.input);
  const SystemSpec sys = make_benchmark(cfg.system, cfg.degree);
  const Trajectory exact = integrate_rk4(sys, 0.0, simulation_end(cfg), cfg.dt, cfg.dt_internal);
  return add_noise(exact, noise_level(c, cfg), cfg.seed);
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

int cmd_simulate(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const SystemSpec sys = make_benchmark(cfg.system, cfg.degree);
  const Trajectory exact = integrate_rk4(sys, 0.0, simulation_end(cfg), cfg.dt, cfg.dt_internal);
  const double sigma = noise_level(c, cfg);
  const Trajectory noisy = add_noise(exact, sigma, cfg.seed);
  const fs::path out(c.out);
  write_trajectory_csv(out / "exact.csv", exact);
  write_trajectory_csv(out / "trajectory.csv", noisy);
  json j;
  j["system"] = to_string(cfg.system);
  j["sigma"] = sigma;
  j["seed"] = cfg.seed;
  j["samples"] = exact.samples();
  j["dt"] = cfg.dt;
  j["snr_db"] = json::array();
  const Eigen::VectorXd snr = snr_db(exact.states, sigma, cfg.snr);
  for (Eigen::Index i = 0; i < snr.size(); ++i) j["snr_db"].push_back(number(snr(i)));
  write_json(out / "simulate.json", j);
  write_text_file(out / "config.ini", config_to_text(cfg));
  return 0;
}

int cmd_differentiate(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const Trajectory traj = measured_trajectory(c, cfg);
  const DerivativeEstimate est = extended_window_derivatives(traj, {cfg.t_a, cfg.t_b}, cfg.diff);
  const fs::path out(c.out);
  write_derivatives_csv(out / "derivatives.csv", est.midpoint_times, est.values);
  json j;
  j["t_a"] = cfg.t_a;
  j["t_b"] = cfg.t_b;
  j["midpoints"] = est.midpoint_times.size();
  j["states"] = json::array();
  for (size_t s = 0; s < est.alpha.size(); ++s) {
    const AlphaSelection& a = est.alpha[s];
    j["states"].push_back({{"state", s + 1},
                           {"alpha", number(a.alpha)},
                           {"discrepancy_fallback", a.flagged},
                           {"curvature", number(a.curvature)},
                           {"residual", number(a.residual)},
                           {"seminorm", number(a.seminorm)}});
  }
  write_json(out / "differentiation.json", j);
  return 0;
}

json solution_json(const SparseSolution& s) {
  std::vector<int> sup;
  for (int i : s.support) sup.push_back(i + 1);
  return {{"lambda", number(s.lambda)},         {"residual", number(s.residual_2norm)},
          {"weighted_l1", number(s.weighted_l1)}, {"optimality", number(s.optimality)},
          {"support", sup},                      {"inner_iterations", s.inner_iterations}};
}

int cmd_identify(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const Trajectory traj = measured_trajectory(c, cfg);
  const IdentificationInput in = prepare_input(traj, cfg);
  const BasisSpec basis = enumerate_monomials(traj.dim(), cfg.degree);
  const Identification id = identify(in, basis, cfg);
  const fs::path out(c.out);
  json j;
  j["basis"] = json::parse(basis_report_json(basis));
  j["samples"] = in.states.rows();
  j["cond"] = number(id.matrix.cond_normalized);
  if (id.constraints) {
    std::vector<int> dropped;
    for (int i : id.constraints->dropped) dropped.push_back(i + 1);
    j["constraints"] = {{"rank", id.constraints->rank.rank},
                        {"no_gap", id.constraints->rank.no_gap},
                        {"dropped", dropped},
                        {"cond_before", number(id.constraints->cond_before)},
                        {"cond_after", number(id.constraints->cond_after)}};
  }
  j["states"] = json::array();
  bool all_ok = true;
  for (int s = 0; s < basis.n; ++s) {
    json sj;
    sj["state"] = s + 1;
    if (id.results[s]) {
      const WbpdnResult& r = *id.results[s];
      sj["final"] = solution_json(r.final);
      sj["iterations"] = r.final.iterations;
      sj["history"] = json::array();
      for (const WbpdnIteration& it : r.history) {
        json h = solution_json(it.solution);
        h["lambda_max"] = number(it.lambda_max);
        h["corner_curvature"] = number(it.corner_curvature);
        h["corner_fallback"] = it.corner_fallback;
        h["corner_weak"] = it.corner_weak;
        h["discrepancy_capped"] = it.discrepancy_capped;
        sj["history"].push_back(h);
      }
      write_coefficients_csv(out / ("coefficients_x" + std::to_string(s + 1) + ".csv"), basis, id.coeffs.col(s));
    } else {
      sj["error"] = id.errors[s];
      all_ok = false;
    }
    j["states"].push_back(sj);
  }
  write_json(out / "identify.json", j);
  if (!all_ok) {
    std::cerr << json{{"error", "solver"}, {"message", "identification failed for at least one state"}}.dump() << "\n";
    return 3;
  }
  return 0;
}

int cmd_pareto(const Common& c, int state, int iteration, int points) {
  const ExperimentConfig cfg = load(c);
  const Trajectory traj = measured_trajectory(c, cfg);
  if (state < 1 || state > traj.dim()) throw Error(ErrorCategory::argument, "state index out of range");
  const IdentificationInput in = prepare_input(traj, cfg);
  const BasisSpec basis = enumerate_monomials(traj.dim(), cfg.degree);
  const Identification id = identify(in, basis, cfg);
  const auto& r = id.results[static_cast<size_t>(state - 1)];
  if (!r) throw Error(ErrorCategory::solver, id.errors[static_cast<size_t>(state - 1)]);
  const ParetoCurve curve =
      wbpdn_iteration_curve(id.matrix.values, in.dx.col(state - 1), *r, iteration, points, cfg.solver);
  const fs::path out(c.out);
  write_pareto_csv(out / ("pareto_x" + std::to_string(state) + "_it" + std::to_string(iteration) + ".csv"), curve);
  const WbpdnIteration& it = r->history[static_cast<size_t>(iteration)];
  write_json(out / ("pareto_x" + std::to_string(state) + "_it" + std::to_string(iteration) + ".json"),
             {{"selected_lambda", number(it.solution.lambda)},
              {"search_lo", number(it.search_lo)},
              {"search_hi", number(it.search_hi)},
              {"grid_corner_lambda", number(curve.corner_lambda)},
              {"corner_curvature", number(it.corner_curvature)},
              {"corner_fallback", it.corner_fallback}});
  return 0;
}

int cmd_constraints(const Common& c, bool raw) {
  const ExperimentConfig cfg = load(c);
  const Trajectory traj = measured_trajectory(c, cfg);
  const BasisSpec basis = enumerate_monomials(traj.dim(), cfg.degree);
  const IdentificationInput in = prepare_input(traj, cfg);
  const MeasurementMatrix M = evaluate_basis_matrix(in.nodes, basis);
  const ConstraintAnalysis a = analyze_constraints(M.values, basis, cfg.constraint);
  const fs::path out(c.out);
  write_singular_values_csv(out / "singular_values.csv", a.rank.singular_values);
  write_dependency_csv(out / "dependency.csv", dependency_report(a.id, cfg.constraint.tau, raw));
  json j;
  j["rank"] = a.rank.rank;
  j["no_gap"] = a.rank.no_gap;
  j["from_known_rank"] = a.rank.from_known_rank;
  j["max_ratio"] = number(a.rank.max_ratio);
  j["max_ratio_index"] = a.rank.max_ratio_index;
  j["rank_deficient"] = a.rank_deficient;
  j["cond_before"] = number(a.cond_before);
  j["cond_after"] = number(a.cond_after);
  j["strategy"] = to_string(cfg.constraint.strategy);
  std::vector<int> dropped, skeleton;
  for (int i : a.dropped) dropped.push_back(i + 1);
  for (int i : a.id.J) skeleton.push_back(i + 1);
  j["dropped"] = dropped;
  j["skeleton"] = skeleton;
  j["constraints"] = json::array();
  for (const ConstraintFunction& g : a.constraints) {
    const std::string name = "constraint_l" + std::to_string(g.dependent_column + 1) + ".csv";
    write_constraint_csv(out / name, basis, g);
    j["constraints"].push_back(
        {{"dependent_column", g.dependent_column + 1}, {"file", name}, {"residual", number(g.residual)}});
  }
  write_json(out / "constraints.json", j);
  return 0;
}

int cmd_sweep(const Common& c, const std::string& format) {
  const ExperimentConfig cfg = load(c);
  ReportFormat f = ReportFormat::csv;
  if (format == "text")
    f = ReportFormat::text;
  else if (format != "csv")
    throw Error(ErrorCategory::argument, "format must be csv or text");
  const ExperimentReport report = run_noise_sweep(cfg);
  export_report(report, c.out, f);
  for (const LevelReport& L : report.levels)
    if (!L.error.empty()) {
      std::cerr << json{{"error", "sweep"}, {"message", L.error}}.dump() << "\n";
      return 3;
    }
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool input) {
  sub->add_option("--config", c.config_path, "Experiment configuration (INI)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Noise seed, overrides the configuration");
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  if (input) {
    sub->add_option("--input", c.input, "Trajectory CSV; simulated from the configuration when absent")
        ->check(CLI::ExistingFile);
    sub->add_option("--sigma", c.sigma, "Noise level of the simulated trajectory");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse identification of polynomial dynamics from noisy trajectories"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  Common c;
  int state = 1, iteration = 0, points = 100;
  bool raw = false;
  std::string format = "csv";

  auto* sim = app.add_subcommand("simulate", "Simulate a benchmark and write exact and noisy trajectories");
  add_common(sim, c, false);
  sim->add_option("--sigma", c.sigma, "Noise level, overrides the first configured level");
  auto* dif = app.add_subcommand("differentiate", "Tikhonov derivatives at the training midpoints");
  add_common(dif, c, true);
  auto* ide = app.add_subcommand("identify", "Identify sparse coefficients for every state");
  add_common(ide, c, true);
  auto* par = app.add_subcommand("pareto", "Sample the trade-off curve of one reweighting iteration");
  add_common(par, c, true);
  par->add_option("--state", state, "State, 1-based")->capture_default_str();
  par->add_option("--iteration", iteration, "Reweighting iteration")->capture_default_str();
  par->add_option("--points", points, "Number of lambda samples")->check(CLI::Range(3, 100000))->capture_default_str();
  auto* con = app.add_subcommand("constraints", "Detect algebraic constraints among basis columns");
  add_common(con, c, true);
  con->add_flag("--raw", raw, "Dependency matrix without thresholding");
  auto* swp = app.add_subcommand("sweep", "Run all configured noise levels and export the report");
  add_common(swp, c, false);
  swp->add_option("--format", format, "csv or text")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(c);
    if (dif->parsed()) return cmd_differentiate(c);
    if (ide->parsed()) return cmd_identify(c);
    if (par->parsed()) return cmd_pareto(c, state, iteration, points);
    if (con->parsed()) return cmd_constraints(c, raw);
    if (swp->parsed()) return cmd_sweep(c, format);
  } catch (const Error& e) {
    std::cerr << json{{"error", category_name(e.category())}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
