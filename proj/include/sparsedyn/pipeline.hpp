#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sparsedyn/constraints.hpp"
#include "sparsedyn/differentiation.hpp"
#include "sparsedyn/dynamics.hpp"
#include "sparsedyn/pareto.hpp"
#include "sparsedyn/solver.hpp"

namespace sparsedyn {

enum class ConstraintHandling { off, detect, detect_and_reduce };

struct ExperimentConfig {
  SystemName system = SystemName::lorenz63;
  int degree = 3;
  double t_a = 0.1;
  double t_b = 2.1;
  double dt = 0.01;
  double t_end = 0.0;          // end of the simulated data; 0 selects t_b plus the extension
  double dt_internal = 1e-4;
  std::vector<double> noise_levels{1e-2};
  std::uint64_t seed = 0;
  LambdaStrategy lambda;
  SolverConfig solver;
  DifferentiationOptions diff;
  bool exact_derivatives = false;
  std::vector<std::string> baselines;  // subset of {stls_cv, stls_pareto}
  int baseline_grid_points = 40;
  ConstraintHandling constraint_handling = ConstraintHandling::off;
  ConstraintOptions constraint;
  SnrConvention snr = SnrConvention::mean_power;
  double predict_until = 0.0;  // 0 disables the prediction check
  double divergence_fraction = 0.1;
  int pareto_points = 0;       // > 0 samples the trade-off curve of every iteration
  std::string output_dir = "out";
};

/// Per-system settings used in the benchmark study.
ExperimentConfig default_config(SystemName system);

/// Parses INI-style text with sections [experiment], [lambda], [solver],
/// [differentiation], [constraints] and [baselines].  Keys not given keep
/// the defaults of the chosen system.  Unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const ExperimentConfig& config);

/// Simulated end time actually used for the data trajectory.
double simulation_end(const ExperimentConfig& config);

struct Errors {
  double e_xi = 0.0;
  double e_dx = 0.0;
  bool xi_undefined = false;
  bool dx_undefined = false;
};

/// Relative 2-norm errors.  A zero reference norm sets the matching flag and
/// reports NaN.
Errors compute_errors(const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_true,
                      const Eigen::VectorXd& dx, const Eigen::VectorXd& dx_true);

struct BaselineResult {
  std::string method;
  double parameter = 0.0;
  double e_xi = 0.0;
  Eigen::VectorXd xi;  // full basis length
  std::vector<int> support;
  std::string error;
};

struct IterationRecord {
  int iteration = 0;
  double lambda = 0.0;
  double lambda_max = 0.0;
  double e_xi = 0.0;
  double residual = 0.0;
  double weighted_l1 = 0.0;
  double corner_curvature = 0.0;
  bool corner_fallback = false;
  ParetoCurve curve;  // populated when pareto_points > 0
};

struct StateResult {
  int state = 0;
  double e_dx = 0.0;
  double e_xi = 0.0;
  double snr_db = 0.0;
  double lambda = 0.0;
  std::vector<int> support;  // full-basis indices
  int iterations = 0;
  double wall_seconds = 0.0;
  Eigen::VectorXd xi;        // full basis length
  double alpha = 0.0;        // differentiation parameter
  bool alpha_flagged = false;
  std::vector<IterationRecord> history;
  std::vector<BaselineResult> baselines;
  std::string error;
};

struct LevelReport {
  double sigma = 0.0;
  std::uint64_t noise_index = 0;
  std::vector<StateResult> states;
  Eigen::MatrixXd coeffs;  // p x n, full basis
  std::vector<int> active_columns;
  std::optional<ConstraintAnalysis> constraints;
  int samples = 0;         // rows of the measurement matrix
  double cond = 0.0;       // unit-norm columns, of the matrix used for identification
  double divergence_time = std::nan("");
  bool diverged = false;
  std::string error;
  Eigen::VectorXd midpoint_times;
  Eigen::MatrixXd derivatives;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<LevelReport> levels;
};

/// Regression data derived from one trajectory.
struct IdentificationInput {
  Eigen::VectorXd midpoint_times;
  Eigen::MatrixXd states;  // state estimates at the midpoints
  Eigen::MatrixXd dx;      // derivative estimates at the midpoints
  Eigen::MatrixXd nodes;   // samples inside [t_a, t_b], used for constraint analysis
  std::vector<AlphaSelection> alphas;
};

/// Extended-window differentiation of a measured trajectory over the
/// configured training span.
IdentificationInput prepare_input(const Trajectory& measured, const ExperimentConfig& config);

struct Identification {
  MeasurementMatrix matrix;  // after any column removal
  std::optional<ConstraintAnalysis> constraints;
  std::vector<std::optional<WbpdnResult>> results;  // per state, empty on failure
  std::vector<std::string> errors;                  // per state, empty on success
  Eigen::MatrixXd coeffs;                           // p x n, full basis
};

/// Basis evaluation, optional constraint handling and per-state WBPDN.
Identification identify(const IdentificationInput& input, const BasisSpec& basis,
                        const ExperimentConfig& config);

/// One noise level end to end.  Stage failures are recorded in the
/// returned report; a failing state does not stop the others.
LevelReport run_identification(const ExperimentConfig& config, double sigma,
                               std::uint64_t noise_index = 0);

/// All noise levels of the configuration, level i using noise stream i.
/// Levels run concurrently; the report is ordered as the configuration.
ExperimentReport run_noise_sweep(const ExperimentConfig& config);

/// First time at which the prediction leaves a tube of radius
/// fraction * RMS(|x_exact|) around the exact trajectory.  NaN when no
/// departure occurs; an integration failure counts as departure.
double divergence_time(const Trajectory& exact, const Eigen::MatrixXd& coeffs,
                       const BasisSpec& basis, double fraction, double dt_internal = 1e-4);

enum class ReportFormat { csv, text };

/// Writes tables for `report` to `dir`.  Timing goes to a separate file so
/// that the remaining tables are reproducible byte for byte.
void export_report(const ExperimentReport& report, const std::filesystem::path& dir,
                   ReportFormat format = ReportFormat::csv);

/// Trade-off curve of one reweighting iteration, rebuilt from a finished run.
ParetoCurve wbpdn_iteration_curve(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                                  const WbpdnResult& result, int iteration, int points,
                                  const SolverConfig& config);

/// Evaluator of the trade-off curve that the lambda search of `iteration` used.
CurveEval wbpdn_iteration_evaluator(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                                    const WbpdnResult& result, int iteration,
                                    const SolverConfig& config, double* lambda_lo,
                                    double* lambda_hi);

std::string version_string();

}  // namespace sparsedyn
