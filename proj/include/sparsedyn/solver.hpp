#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "sparsedyn/errors.hpp"

namespace sparsedyn {

struct SolverConfig {
  double q = 2.0;             // reweighting exponent
  double eps = 1e-4;          // weight stabilizer
  int k_max = 8;              // maximum reweighting iterations after iteration 0
  double opt_tol = 1e-8;      // KKT residual tolerance relative to ||2 Phi^T dx||_inf
  double conv_tol = 1e-6;     // relative coefficient change that ends reweighting
  long max_inner_iterations = 400000;
  int polish_every = 25;
  bool normalize_columns = true;
  double lambda_lo_fraction = 1e-6;
  double corner_tol = 1e-2;
  double support_threshold = 1e-6;
  // > 0 caps the corner search at the lambda whose residual reaches this
  // multiple of the noise norm estimated from the least-squares residual.
  double discrepancy_factor = 2.0;
};

struct SparseSolution {
  Eigen::VectorXd xi;
  double lambda = 0.0;
  Eigen::VectorXd weights;
  int iterations = 0;
  double residual_2norm = 0.0;
  double weighted_l1 = 0.0;
  std::vector<int> support;
  double optimality = 0.0;
  long inner_iterations = 0;
  bool degenerate = false;
};

/// Thrown when the inner convex solver exhausts its iteration budget.
/// Carries the best iterate found.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, SparseSolution best)
      : Error(ErrorCategory::solver, what), best_(std::move(best)) {}
  const SparseSolution& best() const { return best_; }

 private:
  SparseSolution best_;
};

/// Smallest lambda for which the (weighted) BPDN solution is zero:
/// max_i |2 phi_i^T dx| / w_i.
double lambda_max(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                  const Eigen::VectorXd& weights = {});

/// Minimizes ||Phi xi - dx||^2 + lambda * sum_i w_i |xi_i| (w = 1 when
/// `weights` is empty) to the KKT tolerance in `config.opt_tol`.
SparseSolution solve_bpdn(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx, double lambda,
                          const Eigen::VectorXd& weights = {}, const SolverConfig& config = {},
                          const Eigen::VectorXd& warm_start = {});

/// Largest violation of the subgradient optimality conditions.
double optimality_residual(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx, double lambda,
                           const Eigen::VectorXd& weights, const Eigen::VectorXd& xi);

std::vector<int> report_support(const Eigen::VectorXd& xi, double threshold = 1e-6);

double weighted_l1(const Eigen::VectorXd& weights, const Eigen::VectorXd& xi);

enum class LambdaStrategyKind { pareto_corner, fixed, cv };

struct LambdaStrategy {
  LambdaStrategyKind kind = LambdaStrategyKind::pareto_corner;
  double fixed_lambda = 0.0;   // absolute value for `fixed`
  int cv_folds = 5;
  int cv_grid_points = 40;
  std::uint64_t cv_seed = 0;
};

struct WbpdnIteration {
  SparseSolution solution;  // coefficients in the caller's coordinates
  double lambda_max = 0.0;  // of the problem actually solved at this iteration
  double corner_curvature = 0.0;
  int corner_evaluations = 0;
  bool corner_weak = false;
  bool corner_fallback = false;
  double search_lo = 0.0;   // lambda bracket of the corner search
  double search_hi = 0.0;
  double noise_estimate = 0.0;   // used when the bracket is capped
  bool discrepancy_capped = false;
};

struct WbpdnResult {
  SparseSolution final;
  std::vector<WbpdnIteration> history;
  Eigen::VectorXd column_scale;  // ones when columns are not normalized
};

/// Iteratively reweighted BPDN.  Iteration 0 is unweighted; iteration k
/// uses w_i = 1 / (|xi_i|^q + eps) from iteration k-1.  With
/// `config.normalize_columns` the iteration runs on Phi with unit-norm
/// columns and the coefficients are mapped back; reported weights are then
/// expressed in the original coordinates.
WbpdnResult solve_wbpdn(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                        const LambdaStrategy& strategy, const SolverConfig& config = {});

/// Sequentially thresholded least squares.
SparseSolution solve_stls(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx, double gamma,
                          int max_iters = 25);

struct CvResult {
  double lambda = 0.0;
  std::vector<double> mean_residual;  // per grid entry
  bool small_fold_warning = false;
};

/// K-fold cross-validation over contiguous blocks of rows.
CvResult select_lambda_cv(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                          const std::vector<double>& lambda_grid, int K, std::uint64_t seed,
                          const Eigen::VectorXd& weights = {}, const SolverConfig& config = {});

/// Same fold layout, scoring STLS for each threshold.
CvResult select_gamma_cv(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                         const std::vector<double>& gamma_grid, int K);

/// Threshold at the corner of the (log residual, l0 norm) curve over the grid.
/// Thresholds producing the same model share one curve point, and the
/// geometric middle of the winning run is returned.
double select_gamma_pareto(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                           const std::vector<double>& gamma_grid);

}  // namespace sparsedyn
