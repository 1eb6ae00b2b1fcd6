#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <utility>
#include <vector>

#include "sparsedyn/dynamics.hpp"

namespace sparsedyn {

/// Discrete integral operator A and stacked smoothing operator
/// D = [dt^2 I; dt D1; D2] for a series of m samples.  D1 and D2 are the
/// plain [-1, 1] and [1, -2, 1] stencils.
struct DiffOperators {
  Eigen::MatrixXd A;                // (m-1) x (m-1), lower triangular, entries dt
  Eigen::SparseMatrix<double> D;    // (3m-6) x (m-1)
  Eigen::SparseMatrix<double> D1;   // (m-2) x (m-1)
  Eigen::SparseMatrix<double> D2;   // (m-3) x (m-1)
  int m = 0;
  double dt = 0.0;
};

DiffOperators build_operators(int m, double dt);

/// Right-hand side of the integral equation, xhat_i = x_{i+1} - x_1.
Eigen::VectorXd integral_rhs(const Eigen::VectorXd& x);

struct TikhonovSolution {
  Eigen::VectorXd derivative;  // length m-1, at midpoints
  double residual = 0.0;       // ||A v - xhat||_2
  double seminorm = 0.0;       // ||D v||_2
};

/// Minimizes ||A v - xhat||^2 + alpha ||D v||^2.
TikhonovSolution tikhonov_solve(const Eigen::VectorXd& x, double dt, double alpha);

Eigen::VectorXd differentiate_tikhonov(const Eigen::VectorXd& x, double dt, double alpha);

struct AlphaSelection {
  double alpha = 0.0;
  bool flagged = false;  // true when the discrepancy fallback was used
  double curvature = 0.0;
  double residual = 0.0;
  double seminorm = 0.0;
};

/// Selects alpha at the corner of the log-log L-curve.  Falls back to the
/// discrepancy principle (residual matching a noise estimate) when no
/// convex corner exists.
AlphaSelection select_alpha_corner(const Eigen::VectorXd& x, double dt,
                                   std::pair<double, double> alpha_range = {1e-10, 1e2},
                                   double tol = 1e-2);

/// Noise standard deviation estimated from fourth differences of the series.
double estimate_noise_sigma(const Eigen::VectorXd& x);

enum class MidpointRule {
  average,  // (x_i + x_{i+1}) / 2
  cubic,    // four-point interpolation, average at the two ends
};

/// State estimates at t_i + dt/2 for i = 0..m-2.
Eigen::MatrixXd midpoint_states(const Eigen::MatrixXd& states, MidpointRule rule);

struct DerivativeEstimate {
  Eigen::VectorXd midpoint_times;
  Eigen::MatrixXd values;  // retained midpoints x n
  Eigen::MatrixXd states;  // state estimates at the retained midpoints
  std::vector<AlphaSelection> alpha;
  std::vector<double> e_dx;  // filled by callers that know the exact derivative
};

struct DifferentiationOptions {
  std::pair<double, double> alpha_range{1e-10, 1e2};
  double tol = 1e-2;
  double extension = 0.05;
  MidpointRule midpoint_rule = MidpointRule::cubic;
};

/// Differentiates over the training span widened by `extension` on each
/// side and keeps the midpoints strictly inside (t_a, t_b).
DerivativeEstimate extended_window_derivatives(const Trajectory& traj,
                                               std::pair<double, double> train_span,
                                               const DifferentiationOptions& opt = {});

}  // namespace sparsedyn
