#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "sparsedyn/solver.hpp"

namespace sparsedyn {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Signed Menger curvature 4*Area / (|p1p2| |p2p3| |p1p3|).  Positive when
/// p1 -> p2 -> p3 turns counter-clockwise.  Throws on coincident points.
double menger_curvature(Point2 p1, Point2 p2, Point2 p3);

/// Maps a regularization parameter to a point of the log-log trade-off curve.
using CurveEval = std::function<Point2(double)>;

struct CornerProbe {
  double lambda;
  Point2 point;
};

struct CornerResult {
  double lambda = 0.0;
  double curvature = 0.0;
  int evaluations = 0;
  bool weak = false;
  std::vector<CornerProbe> probes;  // every evaluated point, in evaluation order
};

/// Four-point golden-section search for the maximum-curvature point of a
/// trade-off curve parametrized by log10(lambda) on [lambda_lo, lambda_hi].
/// Curvature is measured after an affine map of both axes that sends the
/// bracket endpoints to -1 and +1, so the result does not depend on the
/// units of either axis.  `tol` is the final bracket width in log10 units.  Throws an Error of
/// category no_corner when no positive curvature is ever observed.
CornerResult find_corner_goldensection(const CurveEval& eval, double lambda_lo, double lambda_hi,
                                       double tol = 1e-2);

/// Brute-force oracle: samples `n` log-spaced parameters and returns the
/// interior point of largest Menger curvature with respect to its neighbours,
/// under the same endpoint normalization as the golden-section search.
CornerResult find_corner_grid(const CurveEval& eval, double lambda_lo, double lambda_hi, int n);

std::vector<double> log_grid(double lo, double hi, int n);

struct ParetoPoint {
  double lambda = 0.0;
  double log_residual = 0.0;
  double log_l1 = 0.0;
  bool ok = true;
};

struct ParetoCurve {
  std::vector<ParetoPoint> points;
  std::vector<Point2> normalized;
  bool flat_x = false;
  bool flat_y = false;
  double corner_lambda = 0.0;
  int corner_index = -1;
};

/// Residual and weighted l1 norm are clamped at this floor before taking logs.
inline constexpr double kLogFloor = 1e-16;

/// One BPDN solve per lambda (ascending).  Points whose solve fails are kept
/// with ok = false and skipped by corner detection.
ParetoCurve sample_pareto_curve(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                                const Eigen::VectorXd& weights, const std::vector<double>& lambdas,
                                const SolverConfig& config = {});

/// Maps each axis affinely onto [-1, 1].  A constant axis is mapped to 0
/// and flagged.
ParetoCurve normalize_curve(const ParetoCurve& curve);

/// Marks the grid point of maximum interior curvature of the normalized curve.
void mark_grid_corner(ParetoCurve& curve);

/// Evaluator of the weighted trade-off curve used by the lambda search.
CurveEval pareto_evaluator(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                           const Eigen::VectorXd& weights, const SolverConfig& config);

}  // namespace sparsedyn
