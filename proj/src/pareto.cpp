#include "sparsedyn/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>

#include "sparsedyn/errors.hpp"

namespace sparsedyn {

double menger_curvature(Point2 p1, Point2 p2, Point2 p3) {
  const double a = std::hypot(p2.x - p1.x, p2.y - p1.y);
  const double b = std::hypot(p3.x - p2.x, p3.y - p2.y);
  const double c = std::hypot(p3.x - p1.x, p3.y - p1.y);
  if (a == 0.0 || b == 0.0 || c == 0.0)
    throw Error(ErrorCategory::argument, "Menger curvature of coincident points");
  const double cross = (p2.x - p1.x) * (p3.y - p1.y) - (p2.y - p1.y) * (p3.x - p1.x);
  return 2.0 * cross / (a * b * c);
}

namespace {

constexpr double kGolden = 1.6180339887498949;

double safe_curvature(Point2 a, Point2 b, Point2 c) {
  try {
    return menger_curvature(a, b, c);
  } catch (const Error&) {
    return 0.0;
  }
}

// Affine map of both axes that sends the bracket endpoints to -1 and +1.
CurveEval endpoint_normalized(const CurveEval& eval, double lambda_lo, double lambda_hi) {
  const Point2 a = eval(lambda_lo);
  const Point2 b = eval(lambda_hi);
  auto scale = [](double u, double v) {
    const double h = 0.5 * std::abs(v - u);
    return h > 0 && std::isfinite(h) ? h : 1.0;
  };
  const double cx = 0.5 * (a.x + b.x), sx = scale(a.x, b.x);
  const double cy = 0.5 * (a.y + b.y), sy = scale(a.y, b.y);
  return [eval, cx, sx, cy, sy](double lambda) {
    const Point2 q = eval(lambda);
    return Point2{(q.x - cx) / sx, (q.y - cy) / sy};
  };
}

}  // namespace

std::vector<double> log_grid(double lo, double hi, int n) {
  if (!(lo > 0) || !(hi > lo) || n < 2)
    throw Error(ErrorCategory::argument, "log grid needs 0 < lo < hi and n >= 2");
  std::vector<double> g(n);
  const double a = std::log10(lo), b = std::log10(hi);
  for (int i = 0; i < n; ++i) g[i] = std::pow(10.0, a + (b - a) * i / (n - 1));
  return g;
}

CornerResult find_corner_goldensection(const CurveEval& eval, double lambda_lo, double lambda_hi,
                                       double tol) {
  if (!(lambda_lo > 0) || !(lambda_hi > lambda_lo))
    throw Error(ErrorCategory::argument, "corner search needs 0 < lambda_lo < lambda_hi");
  CornerResult res;
  const CurveEval f = endpoint_normalized(eval, lambda_lo, lambda_hi);
  std::map<double, Point2> cache;
  auto P = [&](double l) {
    auto it = cache.find(l);
    if (it != cache.end()) return it->second;
    const double lam = std::pow(10.0, l);
    const Point2 q = f(lam);
    cache.emplace(l, q);
    res.probes.push_back({lam, q});
    return q;
  };

  double x1 = std::log10(lambda_lo), x4 = std::log10(lambda_hi);
  double x2 = (x4 + kGolden * x1) / (1.0 + kGolden);
  double x3 = x1 + x4 - x2;
  double best_k = -std::numeric_limits<double>::infinity();
  double best_x = x2;
  std::vector<double> seen;
  auto note = [&](double k, double x) {
    seen.push_back(k);
    if (k > best_k) {
      best_k = k;
      best_x = x;
    }
  };

  for (int guard = 0; x4 - x1 > tol && guard < 500; ++guard) {
    const double c2 = safe_curvature(P(x1), P(x2), P(x3));
    double c3 = safe_curvature(P(x2), P(x3), P(x4));
    while (c3 < 0 && x4 - x1 > tol) {
      x4 = x3;
      x3 = x2;
      x2 = (x4 + kGolden * x1) / (1.0 + kGolden);
      c3 = safe_curvature(P(x2), P(x3), P(x4));
    }
    note(c2, x2);
    note(c3, x3);
    if (c2 > c3) {
      x4 = x3;
      x3 = x2;
      x2 = (x4 + kGolden * x1) / (1.0 + kGolden);
    } else {
      x1 = x2;
      x2 = x3;
      x3 = x1 + x4 - x2;
    }
  }
  res.evaluations = static_cast<int>(cache.size());
  if (!(best_k > 0))
    throw Error(ErrorCategory::no_corner, "no positive curvature inside the search bracket");
  res.lambda = std::pow(10.0, best_x);
  res.curvature = best_k;
  if (seen.size() > 1) {
    double mean = 0.0;
    for (double k : seen) mean += k;
    mean /= static_cast<double>(seen.size());
    double var = 0.0;
    for (double k : seen) var += (k - mean) * (k - mean);
    var /= static_cast<double>(seen.size());
    res.weak = var < 1e-6;
  }
  return res;
}

CornerResult find_corner_grid(const CurveEval& eval, double lambda_lo, double lambda_hi, int n) {
  const std::vector<double> g = log_grid(lambda_lo, lambda_hi, n);
  const CurveEval f = endpoint_normalized(eval, g.front(), g.back());
  CornerResult res;
  for (double l : g) res.probes.push_back({l, f(l)});
  res.evaluations = n;
  double best_k = -std::numeric_limits<double>::infinity();
  int arg = -1;
  for (int i = 1; i + 1 < n; ++i) {
    const double k =
        safe_curvature(res.probes[i - 1].point, res.probes[i].point, res.probes[i + 1].point);
    if (k > best_k) {
      best_k = k;
      arg = i;
    }
  }
  if (arg < 0 || !(best_k > 0))
    throw Error(ErrorCategory::no_corner, "no positive curvature on the grid");
  res.lambda = g[arg];
  res.curvature = best_k;
  return res;
}

CurveEval pareto_evaluator(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                           const Eigen::VectorXd& weights, const SolverConfig& config) {
  return [Phi, dx, weights, config](double lambda) {
    SparseSolution s;
    try {
      s = solve_bpdn(Phi, dx, lambda, weights, config);
    } catch (const SolverError& e) {
      s = e.best();
    }
    return Point2{std::log10(std::max(s.residual_2norm, kLogFloor)),
                  std::log10(std::max(s.weighted_l1, kLogFloor))};
  };
}

ParetoCurve sample_pareto_curve(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                                const Eigen::VectorXd& weights, const std::vector<double>& lambdas,
                                const SolverConfig& config) {
  for (size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0)) throw Error(ErrorCategory::argument, "lambda values must be positive");
    if (i > 0 && !(lambdas[i] > lambdas[i - 1]))
      throw Error(ErrorCategory::argument, "lambda values must be ascending");
  }
  ParetoCurve c;
  Eigen::VectorXd warm;
  for (double l : lambdas) {
    ParetoPoint pt;
    pt.lambda = l;
    SparseSolution s;
    try {
      s = solve_bpdn(Phi, dx, l, weights, config, warm);
    } catch (const SolverError& e) {
      s = e.best();
      pt.ok = false;
    }
    warm = s.xi;
    pt.log_residual = std::log10(std::max(s.residual_2norm, kLogFloor));
    pt.log_l1 = std::log10(std::max(s.weighted_l1, kLogFloor));
    c.points.push_back(pt);
  }
  return normalize_curve(c);
}

ParetoCurve normalize_curve(const ParetoCurve& curve) {
  ParetoCurve c = curve;
  c.normalized.assign(c.points.size(), Point2{});
  if (c.points.size() < 2) {
    c.flat_x = c.flat_y = true;
    return c;
  }
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& p : c.points) {
    xmin = std::min(xmin, p.log_residual);
    xmax = std::max(xmax, p.log_residual);
    ymin = std::min(ymin, p.log_l1);
    ymax = std::max(ymax, p.log_l1);
  }
  c.flat_x = !(xmax > xmin);
  c.flat_y = !(ymax > ymin);
  for (size_t i = 0; i < c.points.size(); ++i) {
    c.normalized[i].x =
        c.flat_x ? 0.0 : 2.0 * (c.points[i].log_residual - xmin) / (xmax - xmin) - 1.0;
    c.normalized[i].y = c.flat_y ? 0.0 : 2.0 * (c.points[i].log_l1 - ymin) / (ymax - ymin) - 1.0;
  }
  return c;
}

void mark_grid_corner(ParetoCurve& curve) {
  if (curve.normalized.size() != curve.points.size()) curve = normalize_curve(curve);
  std::vector<size_t> idx;
  for (size_t i = 0; i < curve.points.size(); ++i)
    if (curve.points[i].ok) idx.push_back(i);
  double best_k = -std::numeric_limits<double>::infinity();
  curve.corner_index = -1;
  for (size_t a = 1; a + 1 < idx.size(); ++a) {
    const auto& q = curve.normalized;
    const double k = safe_curvature(q[idx[a - 1]], q[idx[a]], q[idx[a + 1]]);
    if (k > best_k) {
      best_k = k;
      curve.corner_index = static_cast<int>(idx[a]);
    }
  }
  if (curve.corner_index >= 0) curve.corner_lambda = curve.points[curve.corner_index].lambda;
}

}  // namespace sparsedyn
