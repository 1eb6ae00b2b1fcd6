#include "sparsedyn/solver.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sparsedyn/pareto.hpp"

namespace sparsedyn {

namespace {

Eigen::VectorXd ones_if_empty(const Eigen::VectorXd& w, Eigen::Index p) {
  if (w.size() == 0) return Eigen::VectorXd::Ones(p);
  if (w.size() != p) throw Error(ErrorCategory::size, "weight vector length mismatch");
  if ((w.array() <= 0).any() || !w.allFinite())
    throw Error(ErrorCategory::argument, "weights must be strictly positive and finite");
  return w;
}

double sgn(double v) { return (v > 0) - (v < 0); }

// The problem in internally scaled variables z_j = c_j xi_j, where c holds
// the column norms.  pen_j = lambda * w_j / c_j is the per-coordinate l1
// weight of the scaled problem.
struct Scaled {
  Eigen::MatrixXd G;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  Eigen::VectorXd pen;
  double yy = 0.0;

  double objective(const Eigen::VectorXd& z) const {
    return z.dot(G * z) - 2.0 * b.dot(z) + yy + pen.dot(z.cwiseAbs());
  }

  // KKT violation per coordinate, expressed in the original coordinates.
  Eigen::VectorXd kkt(const Eigen::VectorXd& z) const {
    const Eigen::VectorXd g = 2.0 * (G * z - b);
    Eigen::VectorXd r(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double v = z(j) != 0.0 ? std::abs(g(j) + pen(j) * sgn(z(j)))
                                   : std::max(std::abs(g(j)) - pen(j), 0.0);
      r(j) = c(j) * v;
    }
    return r;
  }
};

// Equality-constrained refinement on a guessed support with fixed signs.
// Returns true with a sign-consistent stationary point that satisfies the
// off-support conditions of the scaled problem.
bool active_set_refine(const Scaled& P, const Eigen::VectorXd& start, Eigen::VectorXd& out) {
  const Eigen::Index p = start.size();
  std::vector<int> S;
  std::vector<double> sign;
  for (Eigen::Index j = 0; j < p; ++j)
    if (start(j) != 0.0) {
      S.push_back(static_cast<int>(j));
      sign.push_back(sgn(start(j)));
    }
  const int budget = static_cast<int>(3 * p + 5);
  for (int it = 0; it < budget; ++it) {
    Eigen::VectorXd cand = Eigen::VectorXd::Zero(p);
    if (!S.empty()) {
      const Eigen::Index k = static_cast<Eigen::Index>(S.size());
      Eigen::MatrixXd Gs(k, k);
      Eigen::VectorXd rhs(k);
      for (Eigen::Index a = 0; a < k; ++a) {
        rhs(a) = P.b(S[a]) - 0.5 * P.pen(S[a]) * sign[a];
        for (Eigen::Index bb = 0; bb < k; ++bb) Gs(a, bb) = P.G(S[a], S[bb]);
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(Gs);
      if (ldlt.info() != Eigen::Success) return false;
      const Eigen::VectorXd zs = ldlt.solve(rhs);
      if (!zs.allFinite()) return false;
      std::vector<int> S2;
      std::vector<double> sign2;
      for (Eigen::Index a = 0; a < k; ++a)
        if (sgn(zs(a)) == sign[a]) {
          S2.push_back(S[a]);
          sign2.push_back(sign[a]);
        }
      if (S2.size() != S.size()) {
        S.swap(S2);
        sign.swap(sign2);
        continue;
      }
      for (Eigen::Index a = 0; a < k; ++a) cand(S[a]) = zs(a);
    }
    const Eigen::VectorXd g = 2.0 * (P.G * cand - P.b);
    int worst = -1;
    double worst_v = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (cand(j) != 0.0) continue;
      const double v = P.c(j) * (std::abs(g(j)) - P.pen(j));
      if (v > worst_v) {
        worst_v = v;
        worst = static_cast<int>(j);
      }
    }
    if (worst < 0) {
      out = cand;
      return true;
    }
    S.push_back(worst);
    sign.push_back(-sgn(g(worst)));
  }
  return false;
}

SparseSolution finish(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx, double lambda,
                      const Eigen::VectorXd& w, Eigen::VectorXd xi, long inner,
                      const SolverConfig& config) {
  SparseSolution s;
  s.xi = std::move(xi);
  s.lambda = lambda;
  s.weights = w;
  s.residual_2norm = (Phi * s.xi - dx).norm();
  s.weighted_l1 = weighted_l1(w, s.xi);
  s.support = report_support(s.xi, config.support_threshold);
  s.optimality = optimality_residual(Phi, dx, lambda, w, s.xi);
  s.inner_iterations = inner;
  return s;
}

}  // namespace

double weighted_l1(const Eigen::VectorXd& weights, const Eigen::VectorXd& xi) {
  if (weights.size() == 0) return xi.lpNorm<1>();
  return weights.dot(xi.cwiseAbs());
}

std::vector<int> report_support(const Eigen::VectorXd& xi, double threshold) {
  std::vector<int> s;
  if (xi.size() == 0) return s;
  const double m = xi.cwiseAbs().maxCoeff();
  if (m == 0.0) return s;
  for (Eigen::Index i = 0; i < xi.size(); ++i)
    if (std::abs(xi(i)) > threshold * m) s.push_back(static_cast<int>(i));
  return s;
}

double lambda_max(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                  const Eigen::VectorXd& weights) {
  if (Phi.rows() != dx.size()) throw Error(ErrorCategory::size, "Phi rows and dx length differ");
  const Eigen::VectorXd w = ones_if_empty(weights, Phi.cols());
  if (Phi.cols() == 0) return 0.0;
  return (2.0 * (Phi.transpose() * dx)).cwiseAbs().cwiseQuotient(w).maxCoeff();
}

double optimality_residual(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx, double lambda,
                           const Eigen::VectorXd& weights, const Eigen::VectorXd& xi) {
  const Eigen::VectorXd w = ones_if_empty(weights, Phi.cols());
  const Eigen::VectorXd g = 2.0 * (Phi.transpose() * (Phi * xi - dx));
  double r = 0.0;
  for (Eigen::Index i = 0; i < xi.size(); ++i) {
    const double v = xi(i) != 0.0 ? std::abs(g(i) + lambda * w(i) * sgn(xi(i)))
                                  : std::max(std::abs(g(i)) - lambda * w(i), 0.0);
    r = std::max(r, v);
  }
  return r;
}

SparseSolution solve_bpdn(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx, double lambda,
                          const Eigen::VectorXd& weights, const SolverConfig& config,
                          const Eigen::VectorXd& warm_start) {
  if (Phi.rows() != dx.size()) throw Error(ErrorCategory::size, "Phi rows and dx length differ");
  if (!(lambda >= 0)) throw Error(ErrorCategory::argument, "lambda must be non-negative");
  if (!Phi.allFinite() || !dx.allFinite())
    throw Error(ErrorCategory::argument, "regression data contains non-finite values");
  if (config.polish_every < 1 || config.max_inner_iterations < 1)
    throw Error(ErrorCategory::configuration, "polish_every and max_inner_iterations must be positive");
  const Eigen::Index p = Phi.cols();
  const Eigen::VectorXd w = ones_if_empty(weights, p);

  if (lambda >= lambda_max(Phi, dx, w))
    return finish(Phi, dx, lambda, w, Eigen::VectorXd::Zero(p), 0, config);
  if (lambda == 0.0) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Phi);
    return finish(Phi, dx, lambda, w, cod.solve(dx), 0, config);
  }

  Scaled P;
  P.c = Phi.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < p; ++j)
    if (P.c(j) == 0.0) P.c(j) = 1.0;
  const Eigen::MatrixXd Pn = Phi * P.c.cwiseInverse().asDiagonal();
  P.G = Pn.transpose() * Pn;
  P.b = Pn.transpose() * dx;
  P.yy = dx.squaredNorm();
  P.pen = lambda * w.cwiseQuotient(P.c);

  const double scale = std::max((2.0 * (Phi.transpose() * dx)).cwiseAbs().maxCoeff(),
                                 std::numeric_limits<double>::min());
  const double tol = config.opt_tol * scale;
  const double L = 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                             P.G, Eigen::EigenvaluesOnly)
                             .eigenvalues()
                             .maxCoeff();

  Eigen::VectorXd z = Eigen::VectorXd::Zero(p);
  if (warm_start.size() == p) z = warm_start.cwiseProduct(P.c);
  Eigen::VectorXd v = z;
  double t = 1.0;
  double fo = P.objective(z);
  auto done = [&](const Eigen::VectorXd& zz, long it) {
    return finish(Phi, dx, lambda, w, zz.cwiseQuotient(P.c), it, config);
  };

  for (long it = 0; it < config.max_inner_iterations; ++it) {
    const Eigen::VectorXd u = v - (2.0 / L) * (P.G * v - P.b);
    Eigen::VectorXd zn(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      const double thr = P.pen(j) / L;
      zn(j) = sgn(u(j)) * std::max(std::abs(u(j)) - thr, 0.0);
    }
    const double fn = P.objective(zn);
    if (fn > fo) {
      t = 1.0;
      v = z;
    } else {
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      v = zn + ((t - 1.0) / tn) * (zn - z);
      z = zn;
      t = tn;
      fo = fn;
    }
    if ((it + 1) % config.polish_every == 0) {
      Eigen::VectorXd cand;
      if (active_set_refine(P, z, cand)) {
        if (P.kkt(cand).maxCoeff() <= tol) return done(cand, it);
        const double fc = P.objective(cand);
        if (fc < fo) {
          z = cand;
          v = cand;
          t = 1.0;
          fo = fc;
        }
      }
      if (P.kkt(z).maxCoeff() <= tol) return done(z, it);
    }
  }
  SparseSolution best = done(z, config.max_inner_iterations);
  std::ostringstream os;
  os << "BPDN did not converge at lambda = " << lambda << " (optimality residual "
     << best.optimality << ")";
  throw SolverError(os.str(), best);
}

namespace {

struct DiscrepancyCap {
  bool active = false;
  double lambda = 0.0;
  double noise = 0.0;
};

// Largest lambda whose residual stays within factor * noise, where the noise
// norm is estimated from the residual of the unregularized fit.
DiscrepancyCap discrepancy_cap(const Eigen::MatrixXd& P, const Eigen::VectorXd& dx,
                               const Eigen::VectorXd& w, double lo, double hi,
                               const SolverConfig& config) {
  DiscrepancyCap cap;
  const Eigen::Index m = P.rows();
  const Eigen::Index p = P.cols();
  if (m <= p) return cap;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(P);
  const double r_ls = (P * cod.solve(dx) - dx).norm();
  cap.noise = r_ls * std::sqrt(static_cast<double>(m) / static_cast<double>(m - p));
  const double target = config.discrepancy_factor * cap.noise;
  if (dx.norm() <= target) return cap;
  auto residual = [&](double lam) {
    try {
      return (P * solve_bpdn(P, dx, lam, w, config).xi - dx).norm();
    } catch (const SolverError& e) {
      return (P * e.best().xi - dx).norm();
    }
  };
  double a = std::log10(hi) - 12.0;
  double b = std::log10(hi);
  if (residual(lo) <= target) a = std::log10(lo);
  while (b - a > 0.25 * config.corner_tol) {
    const double c = 0.5 * (a + b);
    if (residual(std::pow(10.0, c)) <= target) a = c; else b = c;
  }
  cap.active = true;
  cap.lambda = std::pow(10.0, a);
  return cap;
}

}  // namespace

WbpdnResult solve_wbpdn(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                        const LambdaStrategy& strategy, const SolverConfig& config) {
  if (config.q <= 0 || config.eps <= 0 || config.k_max < 0)
    throw Error(ErrorCategory::configuration, "invalid reweighting configuration");
  if (Phi.rows() != dx.size()) throw Error(ErrorCategory::size, "Phi rows and dx length differ");
  if (!Phi.allFinite() || !dx.allFinite())
    throw Error(ErrorCategory::argument, "regression data contains non-finite values");
  const Eigen::Index p = Phi.cols();
  WbpdnResult res;
  res.column_scale = Eigen::VectorXd::Ones(p);
  if (config.normalize_columns) {
    res.column_scale = Phi.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < p; ++j)
      if (res.column_scale(j) == 0.0) res.column_scale(j) = 1.0;
  }
  const Eigen::VectorXd& s = res.column_scale;
  const Eigen::MatrixXd Pn = Phi * s.cwiseInverse().asDiagonal();

  Eigen::VectorXd w = Eigen::VectorXd::Ones(p);
  Eigen::VectorXd z_prev;
  for (int k = 0; k <= config.k_max; ++k) {
    WbpdnIteration rec;
    rec.lambda_max = lambda_max(Pn, dx, w);
    double lambda = 0.0;
    switch (strategy.kind) {
      case LambdaStrategyKind::fixed:
        lambda = strategy.fixed_lambda;
        break;
      case LambdaStrategyKind::cv: {
        const auto grid = log_grid(config.lambda_lo_fraction * rec.lambda_max, rec.lambda_max,
                                   strategy.cv_grid_points);
        lambda = select_lambda_cv(Pn, dx, grid, strategy.cv_folds, strategy.cv_seed, w, config)
                     .lambda;
        break;
      }
      case LambdaStrategyKind::pareto_corner: {
        if (rec.lambda_max == 0.0) break;
        const CurveEval eval = pareto_evaluator(Pn, dx, w, config);
        double lo = config.lambda_lo_fraction * rec.lambda_max;
        double hi = rec.lambda_max;
        if (config.discrepancy_factor > 0) {
          const DiscrepancyCap cap = discrepancy_cap(Pn, dx, w, lo, hi, config);
          rec.noise_estimate = cap.noise;
          if (cap.active) {
            rec.discrepancy_capped = true;
            hi = cap.lambda;
            lo = std::min(lo, std::max(config.lambda_lo_fraction * hi, 1e-12 * rec.lambda_max));
          }
        }
        rec.search_lo = lo;
        rec.search_hi = hi;
        if (!(hi > lo * std::pow(10.0, config.corner_tol))) {
          rec.corner_fallback = true;
          lambda = hi;
          break;
        }
        try {
          const CornerResult c = find_corner_goldensection(eval, lo, hi, config.corner_tol);
          lambda = c.lambda;
          rec.corner_curvature = c.curvature;
          rec.corner_evaluations = c.evaluations;
          rec.corner_weak = c.weak;
        } catch (const Error& e) {
          if (e.category() != ErrorCategory::no_corner) throw;
          rec.corner_fallback = true;
          // Without a convex corner the curve carries no noise floor to
          // locate; the capped end is the discrepancy choice.
          lambda = rec.discrepancy_capped ? hi : lo;
        }
        break;
      }
    }
    SparseSolution sol;
    try {
      sol = solve_bpdn(Pn, dx, lambda, w, config);
    } catch (const SolverError& e) {
      throw SolverError(std::string(e.what()) + " in reweighting iteration " + std::to_string(k),
                        e.best());
    }
    const Eigen::VectorXd z = sol.xi;
    // Express the iterate in the caller's coordinates.
    const Eigen::VectorXd w_orig = w.cwiseProduct(s);
    SparseSolution out;
    out.xi = z.cwiseQuotient(s);
    out.lambda = lambda;
    out.weights = w_orig;
    out.iterations = k;
    out.residual_2norm = (Phi * out.xi - dx).norm();
    out.weighted_l1 = weighted_l1(w_orig, out.xi);
    out.support = report_support(out.xi, config.support_threshold);
    out.optimality = optimality_residual(Phi, dx, lambda, w_orig, out.xi);
    out.inner_iterations = sol.inner_iterations;
    rec.solution = out;
    res.history.push_back(rec);
    res.final = out;

    if (k > 0 && z_prev.norm() > 0 &&
        (z - z_prev).norm() / z_prev.norm() < config.conv_tol)
      break;
    if (k > 0 && z_prev.norm() == 0 && z.norm() == 0) break;
    z_prev = z;
    w = (z.cwiseAbs().array().pow(config.q) + config.eps).inverse().matrix();
  }
  return res;
}

SparseSolution solve_stls(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx, double gamma,
                          int max_iters) {
  if (!(gamma >= 0)) throw Error(ErrorCategory::argument, "gamma must be non-negative");
  const Eigen::Index p = Phi.cols();
  auto lsq = [&](const std::vector<int>& cols) {
    Eigen::MatrixXd A(Phi.rows(), static_cast<Eigen::Index>(cols.size()));
    for (size_t j = 0; j < cols.size(); ++j) A.col(j) = Phi.col(cols[j]);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    const Eigen::VectorXd c = cod.solve(dx);
    Eigen::VectorXd full = Eigen::VectorXd::Zero(p);
    for (size_t j = 0; j < cols.size(); ++j) full(cols[j]) = c(j);
    return full;
  };
  std::vector<int> support(p);
  for (Eigen::Index j = 0; j < p; ++j) support[j] = static_cast<int>(j);
  Eigen::VectorXd xi = lsq(support);
  SparseSolution s;
  int it = 0;
  for (; it < max_iters; ++it) {
    std::vector<int> next;
    for (Eigen::Index j = 0; j < p; ++j)
      if (std::abs(xi(j)) > gamma) next.push_back(static_cast<int>(j));
    if (next.empty()) {
      xi.setZero();
      s.degenerate = true;
      break;
    }
    if (next == support) break;
    support = next;
    xi = lsq(support);
  }
  s.xi = xi;
  s.lambda = gamma;
  s.weights = Eigen::VectorXd::Ones(p);
  s.iterations = it;
  s.residual_2norm = (Phi * xi - dx).norm();
  s.weighted_l1 = xi.lpNorm<1>();
  s.support = report_support(xi, 0.0);
  return s;
}

namespace {

struct Folds {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> ranges;  // [begin, end)
};

Folds contiguous_folds(Eigen::Index m, int K) {
  if (K < 2) throw Error(ErrorCategory::argument, "cross-validation needs K >= 2");
  if (m < K) throw Error(ErrorCategory::size, "fewer rows than folds");
  Folds f;
  for (int k = 0; k < K; ++k) f.ranges.emplace_back(k * m / K, (k + 1) * m / K);
  return f;
}

void split(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
           std::pair<Eigen::Index, Eigen::Index> r, Eigen::MatrixXd& Pt, Eigen::VectorXd& yt,
           Eigen::MatrixXd& Pv, Eigen::VectorXd& yv) {
  const Eigen::Index m = Phi.rows(), nv = r.second - r.first;
  Pv = Phi.middleRows(r.first, nv);
  yv = dx.segment(r.first, nv);
  Pt.resize(m - nv, Phi.cols());
  yt.resize(m - nv);
  Pt.topRows(r.first) = Phi.topRows(r.first);
  yt.head(r.first) = dx.head(r.first);
  Pt.bottomRows(m - r.second) = Phi.bottomRows(m - r.second);
  yt.tail(m - r.second) = dx.tail(m - r.second);
}

}  // namespace

CvResult select_lambda_cv(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                          const std::vector<double>& lambda_grid, int K, std::uint64_t /*seed*/,
                          const Eigen::VectorXd& weights, const SolverConfig& config) {
  if (lambda_grid.empty()) throw Error(ErrorCategory::argument, "empty lambda grid");
  const Folds folds = contiguous_folds(Phi.rows(), K);
  CvResult out;
  out.mean_residual.assign(lambda_grid.size(), 0.0);
  for (const auto& r : folds.ranges)
    if (r.second - r.first < Phi.cols()) out.small_fold_warning = true;
  for (const auto& r : folds.ranges) {
    Eigen::MatrixXd Pt, Pv;
    Eigen::VectorXd yt, yv;
    split(Phi, dx, r, Pt, yt, Pv, yv);
    Eigen::VectorXd warm;
    for (size_t i = 0; i < lambda_grid.size(); ++i) {
      Eigen::VectorXd xi;
      try {
        xi = solve_bpdn(Pt, yt, lambda_grid[i], weights, config, warm).xi;
      } catch (const SolverError& e) {
        xi = e.best().xi;
      }
      warm = xi;
      out.mean_residual[i] += (Pv * xi - yv).norm() / K;
    }
  }
  const auto best = std::min_element(out.mean_residual.begin(), out.mean_residual.end());
  out.lambda = lambda_grid[static_cast<size_t>(best - out.mean_residual.begin())];
  return out;
}

CvResult select_gamma_cv(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                         const std::vector<double>& gamma_grid, int K) {
  if (gamma_grid.empty()) throw Error(ErrorCategory::argument, "empty threshold grid");
  const Folds folds = contiguous_folds(Phi.rows(), K);
  CvResult out;
  out.mean_residual.assign(gamma_grid.size(), 0.0);
  for (const auto& r : folds.ranges)
    if (r.second - r.first < Phi.cols()) out.small_fold_warning = true;
  for (const auto& r : folds.ranges) {
    Eigen::MatrixXd Pt, Pv;
    Eigen::VectorXd yt, yv;
    split(Phi, dx, r, Pt, yt, Pv, yv);
    for (size_t i = 0; i < gamma_grid.size(); ++i)
      out.mean_residual[i] += (Pv * solve_stls(Pt, yt, gamma_grid[i]).xi - yv).norm() / K;
  }
  const auto best = std::min_element(out.mean_residual.begin(), out.mean_residual.end());
  out.lambda = gamma_grid[static_cast<size_t>(best - out.mean_residual.begin())];
  return out;
}

double select_gamma_pareto(const Eigen::MatrixXd& Phi, const Eigen::VectorXd& dx,
                           const std::vector<double>& gamma_grid) {
  if (gamma_grid.empty()) throw Error(ErrorCategory::argument, "empty threshold grid");
  // Consecutive thresholds that yield the same model collapse to one point;
  // each point keeps the range of grid indices that produced it.
  struct Run {
    Point2 pt;
    size_t first, last;
  };
  std::vector<Run> runs;
  for (size_t i = 0; i < gamma_grid.size(); ++i) {
    const SparseSolution s = solve_stls(Phi, dx, gamma_grid[i]);
    const Point2 pt{std::log10(std::max(s.residual_2norm, kLogFloor)), static_cast<double>(s.support.size())};
    if (!runs.empty() && runs.back().pt.y == pt.y &&
        std::abs(runs.back().pt.x - pt.x) <= 1e-12 * std::max(1.0, std::abs(pt.x))) {
      runs.back().last = i;
      continue;
    }
    runs.push_back({pt, i, i});
  }
  ParetoCurve c;
  for (const Run& r : runs) c.points.push_back({gamma_grid[r.first], r.pt.x, r.pt.y, true});
  c = normalize_curve(c);
  double best = -std::numeric_limits<double>::infinity();
  size_t arg = 0;
  for (size_t i = 1; i + 1 < runs.size(); ++i) {
    try {
      const double k = menger_curvature(c.normalized[i - 1], c.normalized[i], c.normalized[i + 1]);
      if (k > best) {
        best = k;
        arg = i;
      }
    } catch (const Error&) {
    }
  }
  const Run& r = runs[arg];
  return std::sqrt(gamma_grid[r.first] * gamma_grid[r.last]);
}

}  // namespace sparsedyn
