#include "sparsedyn/differentiation.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseQR>
#include <Eigen/OrderingMethods>
#include <cmath>
#include <sstream>

#include "sparsedyn/errors.hpp"
#include "sparsedyn/pareto.hpp"

namespace sparsedyn {

namespace {

using Sparse = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

Sparse first_difference(int N) {
  std::vector<Triplet> t;
  for (int i = 0; i < N - 1; ++i) {
    t.emplace_back(i, i, -1.0);
    t.emplace_back(i, i + 1, 1.0);
  }
  Sparse D(N - 1, N);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

Sparse second_difference(int N) {
  std::vector<Triplet> t;
  for (int i = 0; i < N - 2; ++i) {
    t.emplace_back(i, i, 1.0);
    t.emplace_back(i, i + 1, -2.0);
    t.emplace_back(i, i + 2, 1.0);
  }
  Sparse D(N - 2, N);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

Sparse stacked_smoothing(int N, double dt, const Sparse& D1, const Sparse& D2) {
  std::vector<Triplet> t;
  for (int i = 0; i < N; ++i) t.emplace_back(i, i, dt * dt);
  for (int k = 0; k < D1.outerSize(); ++k)
    for (Sparse::InnerIterator it(D1, k); it; ++it)
      t.emplace_back(N + it.row(), it.col(), dt * it.value());
  for (int k = 0; k < D2.outerSize(); ++k)
    for (Sparse::InnerIterator it(D2, k); it; ++it)
      t.emplace_back(2 * N - 1 + it.row(), it.col(), it.value());
  Sparse D(3 * N - 3, N);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

// Inverse of the integral operator up to the factor 1/dt: a bidiagonal
// matrix with 1 on the diagonal and -1 below it.
Sparse integral_inverse_stencil(int N) {
  std::vector<Triplet> t;
  for (int i = 0; i < N; ++i) {
    t.emplace_back(i, i, 1.0);
    if (i > 0) t.emplace_back(i, i - 1, -1.0);
  }
  Sparse B(N, N);
  B.setFromTriplets(t.begin(), t.end());
  return B;
}

}  // namespace

DiffOperators build_operators(int m, double dt) {
  if (m < 4) throw Error(ErrorCategory::size, "differentiation needs at least 4 samples");
  if (!(dt > 0)) throw Error(ErrorCategory::argument, "dt must be positive");
  const int N = m - 1;
  DiffOperators op;
  op.m = m;
  op.dt = dt;
  op.A = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j <= i; ++j) op.A(i, j) = dt;
  op.D1 = first_difference(N);
  op.D2 = second_difference(N);
  op.D = stacked_smoothing(N, dt, op.D1, op.D2);
  return op;
}

Eigen::VectorXd integral_rhs(const Eigen::VectorXd& x) {
  return x.tail(x.size() - 1).array() - x(0);
}

TikhonovSolution tikhonov_solve(const Eigen::VectorXd& x, double dt, double alpha) {
  if (x.size() < 4) throw Error(ErrorCategory::size, "differentiation needs at least 4 samples");
  if (!(alpha >= 0)) throw Error(ErrorCategory::argument, "alpha must be non-negative");
  if (!(dt > 0)) throw Error(ErrorCategory::argument, "dt must be positive");
  const int N = static_cast<int>(x.size()) - 1;
  const Eigen::VectorXd xhat = integral_rhs(x);
  const Sparse D1 = first_difference(N);
  const Sparse D2 = second_difference(N);
  const Sparse D = stacked_smoothing(N, dt, D1, D2);
  const Sparse Linv = integral_inverse_stencil(N);
  // With u = A v the problem becomes min ||u - xhat||^2 + alpha ||B u||^2.
  const Sparse B = (D * Linv) / dt;

  Eigen::VectorXd u;
  if (alpha == 0.0) {
    u = xhat;
  } else {
    Sparse I(N, N);
    I.setIdentity();
    const Sparse Babs = B.cwiseAbs();
    const Eigen::VectorXd col_sums = Eigen::RowVectorXd::Ones(Babs.rows()) * Babs;
    const Eigen::VectorXd row_sums = Babs * Eigen::VectorXd::Ones(Babs.cols());
    const double bound = 1.0 + alpha * col_sums.maxCoeff() * row_sums.maxCoeff();
    const Sparse M = I + alpha * Sparse(B.transpose() * B);
    Eigen::SimplicialLDLT<Sparse> ldlt;
    if (bound < 1e12) ldlt.compute(M);
    if (bound < 1e12 && ldlt.info() == Eigen::Success) {
      u = ldlt.solve(xhat);
    } else {
      std::vector<Triplet> t;
      for (int i = 0; i < N; ++i) t.emplace_back(i, i, 1.0);
      const double sa = std::sqrt(alpha);
      for (int k = 0; k < B.outerSize(); ++k)
        for (Sparse::InnerIterator it(B, k); it; ++it)
          t.emplace_back(N + it.row(), it.col(), sa * it.value());
      Sparse S(N + B.rows(), N);
      S.setFromTriplets(t.begin(), t.end());
      S.makeCompressed();
      Eigen::SparseQR<Sparse, Eigen::COLAMDOrdering<int>> qr(S);
      if (qr.info() != Eigen::Success)
        throw Error(ErrorCategory::linear_algebra, "Tikhonov system factorization failed");
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N + B.rows());
      rhs.head(N) = xhat;
      u = qr.solve(rhs);
    }
    if (!u.allFinite())
      throw Error(ErrorCategory::linear_algebra, "Tikhonov solve produced non-finite values");
  }
  TikhonovSolution s;
  s.derivative = (Linv * u) / dt;
  s.residual = (u - xhat).norm();
  s.seminorm = (D * s.derivative).norm();
  return s;
}

Eigen::VectorXd differentiate_tikhonov(const Eigen::VectorXd& x, double dt, double alpha) {
  return tikhonov_solve(x, dt, alpha).derivative;
}

double estimate_noise_sigma(const Eigen::VectorXd& x) {
  const Eigen::Index m = x.size();
  if (m < 6) return 0.0;
  // Fourth differences of white noise have variance 70 sigma^2.
  double ss = 0.0;
  for (Eigen::Index i = 0; i + 4 < m; ++i) {
    const double d = x(i) - 4 * x(i + 1) + 6 * x(i + 2) - 4 * x(i + 3) + x(i + 4);
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(m - 4) / 70.0);
}

AlphaSelection select_alpha_corner(const Eigen::VectorXd& x, double dt,
                                   std::pair<double, double> alpha_range, double tol) {
  const auto [lo, hi] = alpha_range;
  if (!(lo > 0) || !(hi > lo))
    throw Error(ErrorCategory::argument, "alpha range must satisfy 0 < lo < hi");
  auto eval = [&](double a) {
    const TikhonovSolution s = tikhonov_solve(x, dt, a);
    return Point2{std::log10(std::max(s.residual, kLogFloor)),
                  std::log10(std::max(s.seminorm, kLogFloor))};
  };
  AlphaSelection out;
  try {
    const CornerResult c = find_corner_goldensection(eval, lo, hi, tol);
    out.alpha = c.lambda;
    out.curvature = c.curvature;
  } catch (const Error& e) {
    if (e.category() != ErrorCategory::no_corner) throw;
    out.flagged = true;
    const double target = estimate_noise_sigma(x) * std::sqrt(static_cast<double>(x.size() - 1));
    double a = std::log10(lo), b = std::log10(hi);
    if (tikhonov_solve(x, dt, lo).residual >= target) {
      out.alpha = lo;
    } else if (tikhonov_solve(x, dt, hi).residual <= target) {
      out.alpha = hi;
    } else {
      for (int it = 0; it < 60 && b - a > 1e-6; ++it) {
        const double mid = 0.5 * (a + b);
        if (tikhonov_solve(x, dt, std::pow(10.0, mid)).residual < target)
          a = mid;
        else
          b = mid;
      }
      out.alpha = std::pow(10.0, 0.5 * (a + b));
    }
  }
  const TikhonovSolution s = tikhonov_solve(x, dt, out.alpha);
  out.residual = s.residual;
  out.seminorm = s.seminorm;
  return out;
}

Eigen::MatrixXd midpoint_states(const Eigen::MatrixXd& X, MidpointRule rule) {
  const Eigen::Index m = X.rows();
  if (m < 2) throw Error(ErrorCategory::size, "midpoints need at least 2 samples");
  Eigen::MatrixXd M = 0.5 * (X.topRows(m - 1) + X.bottomRows(m - 1));
  if (rule == MidpointRule::cubic && m >= 4) {
    for (Eigen::Index i = 1; i + 2 < m; ++i)
      M.row(i) = (-X.row(i - 1) + 9.0 * X.row(i) + 9.0 * X.row(i + 1) - X.row(i + 2)) / 16.0;
  }
  return M;
}

DerivativeEstimate extended_window_derivatives(const Trajectory& traj,
                                               std::pair<double, double> train_span,
                                               const DifferentiationOptions& opt) {
  const auto [ta, tb] = train_span;
  if (!(tb > ta)) throw Error(ErrorCategory::argument, "training span must have t_b > t_a");
  const double ext = opt.extension * (tb - ta);
  const double need_lo = ta - ext, need_hi = tb + ext;
  const double slack = 1e-9 * std::max(1.0, std::abs(need_hi));
  if (need_lo < traj.t0 - slack || need_hi > traj.t_end() + slack) {
    std::ostringstream os;
    os << "trajectory [" << traj.t0 << ", " << traj.t_end() << "] does not cover the extended window ["
       << need_lo << ", " << need_hi << "]";
    if (need_lo < traj.t0 - slack) os << "; missing [" << need_lo << ", " << traj.t0 << ")";
    if (need_hi > traj.t_end() + slack) os << "; missing (" << traj.t_end() << ", " << need_hi << "]";
    throw Error(ErrorCategory::coverage, os.str());
  }
  const long k0 = std::lround(std::ceil((need_lo - traj.t0) / traj.dt - 1e-9));
  const long k1 = std::lround(std::floor((need_hi - traj.t0) / traj.dt + 1e-9));
  const Eigen::MatrixXd X = traj.states.middleRows(k0, k1 - k0 + 1);
  const int m = static_cast<int>(X.rows());
  if (m < 4) throw Error(ErrorCategory::size, "extended window holds fewer than 4 samples");

  std::vector<int> keep;
  for (int i = 0; i < m - 1; ++i) {
    const double t = traj.t0 + (k0 + i) * traj.dt + 0.5 * traj.dt;
    if (t > ta + 1e-12 && t < tb - 1e-12) keep.push_back(i);
  }
  DerivativeEstimate est;
  est.midpoint_times.resize(static_cast<Eigen::Index>(keep.size()));
  est.values.resize(static_cast<Eigen::Index>(keep.size()), X.cols());
  est.states.resize(static_cast<Eigen::Index>(keep.size()), X.cols());
  const Eigen::MatrixXd mids = midpoint_states(X, opt.midpoint_rule);
  for (size_t r = 0; r < keep.size(); ++r) {
    est.midpoint_times(r) = traj.t0 + (k0 + keep[r]) * traj.dt + 0.5 * traj.dt;
    est.states.row(r) = mids.row(keep[r]);
  }
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const Eigen::VectorXd xj = X.col(j);
    const AlphaSelection sel = select_alpha_corner(xj, traj.dt, opt.alpha_range, opt.tol);
    const Eigen::VectorXd v = differentiate_tikhonov(xj, traj.dt, sel.alpha);
    for (size_t r = 0; r < keep.size(); ++r) est.values(r, j) = v(keep[r]);
    est.alpha.push_back(sel);
  }
  return est;
}

}  // namespace sparsedyn
