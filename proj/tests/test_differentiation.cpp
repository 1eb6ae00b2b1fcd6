#include <doctest.h>

#include <cmath>
#include <random>

#include "sparsedyn/differentiation.hpp"
#include "sparsedyn/dynamics.hpp"
#include "sparsedyn/errors.hpp"
#include "sparsedyn/pareto.hpp"

using namespace sparsedyn;

namespace {

Eigen::VectorXd sample(double (*f)(double), int m, double dt, double t0 = 0.0) {
  Eigen::VectorXd x(m);
  for (int i = 0; i < m; ++i) x(i) = f(t0 + i * dt);
  return x;
}

double sq(double t) { return t * t; }
double lin(double t) { return t; }
double cube(double t) { return t * t * t - 0.5 * t; }

// Dense normal-equation solution of min ||A v - xhat||^2 + alpha ||D v||^2.
Eigen::VectorXd dense_tikhonov(const Eigen::VectorXd& x, double dt, double alpha) {
  const DiffOperators op = build_operators(static_cast<int>(x.size()), dt);
  const Eigen::MatrixXd D = Eigen::MatrixXd(op.D);
  const Eigen::MatrixXd N = op.A.transpose() * op.A + alpha * D.transpose() * D;
  return N.ldlt().solve(op.A.transpose() * integral_rhs(x));
}

}  // namespace

TEST_CASE("operator shapes") {
  const DiffOperators op = build_operators(4, 0.1);
  CHECK(op.A.rows() == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(op.A(i, j) == doctest::Approx(j <= i ? 0.1 : 0.0));
  const DiffOperators op5 = build_operators(5, 0.2);
  CHECK(op5.D.rows() == 9);
  CHECK(op5.D.cols() == 4);
  CHECK(op5.D1.rows() == 3);
  CHECK(op5.D2.rows() == 2);
  CHECK((op5.D1 * Eigen::VectorXd::Constant(4, 3.7)).norm() == 0.0);
  CHECK((op5.D2 * Eigen::VectorXd::LinSpaced(4, 0.0, 3.0)).norm() == 0.0);
  CHECK_THROWS_AS(build_operators(3, 0.1), Error);
  CHECK_THROWS_AS(build_operators(10, 0.0), Error);
}

TEST_CASE("integral right-hand side") {
  Eigen::VectorXd x(4);
  x << 2, 3, 5, 9;
  const Eigen::VectorXd r = integral_rhs(x);
  CHECK(r.size() == 3);
  CHECK(r(0) == 1.0);
  CHECK(r(2) == 7.0);
}

TEST_CASE("without regularization the estimate is the midpoint difference") {
  const double dt = 0.05;
  const Eigen::VectorXd xl = sample(lin, 40, dt);
  const Eigen::VectorXd vl = differentiate_tikhonov(xl, dt, 0.0);
  CHECK((vl.array() - 1.0).abs().maxCoeff() < 1e-10);

  const Eigen::VectorXd xq = sample(sq, 40, dt);
  const Eigen::VectorXd vq = differentiate_tikhonov(xq, dt, 0.0);
  for (int i = 0; i < vq.size(); ++i) CHECK(vq(i) == doctest::Approx(2.0 * (i + 0.5) * dt).epsilon(1e-10));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> N;
  Eigen::VectorXd x(60);
  for (int i = 0; i < 60; ++i) x(i) = N(rng);
  const Eigen::VectorXd v = differentiate_tikhonov(x, 0.01, 0.0);
  for (int i = 0; i < 59; ++i) CHECK(std::abs(v(i) - (x(i + 1) - x(i)) / 0.01) < 1e-10 * (1 + std::abs(v(i))));
}

TEST_CASE("banded solve agrees with dense normal equations") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> N;
  const double dt = 0.01;
  Eigen::VectorXd x(120);
  for (int i = 0; i < 120; ++i) x(i) = std::sin(i * dt) + 1e-3 * N(rng);
  for (double alpha : {1e-8, 1e-4, 1e-1, 10.0}) {
    const Eigen::VectorXd a = differentiate_tikhonov(x, dt, alpha);
    const Eigen::VectorXd b = dense_tikhonov(x, dt, alpha);
    CHECK((a - b).norm() <= 1e-6 * b.norm());
  }
}

TEST_CASE("reported residual and seminorm") {
  const double dt = 0.02;
  const Eigen::VectorXd x = sample([](double t) { return std::cos(3 * t); }, 50, dt);
  const TikhonovSolution s = tikhonov_solve(x, dt, 1e-3);
  const DiffOperators op = build_operators(50, dt);
  CHECK(s.residual == doctest::Approx((op.A * s.derivative - integral_rhs(x)).norm()).epsilon(1e-8));
  CHECK(s.seminorm == doctest::Approx((op.D * s.derivative).norm()).epsilon(1e-8));
}

TEST_CASE("L-curve trade-off is monotone in alpha") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N;
  const double dt = 0.01;
  Eigen::VectorXd x(201);
  for (int i = 0; i < 201; ++i) x(i) = std::sin(i * dt) + 1e-2 * N(rng);
  double prev_r = -1, prev_s = 1e300;
  for (double a : log_grid(1e-10, 1e2, 40)) {
    const TikhonovSolution s = tikhonov_solve(x, dt, a);
    CHECK(s.residual >= prev_r * (1 - 1e-9));
    CHECK(s.seminorm <= prev_s * (1 + 1e-9));
    prev_r = s.residual;
    prev_s = s.seminorm;
  }
}

TEST_CASE("noisy sine with the corner alpha") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N;
  const double dt = 0.01;
  const int m = 201;
  Eigen::VectorXd x(m), truth(m - 1);
  for (int i = 0; i < m; ++i) x(i) = std::sin(i * dt) + 1e-3 * N(rng);
  for (int i = 0; i < m - 1; ++i) truth(i) = std::cos((i + 0.5) * dt);
  const AlphaSelection a = select_alpha_corner(x, dt);
  const Eigen::VectorXd v = differentiate_tikhonov(x, dt, a.alpha);
  CHECK((v - truth).norm() / truth.norm() <= 5e-2);
}

TEST_CASE("corner alpha agrees with a dense grid scan") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> N;
  const double dt = 0.01;
  Eigen::VectorXd x(201);
  for (int i = 0; i < 201; ++i) x(i) = std::sin(5.0 * i * dt) + 1e-2 * N(rng);
  const AlphaSelection a = select_alpha_corner(x, dt, {1e-10, 1e2}, 1e-2);
  REQUIRE_FALSE(a.flagged);
  CHECK(a.curvature > 0.0);
  const CurveEval eval = [&](double alpha) {
    const TikhonovSolution s = tikhonov_solve(x, dt, alpha);
    return Point2{std::log10(s.residual), std::log10(s.seminorm)};
  };
  const int n = 100;
  const CornerResult g = find_corner_grid(eval, 1e-10, 1e2, n);
  const double step = 12.0 / (n - 1);
  CHECK(std::abs(std::log10(a.alpha) - std::log10(g.lambda)) <= step + 1e-2);
}

TEST_CASE("a record without a convex corner falls back to the noise discrepancy") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> N;
  const double dt = 0.01;
  Eigen::VectorXd x(201);
  for (int i = 0; i < 201; ++i) x(i) = std::sin(i * dt) + 1e-2 * N(rng);
  const AlphaSelection a = select_alpha_corner(x, dt, {1e-10, 1e2}, 1e-2);
  CHECK(a.flagged);
  const double target = estimate_noise_sigma(x) * std::sqrt(200.0);
  CHECK(a.residual == doctest::Approx(target).epsilon(1e-3));
}

TEST_CASE("noise-free data pushes alpha towards the lower end") {
  const double dt = 0.01;
  const Eigen::VectorXd x = sample(cube, 201, dt);
  const AlphaSelection clean = select_alpha_corner(x, dt);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> N;
  Eigen::VectorXd y = x;
  for (int i = 0; i < y.size(); ++i) y(i) += 1e-2 * N(rng);
  const AlphaSelection noisy = select_alpha_corner(y, dt);
  CHECK(clean.alpha < noisy.alpha);
  CHECK(clean.alpha <= 1e-6);
}

TEST_CASE("noise level estimate") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> N;
  Eigen::VectorXd x(2000);
  for (int i = 0; i < 2000; ++i) x(i) = std::sin(0.005 * i) + 0.02 * N(rng);
  CHECK(estimate_noise_sigma(x) == doctest::Approx(0.02).epsilon(0.1));
}

TEST_CASE("second-order accuracy on a smooth signal") {
  auto max_err = [](double dt) {
    const int m = static_cast<int>(std::lround(2.0 / dt)) + 1;
    Eigen::VectorXd x(m);
    for (int i = 0; i < m; ++i) x(i) = std::sin(i * dt);
    const Eigen::VectorXd v = differentiate_tikhonov(x, dt, 0.0);
    double e = 0.0;
    for (int i = 0; i < m - 1; ++i) e = std::max(e, std::abs(v(i) - std::cos((i + 0.5) * dt)));
    return e;
  };
  const double r = max_err(0.02) / max_err(0.01);
  CHECK(r >= 3.5);
  CHECK(r <= 4.5);
}

TEST_CASE("midpoint states") {
  Eigen::MatrixXd X(6, 1);
  for (int i = 0; i < 6; ++i) X(i, 0) = std::pow(0.3 * i, 3) - 0.3 * i;
  const Eigen::MatrixXd avg = midpoint_states(X, MidpointRule::average);
  const Eigen::MatrixXd cub = midpoint_states(X, MidpointRule::cubic);
  REQUIRE(avg.rows() == 5);
  for (int i = 0; i < 5; ++i) CHECK(avg(i, 0) == doctest::Approx(0.5 * (X(i, 0) + X(i + 1, 0))));
  for (int i = 1; i < 4; ++i) {
    const double t = 0.3 * (i + 0.5);
    CHECK(cub(i, 0) == doctest::Approx(t * t * t - t).epsilon(1e-12));
  }
  CHECK(cub(0, 0) == avg(0, 0));
  CHECK(cub(4, 0) == avg(4, 0));
}

TEST_CASE("extended training window") {
  const SystemSpec sys = make_benchmark(SystemName::lorenz63, 3);
  const Trajectory ex = integrate_rk4(sys, 0.0, 2.2, 0.01);
  const DerivativeEstimate d = extended_window_derivatives(ex, {0.1, 2.1});
  CHECK(d.midpoint_times.size() == 200);
  CHECK(d.values.rows() == 200);
  CHECK(d.states.rows() == 200);
  CHECK(d.alpha.size() == 3);
  CHECK(d.midpoint_times(0) == doctest::Approx(0.105));
  CHECK(d.midpoint_times(199) == doctest::Approx(2.095));
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::VectorXd f = sys.rhs(d.states.row(i).transpose());
    worst = std::max(worst, (d.values.row(i).transpose() - f).norm() / f.norm());
  }
  CHECK(worst < 1e-2);

  try {
    extended_window_derivatives(ex, {0.0, 2.2});
    FAIL("expected a coverage error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::coverage);
    CHECK(std::string(e.what()).find("missing") != std::string::npos);
  }
}
