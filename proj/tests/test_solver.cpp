#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "sparsedyn/errors.hpp"
#include "sparsedyn/solver.hpp"

using namespace sparsedyn;

namespace {

struct Instance {
  Eigen::MatrixXd Phi;
  Eigen::VectorXd dx;
};

Instance random_instance(std::mt19937_64& rng, int m, int p, double noise = 0.0) {
  std::normal_distribution<double> N;
  Instance in;
  in.Phi.resize(m, p);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < p; ++j) in.Phi(i, j) = N(rng);
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(p);
  xi(0) = 2.0;
  xi(p / 2) = -1.5;
  in.dx = in.Phi * xi;
  for (int i = 0; i < m; ++i) in.dx(i) += noise * N(rng);
  return in;
}

double kkt_scale(const Instance& in) { return (2.0 * in.Phi.transpose() * in.dx).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("lambda_max formula") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd d(2);
  d << 1, 0;
  CHECK(lambda_max(I, d) == 2.0);
  CHECK(lambda_max(I, Eigen::VectorXd::Zero(2)) == 0.0);
  Eigen::VectorXd w(2);
  w << 4, 1;
  CHECK(lambda_max(I, d, w) == 0.5);
}

TEST_CASE("scalar soft-threshold law") {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  for (double b : {-3.0, -0.4, 0.0, 0.2, 1.0, 2.5})
    for (double lam : {0.0, 0.5, 1.0, 4.0}) {
      const SparseSolution s = solve_bpdn(one, Eigen::VectorXd::Constant(1, b), lam);
      const double expect = (b > 0 ? 1.0 : -1.0) * std::max(std::abs(b) - lam / 2, 0.0);
      CHECK(s.xi(0) == doctest::Approx(expect).epsilon(1e-10));
    }
  const SparseSolution s = solve_bpdn(one, Eigen::VectorXd::Ones(1), 1.0);
  CHECK(s.xi(0) == doctest::Approx(0.5));
  Eigen::VectorXd half(1);
  half << 0.5;
  CHECK(optimality_residual(one, Eigen::VectorXd::Ones(1), 1.0, Eigen::VectorXd::Ones(1), half) <= 1e-10);
}

TEST_CASE("lambda zero gives the minimum-norm least-squares solution") {
  std::mt19937_64 rng(1);
  const Instance over = random_instance(rng, 40, 8, 0.1);
  const Eigen::VectorXd ls = over.Phi.completeOrthogonalDecomposition().solve(over.dx);
  const SparseSolution s = solve_bpdn(over.Phi, over.dx, 0.0);
  CHECK((s.xi - ls).norm() <= 1e-6 * ls.norm());
}

TEST_CASE("solutions vanish from lambda_max upwards") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng, 20, 10, 0.05);
    const double lm = lambda_max(in.Phi, in.dx);
    for (double f : {1.0, 1.01, 3.0}) {
      const SparseSolution s = solve_bpdn(in.Phi, in.dx, f * lm);
      CHECK(s.xi.norm() == 0.0);
      CHECK(optimality_residual(in.Phi, in.dx, f * lm, Eigen::VectorXd::Ones(10), s.xi) == 0.0);
    }
    const SparseSolution below = solve_bpdn(in.Phi, in.dx, 0.98 * lm);
    CHECK(below.xi.norm() > 0.0);
  }
}

TEST_CASE("returned solutions satisfy the optimality conditions") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.5, 5.0);
  const SolverConfig cfg;
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng, 30, 12, 0.1);
    Eigen::VectorXd w(12);
    for (int j = 0; j < 12; ++j) w(j) = U(rng);
    const double lam = 0.05 * lambda_max(in.Phi, in.dx, w);
    const SparseSolution s = solve_bpdn(in.Phi, in.dx, lam, w, cfg);
    CHECK(s.optimality <= cfg.opt_tol * kkt_scale(in) * 1.0001);
    CHECK(optimality_residual(in.Phi, in.dx, lam, w, s.xi) == doctest::Approx(s.optimality));
    CHECK(s.residual_2norm == doctest::Approx((in.Phi * s.xi - in.dx).norm()).epsilon(1e-10));
    CHECK(s.weighted_l1 == doctest::Approx(weighted_l1(w, s.xi)).epsilon(1e-10));
    CHECK((s.weights - w).norm() == 0.0);
  }
}

TEST_CASE("optimality residual grows with distance from the optimum") {
  std::mt19937_64 rng(4);
  const Instance in = random_instance(rng, 30, 6, 0.1);
  const double lam = 0.1 * lambda_max(in.Phi, in.dx);
  const SparseSolution s = solve_bpdn(in.Phi, in.dx, lam);
  const Eigen::VectorXd dir = Eigen::VectorXd::Ones(6).normalized();
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(6);
  double prev = optimality_residual(in.Phi, in.dx, lam, w, s.xi);
  for (double d : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    const double r = optimality_residual(in.Phi, in.dx, lam, w, s.xi + d * dir);
    CHECK(r > prev);
    prev = r;
  }
}

TEST_CASE("weighted problem equals the rescaled unweighted problem") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0.2, 10.0);
  const Instance in = random_instance(rng, 30, 10, 0.05);
  Eigen::VectorXd w(10);
  for (int j = 0; j < 10; ++j) w(j) = U(rng);
  const double lam = 0.02 * lambda_max(in.Phi, in.dx, w);
  SolverConfig tight;
  tight.opt_tol = 1e-12;
  const SparseSolution a = solve_bpdn(in.Phi, in.dx, lam, w, tight);
  const Eigen::MatrixXd Pt = in.Phi * w.cwiseInverse().asDiagonal();
  const SparseSolution b = solve_bpdn(Pt, in.dx, lam, {}, tight);
  CHECK((a.xi - b.xi.cwiseQuotient(w)).norm() <= 1e-8 * (1 + a.xi.norm()));
}

TEST_CASE("solver budget exhaustion carries the best iterate") {
  std::mt19937_64 rng(6);
  const Instance in = random_instance(rng, 40, 20, 0.1);
  SolverConfig cfg;
  cfg.max_inner_iterations = 2;
  cfg.polish_every = 1000;
  cfg.opt_tol = 1e-15;
  try {
    solve_bpdn(in.Phi, in.dx, 1e-3 * lambda_max(in.Phi, in.dx), {}, cfg);
    FAIL("expected a solver error");
  } catch (const SolverError& e) {
    CHECK(e.category() == ErrorCategory::solver);
    CHECK(e.best().xi.size() == 20);
    CHECK(e.best().optimality > 0.0);
  }
}

TEST_CASE("reweighting penalizes zero coefficients with 1/eps") {
  std::mt19937_64 rng(7);
  const Instance in = random_instance(rng, 60, 8, 0.01);
  SolverConfig cfg;
  cfg.normalize_columns = false;
  LambdaStrategy fixed;
  fixed.kind = LambdaStrategyKind::fixed;
  fixed.fixed_lambda = 0.2 * lambda_max(in.Phi, in.dx);
  const WbpdnResult r = solve_wbpdn(in.Phi, in.dx, fixed, cfg);
  REQUIRE(r.history.size() >= 2);
  const Eigen::VectorXd& x0 = r.history[0].solution.xi;
  const Eigen::VectorXd& w1 = r.history[1].solution.weights;
  CHECK(r.history[0].solution.weights.isOnes());
  for (int j = 0; j < 8; ++j) {
    CHECK(w1(j) == doctest::Approx(1.0 / (x0(j) * x0(j) + 1e-4)));
    if (x0(j) == 0.0) CHECK(w1(j) == doctest::Approx(1e4));
  }
  CHECK(r.final.weights.minCoeff() > 0.0);
}

TEST_CASE("reweighting decreases the weighted objective") {
  std::mt19937_64 rng(8);
  const Instance in = random_instance(rng, 60, 10, 0.05);
  SolverConfig cfg;
  cfg.normalize_columns = false;
  LambdaStrategy fixed;
  fixed.kind = LambdaStrategyKind::fixed;
  fixed.fixed_lambda = 0.05 * lambda_max(in.Phi, in.dx);
  const WbpdnResult r = solve_wbpdn(in.Phi, in.dx, fixed, cfg);
  for (size_t k = 1; k < r.history.size(); ++k) {
    const Eigen::VectorXd& w = r.history[k].solution.weights;
    const Eigen::VectorXd& prev = r.history[k - 1].solution.xi;
    const Eigen::VectorXd& cur = r.history[k].solution.xi;
    const double lam = fixed.fixed_lambda;
    const double f_prev = (in.Phi * prev - in.dx).squaredNorm() + lam * weighted_l1(w, prev);
    const double f_cur = (in.Phi * cur - in.dx).squaredNorm() + lam * weighted_l1(w, cur);
    CHECK(f_cur <= f_prev * (1 + 1e-10));
  }
}

TEST_CASE("column normalization does not change the fixed-lambda model") {
  std::mt19937_64 rng(9);
  Instance in = random_instance(rng, 50, 6, 0.0);
  in.Phi.col(2) *= 100.0;
  LambdaStrategy fixed;
  fixed.kind = LambdaStrategyKind::fixed;
  fixed.fixed_lambda = 1e-6;
  SolverConfig a, b;
  a.k_max = b.k_max = 0;
  b.normalize_columns = false;
  const Eigen::VectorXd xa = solve_wbpdn(in.Phi, in.dx, fixed, a).final.xi;
  const Eigen::VectorXd xb = solve_wbpdn(in.Phi, in.dx, fixed, b).final.xi;
  CHECK((in.Phi * xa - in.dx).norm() < 1e-4);
  CHECK((in.Phi * xb - in.dx).norm() < 1e-4);
}

TEST_CASE("corner selection recovers a sparse model from noisy data") {
  std::mt19937_64 rng(10);
  const Instance in = random_instance(rng, 100, 15, 0.01);
  const WbpdnResult r = solve_wbpdn(in.Phi, in.dx, LambdaStrategy{});
  CHECK(r.final.support == std::vector<int>{0, 7});
  for (const auto& it : r.history) {
    CHECK(it.search_hi <= it.lambda_max);
    CHECK(it.search_lo < it.search_hi);
  }
}

TEST_CASE("a zero discrepancy factor searches the full bracket") {
  std::mt19937_64 rng(11);
  const Instance in = random_instance(rng, 100, 15, 0.01);
  SolverConfig cfg;
  cfg.discrepancy_factor = 0.0;
  const WbpdnResult r = solve_wbpdn(in.Phi, in.dx, LambdaStrategy{}, cfg);
  for (const auto& it : r.history) {
    CHECK_FALSE(it.discrepancy_capped);
    CHECK(it.search_hi == it.lambda_max);
    CHECK(it.search_lo == doctest::Approx(cfg.lambda_lo_fraction * it.lambda_max));
  }
}

TEST_CASE("invalid reweighting configuration") {
  std::mt19937_64 rng(12);
  const Instance in = random_instance(rng, 20, 4);
  SolverConfig cfg;
  cfg.eps = 0.0;
  CHECK_THROWS_AS(solve_wbpdn(in.Phi, in.dx, LambdaStrategy{}, cfg), Error);
  CHECK_THROWS_AS(solve_bpdn(in.Phi, in.dx, -1.0), Error);
}

TEST_CASE("sequentially thresholded least squares") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> N;
  Eigen::MatrixXd Phi(10, 4);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 4; ++j) Phi(i, j) = N(rng);
  Eigen::VectorXd xi(4);
  xi << 3.0, 0.0, -2.0, 0.0;
  Eigen::VectorXd dx = Phi * xi;
  for (int i = 0; i < 10; ++i) dx(i) += 1e-3 * N(rng);

  const Eigen::VectorXd ls = Phi.colPivHouseholderQr().solve(dx);
  CHECK((solve_stls(Phi, dx, 0.0).xi - ls).norm() < 1e-10);

  const SparseSolution z = solve_stls(Phi, dx, 10.0);
  CHECK(z.xi.norm() == 0.0);
  CHECK(z.degenerate);

  // Exhaustive enumeration: the true support is the best two-column fit.
  double best = 1e300;
  std::vector<int> arg;
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      Eigen::MatrixXd S(10, 2);
      S << Phi.col(a), Phi.col(b);
      const double r = (S * S.colPivHouseholderQr().solve(dx) - dx).norm();
      if (r < best) {
        best = r;
        arg = {a, b};
      }
    }
  CHECK(arg == std::vector<int>{0, 2});
  for (double g : {0.1, 0.5, 1.0, 1.9}) {
    const SparseSolution s = solve_stls(Phi, dx, g);
    CHECK(s.support == std::vector<int>{0, 2});
    // One more sweep leaves the fixpoint unchanged.
    const SparseSolution again = solve_stls(Phi, dx, g, 1);
    CHECK(again.support == s.support);
    std::vector<int> kept;
    for (int j = 0; j < 4; ++j)
      if (std::abs(s.xi(j)) > g) kept.push_back(j);
    CHECK(kept == s.support);
  }
  CHECK_THROWS_AS(solve_stls(Phi, dx, -1.0), Error);
}

TEST_CASE("cross-validated lambda") {
  std::mt19937_64 rng(14);
  const Instance in = random_instance(rng, 200, 10, 0.05);
  const double lm = lambda_max(in.Phi, in.dx);
  const CvResult single = select_lambda_cv(in.Phi, in.dx, {0.1 * lm}, 5, 0);
  CHECK(single.lambda == 0.1 * lm);
  std::vector<double> grid;
  for (int i = 0; i < 25; ++i) grid.push_back(lm * std::pow(10.0, -6.0 + 6.0 * i / 24));
  const CvResult cv = select_lambda_cv(in.Phi, in.dx, grid, 5, 0);
  REQUIRE(cv.mean_residual.size() == grid.size());
  const auto it = std::min_element(cv.mean_residual.begin(), cv.mean_residual.end());
  CHECK(cv.lambda == grid[static_cast<size_t>(it - cv.mean_residual.begin())]);
  CHECK_FALSE(cv.small_fold_warning);
  CHECK(select_lambda_cv(in.Phi.topRows(20), in.dx.head(20), grid, 5, 0).small_fold_warning);
  CHECK_THROWS_AS(select_lambda_cv(in.Phi, in.dx, grid, 1, 0), Error);
  CHECK_THROWS_AS(select_lambda_cv(in.Phi, in.dx, {}, 5, 0), Error);
}

TEST_CASE("threshold selection for the least-squares baseline") {
  std::mt19937_64 rng(15);
  const Instance in = random_instance(rng, 200, 10, 0.01);
  std::vector<double> grid;
  for (int i = 0; i < 30; ++i) grid.push_back(std::pow(10.0, -4.0 + 4.5 * i / 29));
  const double g = select_gamma_pareto(in.Phi, in.dx, grid);
  CHECK(solve_stls(in.Phi, in.dx, g).support == std::vector<int>{0, 5});
  const CvResult cv = select_gamma_cv(in.Phi, in.dx, grid, 5);
  const std::vector<int> cv_support = solve_stls(in.Phi, in.dx, cv.lambda).support;
  const std::vector<int> truth{0, 5};
  CHECK(std::includes(cv_support.begin(), cv_support.end(), truth.begin(), truth.end()));
}
