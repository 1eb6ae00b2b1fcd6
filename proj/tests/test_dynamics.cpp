#include <doctest.h>

#include <cmath>

#include "sparsedyn/dynamics.hpp"
#include "sparsedyn/errors.hpp"

using namespace sparsedyn;

namespace {

int nonzeros(const Eigen::MatrixXd& A) {
  int c = 0;
  for (Eigen::Index i = 0; i < A.size(); ++i) c += A.data()[i] != 0.0;
  return c;
}

}  // namespace

TEST_CASE("benchmark definitions") {
  const SystemSpec lor = make_benchmark(SystemName::lorenz63, 3);
  CHECK(lor.n == 3);
  CHECK(lor.params.at("gamma") == 10.0);
  CHECK(lor.params.at("rho") == 28.0);
  CHECK(lor.params.at("beta") == doctest::Approx(8.0 / 3.0));
  CHECK(lor.x0(0) == -8.0);
  CHECK(lor.x0(1) == 7.0);
  CHECK(lor.x0(2) == 27.0);

  const SystemSpec sm = make_benchmark(SystemName::springmass, 2);
  CHECK(sm.params.at("m") == 1.0);
  CHECK(sm.params.at("k") == 10.0);
  CHECK(sm.x0(0) == 1.0);
  CHECK(sm.x0(1) == 0.0);
  CHECK(sm.true_coeffs(sm.basis.index_of({0, 1}), 0) == 1.0);
  CHECK(sm.true_coeffs(sm.basis.index_of({1, 0}), 1) == -10.0);

  const SystemSpec eu = make_benchmark(SystemName::euler_rigid, 3);
  CHECK(eu.true_coeffs(eu.basis.index_of({0, 1, 1}), 0) == doctest::Approx(-1.0));

  CHECK(nonzeros(lor.true_coeffs) == 7);
  CHECK(nonzeros(make_benchmark(SystemName::duffing, 4).true_coeffs) == 4);
  CHECK(nonzeros(make_benchmark(SystemName::vanderpol, 4).true_coeffs) == 4);
  CHECK(nonzeros(sm.true_coeffs) == 2);
  CHECK(nonzeros(eu.true_coeffs) == 3);
  CHECK(make_benchmark(SystemName::duffing, 4).n == 2);
  CHECK(make_benchmark(SystemName::vanderpol, 4).n == 2);

  CHECK_THROWS_AS(parse_system_name("rossler"), Error);
  CHECK(parse_system_name("euler_rigid") == SystemName::euler_rigid);
  CHECK_THROWS_AS(make_benchmark(SystemName::lorenz63, 1), Error);
}

TEST_CASE("true coefficients reproduce the right-hand side") {
  for (SystemName s : {SystemName::lorenz63, SystemName::duffing, SystemName::vanderpol, SystemName::springmass,
                       SystemName::euler_rigid}) {
    const SystemSpec sys = make_benchmark(s, 4);
    const VectorField g = polynomial_field(sys.true_coeffs, sys.basis);
    Eigen::VectorXd x = sys.x0 + 0.3 * Eigen::VectorXd::Ones(sys.n);
    CHECK((g(x) - sys.rhs(x)).norm() <= 1e-12 * (1 + sys.rhs(x).norm()));
  }
}

TEST_CASE("RK4 on the scalar decay") {
  const VectorField f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-x); };
  const Trajectory tr = integrate_rk4(f, Eigen::VectorXd::Ones(1), 0.0, 1.0, 0.1, 1e-3);
  CHECK(tr.samples() == 11);
  CHECK(std::abs(tr.states(10, 0) - std::exp(-1.0)) < 1e-8);
  CHECK(tr.time(10) == doctest::Approx(1.0));
}

TEST_CASE("RK4 is fourth order") {
  const VectorField f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd d(2);
    d << x(1), -std::sin(x(0));
    return d;
  };
  Eigen::VectorXd x0(2);
  x0 << 1.0, 0.0;
  const double ref = integrate_rk4(f, x0, 0.0, 2.0, 2.0, 1e-4).states(1, 0);
  const double e1 = std::abs(integrate_rk4(f, x0, 0.0, 2.0, 2.0, 0.1).states(1, 0) - ref);
  const double e2 = std::abs(integrate_rk4(f, x0, 0.0, 2.0, 2.0, 0.05).states(1, 0) - ref);
  CHECK(e1 / e2 > 14.0);
  CHECK(e1 / e2 < 18.0);
}

TEST_CASE("Lorenz step agrees with a tiny-step reference") {
  const SystemSpec sys = make_benchmark(SystemName::lorenz63, 3);
  const Trajectory a = integrate_rk4(sys, 0.0, 0.01, 0.01, 1e-4);
  const Trajectory b = integrate_rk4(sys, 0.0, 0.01, 0.01, 1e-6);
  CHECK((a.states.row(1) - b.states.row(1)).norm() < 1e-8);
}

TEST_CASE("conserved quantities") {
  const SystemSpec sm = make_benchmark(SystemName::springmass, 2);
  const Trajectory t = integrate_rk4(sm, 0.0, 2.0, 0.01, 1e-3);
  auto energy = [](const Eigen::VectorXd& x) { return 0.5 * 10.0 * x(0) * x(0) + 0.5 * x(1) * x(1); };
  const double E0 = energy(t.states.row(0).transpose());
  double drift = 0.0;
  for (int k = 0; k < t.samples(); ++k) drift = std::max(drift, std::abs(energy(t.states.row(k).transpose()) - E0) / E0);
  CHECK(drift <= 1e-6);

  const SystemSpec eu = make_benchmark(SystemName::euler_rigid, 3);
  const Trajectory r = integrate_rk4(eu, 0.0, 11.0, 0.01, 1e-4);
  const Eigen::Vector3d I(1, 2, 3);
  double dT = 0.0, dL = 0.0;
  for (int k = 0; k < r.samples(); ++k) {
    const Eigen::Vector3d w = r.states.row(k).transpose();
    const double twoT = (I.array() * w.array().square()).sum();
    const double L2 = (I.array().square() * w.array().square()).sum();
    dT = std::max(dT, std::abs(twoT - 6.0) / 6.0);
    dL = std::max(dL, std::abs(L2 - 14.0) / 14.0);
  }
  CHECK(dT <= 1e-6);
  CHECK(dL <= 1e-6);
}

TEST_CASE("integration arguments and blow-up") {
  const SystemSpec sys = make_benchmark(SystemName::lorenz63, 3);
  CHECK_THROWS_AS(integrate_rk4(sys, 0.0, 1.0, 0.01, 0.02), Error);
  CHECK_THROWS_AS(integrate_rk4(sys, 0.0, 1.0, 0.03, 1e-3), Error);
  const VectorField f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().square()); };
  try {
    integrate_rk4(f, Eigen::VectorXd::Ones(1), 0.0, 2.0, 0.01, 1e-4);
    FAIL("expected a blow-up");
  } catch (const IntegrationError& e) {
    CHECK(e.category() == ErrorCategory::integration);
    CHECK(e.time() == doctest::Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("noise model") {
  Trajectory zero;
  zero.dt = 0.01;
  zero.states = Eigen::MatrixXd::Zero(100000, 1);
  const Trajectory n1 = add_noise(zero, 0.1, 42);
  const Trajectory n2 = add_noise(zero, 0.1, 42);
  CHECK((n1.states - n2.states).norm() == 0.0);
  CHECK(n1.kind == TrajectoryKind::noisy);
  CHECK(n1.sigma == 0.1);
  const double mean = n1.states.mean();
  const double var = (n1.states.array() - mean).square().sum() / (n1.samples() - 1);
  CHECK(var >= 0.0095);
  CHECK(var <= 0.0105);
  CHECK(std::abs(mean) <= 4 * 0.1 / std::sqrt(100000.0));

  const SystemSpec sys = make_benchmark(SystemName::lorenz63, 3);
  const Trajectory ex = integrate_rk4(sys, 0.0, 1.0, 0.01);
  CHECK((add_noise(ex, 0.0, 3).states - ex.states).norm() == 0.0);
  CHECK_THROWS_AS(add_noise(ex, -1.0, 3), Error);

  const Trajectory a = add_noise(ex, 0.01, 5, 0);
  const Trajectory b = add_noise(ex, 0.01, 5, 1);
  const Trajectory c = add_noise(ex, 0.01, 6, 0);
  CHECK((a.states - b.states).norm() > 0.0);
  CHECK((a.states - c.states).norm() > 0.0);
  CHECK((a.states.col(0) - ex.states.col(0) - (a.states.col(1) - ex.states.col(1))).norm() > 0.0);
}

TEST_CASE("signal to noise ratio") {
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(100, 1);
  CHECK(snr_db(ones, 1.0, SnrConvention::total_energy)(0) == doctest::Approx(20.0));
  CHECK(snr_db(ones, 1.0, SnrConvention::mean_power)(0) == doctest::Approx(0.0));
  const SystemSpec sys = make_benchmark(SystemName::lorenz63, 3);
  const Trajectory ex = integrate_rk4(sys, 0.0, 2.2, 0.01);
  const Eigen::VectorXd s1 = snr_db(ex.states, 0.01);
  const Eigen::VectorXd s2 = snr_db(ex.states, 0.02);
  for (int j = 0; j < 3; ++j) CHECK(s1(j) - s2(j) == doctest::Approx(20.0 * std::log10(2.0)));
  CHECK_THROWS_AS(snr_db(ex.states, 0.0), Error);
}

TEST_CASE("prediction with the identified vector field") {
  const SystemSpec sys = make_benchmark(SystemName::lorenz63, 3);
  const Trajectory ex = integrate_rk4(sys, 0.0, 2.0, 0.01);
  const Trajectory pr = predict_trajectory(sys.true_coeffs, sys.basis, sys.x0, 0.0, 2.0, 0.01);
  CHECK((pr.states - ex.states).cwiseAbs().maxCoeff() < 1e-8);

  const Trajectory still =
      predict_trajectory(Eigen::MatrixXd::Zero(sys.basis.p(), 3), sys.basis, sys.x0, 0.0, 1.0, 0.1);
  for (int k = 0; k < still.samples(); ++k) CHECK((still.states.row(k).transpose() - sys.x0).norm() == 0.0);

  Eigen::MatrixXd blow = Eigen::MatrixXd::Zero(sys.basis.p(), 3);
  blow(sys.basis.index_of({2, 0, 0}), 0) = -1.0;
  CHECK_THROWS_AS(predict_trajectory(blow, sys.basis, sys.x0, 0.0, 5.0, 0.01), IntegrationError);
}
