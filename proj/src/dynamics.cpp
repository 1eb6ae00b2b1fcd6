#include "sparsedyn/dynamics.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "sparsedyn/errors.hpp"

namespace sparsedyn {

SystemName parse_system_name(const std::string& s) {
  if (s == "lorenz63") return SystemName::lorenz63;
  if (s == "duffing") return SystemName::duffing;
  if (s == "vanderpol") return SystemName::vanderpol;
  if (s == "springmass") return SystemName::springmass;
  if (s == "euler_rigid") return SystemName::euler_rigid;
  throw Error(ErrorCategory::configuration, "unknown system '" + s + "'");
}

std::string to_string(SystemName s) {
  switch (s) {
    case SystemName::lorenz63: return "lorenz63";
    case SystemName::duffing: return "duffing";
    case SystemName::vanderpol: return "vanderpol";
    case SystemName::springmass: return "springmass";
    case SystemName::euler_rigid: return "euler_rigid";
  }
  return "unknown";
}

Eigen::VectorXd Trajectory::times() const {
  Eigen::VectorXd t(samples());
  for (int k = 0; k < samples(); ++k) t(k) = time(k);
  return t;
}

namespace {

struct Term {
  int state;
  std::vector<int> exponent;
  double coeff;
};

int max_degree(const std::vector<Term>& terms) {
  int d = 0;
  for (const auto& t : terms) {
    int s = 0;
    for (int e : t.exponent) s += e;
    d = std::max(d, s);
  }
  return d;
}

}  // namespace

SystemSpec make_benchmark(SystemName name, int basis_degree) {
  SystemSpec sys;
  sys.name = name;
  std::vector<Term> terms;
  switch (name) {
    case SystemName::lorenz63: {
      const double g = 10.0, rho = 28.0, beta = 8.0 / 3.0;
      sys.n = 3;
      sys.params = {{"gamma", g}, {"rho", rho}, {"beta", beta}};
      sys.x0 = Eigen::Vector3d(-8.0, 7.0, 27.0);
      sys.rhs = [=](const Eigen::VectorXd& x) {
        Eigen::VectorXd f(3);
        f << g * (x(1) - x(0)), x(0) * (rho - x(2)) - x(1), x(0) * x(1) - beta * x(2);
        return f;
      };
      terms = {{0, {1, 0, 0}, -g},   {0, {0, 1, 0}, g},    {1, {1, 0, 0}, rho},
               {1, {0, 1, 0}, -1.0}, {1, {1, 0, 1}, -1.0}, {2, {1, 1, 0}, 1.0},
               {2, {0, 0, 1}, -beta}};
      break;
    }
    case SystemName::duffing: {
      const double kappa = 1.0, g = 0.1, eps = 5.0;
      sys.n = 2;
      sys.params = {{"kappa", kappa}, {"gamma", g}, {"epsilon", eps}};
      sys.x0 = Eigen::Vector2d(1.0, 0.0);
      sys.rhs = [=](const Eigen::VectorXd& x) {
        Eigen::VectorXd f(2);
        f << x(1), -g * x(1) - kappa * x(0) - eps * x(0) * x(0) * x(0);
        return f;
      };
      terms = {{0, {0, 1}, 1.0}, {1, {0, 1}, -g}, {1, {1, 0}, -kappa}, {1, {3, 0}, -eps}};
      break;
    }
    case SystemName::vanderpol: {
      const double kappa = 1.0, g = 1.0, eps = 2.0;
      sys.n = 2;
      sys.params = {{"kappa", kappa}, {"gamma", g}, {"epsilon", eps}};
      sys.x0 = Eigen::Vector2d(1.0, 0.0);
      sys.rhs = [=](const Eigen::VectorXd& x) {
        Eigen::VectorXd f(2);
        f << x(1), -kappa * x(0) - g * x(1) - eps * x(0) * x(0) * x(1);
        return f;
      };
      terms = {{0, {0, 1}, 1.0}, {1, {1, 0}, -kappa}, {1, {0, 1}, -g}, {1, {2, 1}, -eps}};
      break;
    }
    case SystemName::springmass: {
      const double m = 1.0, k = 10.0;
      sys.n = 2;
      sys.params = {{"m", m}, {"k", k}};
      sys.x0 = Eigen::Vector2d(1.0, 0.0);
      sys.rhs = [=](const Eigen::VectorXd& x) {
        Eigen::VectorXd f(2);
        f << x(1), -(k / m) * x(0);
        return f;
      };
      terms = {{0, {0, 1}, 1.0}, {1, {1, 0}, -k / m}};
      break;
    }
    case SystemName::euler_rigid: {
      const double I1 = 1.0, I2 = 2.0, I3 = 3.0;
      sys.n = 3;
      sys.params = {{"I1", I1}, {"I2", I2}, {"I3", I3}};
      sys.x0 = Eigen::Vector3d(1.0, 1.0, 1.0);
      const double a = (I2 - I3) / I1, b = (I3 - I1) / I2, c = (I1 - I2) / I3;
      sys.rhs = [=](const Eigen::VectorXd& w) {
        Eigen::VectorXd f(3);
        f << a * w(1) * w(2), b * w(2) * w(0), c * w(0) * w(1);
        return f;
      };
      terms = {{0, {0, 1, 1}, a}, {1, {1, 0, 1}, b}, {2, {1, 1, 0}, c}};
      break;
    }
  }
  if (basis_degree < max_degree(terms))
    throw Error(ErrorCategory::configuration,
                "basis degree " + std::to_string(basis_degree) + " is below the degree of " +
                    to_string(name));
  sys.basis = enumerate_monomials(sys.n, basis_degree);
  sys.true_coeffs = Eigen::MatrixXd::Zero(sys.basis.p(), sys.n);
  for (const auto& t : terms) sys.true_coeffs(sys.basis.index_of(t.exponent), t.state) = t.coeff;
  return sys;
}

namespace {

Trajectory rk4_impl(const VectorField& f, const Eigen::VectorXd& x0, double t_start, double t_end,
                    double dt_out, double dt_internal, double blowup) {
  if (!(dt_out > 0) || !(dt_internal > 0))
    throw Error(ErrorCategory::argument, "time steps must be positive");
  if (dt_internal > dt_out * (1 + 1e-12))
    throw Error(ErrorCategory::argument, "dt_internal must not exceed dt_out");
  const double span = t_end - t_start;
  const long steps = std::lround(span / dt_out);
  if (steps < 0 || std::abs(steps * dt_out - span) > 1e-9 * std::max(1.0, std::abs(span)))
    throw Error(ErrorCategory::argument, "dt_out does not divide the time span");
  const long sub = std::max(1L, std::lround(dt_out / dt_internal));
  const double h = dt_out / static_cast<double>(sub);

  Trajectory out;
  out.t0 = t_start;
  out.dt = dt_out;
  out.kind = TrajectoryKind::exact;
  out.states.resize(steps + 1, x0.size());
  out.states.row(0) = x0.transpose();
  Eigen::VectorXd x = x0;
  for (long k = 0; k < steps; ++k) {
    for (long s = 0; s < sub; ++s) {
      const Eigen::VectorXd k1 = f(x);
      const Eigen::VectorXd k2 = f(x + 0.5 * h * k1);
      const Eigen::VectorXd k3 = f(x + 0.5 * h * k2);
      const Eigen::VectorXd k4 = f(x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!x.allFinite() || x.cwiseAbs().maxCoeff() > blowup) {
        const double t = t_start + k * dt_out + (s + 1) * h;
        std::ostringstream os;
        os << "integration blew up at t = " << t;
        throw IntegrationError(t, os.str());
      }
    }
    out.states.row(k + 1) = x.transpose();
  }
  return out;
}

}  // namespace

Trajectory integrate_rk4(const VectorField& f, const Eigen::VectorXd& x0, double t_start,
                         double t_end, double dt_out, double dt_internal) {
  return rk4_impl(f, x0, t_start, t_end, dt_out, dt_internal,
                  std::numeric_limits<double>::infinity());
}

Trajectory integrate_rk4(const SystemSpec& sys, double t_start, double t_end, double dt_out,
                         double dt_internal) {
  return integrate_rk4(sys.rhs, sys.x0, t_start, t_end, dt_out, dt_internal);
}

Trajectory add_noise(const Trajectory& traj, double sigma, std::uint64_t seed,
                     std::uint64_t noise_index) {
  if (traj.kind != TrajectoryKind::exact)
    throw Error(ErrorCategory::argument, "noise must be added to an exact trajectory");
  if (!(sigma >= 0)) throw Error(ErrorCategory::argument, "sigma must be non-negative");
  Trajectory out = traj;
  out.kind = TrajectoryKind::noisy;
  out.sigma = sigma;
  out.seed = seed;
  if (sigma == 0.0) return out;
  for (int j = 0; j < traj.dim(); ++j) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(noise_index),
                      static_cast<std::uint32_t>(noise_index >> 32)};
    std::mt19937_64 gen(seq);
    std::normal_distribution<double> nd(0.0, sigma);
    for (int k = 0; k < traj.samples(); ++k) out.states(k, j) += nd(gen);
  }
  return out;
}

Eigen::VectorXd snr_db(const Eigen::MatrixXd& exact_states, double sigma,
                       SnrConvention convention) {
  if (!(sigma > 0)) throw Error(ErrorCategory::argument, "SNR is undefined for sigma = 0");
  Eigen::VectorXd out(exact_states.cols());
  for (Eigen::Index j = 0; j < exact_states.cols(); ++j) {
    double e = exact_states.col(j).squaredNorm();
    if (convention == SnrConvention::mean_power) e /= static_cast<double>(exact_states.rows());
    out(j) = 10.0 * std::log10(e / (sigma * sigma));
  }
  return out;
}

VectorField polynomial_field(const Eigen::MatrixXd& coeffs, const BasisSpec& basis) {
  if (coeffs.rows() != basis.p())
    throw Error(ErrorCategory::size, "coefficient rows do not match basis size");
  return [coeffs, basis](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return coeffs.transpose() * evaluate_basis_row(x, basis);
  };
}

Trajectory predict_trajectory(const Eigen::MatrixXd& coeffs, const BasisSpec& basis,
                              const Eigen::VectorXd& x0, double t_start, double t_end,
                              double dt_out, double dt_internal) {
  if (x0.size() != coeffs.cols()) throw Error(ErrorCategory::size, "x0 does not match model");
  return rk4_impl(polynomial_field(coeffs, basis), x0, t_start, t_end, dt_out, dt_internal,
                  kBlowupThreshold);
}

}  // namespace sparsedyn
