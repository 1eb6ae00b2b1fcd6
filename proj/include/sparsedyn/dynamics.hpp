#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "sparsedyn/basis.hpp"

namespace sparsedyn {

enum class SystemName { lorenz63, duffing, vanderpol, springmass, euler_rigid };

SystemName parse_system_name(const std::string& s);
std::string to_string(SystemName s);

using VectorField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// One of the benchmark ODEs with its parameters and the exact sparse
/// coefficients expressed in `basis`.
struct SystemSpec {
  SystemName name;
  int n = 0;
  std::map<std::string, double> params;
  Eigen::VectorXd x0;
  BasisSpec basis;
  Eigen::MatrixXd true_coeffs;  // p x n
  VectorField rhs;
};

SystemSpec make_benchmark(SystemName name, int basis_degree);

enum class TrajectoryKind { exact, noisy };

/// Uniformly sampled states; row k is the state at t0 + k * dt.
struct Trajectory {
  double t0 = 0.0;
  double dt = 0.0;
  Eigen::MatrixXd states;
  TrajectoryKind kind = TrajectoryKind::exact;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  int samples() const { return static_cast<int>(states.rows()); }
  int dim() const { return static_cast<int>(states.cols()); }
  double time(int k) const { return t0 + k * dt; }
  double t_end() const { return time(samples() - 1); }
  Eigen::VectorXd times() const;
};

/// States beyond this magnitude are treated as a blow-up.
inline constexpr double kBlowupThreshold = 1e6;

/// Fixed-step classical RK4.  The output is sampled every `dt_out`, with
/// round(dt_out / dt_internal) substeps per output interval.
Trajectory integrate_rk4(const VectorField& f, const Eigen::VectorXd& x0, double t_start,
                         double t_end, double dt_out, double dt_internal = 1e-4);

Trajectory integrate_rk4(const SystemSpec& sys, double t_start, double t_end, double dt_out,
                         double dt_internal = 1e-4);

/// Adds i.i.d. N(0, sigma^2) noise.  Each state column draws from its own
/// stream keyed by (seed, column, noise_index) so that sweeps over several
/// noise levels never share random numbers.
Trajectory add_noise(const Trajectory& traj, double sigma, std::uint64_t seed,
                     std::uint64_t noise_index = 0);

enum class SnrConvention {
  mean_power,    // 10 log10( mean_k x_k^2 / sigma^2 )
  total_energy,  // 10 log10( sum_k x_k^2 / sigma^2 )
};

Eigen::VectorXd snr_db(const Eigen::MatrixXd& exact_states, double sigma,
                       SnrConvention convention = SnrConvention::mean_power);

/// Vector field x' = Xi^T phi(x) of an identified model.
VectorField polynomial_field(const Eigen::MatrixXd& coeffs, const BasisSpec& basis);

/// Integrates an identified polynomial model with RK4.  Throws
/// IntegrationError when the state leaves the blow-up threshold.
Trajectory predict_trajectory(const Eigen::MatrixXd& coeffs, const BasisSpec& basis,
                              const Eigen::VectorXd& x0, double t_start, double t_end,
                              double dt_out, double dt_internal = 1e-4);

}  // namespace sparsedyn
