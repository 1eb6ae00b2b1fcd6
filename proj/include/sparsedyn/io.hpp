#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "sparsedyn/basis.hpp"
#include "sparsedyn/constraints.hpp"
#include "sparsedyn/dynamics.hpp"
#include "sparsedyn/pareto.hpp"

namespace sparsedyn {

/// 17 significant digits, enough to reproduce any double exactly.
std::string format_double(double v);

/// Header `t,x1,...,xn`; one row per sample.
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj);

/// Reads a trajectory written by `write_trajectory_csv`.  Sample times must
/// be uniformly spaced.
Trajectory read_trajectory_csv(const std::filesystem::path& path);

/// Header `t,dx1,...,dxn`.
void write_derivatives_csv(const std::filesystem::path& path, const Eigen::VectorXd& t,
                           const Eigen::MatrixXd& dx);

/// Header `basis_index,monomial,coefficient`; indices are 1-based.
void write_coefficients_csv(const std::filesystem::path& path, const BasisSpec& basis,
                            const Eigen::VectorXd& xi);
Eigen::VectorXd read_coefficients_csv(const std::filesystem::path& path);

/// Header `lambda,log_residual,log_l1,normalized_x,normalized_y,is_corner`.
/// The normalized columns are computed here when the curve lacks them.
void write_pareto_csv(const std::filesystem::path& path, const ParetoCurve& curve);

/// Header `index,singular_value`.
void write_singular_values_csv(const std::filesystem::path& path, const Eigen::VectorXd& sv);

/// Square table with a `row` column followed by `c1..cp`.
void write_dependency_csv(const std::filesystem::path& path, const Eigen::MatrixXd& D);

/// Header `basis_index,monomial,eta`.
void write_constraint_csv(const std::filesystem::path& path, const BasisSpec& basis,
                          const ConstraintFunction& g);

/// Minimal comma-separated table reader: header row plus numeric or text cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

/// Writes `content` to `path`, creating parent directories.  Failures raise
/// an io Error naming the path.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace sparsedyn
