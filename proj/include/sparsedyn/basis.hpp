#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace sparsedyn {

/// Multivariate monomials of total degree <= d in n variables.
///
/// Ordering is graded: degree 0 first, then degree 1, and so on.  Inside
/// one degree block the exponent of the last variable ascends, then that of
/// the variable before it, and so on.  For n = 2, d = 2 this yields
/// {1, x, y, x^2, xy, y^2}; for n = 3 the quadratic block is
/// {x^2, xy, y^2, xz, yz, z^2}.
struct BasisSpec {
  int n = 0;
  int d = 0;
  std::vector<std::vector<int>> exponents;

  int p() const { return static_cast<int>(exponents.size()); }
  int degree(int i) const;
  /// Human-readable name such as `x1^2*x2`; the constant is `1`.
  std::string monomial(int i) const;
  /// Index of a given exponent tuple, or -1 when absent.
  int index_of(const std::vector<int>& e) const;
};

BasisSpec enumerate_monomials(int n, int d);

/// Binomial coefficient C(a, b) for small arguments.
long long binomial(int a, int b);

/// Sampled basis Phi(x) with bookkeeping of which full-basis columns remain.
struct MeasurementMatrix {
  Eigen::MatrixXd values;
  BasisSpec basis;
  std::vector<int> active_columns;
  double cond = 0.0;             // 2-norm condition number of `values`
  double cond_normalized = 0.0;  // same, after scaling columns to unit norm
};

MeasurementMatrix evaluate_basis_matrix(const Eigen::MatrixXd& states, const BasisSpec& basis);

/// Removes the full-basis indices listed in `drop`.  The cached condition
/// numbers are recomputed.
MeasurementMatrix reduce_columns(const MeasurementMatrix& M, const std::vector<int>& drop);

/// Evaluates every monomial at one state.
Eigen::VectorXd evaluate_basis_row(const Eigen::VectorXd& x, const BasisSpec& basis);

double condition_number(const Eigen::MatrixXd& A);
double condition_number_normalized(const Eigen::MatrixXd& A);
Eigen::VectorXd column_norms(const Eigen::MatrixXd& A);

/// Scatters a reduced coefficient vector back to full basis length, leaving
/// zeros at removed columns.
Eigen::VectorXd expand_coefficients(const Eigen::VectorXd& reduced, const std::vector<int>& active,
                                    int p);

/// JSON listing of index, exponent tuple and monomial string (1-based index).
std::string basis_report_json(const BasisSpec& basis);

}  // namespace sparsedyn
