#include "sparsedyn/basis.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <functional>
#include <json.hpp>
#include <sstream>

#include "sparsedyn/errors.hpp"

namespace sparsedyn {

long long binomial(int a, int b) {
  if (b < 0 || b > a) return 0;
  b = std::min(b, a - b);
  long long r = 1;
  for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
  return r;
}

int BasisSpec::degree(int i) const {
  int s = 0;
  for (int e : exponents.at(i)) s += e;
  return s;
}

std::string BasisSpec::monomial(int i) const {
  const auto& e = exponents.at(i);
  std::ostringstream os;
  bool first = true;
  for (int j = 0; j < n; ++j) {
    if (e[j] == 0) continue;
    if (!first) os << '*';
    os << 'x' << (j + 1);
    if (e[j] > 1) os << '^' << e[j];
    first = false;
  }
  return first ? std::string("1") : os.str();
}

int BasisSpec::index_of(const std::vector<int>& e) const {
  auto it = std::find(exponents.begin(), exponents.end(), e);
  return it == exponents.end() ? -1 : static_cast<int>(it - exponents.begin());
}

BasisSpec enumerate_monomials(int n, int d) {
  if (n < 1) throw Error(ErrorCategory::argument, "basis dimension n must be >= 1");
  if (d < 0) throw Error(ErrorCategory::argument, "basis degree d must be >= 0");
  BasisSpec b;
  b.n = n;
  b.d = d;
  std::vector<int> cur(n, 0);
  // Positions n-1 down to 1 take ascending exponents; the first variable
  // receives whatever degree remains.
  std::function<void(int, int)> rec = [&](int k, int rem) {
    if (k == 0) {
      cur[0] = rem;
      b.exponents.push_back(cur);
      return;
    }
    for (int a = 0; a <= rem; ++a) {
      cur[k] = a;
      rec(k - 1, rem - a);
    }
  };
  for (int g = 0; g <= d; ++g) rec(n - 1, g);
  return b;
}

Eigen::VectorXd evaluate_basis_row(const Eigen::VectorXd& x, const BasisSpec& basis) {
  Eigen::VectorXd row(basis.p());
  for (int i = 0; i < basis.p(); ++i) {
    double v = 1.0;
    const auto& e = basis.exponents[i];
    for (int j = 0; j < basis.n; ++j)
      for (int k = 0; k < e[j]; ++k) v *= x(j);
    row(i) = v;
  }
  return row;
}

Eigen::VectorXd column_norms(const Eigen::MatrixXd& A) { return A.colwise().norm().transpose(); }

double condition_number(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  return smin > 0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

double condition_number_normalized(const Eigen::MatrixXd& A) {
  Eigen::VectorXd s = column_norms(A);
  for (int j = 0; j < s.size(); ++j)
    if (s(j) == 0) s(j) = 1.0;
  return condition_number(A * s.cwiseInverse().asDiagonal());
}

MeasurementMatrix evaluate_basis_matrix(const Eigen::MatrixXd& states, const BasisSpec& basis) {
  if (states.cols() != basis.n)
    throw Error(ErrorCategory::size, "state dimension does not match basis dimension");
  MeasurementMatrix M;
  M.basis = basis;
  M.values.resize(states.rows(), basis.p());
  for (Eigen::Index k = 0; k < states.rows(); ++k) {
    if (!states.row(k).allFinite())
      throw Error(ErrorCategory::evaluation, "non-finite state at row " + std::to_string(k));
    M.values.row(k) = evaluate_basis_row(states.row(k).transpose(), basis).transpose();
    if (!M.values.row(k).allFinite())
      throw Error(ErrorCategory::evaluation,
                  "basis evaluation overflowed at row " + std::to_string(k));
  }
  M.active_columns.resize(basis.p());
  for (int i = 0; i < basis.p(); ++i) M.active_columns[i] = i;
  M.cond = condition_number(M.values);
  M.cond_normalized = condition_number_normalized(M.values);
  return M;
}

MeasurementMatrix reduce_columns(const MeasurementMatrix& M, const std::vector<int>& drop) {
  for (int c : drop)
    if (std::find(M.active_columns.begin(), M.active_columns.end(), c) == M.active_columns.end())
      throw Error(ErrorCategory::argument,
                  "column " + std::to_string(c) + " is not an active column");
  if (drop.empty()) return M;
  std::vector<int> keep_pos;
  MeasurementMatrix R;
  R.basis = M.basis;
  for (size_t j = 0; j < M.active_columns.size(); ++j) {
    if (std::find(drop.begin(), drop.end(), M.active_columns[j]) != drop.end()) continue;
    keep_pos.push_back(static_cast<int>(j));
    R.active_columns.push_back(M.active_columns[j]);
  }
  if (keep_pos.empty()) throw Error(ErrorCategory::size, "cannot drop every column");
  R.values.resize(M.values.rows(), static_cast<Eigen::Index>(keep_pos.size()));
  for (size_t j = 0; j < keep_pos.size(); ++j) R.values.col(j) = M.values.col(keep_pos[j]);
  R.cond = condition_number(R.values);
  R.cond_normalized = condition_number_normalized(R.values);
  return R;
}

Eigen::VectorXd expand_coefficients(const Eigen::VectorXd& reduced, const std::vector<int>& active,
                                    int p) {
  if (static_cast<size_t>(reduced.size()) != active.size())
    throw Error(ErrorCategory::size, "coefficient length does not match active column count");
  Eigen::VectorXd full = Eigen::VectorXd::Zero(p);
  for (size_t j = 0; j < active.size(); ++j) full(active[j]) = reduced(j);
  return full;
}

std::string basis_report_json(const BasisSpec& basis) {
  nlohmann::json j;
  j["n"] = basis.n;
  j["d"] = basis.d;
  j["p"] = basis.p();
  auto& arr = j["monomials"] = nlohmann::json::array();
  for (int i = 0; i < basis.p(); ++i)
    arr.push_back({{"index", i + 1}, {"exponents", basis.exponents[i]}, {"monomial", basis.monomial(i)}});
  return j.dump(2);
}

}  // namespace sparsedyn
