#include "sparsedyn/constraints.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "sparsedyn/errors.hpp"

namespace sparsedyn {

RankEstimate numerical_rank_by_gap(const Eigen::MatrixXd& Phi, double gap_factor,
                                   std::optional<int> known_rank) {
  if (Phi.size() == 0) throw Error(ErrorCategory::size, "rank detection on an empty matrix");
  if (!(gap_factor > 1.0)) throw Error(ErrorCategory::argument, "gap factor must exceed 1");
  RankEstimate est;
  est.singular_values = Eigen::JacobiSVD<Eigen::MatrixXd>(Phi).singularValues();
  const auto& s = est.singular_values;
  const int k = static_cast<int>(s.size());
  est.rank = -1;
  for (int r = 1; r < k; ++r) {
    const double ratio = s(r) > 0 ? s(r - 1) / s(r) : std::numeric_limits<double>::infinity();
    if (ratio > est.max_ratio) {
      est.max_ratio = ratio;
      est.max_ratio_index = r;
    }
    if (est.rank < 0 && ratio >= gap_factor) est.rank = r;
  }
  if (est.rank < 0) {
    est.no_gap = true;
    est.rank = k;
  }
  if (known_rank) {
    if (*known_rank < 1 || *known_rank > k)
      throw Error(ErrorCategory::argument, "known rank outside [1, min(m, p)]");
    est.rank = *known_rank;
    est.from_known_rank = true;
  }
  return est;
}

IDResult interpolative_decomp(const Eigen::MatrixXd& Phi, int r) {
  const int m = static_cast<int>(Phi.rows());
  const int p = static_cast<int>(Phi.cols());
  if (r < 1 || r > std::min(m, p))
    throw Error(ErrorCategory::argument, "ID rank must satisfy 1 <= r <= min(m, p)");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Phi);
  const Eigen::MatrixXd R = qr.matrixR().topRows(std::min(m, p)).template triangularView<Eigen::Upper>();
  const double r00 = std::abs(R(0, 0));
  const double floor = std::max(m, p) * std::numeric_limits<double>::epsilon() * r00;
  if (!(r00 > 0) || std::abs(R(r - 1, r - 1)) <= floor)
    throw Error(ErrorCategory::rank, "leading triangular block is numerically singular at the requested rank");

  IDResult id;
  id.r = r;
  id.Phi = Phi;
  id.permutation = qr.colsPermutation().indices();
  for (int i = 0; i < p; ++i) (i < r ? id.J : id.dependent).push_back(id.permutation(i));
  const auto R1 = R.topLeftCorner(r, r).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Z = R1.solve(R.topRightCorner(r, p - r));
  id.C = Eigen::MatrixXd::Zero(r, p);
  for (int i = 0; i < r; ++i) id.C(i, id.J[i]) = 1.0;
  for (int j = 0; j < p - r; ++j) id.C.col(id.dependent[j]) = Z.col(j);
  id.S.resize(m, r);
  for (int i = 0; i < r; ++i) id.S.col(i) = Phi.col(id.J[i]);
  id.singular_values = Eigen::JacobiSVD<Eigen::MatrixXd>(Phi).singularValues();
  return id;
}

std::vector<ConstraintFunction> extract_constraints(const IDResult& id, double tau) {
  if (!(tau >= 0)) throw Error(ErrorCategory::argument, "threshold must be non-negative");
  std::vector<ConstraintFunction> out;
  const double phi_norm = id.singular_values.size() ? id.singular_values(0) : 0.0;
  for (int l : id.dependent) {
    ConstraintFunction g;
    g.dependent_column = l;
    g.tau = tau;
    g.eta = Eigen::VectorXd::Zero(id.C.cols());
    g.eta(l) = -1.0;
    for (int m = 0; m < id.r; ++m)
      if (std::abs(id.C(m, l)) > tau) g.eta(id.J[m]) = id.C(m, l);
    g.residual = phi_norm > 0 ? (id.Phi * g.eta).norm() / phi_norm : 0.0;
    out.push_back(std::move(g));
  }
  return out;
}

Eigen::MatrixXd dependency_report(const IDResult& id, double tau, bool raw) {
  const int p = static_cast<int>(id.C.cols());
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(p, p);
  for (int l : id.dependent)
    for (int m = 0; m < id.r; ++m) {
      const double v = std::abs(id.C(m, l));
      if (raw || v > tau) D(id.J[m], l) = v;
    }
  return D;
}

Eigen::VectorXd evaluate_constraint(const ConstraintFunction& g, const BasisSpec& basis,
                                    const Eigen::MatrixXd& states) {
  if (g.eta.size() != basis.p())
    throw Error(ErrorCategory::size, "constraint length does not match the basis");
  Eigen::VectorXd v(states.rows());
  for (Eigen::Index k = 0; k < states.rows(); ++k)
    v(k) = evaluate_basis_row(states.row(k).transpose(), basis).dot(g.eta);
  return v;
}

DropStrategy parse_drop_strategy(const std::string& s) {
  if (s == "drop-dependent-set") return DropStrategy::drop_dependent_set;
  if (s == "drop-highest-degree") return DropStrategy::drop_highest_degree;
  if (s == "keep-skeleton") return DropStrategy::keep_skeleton;
  throw Error(ErrorCategory::configuration, "unknown column drop strategy: " + s);
}

std::string to_string(DropStrategy s) {
  switch (s) {
    case DropStrategy::drop_dependent_set: return "drop-dependent-set";
    case DropStrategy::drop_highest_degree: return "drop-highest-degree";
    case DropStrategy::keep_skeleton: return "keep-skeleton";
  }
  return "?";
}

std::vector<int> columns_to_drop(const IDResult& id, const std::vector<ConstraintFunction>& g,
                                 const BasisSpec& basis, DropStrategy strategy) {
  std::set<int> drop;
  switch (strategy) {
    case DropStrategy::keep_skeleton:
      drop.insert(id.dependent.begin(), id.dependent.end());
      break;
    case DropStrategy::drop_dependent_set:
      for (const auto& c : g) {
        const int support = static_cast<int>((c.eta.array() != 0.0).count());
        if (support > 1) drop.insert(c.dependent_column);
      }
      break;
    case DropStrategy::drop_highest_degree:
      for (const auto& c : g) {
        int best = -1;
        for (int i = 0; i < c.eta.size(); ++i) {
          if (c.eta(i) == 0.0 || drop.count(i)) continue;
          if (best < 0 || basis.degree(i) >= basis.degree(best)) best = i;
        }
        if (best >= 0 && (c.eta.array() != 0.0).count() > 1) drop.insert(best);
      }
      break;
  }
  return {drop.begin(), drop.end()};
}

ConstraintAnalysis analyze_constraints(const Eigen::MatrixXd& Phi, const BasisSpec& basis,
                                       const ConstraintOptions& opt) {
  if (Phi.cols() != basis.p()) throw Error(ErrorCategory::size, "matrix width does not match the basis");
  ConstraintAnalysis a;
  a.rank = numerical_rank_by_gap(Phi, opt.gap_factor, opt.known_rank);
  a.cond_before = condition_number_normalized(Phi);
  a.cond_before_raw = condition_number(Phi);
  a.cond_after = a.cond_before;
  a.cond_after_raw = a.cond_before_raw;
  a.rank_deficient = a.rank.rank < Phi.cols() && (!a.rank.no_gap || a.rank.from_known_rank);
  if (a.rank_deficient) {
    a.id = interpolative_decomp(Phi, a.rank.rank);
    a.constraints = extract_constraints(a.id, opt.tau);
    a.dropped = columns_to_drop(a.id, a.constraints, basis, opt.strategy);
  }
  if (!opt.drop_columns.empty()) {
    std::vector<int> d = opt.drop_columns;
    std::sort(d.begin(), d.end());
    if (std::adjacent_find(d.begin(), d.end()) != d.end() || d.front() < 0 || d.back() >= Phi.cols())
      throw Error(ErrorCategory::argument, "drop_columns must be distinct basis indices");
    a.dropped = std::move(d);
  }
  if (!a.dropped.empty() && static_cast<int>(a.dropped.size()) < Phi.cols()) {
    Eigen::MatrixXd reduced(Phi.rows(), Phi.cols() - static_cast<Eigen::Index>(a.dropped.size()));
    for (Eigen::Index j = 0, c = 0; j < Phi.cols(); ++j)
      if (!std::binary_search(a.dropped.begin(), a.dropped.end(), static_cast<int>(j)))
        reduced.col(c++) = Phi.col(j);
    a.cond_after = condition_number_normalized(reduced);
    a.cond_after_raw = condition_number(reduced);
  }
  return a;
}

}  // namespace sparsedyn
