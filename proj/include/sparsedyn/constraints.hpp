#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "sparsedyn/basis.hpp"

namespace sparsedyn {

struct RankEstimate {
  int rank = 0;
  bool no_gap = false;      // no singular value ratio reached the gap factor
  bool from_known_rank = false;
  Eigen::VectorXd singular_values;
  double max_ratio = 0.0;   // largest sigma_r / sigma_{r+1}
  int max_ratio_index = 0;  // r at which it occurs
};

/// Smallest r with sigma_r / sigma_{r+1} >= gap_factor.  When no ratio
/// qualifies the estimate is flagged `no_gap` and `rank` is the column count,
/// unless `known_rank` is given, which then takes precedence.
RankEstimate numerical_rank_by_gap(const Eigen::MatrixXd& Phi, double gap_factor = 100.0,
                                   std::optional<int> known_rank = std::nullopt);

/// Rank-r interpolative decomposition Phi ~ S C from column-pivoted QR.
struct IDResult {
  int r = 0;
  std::vector<int> J;          // skeleton columns, in pivot order
  std::vector<int> dependent;  // remaining columns, in pivot order
  Eigen::MatrixXd S;           // Phi(:, J)
  Eigen::MatrixXd C;           // r x p, identity on J
  Eigen::VectorXi permutation; // pivot order of all p columns
  Eigen::VectorXd singular_values;
  Eigen::MatrixXd Phi;         // the factorized matrix
};

IDResult interpolative_decomp(const Eigen::MatrixXd& Phi, int r);

/// g(x) = sum_k eta_k phi_k(x) with eta_l = -1 at the dependent column l.
struct ConstraintFunction {
  Eigen::VectorXd eta;
  int dependent_column = -1;
  double tau = 0.0;
  double residual = 0.0;  // ||Phi eta|| / ||Phi||, after thresholding
};

std::vector<ConstraintFunction> extract_constraints(const IDResult& id, double tau = 1e-3);

/// p x p magnitudes; entry (j, l) is |C| of dependent column l on skeleton
/// column j.  Entries at or below tau are zeroed unless `raw` is set.
Eigen::MatrixXd dependency_report(const IDResult& id, double tau = 1e-3, bool raw = false);

/// Values of g along a set of states (rows).
Eigen::VectorXd evaluate_constraint(const ConstraintFunction& g, const BasisSpec& basis,
                                    const Eigen::MatrixXd& states);

enum class DropStrategy {
  drop_dependent_set,   // every dependent column that takes part in a constraint
  drop_highest_degree,  // one column per constraint, the one of highest degree
  keep_skeleton,        // every column outside J
};

DropStrategy parse_drop_strategy(const std::string& s);
std::string to_string(DropStrategy s);

/// Full-basis indices to remove, ascending.
std::vector<int> columns_to_drop(const IDResult& id, const std::vector<ConstraintFunction>& g,
                                 const BasisSpec& basis, DropStrategy strategy);

struct ConstraintOptions {
  double gap_factor = 100.0;
  std::optional<int> known_rank;
  double tau = 1e-3;
  DropStrategy strategy = DropStrategy::drop_dependent_set;
  // Full-basis indices (0-based) removed in place of the strategy's choice,
  // e.g. a dependent set found on cleaner data.  Empty defers to `strategy`.
  std::vector<int> drop_columns;
};

struct ConstraintAnalysis {
  RankEstimate rank;
  bool rank_deficient = false;
  IDResult id;
  std::vector<ConstraintFunction> constraints;
  std::vector<int> dropped;
  double cond_before = 0.0;  // unit-norm columns
  double cond_after = 0.0;
  double cond_before_raw = 0.0;
  double cond_after_raw = 0.0;
};

/// Rank detection, ID, constraint extraction and the column set to remove.
ConstraintAnalysis analyze_constraints(const Eigen::MatrixXd& Phi, const BasisSpec& basis,
                                       const ConstraintOptions& opt = {});

}  // namespace sparsedyn
