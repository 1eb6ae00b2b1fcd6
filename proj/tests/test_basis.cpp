#include <doctest.h>
#include <json.hpp>

#include <random>

#include "sparsedyn/basis.hpp"
#include "sparsedyn/errors.hpp"

using namespace sparsedyn;

TEST_CASE("basis sizes follow the binomial count") {
  CHECK(enumerate_monomials(3, 3).p() == 20);
  CHECK(enumerate_monomials(2, 4).p() == 15);
  for (int n = 1; n <= 4; ++n)
    for (int d = 0; d <= 5; ++d) {
      const BasisSpec b = enumerate_monomials(n, d);
      CHECK(b.p() == binomial(n + d, n));
      for (int g = 0; g <= d; ++g) {
        int count = 0;
        for (int i = 0; i < b.p(); ++i) count += b.degree(i) == g;
        CHECK(count == binomial(n + g - 1, g));
      }
    }
}

TEST_CASE("graded ordering places the last variable's powers last inside a degree") {
  const BasisSpec b = enumerate_monomials(2, 2);
  CHECK(b.exponents[3] == std::vector<int>{2, 0});
  CHECK(b.exponents[4] == std::vector<int>{1, 1});
  CHECK(b.exponents[5] == std::vector<int>{0, 2});
  CHECK(b.monomial(0) == "1");
  CHECK(b.monomial(3) == "x1^2");
  CHECK(b.monomial(4) == "x1*x2");
  for (int i = 1; i < b.p(); ++i) CHECK(b.degree(i) >= b.degree(i - 1));

  const BasisSpec c = enumerate_monomials(3, 3);
  CHECK(c.exponents[4] == std::vector<int>{2, 0, 0});
  CHECK(c.exponents[5] == std::vector<int>{1, 1, 0});
  CHECK(c.exponents[6] == std::vector<int>{0, 2, 0});
  CHECK(c.exponents[7] == std::vector<int>{1, 0, 1});
  CHECK(c.exponents[9] == std::vector<int>{0, 0, 2});
  CHECK(c.exponents[10] == std::vector<int>{3, 0, 0});
  CHECK(c.exponents[17] == std::vector<int>{1, 0, 2});
  CHECK(c.exponents[19] == std::vector<int>{0, 0, 3});
  CHECK(c.index_of({1, 1, 1}) == 15);
  CHECK(c.index_of({4, 0, 0}) == -1);
}

TEST_CASE("invalid enumeration arguments") {
  CHECK_THROWS_AS(enumerate_monomials(0, 2), Error);
  CHECK_THROWS_AS(enumerate_monomials(2, -1), Error);
}

TEST_CASE("measurement matrix rows") {
  const BasisSpec b = enumerate_monomials(2, 2);
  Eigen::MatrixXd X(2, 2);
  X << 2, 3, 0, 0;
  const MeasurementMatrix M = evaluate_basis_matrix(X, b);
  Eigen::VectorXd r0(6), r1(6);
  r0 << 1, 2, 3, 4, 6, 9;
  r1 << 1, 0, 0, 0, 0, 0;
  CHECK((M.values.row(0).transpose() - r0).norm() == 0.0);
  CHECK((M.values.row(1).transpose() - r1).norm() == 0.0);
  CHECK(M.active_columns.size() == 6);
}

TEST_CASE("monomial evaluation is multiplicative") {
  const BasisSpec b = enumerate_monomials(3, 4);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  std::uniform_int_distribution<int> pick(0, b.p() - 1);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd x(3);
    x << U(rng), U(rng), U(rng);
    const Eigen::VectorXd row = evaluate_basis_row(x, b);
    const int i = pick(rng), j = pick(rng);
    std::vector<int> e(3);
    for (int k = 0; k < 3; ++k) e[k] = b.exponents[i][k] + b.exponents[j][k];
    const int ij = b.index_of(e);
    if (ij < 0) continue;
    CHECK(row(ij) == doctest::Approx(row(i) * row(j)).epsilon(1e-12));
  }
}

TEST_CASE("overflow in evaluation names the row") {
  const BasisSpec b = enumerate_monomials(2, 3);
  Eigen::MatrixXd X(3, 2);
  X << 1, 1, 1e200, 1, 1, 1;
  try {
    evaluate_basis_matrix(X, b);
    FAIL("expected an evaluation error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::evaluation);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("column removal and re-expansion") {
  const BasisSpec b = enumerate_monomials(2, 2);
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(30, 2);
  const MeasurementMatrix M = evaluate_basis_matrix(X, b);

  const MeasurementMatrix same = reduce_columns(M, {});
  CHECK((same.values - M.values).norm() == 0.0);
  CHECK(same.cond == doctest::Approx(M.cond));

  const MeasurementMatrix R = reduce_columns(M, {5, 1});
  CHECK(R.values.cols() == 4);
  CHECK(R.active_columns == std::vector<int>{0, 2, 3, 4});
  CHECK((R.values.col(1) - M.values.col(2)).norm() == 0.0);
  CHECK(R.cond == doctest::Approx(condition_number(R.values)));

  Eigen::VectorXd xr(4);
  xr << 1.5, -2, 3, 0.25;
  const Eigen::VectorXd full = expand_coefficients(xr, R.active_columns, 6);
  CHECK(full(1) == 0.0);
  CHECK(full(5) == 0.0);
  for (size_t k = 0; k < R.active_columns.size(); ++k) CHECK(full(R.active_columns[k]) == xr(k));
  CHECK((M.values * full - R.values * xr).norm() < 1e-12);

  CHECK_THROWS_AS(reduce_columns(M, {0, 1, 2, 3, 4, 5}), Error);
  CHECK_THROWS_AS(reduce_columns(R, {1}), Error);
}

TEST_CASE("condition numbers") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 2);
  A(0, 0) = 10;
  A(1, 1) = 0.1;
  CHECK(condition_number(A) == doctest::Approx(100.0));
  CHECK(condition_number_normalized(A) == doctest::Approx(1.0));
}

TEST_CASE("basis report lists 1-based indices") {
  const auto j = nlohmann::json::parse(basis_report_json(enumerate_monomials(2, 2)));
  CHECK(j["p"] == 6);
  const auto& list = j.at("monomials");
  REQUIRE(list.size() == 6);
  CHECK(list[3]["index"] == 4);
  CHECK(list[3]["monomial"] == "x1^2");
  CHECK(list[3]["exponents"] == std::vector<int>{2, 0});
}
