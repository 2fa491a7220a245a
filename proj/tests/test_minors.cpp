#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "polycert/minors.hpp"
#include "support/oracles.hpp"

using namespace polycert;
using testsup::Rng;

namespace {
// Oracle: number of minors of all orders, sum_s C(m,s)*C(n,s), s >= 1.
std::int64_t minor_count_oracle(int m, int n) {
  std::int64_t total = 0;
  for (int s = 1; s <= std::min(m, n); ++s)
    total += testsup::binomial(m, s) * testsup::binomial(n, s);
  return total;
}
}  // namespace

TEST_CASE("minor counts match the binomial oracle") {
  CHECK(minor_count_oracle(2, 2) == 5);
  CHECK(minor_count_oracle(3, 3) == 19);
  CHECK(minor_count_oracle(1, 4) == 4);
  for (int m = 1; m <= 4; ++m)
    for (int n = 1; n <= 4; ++n) {
      auto map = build_minors_map(m, n);
      CHECK(static_cast<std::int64_t>(map.N()) == minor_count_oracle(m, n));
      CHECK(minor_count_oracle(m, n) == minor_count_oracle(n, m));
    }
}

TEST_CASE("2x2 minors are ordered (X11, X21, X12, X22, det)") {
  auto map = build_minors_map(2, 2);
  REQUIRE(map.N() == 5);
  auto sym = minors_symbolic(map);
  REQUIRE(sym.size() == 5);
  CHECK(sym[0] == PolyQ::variable(4, 0));
  CHECK(sym[1] == PolyQ::variable(4, 1));
  CHECK(sym[2] == PolyQ::variable(4, 2));
  CHECK(sym[3] == PolyQ::variable(4, 3));
  CHECK(sym[4] == testsup::det2x2());
  // Index bookkeeping for the determinant entry.
  CHECK(map.indices[4].rows == std::vector<int>{1, 2});
  CHECK(map.indices[4].cols == std::vector<int>{1, 2});
  CHECK(map.indices[4].order() == 2);
}

TEST_CASE("minors ordering groups by order then column set then row set") {
  auto map = build_minors_map(3, 3);
  REQUIRE(map.N() == 19);
  for (std::size_t i = 1; i < map.indices.size(); ++i) {
    const auto& a = map.indices[i - 1];
    const auto& b = map.indices[i];
    auto key = [](const MinorIndex& mi) { return std::make_tuple(mi.order(), mi.cols, mi.rows); };
    CHECK(key(a) < key(b));
  }
  // Entry 18 is the full determinant.
  CHECK(map.indices[18].order() == 3);
}

TEST_CASE("minors_eval examples") {
  auto map = build_minors_map(2, 2);
  Eigen::MatrixXd I2 = Eigen::MatrixXd::Identity(2, 2);
  auto v = minors_eval(map, I2);
  REQUIRE(v.size() == 5);
  CHECK(v[0] == doctest::Approx(1));
  CHECK(v[1] == doctest::Approx(0));
  CHECK(v[2] == doctest::Approx(0));
  CHECK(v[3] == doctest::Approx(1));
  CHECK(v[4] == doctest::Approx(1));

  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(2, 2);
  for (double e : minors_eval(map, Z)) CHECK(e == doctest::Approx(0));

  Eigen::MatrixXd A(2, 2);
  A << 0, 0, 1, 2;
  auto w = minors_eval(map, A);
  CHECK(w[0] == doctest::Approx(0));
  CHECK(w[1] == doctest::Approx(1));
  CHECK(w[2] == doctest::Approx(0));
  CHECK(w[3] == doctest::Approx(2));
  CHECK(w[4] == doctest::Approx(0));
}

TEST_CASE("symbolic and rational flat evaluation agree exactly at random points") {
  Rng rng(101);
  for (auto dims : {std::pair<int, int>{2, 2}, {3, 3}, {2, 3}, {1, 4}}) {
    auto map = build_minors_map(dims.first, dims.second);
    auto sym = minors_symbolic(map);
    for (int t = 0; t < 50; ++t) {
      auto pt = rng.rational_point(dims.first * dims.second);
      auto flat = minors_eval_flat<Rational>(map, pt);
      REQUIRE(flat.size() == sym.size());
      for (std::size_t i = 0; i < sym.size(); ++i) CHECK(sym[i].eval(pt) == flat[i]);
    }
  }
}

TEST_CASE("top minor matches LU determinant on random square matrices") {
  Rng rng(103);
  for (int n = 2; n <= 4; ++n) {
    auto map = build_minors_map(n, n);
    for (int t = 0; t < 20; ++t) {
      Eigen::MatrixXd A(n, n);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) A(i, j) = rng.uniform(-2.0, 2.0);
      double lu_det = A.determinant();  // oracle computed first
      auto v = minors_eval(map, A);
      CHECK(std::abs(v.back() - lu_det) <= 1e-10 * (1.0 + std::abs(lu_det)));
    }
  }
}

TEST_CASE("minors map rejects dimension mismatch") {
  auto map = build_minors_map(2, 2);
  Eigen::MatrixXd A(3, 3);
  A.setZero();
  CHECK_THROWS_AS(minors_eval(map, A), std::invalid_argument);
}
