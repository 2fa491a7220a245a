#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "polycert/poly.hpp"
#include "polycert/sos.hpp"
#include "support/identities.hpp"
#include "support/oracles.hpp"

using namespace polycert;
using testsup::adm_first_order_remainder;
using testsup::adm_identity;
using testsup::det2x2;
using testsup::double_well;
using testsup::dw_expansion_identity;
using testsup::frob_sq;

namespace {

// Max abs coefficient of a float polynomial.
double max_coeff(const PolyD& p) {
  double r = 0.0;
  for (const auto& [e, c] : p.terms()) r = std::max(r, std::abs(c));
  return r;
}

void check_gates(const GramCertificate& cert) {
  CHECK(cert.residual <= 1e-6);
  CHECK(cert.min_eigenvalue >= -1e-8);
}

PolyQ motzkin() {
  PolyQ f(2);
  f.add_term({4, 2}, Rational(1));
  f.add_term({2, 4}, Rational(1));
  f.add_term({2, 2}, Rational(-3));
  f.add_term({0, 0}, Rational(1));
  return f;
}

}  // namespace

TEST_CASE("seventeen-square decomposition of the 2x2 quartic remainder is exact") {
  const PolyQ target = adm_first_order_remainder();
  const ExactSOSIdentity id = adm_identity();
  CHECK(id.squares.size() == 17);
  CHECK(id.remainder.is_zero());
  CHECK(verify_identity(target, id));

  // mutations must be caught exactly
  ExactSOSIdentity bumped = id;
  bumped.squares[0].first += Rational(1);
  CHECK_FALSE(verify_identity(target, bumped));

  ExactSOSIdentity poked = id;
  poked.squares[5].second += PolyQ::variable(8, 2);
  CHECK_FALSE(verify_identity(target, poked));

  ExactSOSIdentity shifted = id;
  shifted.remainder = PolyQ::constant(8, Rational(1));
  CHECK_FALSE(verify_identity(target, shifted));
}

TEST_CASE("double-well expansion identity holds exactly for n=2 and n=3") {
  for (int n : {2, 3}) {
    CAPTURE(n);
    const ExactSOSIdentity id = dw_expansion_identity(n);
    CHECK(verify_identity(double_well(n), id));
  }
  // the n=2 special form: f - 4 + 8 det X = (|X|^2)^2 + 4 (x2 - x3)^2
  const PolyQ norm = frob_sq(4, 0, 4);
  const PolyQ diff = PolyQ::variable(4, 1) - PolyQ::variable(4, 2);
  const PolyQ lhs = double_well(2) - PolyQ::constant(4, Rational(4)) + Rational(8) * det2x2(4);
  CHECK(lhs == norm * norm + Rational(4) * diff * diff);
}

TEST_CASE("verify_identity rejects negative coefficients and mismatched spaces") {
  // -1 * x1^2 + remainder 2 x1^2 sums to x1^2 but is not a valid witness
  ExactSOSIdentity id;
  id.target = PolyQ::monomial({2}, Rational(1));
  id.squares = {{Rational(-1), PolyQ::variable(1, 0)}};
  id.remainder = PolyQ::monomial({2}, Rational(2));
  CHECK_FALSE(verify_identity(id.target, id));

  ExactSOSIdentity wrong_space;
  wrong_space.target = PolyQ(2);
  wrong_space.remainder = PolyQ(2);
  CHECK_FALSE(verify_identity(PolyQ(1), wrong_space));
}

TEST_CASE("sos_decompose: x1^2 + x2^2 has the identity Gram on the degree-1 block") {
  PolyQ f(2);
  f.add_term({2, 0}, Rational(1));
  f.add_term({0, 2}, Rational(1));
  auto cert = sos_decompose(f, 2);
  REQUIRE(cert.has_value());
  check_gates(*cert);
  REQUIRE(cert->basis.size() == 3);  // 1, x2, x1 in graded-lex order
  CHECK(std::abs(cert->Q(0, 0)) <= 1e-6);
  CHECK(cert->Q(1, 1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(cert->Q(2, 2) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(cert->Q(0, 1)) <= 1e-6);
  CHECK(std::abs(cert->Q(0, 2)) <= 1e-6);
  CHECK(std::abs(cert->Q(1, 2)) <= 1e-6);
}

TEST_CASE("sos_decompose: margin equals 2/3 for x^4 + 1") {
  // max t s.t. [[1-t, 0, a], [0, -t-2a, 0], [a, 0, 1-t]] psd: a = t-1 gives
  // 2 - 3t >= 0, so t* = 2/3 (hand-derived before running the solver).
  PolyQ f(1);
  f.add_term({4}, Rational(1));
  f.add_term({0}, Rational(1));
  auto cert = sos_decompose(f, 4);
  REQUIRE(cert.has_value());
  check_gates(*cert);
  CHECK(cert->margin == doctest::Approx(2.0 / 3.0).epsilon(1e-4));
}

TEST_CASE("sos_decompose certifies the shifted double well and rounds to an exact identity") {
  const PolyQ f = double_well(2) - PolyQ::constant(4, Rational(4)) + Rational(8) * det2x2(4);
  auto cert = sos_decompose(f, 4);
  REQUIRE(cert.has_value());
  check_gates(*cert);
  CHECK(max_coeff(gram_polynomial(4, cert->basis, cert->Q) - to_float(f)) <= 1e-6);

  RoundingResult rr = round_to_rational(*cert, 10000);
  REQUIRE_MESSAGE(rr.identity.has_value(), rr.reason);
  CHECK(verify_identity(f, *rr.identity));
  CHECK(rr.identity->remainder.is_zero());
}

TEST_CASE("sos_decompose is inconclusive for the Motzkin polynomial") {
  const PolyQ f = motzkin();
  // nonnegativity oracle (AM-GM on x^4y^2, x^2y^4, 1), checked exactly on a
  // rational grid before asking the solver anything
  for (int i = -6; i <= 6; ++i)
    for (int j = -6; j <= 6; ++j) {
      Rational v = f.eval({Rational(i, 4), Rational(j, 4)});
      CHECK(v >= Rational(0));
    }
  CHECK_FALSE(sos_decompose(f, 6).has_value());
}

TEST_CASE("sos_decompose validates its degree bound") {
  PolyQ f(1);
  f.add_term({4}, Rational(1));
  CHECK_THROWS_AS(sos_decompose(f, 3), std::invalid_argument);
  CHECK_THROWS_AS(sos_decompose(f, 2), std::invalid_argument);
}

TEST_CASE("check_sos_convex certifies convex quadratics in both forms") {
  // |X + X^T|^2 on 2x2, column-major entries
  auto x = [](int i) { return PolyQ::variable(4, i); };
  PolyQ g = (Rational(2) * x(0)) * (Rational(2) * x(0)) + (Rational(2) * x(3)) * (Rational(2) * x(3)) +
            Rational(2) * (x(1) + x(2)) * (x(1) + x(2));
  for (ConvexityForm form : {ConvexityForm::Hessian, ConvexityForm::Bregman}) {
    auto cert = check_sos_convex(g, form);
    REQUIRE(cert.has_value());
    check_gates(*cert);
  }
}

TEST_CASE("check_sos_convex certifies |X|^4 in both forms") {
  const PolyQ norm = frob_sq(4, 0, 4);
  const PolyQ g = norm * norm;
  for (ConvexityForm form : {ConvexityForm::Hessian, ConvexityForm::Bregman}) {
    auto cert = check_sos_convex(g, form);
    REQUIRE(cert.has_value());
    check_gates(*cert);
    CHECK(cert->nv == 8);
  }
}

TEST_CASE("check_sos_convex is inconclusive for x^4 - x^2 and trivial for affine") {
  PolyQ g(1);
  g.add_term({4}, Rational(1));
  g.add_term({2}, Rational(-1));
  CHECK(g.hessian()[0][0].eval({Rational(0)}) == Rational(-2));  // not convex at 0
  CHECK_FALSE(check_sos_convex(g, ConvexityForm::Hessian).has_value());
  CHECK_FALSE(check_sos_convex(g, ConvexityForm::Bregman).has_value());

  PolyQ affine(3);
  affine.add_term({1, 0, 0}, Rational(1));
  affine.add_term({0, 0, 1}, Rational(-2));
  affine.add_term({0, 0, 0}, Rational(7));
  auto cert = check_sos_convex(affine);
  REQUIRE(cert.has_value());
  CHECK(cert->basis.empty());
  CHECK(cert->residual == 0.0);

  PolyQ cubic(1);
  cubic.add_term({3}, Rational(1));
  CHECK_THROWS_AS(check_sos_convex(cubic), std::invalid_argument);
}

TEST_CASE("round_to_rational: identity Gram gives unit squares") {
  PolyQ f(2);
  f.add_term({2, 0}, Rational(1));
  f.add_term({0, 2}, Rational(1));
  std::vector<Exponent> basis = {{0, 1}, {1, 0}};
  GramCertificate cert =
      make_gram_certificate(f, basis, Eigen::MatrixXd::Identity(2, 2), 0.0);
  CHECK(cert.residual == 0.0);
  RoundingResult rr = round_to_rational(cert);
  REQUIRE_MESSAGE(rr.identity.has_value(), rr.reason);
  REQUIRE(rr.identity->squares.size() == 2);
  for (const auto& [c, s] : rr.identity->squares) {
    CHECK(c == Rational(1));
    CHECK(s.num_terms() == 1);
  }
  CHECK(verify_identity(f, *rr.identity));
}

TEST_CASE("round_to_rational rejects certificates with a large residual") {
  PolyQ f(1);
  f.add_term({2}, Rational(1));
  Eigen::MatrixXd Q(1, 1);
  Q(0, 0) = 1.01;
  GramCertificate cert = make_gram_certificate(f, {{1}}, Q, 0.0);
  CHECK(cert.residual == doctest::Approx(0.01));
  RoundingResult rr = round_to_rational(cert);
  CHECK_FALSE(rr.identity.has_value());
  CHECK_FALSE(rr.reason.empty());
}

TEST_CASE("round_to_rational rejects indefinite Gram matrices") {
  // x1 * x2 has a valid Gram representation only with an indefinite matrix
  PolyQ f(2);
  f.add_term({1, 1}, Rational(1));
  Eigen::MatrixXd Q(2, 2);
  Q << 0.0, 0.5, 0.5, 0.0;
  GramCertificate cert = make_gram_certificate(f, {{0, 1}, {1, 0}}, Q, 0.0);
  CHECK(cert.residual == 0.0);
  RoundingResult rr = round_to_rational(cert);
  CHECK_FALSE(rr.identity.has_value());
  CHECK_FALSE(rr.reason.empty());
}
