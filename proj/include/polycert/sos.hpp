#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "polycert/conic.hpp"
#include "polycert/minors.hpp"
#include "polycert/poly.hpp"

namespace polycert {

// Numeric witness that target = <b(x), Q b(x)> over the monomial basis b.
// residual and min_eigenvalue are recomputed from (basis, Q, target) on
// construction and never copied from the solver.
struct GramCertificate {
  int nv = 0;
  std::vector<Exponent> basis;
  Eigen::MatrixXd Q;
  PolyQ target{0};
  double residual = 0.0;  // max abs coefficient of <b,Qb> - target
  double min_eigenvalue = 0.0;
  double margin = 0.0;  // optimal t of the margin program Q = Q0 + t I, Q0 >= 0
};

GramCertificate make_gram_certificate(PolyQ target, std::vector<Exponent> basis,
                                      Eigen::MatrixXd Q, double margin);

// <b,Qb> as a float polynomial in nv variables.
PolyD gram_polynomial(int nv, const std::vector<Exponent>& basis, const Eigen::MatrixXd& Q);

enum class CertKind { SOSPolyconvex, LiftedSOSPolyconvex };
enum class ConvexityForm { Hessian, Bregman };

// Witness of polyconvexity. For kind SOSPolyconvex, q holds the minor
// multipliers q_1..q_N (polynomials in the Y variables) and gram certifies
// f(X) - f(Y) - <q(Y), p(X) - p(Y)> as a sum of squares in (X, Y).
// For kind LiftedSOSPolyconvex, g is the lift with g(p(X)) = f(X) exactly and
// gram certifies <z, grad^2 g(q) z> as a sum of squares in (q, z).
struct PolyconvexityCertificate {
  CertKind kind = CertKind::SOSPolyconvex;
  std::vector<PolyQ> q;
  PolyQ g{0};
  GramCertificate gram;
  int deg_q = 0;
  int deg_g = 0;
};

// Exact rational decomposition target = sum c_i * s_i^2 + remainder, with
// all c_i >= 0. remainder carries the polyaffine/constant part of identities
// whose right-hand side is not purely a sum of squares.
struct ExactSOSIdentity {
  PolyQ target{0};
  std::vector<std::pair<Rational, PolyQ>> squares;
  PolyQ remainder{0};
};

struct SosSettings {
  SolverSettings solver = SolverSettings::from_env();
  // Certify iff the optimal margin t* >= this.  Targets that vanish at X = Y
  // (every polyconvexity target does) or that lack constant/linear support sit
  // exactly on the SOS-cone boundary, so their true margin is 0 and the solver
  // lands slightly below it; the tolerance matches the residual scale.  Truly
  // non-SOS targets come back with t* orders of magnitude lower.
  double accept_margin = -1e-6;
  double residual_tol = 1e-6;
  bool full_basis = false;      // lifted: drop the minor-weighted basis pruning
  bool l1_canonicalize = true;  // sos-pc: second solve minimizing sum |q coeffs|
};

// f as an explicit sum of squares of degree <= 2d (2d even, deg f <= 2d).
// nullopt = inconclusive at this degree.
std::optional<GramCertificate> sos_decompose(const PolyQ& f, int two_d,
                                             const SosSettings& settings = {});

// SOS-convexity of g: Hessian form certifies <z, grad^2 g(x) z> SOS in
// (x, z); Bregman form certifies g(x) - g(y) - <grad g(y), x - y> SOS in
// (x, y). Affine g is trivially certified.
std::optional<GramCertificate> check_sos_convex(const PolyQ& g,
                                                ConvexityForm form = ConvexityForm::Hessian,
                                                const SosSettings& settings = {});

// Searches multipliers q_i(Y), deg q_i <= min(deg_q, T - s_i) with s_i the
// order of minor i and T = max(deg f, deg_q + 1), such that
// f(X) - f(Y) - <q(Y), p(X) - p(Y)> is SOS in (X, Y).
std::optional<PolyconvexityCertificate> certify_sos_polyconvex(const PolyQ& f,
                                                               const MinorsMap& p, int deg_q,
                                                               const SosSettings& settings = {});

// Searches an SOS-convex g with g(p(X)) = f(X) exactly, deg g <= deg_g
// (even), by default restricted to monomials whose minor-weighted degree is
// at most max(deg f, deg_g).
std::optional<PolyconvexityCertificate> certify_lifted_sos_polyconvex(
    const PolyQ& f, const MinorsMap& p, int deg_g, const SosSettings& settings = {});

struct RoundingResult {
  std::optional<ExactSOSIdentity> identity;
  std::string reason;  // set when rounding failed
};

// Rounds cert.Q to rationals (denominator-bounded best approximants),
// re-projects exactly onto the coefficient constraints <b,Qb> = target, and
// factors the result by exact rational LDL^T into squares.
RoundingResult round_to_rational(const GramCertificate& cert, long max_denominator = 10000);

// True iff lhs - sum c_i s_i^2 - remainder is exactly the zero polynomial
// and every c_i >= 0. No tolerances.
bool verify_identity(const PolyQ& lhs, const ExactSOSIdentity& id);

// Weight of each minor component = its order (the degree it contributes
// after composition with the minors map).
std::vector<int> minor_weights(const MinorsMap& p);

}  // namespace polycert
