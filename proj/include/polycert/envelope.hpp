#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "polycert/conic.hpp"
#include "polycert/minors.hpp"
#include "polycert/poly.hpp"

namespace polycert {

// Basic semialgebraic domain {g_1 >= 0, ..., g_s >= 0} in the matrix-entry
// variables (column-major flattening). An empty list means all of R^{m x n}.
struct SemialgebraicDomain {
  std::vector<PolyQ> constraints;

  // Max degree over the constraints; 1 for the unconstrained case.
  int max_degree() const {
    int d = 1;
    for (const PolyQ& g : constraints) d = std::max(d, g.degree());
    return d;
  }
};

// Pseudo-moment vector of order k: one value y_a per monomial x^a with
// |a| <= 2k, in graded-lex order. After a successful solve y_0 = 1.
struct PseudoMomentVector {
  int nv = 0;
  int k = 0;
  std::vector<Exponent> monomials;
  Eigen::VectorXd values;

  // Digit-concatenation label, e.g. y_2002 for a = (2,0,0,2).
  std::string label(int idx) const;
  // Value of y_a; throws std::out_of_range if |a| > 2k.
  double value_of(const Exponent& a) const;
};

// Moment matrix M_j(y), indexed by the monomial basis of degree <= j;
// entry (a, b) = y_{a+b}. Requires j <= y.k.
Eigen::MatrixXd moment_matrix(const PseudoMomentVector& y, int j);

// The minimal admissible relaxation order: 2k >= max(deg f, deg g_i, min(m,n)).
int minimal_order(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p);

// Moment relaxation of the pointwise envelope problem at X:
//   min  l_y(f)
//   s.t. M_k(y) >= 0,  M_{k - ceil(deg g_i / 2)}(g_i y) >= 0,
//        l_y(1) = 1,   l_y(p_a) = p_a(X)   (N+1 equality rows, in this order)
// Variables are the pseudo-moments y_a, |a| <= 2k, in graded-lex order.
struct MomentRelaxation {
  ConeProgram program;
  std::vector<Exponent> monomials;  // program variable i is y_{monomials[i]}
  int k = 0;
};

MomentRelaxation build_moment_relaxation(const PolyQ& f, const SemialgebraicDomain& dom,
                                         const MinorsMap& p, const Eigen::MatrixXd& X, int k);

// SOS strengthening of the dual:
//   max  v + <u, p(X)>
//   s.t. f - v - <u, p> = sigma_0 + sum_i g_i sigma_i,  sigma's SOS
// with deg sigma_0 <= 2k and deg sigma_i <= 2(k - ceil(deg g_i / 2)).
struct DualSosProgram {
  ConeProgram program;
  std::vector<int> u_vars;  // one per minor component
  int v_var = -1;
};

DualSosProgram build_dual_sos(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p,
                              const Eigen::MatrixXd& X, int k);

enum class EnvelopeStatus { ExactByMatch, ExactByFlat, LowerBound, SolverIssue };

std::string to_string(EnvelopeStatus s);

struct Atom {
  Eigen::MatrixXd X;  // m x n
  double weight = 0.0;
};

// Everything envelope_at learned at one (X, k).
struct EnvelopeReport {
  Eigen::MatrixXd X;
  int k = 0;
  double value = 0.0;       // moment bound f_mom(X); the envelope when exact
  double f_at_X = 0.0;      // f(X)
  double dual_value = 0.0;  // SOS bound v + <u, p(X)> <= value + tol
  Eigen::VectorXd u;        // minor multipliers of the dual certificate
  double v = 0.0;           // constant of the dual certificate
  EnvelopeStatus status = EnvelopeStatus::SolverIssue;
  std::vector<int> ranks;     // rank M_j(y) for j = 0..k
  int flat_rank = -1;         // r when rank M_k = rank M_{k - d_flat}, else -1
  int strict_flat_rank = -1;  // same under the un-halved gap d_g, else -1
  std::vector<Atom> atoms;    // minimizing discrete measure, when extracted
  PseudoMomentVector y;
  SolveStatus solver_status = SolveStatus::Failed;
  SolveStatus dual_solver_status = SolveStatus::Failed;
  std::string message;  // accumulated notes: inaccuracy, conditioning, extraction
};

struct EnvelopeSettings {
  SolverSettings solver = SolverSettings::from_env();
  double match_tol = 1e-6;  // |value - f(X)| <= tol (1 + |f(X)|) declares a match
  double rank_tol = 1e-5;   // relative singular-value threshold for ranks
  double atom_tol = 1e-5;   // moment reconstruction tolerance for atoms
  unsigned seed = 0;        // seeds the random combination in atom extraction
  bool solve_dual = true;   // run the independent dual SOS solve
};

// Solves primal and dual at order k, cross-checks dual <= primal <= f(X),
// detects exactness (value match first, then flat extension), extracts atoms
// on flat success, and fills the rank profile. Solver trouble degrades the
// status (SolverIssue for hard failure); Inaccurate results are reported, not
// thrown.
EnvelopeReport envelope_at(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p,
                           const Eigen::MatrixXd& X, int k, const EnvelopeSettings& settings = {});

// True iff |report.value - f(X)| <= tol (1 + |f(X)|) on a solved report;
// promotes report.status to ExactByMatch (f is polyconvex at X).
bool check_match(EnvelopeReport& report, const PolyQ& f, const Eigen::MatrixXd& X,
                 double tol = 1e-6);

// Rank r of M_k(y) when the flat-extension test rank M_k = rank M_{k - d_flat}
// passes, with d_flat = max(1, ceil(d_g / 2)); nullopt otherwise.
std::optional<int> check_flat_extension(const PseudoMomentVector& y,
                                        const SemialgebraicDomain& dom, double rank_tol = 1e-5);

// The full rank profile behind check_flat_extension, including the stricter
// un-halved gap (d_g itself), which is also evaluated and reported.
struct FlatCheck {
  std::vector<int> ranks;  // rank M_j for j = 0..k
  int d_flat = 1;          // max(1, ceil(d_g / 2))
  bool flat = false;       // rank M_k == rank M_{k - d_flat}
  int strict_gap = 1;      // d_g
  bool strict_flat = false;
};
FlatCheck flat_extension_detail(const PseudoMomentVector& y, const SemialgebraicDomain& dom,
                                double rank_tol = 1e-5);

// Atom extraction from a flat pseudo-moment vector of rank r: truncated
// pivoted Cholesky of the moment matrix (pivot rows of degree <= k - d_flat),
// multiplication matrices, commutation check, simultaneous diagonalization by
// ordered real Schur of a seeded random convex combination, least-squares
// weights. ok = false (with a message) when extraction or its postconditions
// fail; the caller keeps ExactByFlat status with empty atoms in that case.
struct ExtractionResult {
  std::vector<Atom> atoms;
  bool ok = false;
  std::string message;
};
ExtractionResult extract_atoms(const PseudoMomentVector& y, int r, const MinorsMap& p,
                               const SemialgebraicDomain& dom,
                               const EnvelopeSettings& settings = {});

// Orders k_min..k_max in sequence, stopping early on ExactByMatch/ExactByFlat.
// Per-order solver trouble is recorded in that order's report, not thrown.
std::vector<EnvelopeReport> hierarchy(const PolyQ& f, const SemialgebraicDomain& dom,
                                      const MinorsMap& p, const Eigen::MatrixXd& X, int k_min,
                                      int k_max, const EnvelopeSettings& settings = {});

// One envelope_at per grid point along an affine matrix path X(t).
struct SweepRow {
  double t = 0.0;
  double value = 0.0;
  int rank = 0;  // rank M_k(y)
  EnvelopeStatus status = EnvelopeStatus::SolverIssue;
};
std::vector<SweepRow> sweep(const PolyQ& f, const SemialgebraicDomain& dom, const MinorsMap& p,
                            const std::function<Eigen::MatrixXd(double)>& path,
                            const std::vector<double>& grid, int k,
                            const EnvelopeSettings& settings = {});

}  // namespace polycert
