#pragma once

// Internal helpers shared by the SOS and envelope translation units: matching
// a polynomial identity coefficientwise inside a cone program, with Gram
// (sum-of-squares) blocks, an optional uniform margin, and free linear terms.

#include <map>
#include <utility>
#include <vector>

#include "polycert/conic.hpp"
#include "polycert/poly.hpp"

namespace polycert::detail {

// Re-embeds p into a target_nv-variable space, sending variable i to i+offset.
inline PolyQ shift_vars(const PolyQ& p, int target_nv, int offset) {
  PolyQ r(target_nv);
  for (const auto& [e, c] : p.terms()) {
    Exponent t(target_nv, 0);
    for (int i = 0; i < p.nvars(); ++i) t[i + offset] = e[i];
    r.add_term(std::move(t), c);
  }
  return r;
}

inline Exponent exp_add(const Exponent& a, const Exponent& b) {
  Exponent r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

// One polynomial identity matched coefficientwise inside a cone program:
//   <b, Q b> + t * sum_a b_a^2 + sum_v x_v coef_v(x) = rhs(x)
// over the block's own variable space. An empty basis gives pure linear rows.
struct IdentityBlock {
  int nv = 0;
  std::vector<Exponent> basis;
  bool with_margin = false;
  std::vector<std::pair<int, PolyQ>> linear;
  PolyQ rhs{0};
  std::vector<std::vector<int>> grid;  // out: Gram variable index grid
};

// Returns false when some rhs monomial is matched by no variable at all
// (the identity is structurally unsatisfiable).
inline bool add_identity_rows(ConeProgram& prog, IdentityBlock& blk, int t_var) {
  std::map<Exponent, std::map<int, double>, GradedLexLess> rows;
  const int B = static_cast<int>(blk.basis.size());
  if (B > 0) blk.grid = add_psd_matrix_variable(prog, B);
  for (int a = 0; a < B; ++a)
    for (int b = a; b < B; ++b)
      rows[exp_add(blk.basis[a], blk.basis[b])][blk.grid[a][b]] += (a == b) ? 1.0 : 2.0;
  if (blk.with_margin && B > 0)
    for (int a = 0; a < B; ++a) rows[exp_add(blk.basis[a], blk.basis[a])][t_var] += 1.0;
  for (const auto& [v, poly] : blk.linear)
    for (const auto& [e, c] : poly.terms()) rows[e][v] += to_double(c);
  for (const auto& [e, c] : blk.rhs.terms()) rows[e];  // ensure a row exists

  bool consistent = true;
  for (auto& [e, coeffs] : rows) {
    EqRow row;
    for (const auto& [v, c] : coeffs)
      if (c != 0.0) row.coeffs.push_back({v, c});
    row.rhs = to_double(blk.rhs.coeff(e));
    if (row.coeffs.empty()) {
      if (row.rhs != 0.0) consistent = false;
      continue;
    }
    prog.equalities.push_back(std::move(row));
  }
  return consistent;
}

// Cap t <= 1 so a margin objective is always bounded.
inline void add_margin_cap(ConeProgram& prog, int t_var) {
  LmiBlock cap;
  cap.dim = 1;
  cap.f0.push_back({{0, 0}, 1.0});
  cap.entries.push_back({t_var, 0, 0, -1.0});
  prog.psd_blocks.push_back(std::move(cap));
}

inline Eigen::MatrixXd extract_gram(const Eigen::VectorXd& x,
                                    const std::vector<std::vector<int>>& grid, double t) {
  const int B = static_cast<int>(grid.size());
  Eigen::MatrixXd Q(B, B);
  for (int i = 0; i < B; ++i)
    for (int j = i; j < B; ++j) Q(i, j) = Q(j, i) = x[grid[i][j]];
  // The solver's Gram iterate is PSD on its own; only a *positive* optimal
  // margin is folded back in.  A slightly negative margin (a boundary optimum
  // reached from the interior, where t < 0 along the whole path) must not be
  // subtracted from the diagonal -- that would force a negative eigenvalue of
  // exactly that size.  Leaving Q unshifted instead moves the discrepancy into
  // the recomputed residual, which the residual gate arbitrates.
  Q.diagonal().array() += std::max(t, 0.0);
  return Q;
}

inline bool solved(const Solution& sol) {
  return sol.status == SolveStatus::Optimal || sol.status == SolveStatus::Inaccurate;
}

}  // namespace polycert::detail
