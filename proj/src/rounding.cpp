#include <algorithm>
#include <iterator>
#include <map>
#include <utility>
#include <vector>

#include "polycert/sos.hpp"

namespace polycert {

namespace {

RoundingResult round_at_denominator(const GramCertificate& cert, long max_denominator) {
  RoundingResult out;
  const int B = static_cast<int>(cert.basis.size());
  if (B == 0) {
    if (!cert.target.is_zero()) {
      out.reason = "empty basis cannot represent a nonzero target";
      return out;
    }
    out.identity = ExactSOSIdentity{cert.target, {}, PolyQ(cert.nv)};
    return out;
  }

  // 1. Entrywise best rational approximation of the Gram matrix.
  std::vector<std::vector<Rational>> Q(B, std::vector<Rational>(B, Rational(0)));
  for (int i = 0; i < B; ++i)
    for (int j = i; j < B; ++j) Q[i][j] = Q[j][i] = nearest_rational(cert.Q(i, j), max_denominator);

  // 2. Exact projection onto the coefficient constraints. Each ordered Gram
  //    position (i, j) feeds exactly one monomial e_i + e_j, so the
  //    constraints have disjoint support and the least-squares correction is
  //    a uniform shift per group (symmetric, since groups are swap-closed).
  std::map<Exponent, std::vector<std::pair<int, int>>, GradedLexLess> groups;
  {
    Exponent e(static_cast<std::size_t>(cert.nv), 0);
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < B; ++j) {
        for (int k = 0; k < cert.nv; ++k) e[k] = cert.basis[i][k] + cert.basis[j][k];
        groups[e].push_back({i, j});
      }
  }
  for (const auto& [e, c] : cert.target.terms()) {
    if (c != Rational(0) && groups.find(e) == groups.end()) {
      out.reason = "target has a monomial outside the span of basis products";
      return out;
    }
  }
  for (auto& [e, cells] : groups) {
    Rational want = cert.target.coeff(e);
    Rational have(0);
    for (const auto& [i, j] : cells) have += Q[i][j];
    if (have == want) continue;
    Rational shift = (want - have) / Rational(static_cast<long>(cells.size()));
    for (const auto& [i, j] : cells) Q[i][j] += shift;
  }

  // 3. Exact LDL^T with greatest-diagonal pivoting. Succeeds exactly when
  //    the projected matrix is positive semidefinite over the rationals.
  std::vector<bool> done(B, false);
  std::vector<std::pair<Rational, std::vector<Rational>>> steps;
  for (int step = 0; step < B; ++step) {
    int piv = -1;
    for (int i = 0; i < B; ++i)
      if (!done[i] && (piv < 0 || Q[i][i] > Q[piv][piv])) piv = i;
    if (piv < 0) break;
    if (Q[piv][piv] < 0) {
      out.reason = "projected Gram matrix is not positive semidefinite (negative pivot)";
      return out;
    }
    if (Q[piv][piv] == 0) {
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
          if (!done[i] && !done[j] && Q[i][j] != Rational(0)) {
            out.reason =
                "projected Gram matrix is not positive semidefinite (zero diagonal, nonzero row)";
            return out;
          }
      break;
    }
    const Rational d = Q[piv][piv];
    std::vector<Rational> v(B, Rational(0));
    for (int i = 0; i < B; ++i)
      if (!done[i]) v[i] = Q[piv][i] / d;
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < B; ++j)
        if (!done[i] && !done[j]) Q[i][j] -= d * v[i] * v[j];
    done[piv] = true;
    steps.push_back({d, std::move(v)});
  }

  ExactSOSIdentity id;
  id.target = cert.target;
  id.remainder = PolyQ(cert.nv);
  for (const auto& [d, v] : steps) {
    PolyQ sq(cert.nv);
    for (int i = 0; i < B; ++i)
      if (v[i] != Rational(0)) sq.add_term(cert.basis[i], v[i]);
    id.squares.push_back({d, std::move(sq)});
  }
  if (!verify_identity(cert.target, id)) {
    out.reason = "exact verification of the factored identity failed";
    return out;
  }
  out.identity = std::move(id);
  return out;
}

}  // namespace

RoundingResult round_to_rational(const GramCertificate& cert, long max_denominator) {
  RoundingResult out;
  if (cert.residual > 1e-6) {
    out.reason = "certificate residual exceeds 1e-6; not close enough to round";
    return out;
  }
  // Coarse denominators first: certificates often sit on the boundary of the
  // SOS cone, where a faithful fine rounding reproduces the iterate's tiny
  // negative eigenvalues while a coarse one snaps onto the exact PSD point.
  static constexpr long kLadder[] = {1, 2, 4, 10, 100, 1000, 10000, 1000000000000L};
  for (long den : kLadder) {
    if (den > max_denominator) break;
    out = round_at_denominator(cert, den);
    if (out.identity) return out;
  }
  if (max_denominator >= 1 &&
      std::find(std::begin(kLadder), std::end(kLadder), max_denominator) == std::end(kLadder)) {
    RoundingResult last = round_at_denominator(cert, max_denominator);
    if (last.identity) return last;
    out = std::move(last);
  }
  if (out.reason.empty()) out.reason = "no valid denominator bound given";
  return out;
}

bool verify_identity(const PolyQ& lhs, const ExactSOSIdentity& id) {
  if (lhs.nvars() != id.target.nvars() || lhs != id.target) return false;
  if (id.remainder.nvars() != lhs.nvars()) return false;
  PolyQ acc = id.remainder;
  for (const auto& [c, s] : id.squares) {
    if (c < Rational(0)) return false;
    if (s.nvars() != lhs.nvars()) return false;
    acc += (s * s) * c;
  }
  return acc == lhs;
}

}  // namespace polycert
