#pragma once

// Exact rational identities transcribed from the reference displays. They
// serve as independent oracles: every polynomial here is constructed term by
// term with exact arithmetic, never through the certification code paths.

#include <utility>
#include <vector>

#include "polycert/poly.hpp"
#include "polycert/sos.hpp"
#include "support/oracles.hpp"

namespace testsup {

using polycert::ExactSOSIdentity;
using polycert::Exponent;
using polycert::PolyQ;
using polycert::Rational;

// Re-embeds p into a wider space, sending variable i to i + offset.
inline PolyQ lift_poly(const PolyQ& p, int target_nv, int offset) {
  PolyQ r(target_nv);
  for (const auto& [e, c] : p.terms()) {
    Exponent t(target_nv, 0);
    for (int i = 0; i < p.nvars(); ++i) t[i + offset] = e[i];
    r.add_term(std::move(t), c);
  }
  return r;
}

// ---- 2x2 doubled space: X entries are variables 0..3, Y entries 4..7, both
// column-major (x1=X11, x2=X21, x3=X12, x4=X22).

inline PolyQ dx(int i) { return PolyQ::variable(8, i); }
inline PolyQ dy(int i) { return PolyQ::variable(8, 4 + i); }

inline PolyQ det_x8() { return dx(0) * dx(3) - dx(1) * dx(2); }
inline PolyQ det_y8() { return dy(0) * dy(3) - dy(1) * dy(2); }
inline PolyQ norm_x8() { return frob_sq(8, 0, 4); }
inline PolyQ norm_y8() { return frob_sq(8, 4, 4); }
inline PolyQ ip_xy8() {
  PolyQ r(8);
  for (int i = 0; i < 4; ++i) r += dx(i) * dy(i);
  return r;
}
// <X, S(Y)> with S(Y) = [[Y22, -Y21], [-Y12, Y11]]; this polarizes the
// determinant: det(X+Y) = det X + det Y + <X, S(Y)>, and is symmetric in X,Y.
inline PolyQ ip_xsy8() {
  return dx(0) * dy(3) - dx(2) * dy(1) - dx(1) * dy(2) + dx(3) * dy(0);
}

// The cubic multiplier vector for the 2x2 quartic |X|^2(|X|^2 - 2 det X),
// in the minors order (X11, X21, X12, X22, det): the four entry components
// are 4*Y_entry*(|Y|^2 - det Y) and the determinant component is -2|Y|^2.
inline std::vector<PolyQ> adm_multipliers() {
  PolyQ norm = frob_sq(4, 0, 4);
  PolyQ det = det2x2(4);
  std::vector<PolyQ> q;
  for (int i = 0; i < 4; ++i)
    q.push_back(Rational(4) * PolyQ::variable(4, i) * (norm - det));
  q.push_back(Rational(-2) * norm);
  return q;
}

// f(X) - f(Y) - <q(Y), p(X) - p(Y)> for the function above, exactly.
inline PolyQ adm_first_order_remainder() {
  const PolyQ f = adm_function();
  const std::vector<PolyQ> q = adm_multipliers();
  PolyQ target = lift_poly(f, 8, 0) - lift_poly(f, 8, 4);
  for (int i = 0; i < 4; ++i) target -= lift_poly(q[i], 8, 4) * (dx(i) - dy(i));
  target -= lift_poly(q[4], 8, 4) * (det_x8() - det_y8());
  return target;
}

// The seventeen-square decomposition of adm_first_order_remainder(): nine
// displayed squares plus four (sum-of-two-squares) x (square) products split
// into two squares each. Coefficients are 1/4 throughout except one 3/4.
inline ExactSOSIdentity adm_identity() {
  const Rational q1(1, 4), q3(3, 4);
  const PolyQ nx = norm_x8(), ny = norm_y8(), dX = det_x8(), dY = det_y8();
  const PolyQ ip = ip_xy8(), ips = ip_xsy8();

  const PolyQ x11 = dx(0), x21 = dx(1), x12 = dx(2), x22 = dx(3);
  const PolyQ y11 = dy(0), y21 = dy(1), y12 = dy(2), y22 = dy(3);
  const Rational two(2), three(3);

  std::vector<std::pair<Rational, PolyQ>> sq;
  sq.push_back({q1, nx - two * dX - ip + ips});
  sq.push_back({q1, ny - two * dY - ip + ips});
  sq.push_back({q1, two * dX - two * ip - two * dY - nx + three * ny});
  sq.push_back({q3, (x12 + x21) * (y11 - y22) + (x22 - x11) * (y12 + y21)});
  sq.push_back({q1, (x11 + x22) * (y12 - y21) + (x21 - x12) * (y11 + y22)});
  sq.push_back({q1, (x12 - x21) * (x11 - x22) - (y12 - y21) * (y11 - y22)});
  sq.push_back({q1, (x12 + x21) * (x11 + x22) - (y12 + y21) * (y11 + y22)});
  sq.push_back({q1, (x11 - x22) * (x12 - x21 - y12 + y21)});
  sq.push_back({q1, (x12 + x21) * (x12 - x21 - y12 + y21)});
  sq.push_back({q1, (x11 - x22) * (x11 + x22 - y11 - y22)});
  sq.push_back({q1, (x12 + x21) * (x11 + x22 - y11 - y22)});
  sq.push_back({q1, (y11 - y22) * (y12 - y21 - x12 + x21)});
  sq.push_back({q1, (y12 + y21) * (y12 - y21 - x12 + x21)});
  sq.push_back({q1, (y11 - y22) * (y11 + y22 - x11 - x22)});
  sq.push_back({q1, (y12 + y21) * (y11 + y22 - x11 - x22)});
  sq.push_back({q1, x11 * x11 - x22 * x22 - y11 * y11 + y22 * y22});
  sq.push_back({q1, x12 * x12 - x21 * x21 - y12 * y12 + y21 * y21});

  ExactSOSIdentity id;
  id.target = adm_first_order_remainder();
  id.squares = std::move(sq);
  id.remainder = PolyQ(8);
  return id;
}

// |X-I|^2 |X+I|^2 on n x n written as
//   |X|^4 + (n-2)/2 |X+X^T|^2 + (n+2)/2 |X-X^T|^2
//   + 8 sum_{i<j} (X_ij X_ji - X_ii X_jj) + n^2,
// with the quadratic norms expanded into squares and the polyaffine tail
// carried in the remainder.
inline ExactSOSIdentity dw_expansion_identity(int n) {
  const int nv = n * n;
  auto entry = [&](int i, int j) {  // 1-based (row, col), column-major
    return PolyQ::variable(nv, (j - 1) * n + (i - 1));
  };

  ExactSOSIdentity id;
  id.target = double_well(n);

  std::vector<std::pair<Rational, PolyQ>> sq;
  sq.push_back({Rational(1), frob_sq(nv, 0, nv)});  // |X|^4 = (|X|^2)^2
  for (int i = 1; i <= n; ++i) {
    if (n != 2) sq.push_back({Rational(2 * (n - 2)), entry(i, i)});
    for (int j = i + 1; j <= n; ++j) {
      if (n != 2) sq.push_back({Rational(n - 2), entry(i, j) + entry(j, i)});
      sq.push_back({Rational(n + 2), entry(i, j) - entry(j, i)});
    }
  }
  id.squares = std::move(sq);

  PolyQ rest = PolyQ::constant(nv, Rational(n * n));
  for (int i = 1; i <= n; ++i)
    for (int j = i + 1; j <= n; ++j)
      rest += Rational(8) * (entry(i, j) * entry(j, i) - entry(i, i) * entry(j, j));
  id.remainder = std::move(rest);
  return id;
}

}  // namespace testsup
