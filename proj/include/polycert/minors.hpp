#pragma once

#include <Eigen/Dense>
#include <vector>

#include "polycert/poly.hpp"
#include "polycert/varspace.hpp"

namespace polycert {

// One minor of an m x n matrix: the determinant of the submatrix picked by
// `rows` and `cols` (1-based, strictly increasing, equal length).
struct MinorIndex {
  std::vector<int> rows;
  std::vector<int> cols;
  int order() const { return static_cast<int>(rows.size()); }
};

// The minors map p: R^{m x n} -> R^N over all orders s = 1..min(m,n).
// Ordering: ascending order s; within an order, lexicographic on (cols, rows),
// which makes the order-1 block come out in column-major entry order
// (for 2x2: X11, X21, X12, X22, det X).
struct MinorsMap {
  VarSpace space;
  std::vector<MinorIndex> indices;
  int N() const { return static_cast<int>(indices.size()); }
};

MinorsMap build_minors_map(int m, int n);

// Laplace-expanded minor polynomials in the column-major entry variables;
// entry i has degree indices[i].order().
std::vector<PolyQ> minors_symbolic(const MinorsMap& map);

// Numeric minors of X (column-major flattening), in map order.
template <class C>
std::vector<C> minors_eval_flat(const MinorsMap& map, const std::vector<C>& x);

std::vector<double> minors_eval(const MinorsMap& map, const Eigen::MatrixXd& X);

}  // namespace polycert
