#pragma once

#include <stdexcept>
#include <string>

namespace polycert {

// Variable space for polynomials on m x n matrices. Entries are enumerated
// column-major: X(i,j) with 1-based indices maps to variable (j-1)*m + (i-1),
// so for 2x2 the variables (x1,x2,x3,x4) are (X11,X21,X12,X22).
struct VarSpace {
  int m = 0;
  int n = 0;

  VarSpace() = default;
  VarSpace(int m_, int n_) : m(m_), n(n_) {
    if (m < 1 || n < 1) throw std::invalid_argument("VarSpace: m, n must be >= 1");
  }

  int total() const { return m * n; }

  // 1-based matrix indices -> 0-based variable index.
  int index(int i, int j) const {
    if (i < 1 || i > m || j < 1 || j > n) throw std::out_of_range("VarSpace::index");
    return (j - 1) * m + (i - 1);
  }

  bool operator==(const VarSpace& o) const { return m == o.m && n == o.n; }
};

inline std::string var_name(int index0) { return "x" + std::to_string(index0 + 1); }

}  // namespace polycert
