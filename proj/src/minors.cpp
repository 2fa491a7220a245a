#include "polycert/minors.hpp"

#include <algorithm>

namespace polycert {

namespace {

void subsets_rec(int from, int upto, int want, std::vector<int>& cur,
                 std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == want) {
    out.push_back(cur);
    return;
  }
  for (int v = from; v <= upto; ++v) {
    cur.push_back(v);
    subsets_rec(v + 1, upto, want, cur, out);
    cur.pop_back();
  }
}

std::vector<std::vector<int>> subsets(int upto, int size) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  subsets_rec(1, upto, size, cur, out);
  return out;
}

// Determinant of the picked submatrix by cofactor expansion along the first
// listed row; submatrix sizes in scope are tiny.
template <class C, class Entry>
C minor_det(const std::vector<int>& rows, const std::vector<int>& cols, const Entry& at) {
  int s = static_cast<int>(rows.size());
  if (s == 1) return at(rows[0], cols[0]);
  std::vector<int> sub_rows(rows.begin() + 1, rows.end());
  // Explicit return type: with expression-template scalars (gmpxx), a deduced
  // return would let the lazy product escape referring to dead temporaries.
  auto cofactor = [&](int k) -> C {
    std::vector<int> sub_cols;
    for (int t = 0; t < s; ++t)
      if (t != k) sub_cols.push_back(cols[t]);
    return at(rows[0], cols[k]) * minor_det<C, Entry>(sub_rows, sub_cols, at);
  };
  C total = cofactor(0);
  for (int k = 1; k < s; ++k) {
    if (k % 2 == 1)
      total -= cofactor(k);
    else
      total += cofactor(k);
  }
  return total;
}

}  // namespace

MinorsMap build_minors_map(int m, int n) {
  MinorsMap map;
  map.space = VarSpace(m, n);
  int smax = std::min(m, n);
  for (int s = 1; s <= smax; ++s) {
    auto row_sets = subsets(m, s);
    auto col_sets = subsets(n, s);
    std::vector<MinorIndex> block;
    for (const auto& r : row_sets)
      for (const auto& c : col_sets) block.push_back(MinorIndex{r, c});
    std::sort(block.begin(), block.end(), [](const MinorIndex& a, const MinorIndex& b) {
      if (a.cols != b.cols) return a.cols < b.cols;
      return a.rows < b.rows;
    });
    map.indices.insert(map.indices.end(), block.begin(), block.end());
  }
  return map;
}

std::vector<PolyQ> minors_symbolic(const MinorsMap& map) {
  int nv = map.space.total();
  std::vector<PolyQ> out;
  out.reserve(map.indices.size());
  for (const auto& mi : map.indices) {
    auto at = [&](int i, int j) { return PolyQ::variable(nv, map.space.index(i, j)); };
    out.push_back(minor_det<PolyQ>(mi.rows, mi.cols, at));
  }
  return out;
}

template <class C>
std::vector<C> minors_eval_flat(const MinorsMap& map, const std::vector<C>& x) {
  if (static_cast<int>(x.size()) != map.space.total())
    throw std::invalid_argument("minors_eval_flat: shape mismatch");
  std::vector<C> out;
  out.reserve(map.indices.size());
  for (const auto& mi : map.indices) {
    auto at = [&](int i, int j) { return x[map.space.index(i, j)]; };
    out.push_back(minor_det<C>(mi.rows, mi.cols, at));
  }
  return out;
}

template std::vector<Rational> minors_eval_flat<Rational>(const MinorsMap&,
                                                          const std::vector<Rational>&);
template std::vector<double> minors_eval_flat<double>(const MinorsMap&, const std::vector<double>&);

std::vector<double> minors_eval(const MinorsMap& map, const Eigen::MatrixXd& X) {
  if (X.rows() != map.space.m || X.cols() != map.space.n)
    throw std::invalid_argument("minors_eval: shape mismatch");
  std::vector<double> flat(map.space.total());
  for (int j = 0; j < map.space.n; ++j)
    for (int i = 0; i < map.space.m; ++i) flat[map.space.index(i + 1, j + 1)] = X(i, j);
  return minors_eval_flat<double>(map, flat);
}

}  // namespace polycert
