#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "polycert/rational.hpp"
#include "polycert/varspace.hpp"

namespace polycert {

// Exponent vector of a monomial; length equals the number of variables.
using Exponent = std::vector<int>;

inline int exponent_degree(const Exponent& e) {
  return std::accumulate(e.begin(), e.end(), 0);
}

// Graded lexicographic order: compare total degree first, then
// lexicographically on the exponent vector.
struct GradedLexLess {
  bool operator()(const Exponent& a, const Exponent& b) const {
    int da = exponent_degree(a), db = exponent_degree(b);
    if (da != db) return da < db;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  }
};

// All exponents of total degree <= d in nv variables, ascending graded-lex.
std::vector<Exponent> monomial_basis(int nv, int d);
inline std::vector<Exponent> monomial_basis(const VarSpace& space, int d) {
  return monomial_basis(space.total(), d);
}

// Sparse multivariate polynomial over coefficient ring C (Rational or double).
// Immutable in spirit: all operations return new values.
template <class C>
class Poly {
 public:
  using TermMap = std::map<Exponent, C, GradedLexLess>;

  Poly() : nv_(0) {}
  explicit Poly(int nv) : nv_(nv) {
    if (nv < 0) throw std::invalid_argument("Poly: negative variable count");
  }

  static Poly constant(int nv, const C& c) {
    Poly p(nv);
    p.add_term(Exponent(nv, 0), c);
    return p;
  }

  static Poly variable(int nv, int i) {
    if (i < 0 || i >= nv) throw std::out_of_range("Poly::variable");
    Poly p(nv);
    Exponent e(nv, 0);
    e[i] = 1;
    p.add_term(e, C(1));
    return p;
  }

  static Poly monomial(Exponent e, const C& c) {
    Poly p(static_cast<int>(e.size()));
    p.add_term(std::move(e), c);
    return p;
  }

  int nvars() const { return nv_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t num_terms() const { return terms_.size(); }

  int degree() const {
    if (terms_.empty()) return 0;
    return exponent_degree(terms_.rbegin()->first);
  }

  C coeff(const Exponent& e) const {
    auto it = terms_.find(e);
    return it == terms_.end() ? C(0) : it->second;
  }

  C constant_term() const { return coeff(Exponent(nv_, 0)); }

  void add_term(Exponent e, const C& c) {
    if (static_cast<int>(e.size()) != nv_) throw std::invalid_argument("Poly::add_term: exponent size");
    if (c == C(0)) return;
    auto [it, inserted] = terms_.emplace(std::move(e), c);
    if (!inserted) {
      it->second += c;
      if (it->second == C(0)) terms_.erase(it);
    }
  }

  Poly operator-() const {
    Poly r(nv_);
    for (const auto& [e, c] : terms_) r.terms_.emplace(e, -c);
    return r;
  }

  Poly& operator+=(const Poly& o) {
    check_space(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
  }
  Poly& operator-=(const Poly& o) {
    check_space(o);
    for (const auto& [e, c] : o.terms_) add_term(e, -c);
    return *this;
  }
  friend Poly operator+(Poly a, const Poly& b) { return a += b; }
  friend Poly operator-(Poly a, const Poly& b) { return a -= b; }

  friend Poly operator*(const Poly& a, const Poly& b) {
    a.check_space(b);
    Poly r(a.nv_);
    for (const auto& [ea, ca] : a.terms_) {
      for (const auto& [eb, cb] : b.terms_) {
        Exponent e(a.nv_);
        for (int i = 0; i < a.nv_; ++i) e[i] = ea[i] + eb[i];
        r.add_term(std::move(e), ca * cb);
      }
    }
    return r;
  }

  Poly operator*(const C& s) const {
    Poly r(nv_);
    if (s == C(0)) return r;
    for (const auto& [e, c] : terms_) r.terms_.emplace(e, c * s);
    return r;
  }
  friend Poly operator*(const C& s, const Poly& p) { return p * s; }

  Poly pow(int k) const {
    if (k < 0) throw std::invalid_argument("Poly::pow: negative exponent");
    Poly r = constant(nv_, C(1));
    for (int i = 0; i < k; ++i) r = r * (*this);
    return r;
  }

  Poly derivative(int var) const {
    if (var < 0 || var >= nv_) throw std::out_of_range("Poly::derivative");
    Poly r(nv_);
    for (const auto& [e, c] : terms_) {
      if (e[var] == 0) continue;
      Exponent d = e;
      d[var] -= 1;
      r.add_term(std::move(d), c * C(e[var]));
    }
    return r;
  }

  std::vector<Poly> gradient() const {
    std::vector<Poly> g;
    g.reserve(nv_);
    for (int i = 0; i < nv_; ++i) g.push_back(derivative(i));
    return g;
  }

  std::vector<std::vector<Poly>> hessian() const {
    std::vector<std::vector<Poly>> h(nv_, std::vector<Poly>(nv_, Poly(nv_)));
    for (int i = 0; i < nv_; ++i) {
      Poly di = derivative(i);
      for (int j = i; j < nv_; ++j) {
        h[i][j] = di.derivative(j);
        if (j != i) h[j][i] = h[i][j];
      }
    }
    return h;
  }

  C eval(const std::vector<C>& point) const {
    if (static_cast<int>(point.size()) != nv_) throw std::invalid_argument("Poly::eval: point length");
    C total(0);
    for (const auto& [e, c] : terms_) {
      C t = c;
      for (int i = 0; i < nv_; ++i)
        for (int k = 0; k < e[i]; ++k) t *= point[i];
      total += t;
    }
    return total;
  }

  // Complete substitution x_i -> images[i]; all images share one target space.
  Poly substitute(const std::vector<Poly>& images) const {
    if (static_cast<int>(images.size()) != nv_)
      throw std::invalid_argument("Poly::substitute: incomplete assignment");
    int target_nv = nv_ == 0 ? 0 : images[0].nvars();
    for (const auto& im : images)
      if (im.nvars() != target_nv) throw std::invalid_argument("Poly::substitute: mixed target spaces");
    Poly r(target_nv);
    for (const auto& [e, c] : terms_) {
      Poly t = Poly::constant(target_nv, c);
      for (int i = 0; i < nv_; ++i)
        for (int k = 0; k < e[i]; ++k) t = t * images[i];
      r += t;
    }
    return r;
  }

  bool operator==(const Poly& o) const { return nv_ == o.nv_ && terms_ == o.terms_; }
  bool operator!=(const Poly& o) const { return !(*this == o); }

 private:
  void check_space(const Poly& o) const {
    if (nv_ != o.nv_) throw std::invalid_argument("Poly: variable-count mismatch");
  }

  int nv_;
  TermMap terms_;
};

using PolyQ = Poly<Rational>;
using PolyD = Poly<double>;

// Explicit, one-way conversion from the exact to the float backend.
inline PolyD to_float(const PolyQ& p) {
  PolyD r(p.nvars());
  for (const auto& [e, c] : p.terms()) r.add_term(e, to_double(c));
  return r;
}

// Bregman divergence D_p(x, y) = p(x) - p(y) - <grad p(y), x - y> as a
// polynomial in the doubled space (x variables first, then y).
template <class C>
Poly<C> bregman(const Poly<C>& p) {
  int nv = p.nvars();
  std::vector<Poly<C>> to_x, to_y;
  for (int i = 0; i < nv; ++i) {
    to_x.push_back(Poly<C>::variable(2 * nv, i));
    to_y.push_back(Poly<C>::variable(2 * nv, nv + i));
  }
  Poly<C> r = p.substitute(to_x) - p.substitute(to_y);
  for (int i = 0; i < nv; ++i) {
    Poly<C> gi = p.derivative(i).substitute(to_y);
    r -= gi * (to_x[i] - to_y[i]);
  }
  return r;
}

// Canonical text form "c * xi^e * ..." with the leading term first
// (descending graded-lex). parse_poly inverts it.
std::string poly_to_string(const PolyQ& p);
std::string poly_to_string(const PolyD& p);
PolyQ parse_poly(const std::string& text, int nv);

}  // namespace polycert
