#include <cctype>
#include <cstdio>
#include <sstream>

#include "polycert/poly.hpp"

namespace polycert {

std::vector<Exponent> monomial_basis(int nv, int d) {
  if (nv < 0 || d < 0) throw std::invalid_argument("monomial_basis: nv, d must be >= 0");
  std::vector<Exponent> out;
  Exponent cur(nv, 0);
  // Depth-first enumeration, then sort into graded-lex order.
  auto rec = [&](auto&& self, int pos, int remaining) -> void {
    if (pos == nv) {
      out.push_back(cur);
      return;
    }
    for (int e = 0; e <= remaining; ++e) {
      cur[pos] = e;
      self(self, pos + 1, remaining - e);
    }
    cur[pos] = 0;
  };
  if (nv == 0) {
    out.push_back(Exponent{});
  } else {
    rec(rec, 0, d);
  }
  std::sort(out.begin(), out.end(), GradedLexLess{});
  return out;
}

Rational parse_rational(const std::string& text) {
  std::string s;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) s += ch;
  if (s.empty()) throw std::invalid_argument("parse_rational: empty input");
  bool neg = false;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') {
    neg = s[0] == '-';
    i = 1;
  }
  auto digits = [&](std::size_t& pos) {
    std::string d;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) d += s[pos++];
    return d;
  };
  std::string intpart = digits(i);
  mpz_class num, den = 1;
  if (i < s.size() && s[i] == '/') {
    ++i;
    std::string denpart = digits(i);
    if (intpart.empty() || denpart.empty() || i != s.size())
      throw std::invalid_argument("parse_rational: bad fraction '" + text + "'");
    num = mpz_class(intpart);
    den = mpz_class(denpart);
    if (den == 0) throw std::invalid_argument("parse_rational: zero denominator");
  } else if (i < s.size() && s[i] == '.') {
    ++i;
    std::string fracpart = digits(i);
    if ((intpart.empty() && fracpart.empty()) || i != s.size())
      throw std::invalid_argument("parse_rational: bad decimal '" + text + "'");
    num = mpz_class(intpart.empty() ? std::string("0") : intpart);
    for (char c : fracpart) {
      num = num * 10 + (c - '0');
      den *= 10;
    }
  } else {
    if (intpart.empty() || i != s.size())
      throw std::invalid_argument("parse_rational: bad number '" + text + "'");
    num = mpz_class(intpart);
  }
  Rational q(num, den);
  q.canonicalize();
  return neg ? Rational(-q) : q;
}

Rational nearest_rational(double x, std::int64_t max_den) {
  if (max_den < 1) throw std::invalid_argument("nearest_rational: max_den must be >= 1");
  if (!std::isfinite(x)) throw std::invalid_argument("nearest_rational: non-finite input");
  Rational target(x);  // exact
  bool neg = target < 0;
  if (neg) target = -target;

  mpz_class p = target.get_num(), q = target.get_den();
  mpz_class bound(static_cast<long>(max_den));
  // Convergents h/k of the continued fraction of p/q.
  mpz_class h0 = 1, k0 = 0, h1, k1;
  mpz_class a = p / q;
  h1 = a;
  k1 = 1;
  mpz_class r = p - a * q;
  while (r != 0 && k1 <= bound) {
    p = q;
    q = r;
    a = p / q;
    r = p - a * q;
    mpz_class h2 = a * h1 + h0, k2 = a * k1 + k0;
    if (k2 > bound) {
      // Best semiconvergent with denominator within the bound.
      mpz_class t = (bound - k0) / k1;
      Rational best(h1, k1);
      if (t > 0) {
        Rational semi(t * h1 + h0, t * k1 + k0);
        semi.canonicalize();
        Rational cb(h1, k1);
        cb.canonicalize();
        if (abs(semi - target) < abs(cb - target)) best = semi;
      }
      best.canonicalize();
      return neg ? Rational(-best) : best;
    }
    h0 = h1;
    k0 = k1;
    h1 = h2;
    k1 = k2;
  }
  Rational out(h1, k1);
  out.canonicalize();
  return neg ? Rational(-out) : out;
}

namespace {

std::string format_coeff(const Rational& c) { return c.get_str(); }

std::string format_coeff(double c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", c);
  return buf;
}

template <class C>
std::string to_string_impl(const Poly<C>& p) {
  if (p.is_zero()) return "0";
  std::ostringstream os;
  bool first = true;
  for (auto it = p.terms().rbegin(); it != p.terms().rend(); ++it) {
    const Exponent& e = it->first;
    C c = it->second;
    bool negative = c < C(0);
    if (first) {
      if (negative) os << "-";
    } else {
      os << (negative ? " - " : " + ");
    }
    first = false;
    C mag = negative ? C(-c) : c;
    bool is_const = exponent_degree(e) == 0;
    bool unit = mag == C(1);
    if (is_const || !unit) os << format_coeff(mag);
    bool need_star = !is_const && !unit;
    for (int i = 0; i < static_cast<int>(e.size()); ++i) {
      if (e[i] == 0) continue;
      if (need_star) os << "*";
      need_star = true;
      os << var_name(i);
      if (e[i] > 1) os << "^" << e[i];
    }
  }
  return os.str();
}

}  // namespace

std::string poly_to_string(const PolyQ& p) { return to_string_impl(p); }
std::string poly_to_string(const PolyD& p) { return to_string_impl(p); }

PolyQ parse_poly(const std::string& text, int nv) {
  std::string s;
  for (char ch : text)
    if (!std::isspace(static_cast<unsigned char>(ch))) s += ch;
  if (s.empty()) throw std::invalid_argument("parse_poly: empty input");
  PolyQ result(nv);
  std::size_t i = 0;
  while (i < s.size()) {
    Rational sign = 1;
    if (s[i] == '+' || s[i] == '-') {
      if (s[i] == '-') sign = -1;
      ++i;
    }
    Rational coeff = sign;
    Exponent e(nv, 0);
    bool any_factor = false;
    while (true) {
      if (i >= s.size()) break;
      if (s[i] == 'x') {
        ++i;
        std::size_t start = i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i == start) throw std::invalid_argument("parse_poly: variable index expected");
        int idx = std::stoi(s.substr(start, i - start));
        if (idx < 1 || idx > nv) throw std::invalid_argument("parse_poly: variable out of range");
        int exp = 1;
        if (i < s.size() && s[i] == '^') {
          ++i;
          start = i;
          while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
          if (i == start) throw std::invalid_argument("parse_poly: exponent expected");
          exp = std::stoi(s.substr(start, i - start));
        }
        e[idx - 1] += exp;
      } else if (std::isdigit(static_cast<unsigned char>(s[i]))) {
        std::size_t start = i;
        while (i < s.size() &&
               (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '/' || s[i] == '.'))
          ++i;
        coeff *= parse_rational(s.substr(start, i - start));
      } else {
        throw std::invalid_argument(std::string("parse_poly: unexpected character '") + s[i] + "'");
      }
      any_factor = true;
      if (i < s.size() && s[i] == '*') {
        ++i;
        continue;
      }
      break;
    }
    if (!any_factor) throw std::invalid_argument("parse_poly: empty term");
    result.add_term(std::move(e), coeff);
  }
  return result;
}

}  // namespace polycert
