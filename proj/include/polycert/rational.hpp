#pragma once

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace polycert {

using Rational = mpq_class;

inline double to_double(const Rational& q) { return q.get_d(); }

inline std::string to_string(const Rational& q) { return q.get_str(); }

// Parses "a", "a/b" or a decimal literal like "-3.25", all exactly.
Rational parse_rational(const std::string& text);

// Best rational approximation of x with denominator <= max_den
// (continued fractions with a final semiconvergent step).
Rational nearest_rational(double x, std::int64_t max_den);

}  // namespace polycert
