#pragma once

#include <gmpxx.h>

#include <cmath>
#include <stdexcept>
#include <string>

namespace curvlab {

using Rational = mpq_class;

template <class S>
struct ScalarTraits;

template <>
struct ScalarTraits<Rational> {
  static constexpr bool exact = true;
  static bool is_zero(const Rational& a) { return sgn(a) == 0; }
  static double to_double(const Rational& a) { return a.get_d(); }
  static Rational from_int(long v) { return Rational(v); }
  static Rational from_ratio(long p, long q) {
    Rational r(p, q);
    r.canonicalize();
    return r;
  }
  static std::string str(const Rational& a) { return a.get_str(); }
  static Rational abs(const Rational& a) { return ::abs(a); }
};

template <>
struct ScalarTraits<double> {
  static constexpr bool exact = false;
  static bool is_zero(double a) { return a == 0.0; }
  static double to_double(double a) { return a; }
  static double from_int(long v) { return static_cast<double>(v); }
  static double from_ratio(long p, long q) { return static_cast<double>(p) / static_cast<double>(q); }
  static std::string str(double a) { return std::to_string(a); }
  static double abs(double a) { return std::fabs(a); }
};

template <class S>
bool is_zero(const S& a) {
  return ScalarTraits<S>::is_zero(a);
}

template <class S>
double to_double(const S& a) {
  return ScalarTraits<S>::to_double(a);
}

// Parses "p", "-p", "p/q" into a canonical rational.
inline Rational parse_rational(const std::string& s) {
  Rational r;
  if (r.set_str(s, 10) != 0) throw std::invalid_argument("not a rational literal: " + s);
  r.canonicalize();
  return r;
}

inline Rational factorial(int n) {
  mpz_class f;
  mpz_fac_ui(f.get_mpz_t(), static_cast<unsigned long>(n));
  return Rational(f);
}

inline Rational rpow(const Rational& base, int e) {
  Rational r = 1;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

}  // namespace curvlab
