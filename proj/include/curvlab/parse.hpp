#pragma once

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <string>
#include <vector>

#include "curvlab/jet.hpp"

namespace curvlab {

struct ParseError : std::runtime_error {
  int line;
  int column;
  ParseError(const std::string& msg, int l, int c)
      : std::runtime_error(std::to_string(l) + ":" + std::to_string(c) + ": " + msg), line(l), column(c) {}
};

// Recursive-descent parser for polynomial expressions over rational literals and the
// variables of a jet context:
//   expr   := term (('+'|'-') term)*
//   term   := unary ('*' unary)*
//   unary  := '-' unary | power
//   power  := atom ('^' integer)?
//   atom   := rational | name | '(' expr ')'
// Sem supplies the value type and its operations.
template <class Sem>
class BasicPolyParser {
 public:
  using Value = typename Sem::Value;

  BasicPolyParser(const std::string& text, Sem sem, const std::vector<std::string>& names, int line = 1, int col0 = 1)
      : s_(text), sem_(std::move(sem)), names_(names), line_(line), col0_(col0) {}

  Value parse() {
    Value r = expr();
    skip_ws();
    if (pos_ < s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return r;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, line_, col0_ + static_cast<int>(pos_));
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  Value expr() {
    Value r = term();
    for (;;) {
      if (accept('+'))
        r = sem_.add(r, term());
      else if (accept('-'))
        r = sem_.sub(r, term());
      else
        return r;
    }
  }
  Value term() {
    Value r = unary();
    while (accept('*')) r = sem_.mul(r, unary());
    return r;
  }
  Value unary() {
    if (accept('-')) return sem_.neg(unary());
    return power();
  }
  Value power() {
    Value base = atom();
    if (accept('^')) {
      skip_ws();
      std::size_t start = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (start == pos_) fail("expected a nonnegative integer exponent");
      if (pos_ - start > 6) fail("exponent too large");
      int e = std::stoi(s_.substr(start, pos_ - start));
      return sem_.pow(base, e);
    }
    return base;
  }
  Value atom() {
    skip_ws();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      Value r = expr();
      if (!accept(')')) fail("expected ')'");
      return r;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (pos_ < s_.size() && s_[pos_] == '/') {
        ++pos_;
        std::size_t dstart = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        if (dstart == pos_) fail("expected a denominator");
      }
      Rational q;
      std::string lit = s_.substr(start, pos_ - start);
      if (q.set_str(lit, 10) != 0 || sgn(q.get_den()) == 0) {
        pos_ = start;
        fail("invalid rational literal '" + lit + "'");
      }
      q.canonicalize();
      return sem_.constant(q);
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      std::string name = s_.substr(start, pos_ - start);
      for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return sem_.variable(i);
      pos_ = start;
      fail("unknown variable '" + name + "'");
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  std::string s_;
  Sem sem_;
  std::vector<std::string> names_;
  int line_;
  int col0_;
  std::size_t pos_ = 0;
};

struct JetSemantics {
  using Value = RJet;
  ContextPtr ctx;
  Value constant(const Rational& q) const { return RJet::constant(ctx, q); }
  Value variable(std::size_t i) const { return RJet::variable(ctx, i); }
  Value add(const Value& a, const Value& b) const { return a + b; }
  Value sub(const Value& a, const Value& b) const { return a - b; }
  Value mul(const Value& a, const Value& b) const { return a * b; }
  Value neg(const Value& a) const { return -a; }
  Value pow(const Value& a, int e) const { return a.pow(e); }
};

// Upper bound on the total degree, without expanding anything.
struct DegreeSemantics {
  using Value = long;
  Value constant(const Rational&) const { return 0; }
  Value variable(std::size_t) const { return 1; }
  Value add(Value a, Value b) const { return std::max(a, b); }
  Value sub(Value a, Value b) const { return std::max(a, b); }
  Value mul(Value a, Value b) const { return a + b; }
  Value neg(Value a) const { return a; }
  Value pow(Value a, int e) const { return a * e; }
};

// Jet-valued parser; the result is truncated at the context order.
class PolyParser : public BasicPolyParser<JetSemantics> {
 public:
  PolyParser(const std::string& text, const ContextPtr& ctx, int line = 1, int col0 = 1)
      : BasicPolyParser<JetSemantics>(text, JetSemantics{ctx}, ctx->names, line, col0) {}
};

inline long polynomial_degree_bound(const std::string& text, const std::vector<std::string>& names, int line = 1,
                                    int col0 = 1) {
  return BasicPolyParser<DegreeSemantics>(text, DegreeSemantics{}, names, line, col0).parse();
}

inline RJet parse_polynomial(const std::string& text, const ContextPtr& ctx) { return PolyParser(text, ctx).parse(); }

}  // namespace curvlab
