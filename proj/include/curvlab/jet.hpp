#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "curvlab/multiindex.hpp"
#include "curvlab/scalar.hpp"

namespace curvlab {

enum class CoeffMode { exact, floating };

struct JetContext {
  std::vector<std::string> names;
  int order = 1;
  CoeffMode mode = CoeffMode::exact;

  std::size_t nvars() const { return names.size(); }
  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("unknown jet variable: " + name);
  }
  bool same_as(const JetContext& o) const { return order == o.order && mode == o.mode && names == o.names; }
};

using ContextPtr = std::shared_ptr<const JetContext>;

inline ContextPtr make_context(std::vector<std::string> names, int order, CoeffMode mode = CoeffMode::exact) {
  if (order < 1) throw std::invalid_argument("jet order must be >= 1");
  for (std::size_t i = 0; i < names.size(); ++i)
    for (std::size_t j = i + 1; j < names.size(); ++j)
      if (names[i] == names[j]) throw std::invalid_argument("duplicate jet variable: " + names[i]);
  auto c = std::make_shared<JetContext>();
  c->names = std::move(names);
  c->order = order;
  c->mode = mode;
  return c;
}

// Variable names prefix1..prefixn.
inline std::vector<std::string> numbered_names(const std::string& prefix, std::size_t n, std::size_t first = 1) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(prefix + std::to_string(first + i));
  return v;
}

inline bool same_context(const ContextPtr& a, const ContextPtr& b) { return a == b || a->same_as(*b); }

struct JetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Truncated multivariate power series. Coefficients of order above valid_order() are
// unknown and are not stored.
template <class S>
class Jet {
 public:
  using Scalar = S;
  using Terms = std::map<MultiIndex, S>;

  Jet() = default;
  explicit Jet(ContextPtr ctx) : ctx_(std::move(ctx)) {
    if (!ctx_) throw JetError("null jet context");
    constexpr bool exact = ScalarTraits<S>::exact;
    if ((ctx_->mode == CoeffMode::exact) != exact) throw JetError("coefficient mode does not match scalar type");
    valid_ = ctx_->order;
  }

  static Jet constant(const ContextPtr& ctx, const S& c) {
    Jet j(ctx);
    j.add_term(MultiIndex(ctx->nvars()), c);
    return j;
  }
  static Jet variable(const ContextPtr& ctx, std::size_t i) {
    Jet j(ctx);
    j.add_term(MultiIndex::unit(ctx->nvars(), i), S(1));
    return j;
  }
  static Jet variable(const ContextPtr& ctx, const std::string& name) {
    return variable(ctx, static_cast<std::size_t>(ctx->index_of(name)));
  }
  static Jet monomial(const ContextPtr& ctx, const MultiIndex& a, const S& c) {
    Jet j(ctx);
    j.add_term(a, c);
    return j;
  }

  const ContextPtr& context() const { return ctx_; }
  std::size_t nvars() const { return ctx_->nvars(); }
  int order() const { return ctx_->order; }
  int valid_order() const { return valid_; }
  const Terms& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }

  // Lowers the guaranteed order; never raises it.
  void limit_valid_order(int v) {
    if (v < valid_) {
      valid_ = v;
      drop_above(valid_);
    }
  }

  // Accumulates c into the coefficient of x^a; silently truncates above valid_order.
  void add_term(const MultiIndex& a, const S& c) {
    if (a.size() != nvars()) throw JetError("multi-index arity does not match context");
    if (a.order() > valid_ || is_zero_scalar(c)) return;
    auto it = terms_.find(a);
    if (it == terms_.end()) {
      auto jt = terms_.emplace(a, c).first;
      if constexpr (ScalarTraits<S>::exact) jt->second.canonicalize();
    } else {
      it->second += c;
      if (is_zero_scalar(it->second)) terms_.erase(it);
    }
  }

  S coeff(const MultiIndex& a) const {
    if (a.size() != nvars()) throw JetError("multi-index arity does not match context");
    if (a.order() > valid_)
      throw JetError("coefficient of order " + std::to_string(a.order()) + " requested beyond valid order " +
                     std::to_string(valid_));
    auto it = terms_.find(a);
    return it == terms_.end() ? S(0) : it->second;
  }
  S constant_term() const {
    if (valid_ < 0) throw JetError("constant term requested beyond valid order");
    auto it = terms_.find(MultiIndex(nvars()));
    return it == terms_.end() ? S(0) : it->second;
  }

  // Lowest order carrying a nonzero coefficient; valid_order()+1 for a jet known to vanish.
  int valuation() const { return terms_.empty() ? valid_ + 1 : terms_.begin()->first.order(); }

  Jet operator-() const {
    Jet r(*this);
    for (auto& [k, v] : r.terms_) v = -v;
    return r;
  }
  Jet& operator+=(const Jet& o) {
    check_ctx(o);
    limit_valid_order(o.valid_);
    for (const auto& [k, v] : o.terms_) add_term(k, v);
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    check_ctx(o);
    limit_valid_order(o.valid_);
    for (const auto& [k, v] : o.terms_) add_term(k, -v);
    return *this;
  }
  Jet& operator*=(const S& c) {
    if (is_zero_scalar(c)) {
      terms_.clear();
      return *this;
    }
    for (auto& [k, v] : terms_) v *= c;
    return *this;
  }
  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator*(Jet a, const S& c) { return a *= c; }
  friend Jet operator*(const S& c, Jet a) { return a *= c; }

  friend Jet operator*(const Jet& a, const Jet& b) {
    a.check_ctx(b);
    Jet r(a.ctx_);
    int v = a.ctx_->order;
    v = std::min(v, a.valid_ + b.valuation());
    v = std::min(v, b.valid_ + a.valuation());
    r.valid_ = v;
    std::size_t n = a.nvars();
    MultiIndex sum(n);
    std::unordered_map<MultiIndex, S, MultiIndexHash> acc;
    acc.reserve(std::min<std::size_t>(a.terms_.size() * b.terms_.size(), 1u << 16));
    S prod;
    for (const auto& [ka, ca] : a.terms_) {
      int oa = ka.order();
      if (oa > v) break;
      for (const auto& [kb, cb] : b.terms_) {
        if (oa + kb.order() > v) break;
        for (std::size_t i = 0; i < n; ++i) sum.exps[i] = ka.exps[i] + kb.exps[i];
        prod = ca * cb;
        auto [it, inserted] = acc.try_emplace(sum, prod);
        if (!inserted) it->second += prod;
      }
    }
    std::vector<typename decltype(acc)::iterator> live;
    live.reserve(acc.size());
    for (auto it = acc.begin(); it != acc.end(); ++it)
      if (!is_zero_scalar(it->second)) live.push_back(it);
    std::sort(live.begin(), live.end(), [](const auto& x, const auto& y) { return x->first < y->first; });
    for (auto it : live) r.terms_.emplace_hint(r.terms_.end(), std::move(it->first), std::move(it->second));
    return r;
  }
  Jet& operator*=(const Jet& o) { return *this = *this * o; }

  Jet pow(int e) const {
    if (e < 0) throw JetError("negative jet power");
    Jet r = constant(ctx_, S(1));
    for (int i = 0; i < e; ++i) r *= *this;
    return r;
  }

  Jet partial(std::size_t var) const {
    if (var >= nvars()) throw JetError("partial: variable index out of range");
    Jet r(ctx_);
    r.valid_ = valid_ - 1;
    for (const auto& [k, c] : terms_) {
      if (k.exps[var] == 0) continue;
      MultiIndex d = k;
      d.exps[var] -= 1;
      r.add_term(d, c * S(k.exps[var]));
    }
    return r;
  }
  Jet partial(const std::string& name) const { return partial(static_cast<std::size_t>(ctx_->index_of(name))); }

  // Part of total order exactly `deg`.
  Jet homogeneous_part(int deg) const {
    Jet r(ctx_);
    r.valid_ = valid_;
    for (const auto& [k, c] : terms_)
      if (k.order() == deg) r.terms_.emplace(k, c);
    return r;
  }

  Jet truncated(int order) const {
    Jet r(*this);
    r.limit_valid_order(order);
    return r;
  }

  // Evaluates the stored polynomial at a point (displacements from the base).
  template <class T>
  T evaluate(const std::vector<T>& x) const {
    if (x.size() != nvars()) throw JetError("evaluate: wrong number of arguments");
    T total = T(0);
    for (const auto& [k, c] : terms_) {
      T term = static_cast<T>(to_scalar<T>(c));
      for (std::size_t i = 0; i < k.size(); ++i)
        for (int e = 0; e < k.exps[i]; ++e) term *= x[i];
      total += term;
    }
    return total;
  }

  // Coefficientwise equality on orders up to the common valid order.
  bool equals_to_order(const Jet& o, int upto) const {
    check_ctx(o);
    if (upto > valid_ || upto > o.valid_) throw JetError("comparison beyond valid order");
    auto filtered = [upto](const Terms& t) {
      std::vector<std::pair<MultiIndex, S>> out;
      for (const auto& kv : t)
        if (kv.first.order() <= upto) out.push_back(kv);
      return out;
    };
    return filtered(terms_) == filtered(o.terms_);
  }
  bool equals(const Jet& o) const { return equals_to_order(o, std::min(valid_, o.valid_)); }

  std::string str() const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& [k, c] : terms_) {
      if (!first) os << " + ";
      first = false;
      os << ScalarTraits<S>::str(c);
      for (std::size_t i = 0; i < k.size(); ++i) {
        if (k.exps[i] == 0) continue;
        os << "*" << ctx_->names[i];
        if (k.exps[i] > 1) os << "^" << k.exps[i];
      }
    }
    return os.str();
  }

  void check_ctx(const Jet& o) const {
    if (!ctx_ || !o.ctx_ || !same_context(ctx_, o.ctx_)) throw JetError("jet context mismatch");
  }

 private:
  template <class T>
  static T to_scalar(const S& c) {
    if constexpr (std::is_same_v<T, S>)
      return c;
    else
      return static_cast<T>(to_double(c));
  }
  static bool is_zero_scalar(const S& c) { return ScalarTraits<S>::is_zero(c); }
  void drop_above(int v) {
    for (auto it = terms_.begin(); it != terms_.end();) {
      if (it->first.order() > v)
        it = terms_.erase(it);
      else
        ++it;
    }
  }

  ContextPtr ctx_;
  Terms terms_;
  int valid_ = 0;

  template <class T>
  friend class Jet;
};

using RJet = Jet<Rational>;
using DJet = Jet<double>;
template <class S>
using JetMap = std::vector<Jet<S>>;

template <class S>
JetMap<S> identity_map(const ContextPtr& ctx) {
  JetMap<S> id;
  for (std::size_t i = 0; i < ctx->nvars(); ++i) id.push_back(Jet<S>::variable(ctx, i));
  return id;
}

// Taylor series of outer(inner(z)) truncated at the inner context's order. outer is a jet
// in m variables; inner holds m jets without constant term.
template <class S>
JetMap<S> compose(const JetMap<S>& outer, const JetMap<S>& inner) {
  if (inner.empty()) throw JetError("compose: empty inner map");
  const ContextPtr& ictx = inner.front().context();
  int mu = ictx->order + 1;
  int vin = ictx->order;
  for (const auto& g : inner) {
    g.check_ctx(inner.front());
    if (!is_zero(g.constant_term())) throw JetError("compose: inner map has a nonzero constant term");
    mu = std::min(mu, g.valuation());
    vin = std::min(vin, g.valid_order());
  }
  mu = std::max(mu, 1);
  // Cache of powers inner[i]^e.
  std::vector<std::vector<Jet<S>>> powers(inner.size());
  auto power = [&](std::size_t i, int e) -> const Jet<S>& {
    auto& p = powers[i];
    if (p.empty()) p.push_back(Jet<S>::constant(ictx, S(1)));
    while (static_cast<int>(p.size()) <= e) p.push_back(p.back() * inner[i]);
    return p[static_cast<std::size_t>(e)];
  };
  // inner^k, built from the product for k with its last nonzero exponent removed.
  std::unordered_map<MultiIndex, Jet<S>, MultiIndexHash> monomials;
  std::function<const Jet<S>&(const MultiIndex&)> monomial = [&](const MultiIndex& k) -> const Jet<S>& {
    auto it = monomials.find(k);
    if (it != monomials.end()) return it->second;
    std::size_t last = k.size();
    while (last > 0 && k.exps[last - 1] == 0) --last;
    Jet<S> val = Jet<S>::constant(ictx, S(1));
    val.limit_valid_order(vin);
    if (last > 0) {
      MultiIndex prefix = k;
      prefix.exps[last - 1] = 0;
      val = monomial(prefix) * power(last - 1, k.exps[last - 1]);
    }
    return monomials.emplace(k, std::move(val)).first->second;
  };
  JetMap<S> out;
  for (const auto& f : outer) {
    if (f.nvars() != inner.size()) throw JetError("compose: arity mismatch");
    Jet<S> r(ictx);
    long vo = static_cast<long>(f.valid_order() + 1) * mu - 1;
    int v = static_cast<int>(std::min<long>({static_cast<long>(ictx->order), vo, static_cast<long>(vin)}));
    r.limit_valid_order(v);
    for (const auto& [k, c] : f.terms()) {
      if (static_cast<long>(k.order()) * mu > v) break;
      r += monomial(k) * c;
    }
    r.limit_valid_order(v);
    out.push_back(std::move(r));
  }
  return out;
}

template <class S>
Jet<S> compose(const Jet<S>& outer, const JetMap<S>& inner) {
  return compose(JetMap<S>{outer}, inner).front();
}

// Exact (or pivoted float) inverse of a square matrix; throws on singularity.
template <class S>
std::vector<std::vector<S>> invert_matrix(std::vector<std::vector<S>> a, double float_tol = 1e-12) {
  std::size_t n = a.size();
  std::vector<std::vector<S>> inv(n, std::vector<S>(n, S(0)));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = S(1);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = n;
    if constexpr (ScalarTraits<S>::exact) {
      for (std::size_t r = col; r < n; ++r)
        if (!is_zero(a[r][col])) {
          piv = r;
          break;
        }
    } else {
      double best = float_tol;
      for (std::size_t r = col; r < n; ++r)
        if (std::fabs(a[r][col]) > best) {
          best = std::fabs(a[r][col]);
          piv = r;
        }
    }
    if (piv == n) throw JetError("singular linear part");
    std::swap(a[col], a[piv]);
    std::swap(inv[col], inv[piv]);
    S p = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || is_zero(a[r][col])) continue;
      S f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

// Matrix of first-order coefficients: lin[i][j] = dF_i/dz_j at the base.
template <class S>
std::vector<std::vector<S>> linear_part(const JetMap<S>& f) {
  std::vector<std::vector<S>> a;
  for (const auto& fi : f) {
    std::vector<S> row;
    for (std::size_t j = 0; j < fi.nvars(); ++j) row.push_back(fi.coeff(MultiIndex::unit(fi.nvars(), j)));
    a.push_back(std::move(row));
  }
  return a;
}

// G with F(G(z)) = z and G(F(z)) = z to the jets' valid order.
template <class S>
JetMap<S> invert_map(const JetMap<S>& f) {
  if (f.empty()) throw JetError("invert_map: empty map");
  const ContextPtr& ctx = f.front().context();
  if (f.size() != ctx->nvars()) throw JetError("invert_map: map is not square");
  int v = ctx->order;
  for (const auto& fi : f) {
    fi.check_ctx(f.front());
    if (!is_zero(fi.constant_term())) throw JetError("invert_map: nonzero constant term");
    v = std::min(v, fi.valid_order());
  }
  if (v < 1) throw JetError("invert_map: linear part unknown");
  auto a = linear_part(f);
  auto ainv = invert_matrix(a);
  std::size_t n = f.size();
  // Nonlinear remainder F - A z.
  JetMap<S> nl = f;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) nl[i].add_term(MultiIndex::unit(n, j), -a[i][j]);
  auto apply_ainv = [&](const JetMap<S>& w) {
    JetMap<S> out;
    for (std::size_t i = 0; i < n; ++i) {
      Jet<S> s(ctx);
      for (std::size_t j = 0; j < n; ++j)
        if (!is_zero(ainv[i][j])) s += w[j] * ainv[i][j];
      out.push_back(s);
    }
    return out;
  };
  JetMap<S> g = apply_ainv(identity_map<S>(ctx));
  for (auto& gi : g) gi.limit_valid_order(std::min(v, 1));
  // Pass o fixes order o of G <- A^{-1}(z - NL(G)); NL has no linear part.
  for (int o = 2; o <= v; ++o) {
    JetMap<S> rhs = identity_map<S>(ctx);
    for (auto& ri : rhs) ri.limit_valid_order(o);
    // G is exact through order o - 1; its order-o part does not reach NL(G) below order o + 1.
    JetMap<S> wide;
    for (const auto& gi : g) {
      Jet<S> w(ctx);
      w.limit_valid_order(o);
      for (const auto& [k, c] : gi.terms()) w.add_term(k, c);
      wide.push_back(std::move(w));
    }
    auto nlg = compose(nl, wide);
    for (std::size_t i = 0; i < n; ++i) {
      nlg[i].limit_valid_order(o);
      rhs[i] -= nlg[i];
    }
    g = apply_ainv(rhs);
    for (auto& gi : g) gi.limit_valid_order(o);
  }
  return g;
}

// Re-expresses a jet in a context with a superset (or reordering) of its variables.
template <class S>
Jet<S> embed(const Jet<S>& j, const ContextPtr& target) {
  std::vector<std::size_t> pos;
  for (const auto& nm : j.context()->names) pos.push_back(static_cast<std::size_t>(target->index_of(nm)));
  Jet<S> r(target);
  r.limit_valid_order(j.valid_order());
  for (const auto& [k, c] : j.terms()) {
    MultiIndex m(target->nvars());
    for (std::size_t i = 0; i < k.size(); ++i) m.exps[pos[i]] = k.exps[i];
    r.add_term(m, c);
  }
  return r;
}

// Coefficient of the monomial vars^alpha, as a jet in the remaining variables of `target`
// (whose names must be the complement, in any order). The result's valid order is the
// source valid order minus |alpha|.
template <class S>
Jet<S> slice(const Jet<S>& j, const std::vector<std::size_t>& vars, const MultiIndex& alpha,
             const ContextPtr& target) {
  const auto& src = *j.context();
  std::vector<int> map_to(src.nvars(), -1);
  for (std::size_t i = 0; i < src.nvars(); ++i) {
    if (std::find(vars.begin(), vars.end(), i) != vars.end()) continue;
    map_to[i] = target->index_of(src.names[i]);
  }
  Jet<S> r(target);
  r.limit_valid_order(j.valid_order() - alpha.order());
  for (const auto& [k, c] : j.terms()) {
    bool match = true;
    for (std::size_t q = 0; q < vars.size(); ++q)
      if (k.exps[vars[q]] != alpha.exps[q]) {
        match = false;
        break;
      }
    if (!match) continue;
    MultiIndex m(target->nvars());
    for (std::size_t i = 0; i < k.size(); ++i)
      if (map_to[i] >= 0) m.exps[static_cast<std::size_t>(map_to[i])] = k.exps[i];
    r.add_term(m, c);
  }
  return r;
}

// Converts an exact jet to a float jet over a floating context with the same variables.
inline DJet to_float(const RJet& j, const ContextPtr& fctx) {
  DJet r(fctx);
  r.limit_valid_order(j.valid_order());
  for (const auto& [k, c] : j.terms()) r.add_term(k, c.get_d());
  return r;
}

}  // namespace curvlab
