#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "curvlab/jet.hpp"
#include "curvlab/linalg.hpp"
#include "curvlab/nilpotent.hpp"
#include "curvlab/parse.hpp"
#include "curvlab/vfield.hpp"

namespace curvlab {

struct CurvatureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<std::string> family_names(int n, int k) {
  auto names = numbered_names("x", static_cast<std::size_t>(n));
  for (const auto& s : numbered_names("t", static_cast<std::size_t>(k))) names.push_back(s);
  return names;
}

inline Rational binomial(int n, int k) {
  mpz_class b;
  mpz_bin_uiui(b.get_mpz_t(), static_cast<unsigned long>(n), static_cast<unsigned long>(k));
  return Rational(b);
}

// Re-expands a polynomial in the displacement xi = x - base of its first base.size() variables.
// The target context must use the same variable names; terms above its order are dropped.
inline RJet shift_polynomial(const RJet& poly, const std::vector<Rational>& base, const ContextPtr& target) {
  RJet out(target);
  std::size_t nv = poly.nvars();
  for (const auto& [a, c] : poly.terms()) {
    std::vector<std::pair<std::vector<int>, Rational>> partial{{a.exps, c}};
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (a.exps[i] == 0 || sgn(base[i]) == 0) continue;
      std::vector<std::pair<std::vector<int>, Rational>> next;
      for (const auto& [e, pc] : partial)
        for (int keep = 0; keep <= a.exps[i]; ++keep) {
          auto e2 = e;
          e2[i] = keep;
          next.emplace_back(e2, Rational(pc * binomial(a.exps[i], keep) * rpow(base[i], a.exps[i] - keep)));
        }
      partial = std::move(next);
    }
    for (const auto& [e, pc] : partial) {
      MultiIndex m(nv);
      m.exps = e;
      out.add_term(m, pc);
    }
  }
  return out;
}

// A family gamma(x, t) with gamma(x, 0) = x, stored as displacement jets
// gamma_j(base + x, t) - base_j in the variables x1..xn, t1..tk.
class GammaFamily {
 public:
  GammaFamily() = default;

  static GammaFamily from_polynomials(int n, int k, const std::vector<RJet>& polys, std::vector<Rational> base,
                                      int order) {
    check_shape(n, k, polys.size(), base.size());
    GammaFamily g;
    g.n_ = n;
    g.k_ = k;
    g.base_ = std::move(base);
    g.closed_ = polys;
    for (int j = 0; j < n; ++j) {
      RJet rest = polys[static_cast<std::size_t>(j)] - RJet::variable(polys[static_cast<std::size_t>(j)].context(),
                                                                       static_cast<std::size_t>(j));
      for (const auto& [a, c] : rest.terms()) {
        bool t_free = true;
        for (int i = n; i < n + k; ++i) t_free = t_free && a.exps[static_cast<std::size_t>(i)] == 0;
        if (t_free)
          throw CurvatureError("component " + std::to_string(j + 1) + " does not reduce to x" + std::to_string(j + 1) +
                               " at t = 0");
      }
    }
    g.rebuild(order);
    return g;
  }

  // Parses component expressions in x1..xn, t1..tk.
  static GammaFamily from_strings(int n, int k, const std::vector<std::string>& exprs, std::vector<Rational> base,
                                  int order) {
    check_shape(n, k, exprs.size(), base.size());
    auto names = family_names(n, k);
    long deg = 1;
    for (std::size_t j = 0; j < exprs.size(); ++j)
      deg = std::max(deg, polynomial_degree_bound(exprs[j], names, static_cast<int>(j) + 1));
    auto pctx = make_context(names, static_cast<int>(deg));
    std::vector<RJet> polys;
    for (std::size_t j = 0; j < exprs.size(); ++j)
      polys.push_back(PolyParser(exprs[j], pctx, static_cast<int>(j) + 1).parse());
    return from_polynomials(n, k, polys, std::move(base), order);
  }

  // Family known only through its jets (no closed form).
  static GammaFamily from_jets(int n, int k, std::vector<RJet> disp, std::vector<Rational> base) {
    check_shape(n, k, disp.size(), base.size());
    GammaFamily g;
    g.n_ = n;
    g.k_ = k;
    g.base_ = std::move(base);
    g.ctx_ = disp.front().context();
    if (g.ctx_->names != family_names(n, k)) throw CurvatureError("family jets must use the variables x1..xn, t1..tk");
    g.comps_ = std::move(disp);
    g.check_identity();
    return g;
  }

  int n() const { return n_; }
  int k() const { return k_; }
  int order() const { return ctx_->order; }
  const std::vector<Rational>& base() const { return base_; }
  const ContextPtr& context() const { return ctx_; }
  const std::vector<RJet>& components() const { return comps_; }
  const RJet& operator[](std::size_t j) const { return comps_[j]; }
  bool has_closed_form() const { return closed_.has_value(); }
  const std::vector<RJet>& closed_form() const {
    if (!closed_) throw CurvatureError("family has no closed form");
    return *closed_;
  }
  std::vector<std::size_t> space_vars() const {
    std::vector<std::size_t> v;
    for (int i = 0; i < n_; ++i) v.push_back(static_cast<std::size_t>(i));
    return v;
  }
  std::vector<std::size_t> param_vars() const {
    std::vector<std::size_t> v;
    for (int i = 0; i < k_; ++i) v.push_back(static_cast<std::size_t>(n_ + i));
    return v;
  }
  int valid_order() const {
    int v = order();
    for (const auto& c : comps_) v = std::min(v, c.valid_order());
    return v;
  }

  GammaFamily at_order(int order) const {
    if (closed_) {
      GammaFamily g = *this;
      g.rebuild(order);
      return g;
    }
    if (order > valid_order())
      throw CurvatureError("family jets are valid to order " + std::to_string(valid_order()) + ", " +
                           std::to_string(order) + " requested");
    GammaFamily g = *this;
    g.ctx_ = make_context(ctx_->names, order);
    for (auto& c : g.comps_) c = embed(c, g.ctx_);
    return g;
  }
  GammaFamily at_least_order(int order) const { return order <= valid_order() ? *this : at_order(order); }

  GammaFamily at_base(std::vector<Rational> base) const {
    if (!closed_) throw CurvatureError("moving the base point needs a closed form");
    return from_polynomials(n_, k_, *closed_, std::move(base), order());
  }

  // Evaluates the closed form at absolute coordinates.
  template <class T>
  std::vector<T> evaluate(const std::vector<T>& x, const std::vector<T>& t) const {
    const auto& cf = closed_form();
    std::vector<T> args(x);
    args.insert(args.end(), t.begin(), t.end());
    std::vector<T> out;
    for (const auto& p : cf) out.push_back(p.template evaluate<T>(args));
    return out;
  }

  std::vector<std::string> expressions() const {
    std::vector<std::string> e;
    for (const auto& p : closed_form()) e.push_back(p.str());
    return e;
  }

 private:
  static void check_shape(int n, int k, std::size_t comps, std::size_t base) {
    if (n < 1 || k < 1) throw CurvatureError("family needs n >= 1 and k >= 1");
    if (comps != static_cast<std::size_t>(n)) throw CurvatureError("expected one component per space dimension");
    if (base != static_cast<std::size_t>(n)) throw CurvatureError("base point has the wrong dimension");
  }

  void rebuild(int order) {
    ctx_ = make_context(family_names(n_, k_), order);
    comps_.clear();
    for (int j = 0; j < n_; ++j) {
      RJet c = shift_polynomial(embed_names((*closed_)[static_cast<std::size_t>(j)]), base_, ctx_);
      c -= RJet::constant(ctx_, base_[static_cast<std::size_t>(j)]);
      comps_.push_back(std::move(c));
    }
    check_identity();
  }

  // Closed forms live in a context of their own order; move terms without truncating.
  RJet embed_names(const RJet& p) const {
    if (p.context()->names != family_names(n_, k_)) throw CurvatureError("closed form uses unexpected variables");
    return p;
  }

  void check_identity() const {
    std::vector<std::size_t> t = param_vars();
    auto xctx = make_context(numbered_names("x", static_cast<std::size_t>(n_)), order());
    for (int j = 0; j < n_; ++j) {
      RJet at0 = slice(comps_[static_cast<std::size_t>(j)], t, MultiIndex(static_cast<std::size_t>(k_)), xctx);
      RJet xj = RJet::variable(xctx, static_cast<std::size_t>(j));
      if (!at0.equals(xj)) throw CurvatureError("gamma(x, 0) differs from x in component " + std::to_string(j + 1));
    }
  }

  int n_ = 0, k_ = 0;
  std::vector<Rational> base_;
  ContextPtr ctx_;
  std::vector<RJet> comps_;
  std::optional<std::vector<RJet>> closed_;
};

inline ContextPtr space_context(int n, int order) {
  return make_context(numbered_names("x", static_cast<std::size_t>(n)), order);
}

// ---------------------------------------------------------------------------------------------
// Exponential representation

struct ExpRepresentation {
  int m = 0;
  int k = 0;
  ContextPtr ctx;  // x1..xn
  std::vector<MultiIndex> alphas;
  std::map<MultiIndex, RField> fields;

  const RField& operator[](const MultiIndex& a) const { return fields.at(a); }
  std::vector<RField> generators() const {
    std::vector<RField> g;
    for (const auto& a : alphas) g.push_back(fields.at(a));
    return g;
  }
  std::vector<std::string> labels() const {
    std::vector<std::string> l;
    for (const auto& a : alphas) l.push_back("X" + a.str());
    return l;
  }
};

namespace detail {

inline Rational multi_factorial_q(const MultiIndex& a) {
  Rational f = 1;
  for (int e : a.exps) f *= factorial(e);
  return f;
}

// Ordered compositions of alpha into at least two nonzero parts.
inline void compositions(const MultiIndex& alpha, std::vector<MultiIndex>& prefix,
                         std::vector<std::vector<MultiIndex>>& out) {
  if (alpha.is_zero()) {
    if (prefix.size() >= 2) out.push_back(prefix);
    return;
  }
  for (const auto& b : multi_indices_up_to(alpha.size(), alpha.order(), 1)) {
    if (!b.divides(alpha)) continue;
    if (prefix.empty() && b == alpha) continue;
    MultiIndex rest = alpha;
    for (std::size_t i = 0; i < rest.size(); ++i) rest.exps[i] -= b.exps[i];
    prefix.push_back(b);
    compositions(rest, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace detail

// X_alpha for 0 < |alpha| <= m by the recursion
//   X_alpha(e_j) = d^alpha gamma_j(x, 0) - sum_{m>=2} sum_{b_1+..+b_m = alpha} alpha!/(m! b!) X_{b_1}...X_{b_m}(e_j).
inline ExpRepresentation exp_representation(const GammaFamily& g, int m) {
  if (m < 1) throw CurvatureError("representation order must be >= 1");
  if (g.valid_order() < m) throw CurvatureError("family jets are not valid to order " + std::to_string(m));
  ExpRepresentation rep;
  rep.m = m;
  rep.k = g.k();
  rep.ctx = space_context(g.n(), g.order());
  rep.alphas = multi_indices_up_to(static_cast<std::size_t>(g.k()), m, 1);
  std::size_t n = static_cast<std::size_t>(g.n());
  auto tvars = g.param_vars();
  std::map<std::vector<MultiIndex>, std::vector<RJet>> chain_memo;
  std::function<const std::vector<RJet>&(const std::vector<MultiIndex>&, std::size_t)> chain =
      [&](const std::vector<MultiIndex>& seq, std::size_t from) -> const std::vector<RJet>& {
    std::vector<MultiIndex> key(seq.begin() + static_cast<long>(from), seq.end());
    auto it = chain_memo.find(key);
    if (it != chain_memo.end()) return it->second;
    const RField& head = rep.fields.at(seq[from]);
    std::vector<RJet> v;
    if (from + 1 == seq.size()) {
      v = head.components();
    } else {
      const auto& inner = chain(seq, from + 1);
      for (std::size_t j = 0; j < n; ++j) v.push_back(head.apply(inner[j]));
    }
    return chain_memo.emplace(std::move(key), std::move(v)).first->second;
  };
  for (const auto& alpha : rep.alphas) {
    Rational afact = detail::multi_factorial_q(alpha);
    std::vector<RJet> comps;
    for (std::size_t j = 0; j < n; ++j) comps.push_back(slice(g[j], tvars, alpha, rep.ctx) * afact);
    std::vector<MultiIndex> prefix;
    std::vector<std::vector<MultiIndex>> comp_list;
    detail::compositions(alpha, prefix, comp_list);
    for (const auto& seq : comp_list) {
      Rational coef = afact / factorial(static_cast<int>(seq.size()));
      for (const auto& b : seq) coef /= detail::multi_factorial_q(b);
      const auto& val = chain(seq, 0);
      for (std::size_t j = 0; j < n; ++j) comps[j] -= val[j] * coef;
    }
    rep.fields.emplace(alpha, RField(rep.ctx, std::move(comps)));
  }
  return rep;
}

// Jet of exp(sum_{|alpha|<=N} t^alpha X_alpha / alpha!)(x).
inline GammaFamily reconstruct_gamma(const ExpRepresentation& rep, int N, const std::vector<Rational>& base) {
  if (N > rep.m) throw CurvatureError("reconstruction order exceeds the representation order");
  int n = static_cast<int>(rep.ctx->nvars());
  auto ctx = make_context(family_names(n, rep.k), N);
  std::vector<RJet> comps(static_cast<std::size_t>(n), RJet(ctx));
  for (const auto& a : rep.alphas) {
    if (a.order() > N) continue;
    MultiIndex full(static_cast<std::size_t>(n + rep.k));
    for (int i = 0; i < rep.k; ++i) full.exps[static_cast<std::size_t>(n + i)] = a.exps[static_cast<std::size_t>(i)];
    RJet ta = RJet::monomial(ctx, full, Rational(1) / detail::multi_factorial_q(a));
    for (int j = 0; j < n; ++j) comps[static_cast<std::size_t>(j)] += embed(rep[a][static_cast<std::size_t>(j)], ctx) * ta;
  }
  std::vector<std::size_t> space;
  for (int i = 0; i < n; ++i) space.push_back(static_cast<std::size_t>(i));
  RField v(ctx, space, comps);
  JetMap<Rational> flow;
  if (v.is_zero()) {
    for (int i = 0; i < n; ++i) flow.push_back(RJet::variable(ctx, static_cast<std::size_t>(i)));
  } else {
    flow = flow_exp(v);
  }
  return GammaFamily::from_jets(n, rep.k, std::move(flow), base);
}

// gamma^{-1}(x, t), from inverting (x, t) -> (gamma(x, t), t).
inline GammaFamily gamma_inverse(const GammaFamily& g) {
  const auto& ctx = g.context();
  JetMap<Rational> f = g.components();
  for (auto t : g.param_vars()) f.push_back(RJet::variable(ctx, t));
  auto inv = invert_map(f);
  inv.resize(static_cast<std::size_t>(g.n()));
  return GammaFamily::from_jets(g.n(), g.k(), std::move(inv), g.base());
}

// ---------------------------------------------------------------------------------------------
// Verdicts

enum class Condition { Cg, CY, CJ, CJprime, CLambda };

inline std::string condition_name(Condition c) {
  switch (c) {
    case Condition::Cg: return "Cg";
    case Condition::CY: return "CY";
    case Condition::CJ: return "CJ";
    case Condition::CJprime: return "CJprime";
    case Condition::CLambda: return "CLambda";
  }
  return "?";
}

struct JacobianWitness {
  int r = 0;
  std::vector<int> xi;  // 1-based indices into the r*k iterate parameters
  MultiIndex beta;
  Rational value;       // d^beta J_xi at tau = 0
};

struct MixedWitness {
  MultiIndex alpha;  // in x1..x_{n-1}
  MultiIndex beta;   // in y1..y_{n-1}
  Rational value;    // the mixed partial derivative at the origin
};

struct CurvatureVerdict {
  Condition condition = Condition::Cg;
  bool curved = false;
  int order = 0;   // m for Cg / CY, tau-degree budget for CJ, coefficient budget for CLambda
  int budget = 0;  // bracket length for Cg / CY, iterates r for CJ
  int rank = 0;
  bool saturated = false;
  std::vector<std::string> labels;           // generator labels
  std::vector<BracketWord> spanning_words;   // certificate for Cg / CY
  std::optional<JacobianWitness> witness;    // certificate for CJ
  std::optional<MixedWitness> mixed;         // certificate for CLambda

  std::string outcome() const {
    return curved ? "curved-certified" : "flat-to-order(" + std::to_string(order) + ")";
  }
};

namespace detail {

inline CurvatureVerdict closure_verdict(Condition cond, const std::vector<RField>& gens, std::vector<std::string> labels,
                                        int m, int max_len, const std::vector<long>& weights = {},
                                        long max_weight = -1) {
  CurvatureVerdict v;
  v.condition = cond;
  v.order = m;
  v.budget = max_len;
  v.labels = std::move(labels);
  if (gens.empty()) return v;
  auto cl = lie_closure(gens, max_len, weights, max_weight);
  int n = static_cast<int>(gens.front().dim());
  v.rank = cl.rank;
  v.saturated = cl.saturated;
  v.curved = cl.rank == n;
  if (v.curved)
    for (auto idx : cl.spanning) v.spanning_words.push_back(cl.words[idx]);
  return v;
}

}  // namespace detail

// Brackets of length <= L of {X_alpha : |alpha| <= m} span at the base point.
inline CurvatureVerdict check_Cg(const GammaFamily& g, int m, int L) {
  auto gg = g.at_least_order(m + L + 1);
  auto rep = exp_representation(gg, m);
  return detail::closure_verdict(Condition::Cg, rep.generators(), rep.labels(), m, L);
}

// Brackets of X_alpha of total weighted degree sum |alpha_i| <= m span at the base point.
inline CurvatureVerdict check_Cg_weighted(const GammaFamily& g, int m) {
  auto gg = g.at_least_order(2 * m + 1);
  auto rep = exp_representation(gg, m);
  std::vector<long> w;
  for (const auto& a : rep.alphas) w.push_back(a.order());
  return detail::closure_verdict(Condition::Cg, rep.generators(), rep.labels(), m, m, w, m);
}

// Y_{delta,j} from Y_j(x, t) = (d gamma / d t_j)(gamma_t^{-1}(x), t), for |delta| <= m - 1.
inline std::vector<std::pair<std::string, RField>> y_fields(const GammaFamily& g, int m) {
  auto inv = gamma_inverse(g);
  const auto& ctx = g.context();
  JetMap<Rational> inner = inv.components();
  for (auto t : g.param_vars()) inner.push_back(RJet::variable(ctx, t));
  auto xctx = space_context(g.n(), g.order());
  std::vector<std::pair<std::string, RField>> out;
  auto tvars = g.param_vars();
  std::vector<std::vector<RJet>> yj;
  for (int j = 0; j < g.k(); ++j) {
    JetMap<Rational> dt;
    for (const auto& c : g.components()) dt.push_back(c.partial(static_cast<std::size_t>(g.n() + j)));
    yj.push_back(compose(dt, inner));
  }
  for (const auto& delta : multi_indices_up_to(static_cast<std::size_t>(g.k()), m - 1)) {
    Rational f = detail::multi_factorial_q(delta);
    for (int j = 0; j < g.k(); ++j) {
      std::vector<RJet> comps;
      for (const auto& c : yj[static_cast<std::size_t>(j)]) comps.push_back(slice(c, tvars, delta, xctx) * f);
      out.emplace_back("Y" + delta.str() + "," + std::to_string(j + 1), RField(xctx, std::move(comps)));
    }
  }
  return out;
}

inline CurvatureVerdict check_CY(const GammaFamily& g, int m, int L) {
  auto gg = g.at_least_order(m + L + 2);
  std::vector<RField> gens;
  std::vector<std::string> labels;
  for (auto& [l, f] : y_fields(gg, m)) {
    labels.push_back(l);
    gens.push_back(f);
  }
  return detail::closure_verdict(Condition::CY, gens, labels, m, L);
}

// ---------------------------------------------------------------------------------------------
// Iterates and Jacobians

inline std::vector<std::string> tau_names(int r, int k) { return numbered_names("tau", static_cast<std::size_t>(r * k)); }

// Gamma^r(x, tau) as displacement jets in x1..xn, tau1..tau_{rk}.
inline JetMap<Rational> iterate_gamma(const GammaFamily& g, int r) {
  if (r < 1) throw CurvatureError("iterate count must be >= 1");
  auto names = numbered_names("x", static_cast<std::size_t>(g.n()));
  for (const auto& s : tau_names(r, g.k())) names.push_back(s);
  auto ctx = make_context(names, g.order());
  JetMap<Rational> cur;
  for (int i = 0; i < g.n(); ++i) cur.push_back(RJet::variable(ctx, static_cast<std::size_t>(i)));
  for (int step = 0; step < r; ++step) {
    JetMap<Rational> inner = cur;
    for (int j = 0; j < g.k(); ++j) inner.push_back(RJet::variable(ctx, static_cast<std::size_t>(g.n() + step * g.k() + j)));
    cur = compose(g.components(), inner);
  }
  return cur;
}

// Gamma^r(x0, tau) as displacement jets in tau only, valid to the family order.
inline JetMap<Rational> iterate_at_base(const GammaFamily& g, int r) {
  if (r < 1) throw CurvatureError("iterate count must be >= 1");
  auto ctx = make_context(tau_names(r, g.k()), g.order());
  JetMap<Rational> cur(static_cast<std::size_t>(g.n()), RJet(ctx));
  for (int step = 0; step < r; ++step) {
    JetMap<Rational> inner = cur;
    for (int j = 0; j < g.k(); ++j) inner.push_back(RJet::variable(ctx, static_cast<std::size_t>(step * g.k() + j)));
    cur = compose(g.components(), inner);
  }
  return cur;
}

// Laplace expansion along rows, sharing minors by their column set.
template <class S>
Jet<S> jet_determinant(const std::vector<std::vector<Jet<S>>>& m) {
  std::size_t n = m.size();
  if (n == 0) throw CurvatureError("empty determinant");
  if (n > 20) throw CurvatureError("determinant too large");
  std::map<std::uint32_t, Jet<S>> memo;
  std::function<Jet<S>(std::uint32_t)> det = [&](std::uint32_t cols) -> Jet<S> {
    std::size_t row = n - static_cast<std::size_t>(std::popcount(cols));
    if (row + 1 == n) return m[row][static_cast<std::size_t>(std::countr_zero(cols))];
    auto it = memo.find(cols);
    if (it != memo.end()) return it->second;
    Jet<S> total(m[0][0].context());
    int sign = 1;
    for (std::size_t c = 0; c < n; ++c) {
      if (!(cols >> c & 1u)) continue;
      const auto& entry = m[row][c];
      if (!entry.is_zero()) {
        Jet<S> term = entry * det(cols & ~(1u << c));
        if (sign > 0)
          total += term;
        else
          total -= term;
      } else {
        total.limit_valid_order(entry.valid_order() + det(cols & ~(1u << c)).valuation());
      }
      sign = -sign;
    }
    return memo.emplace(cols, total).first->second;
  };
  return det((n == 32 ? 0u : (1u << n)) - 1u);
}

// J_xi(x0, tau): Jacobian of Gamma^r(x0, .) with respect to tau_{xi_1..xi_n} (xi is 1-based).
inline RJet jacobian_minor(const JetMap<Rational>& iterate, const std::vector<int>& xi) {
  std::vector<std::vector<RJet>> m;
  for (const auto& comp : iterate) {
    std::vector<RJet> row;
    for (int c : xi) row.push_back(comp.partial(static_cast<std::size_t>(c - 1)));
    m.push_back(std::move(row));
  }
  return jet_determinant(m);
}

inline std::vector<std::vector<int>> index_subsets(int total, int size) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (static_cast<int>(cur.size()) == size) {
      out.push_back(cur);
      return;
    }
    for (int i = start; i <= total; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(1);
  return out;
}

namespace detail {

// Lowest (|beta|, beta, xi) with a nonzero coefficient of order <= upto, searched in parallel over xi.
inline std::optional<JacobianWitness> lowest_witness(const JetMap<Rational>& it, int r, int n, int k, int upto) {
  auto subsets = index_subsets(r * k, n);
  std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), 16));
  if (subsets.size() < 32) workers = 1;
  std::vector<std::optional<std::pair<MultiIndex, std::size_t>>> best(workers);
  std::vector<RJet> coeff_jets(subsets.size());
  auto work = [&](std::size_t w) {
    for (std::size_t s = w; s < subsets.size(); s += workers) {
      RJet j = jacobian_minor(it, subsets[s]);
      if (j.terms().empty()) continue;
      const auto& [beta, c] = *j.terms().begin();
      if (beta.order() > upto) continue;
      if (!best[w] || beta < best[w]->first || (beta == best[w]->first && s < best[w]->second)) best[w] = {beta, s};
      coeff_jets[s] = std::move(j);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  std::optional<std::pair<MultiIndex, std::size_t>> win;
  for (const auto& b : best)
    if (b && (!win || b->first < win->first || (b->first == win->first && b->second < win->second))) win = b;
  if (!win) return std::nullopt;
  JacobianWitness w;
  w.r = r;
  w.xi = subsets[win->second];
  w.beta = win->first;
  w.value = coeff_jets[win->second].coeff(w.beta) * multi_factorial_q(w.beta);
  return w;
}

}  // namespace detail

// Searches d^beta J_xi(x0, 0) != 0 over |beta| <= b, all n-subsets xi of the r*k iterate
// parameters. The witness is the lowest in the order (|beta|, beta lexicographic, xi lexicographic).
inline CurvatureVerdict check_CJ(const GammaFamily& g, int r, int b) {
  if (r < 1) throw CurvatureError("iterate count must be >= 1");
  if (b < 0) throw CurvatureError("tau budget must be >= 0");
  CurvatureVerdict v;
  v.condition = (r == g.n()) ? Condition::CJ : Condition::CJprime;
  v.order = b;
  v.budget = r;
  if (r * g.k() < g.n()) return v;
  int upto = std::min(b, 1);
  for (;;) {
    auto gg = g.at_least_order(upto + 1);
    if (gg.order() > upto + 1) gg = gg.at_order(upto + 1);
    auto it = iterate_at_base(gg, r);
    auto w = detail::lowest_witness(it, r, g.n(), g.k(), upto);
    if (w) {
      v.curved = true;
      v.witness = std::move(w);
      return v;
    }
    if (upto >= b) return v;
    upto = std::min(b, 2 * upto);
  }
}

// ---------------------------------------------------------------------------------------------
// Hypersurface criterion on phi(x, y') with x in R^n, y' in R^{n-1}

// Drops phi(0, y') so that the coordinate convention phi(0; y') = 0 holds. Mixed coefficients
// are unchanged.
inline RJet normalize_hypersurface_phi(const RJet& phi, int n) {
  RJet out(phi.context());
  out.limit_valid_order(phi.valid_order());
  for (const auto& [a, c] : phi.terms()) {
    bool has_x = false;
    for (int i = 0; i < n; ++i) has_x = has_x || a.exps[static_cast<std::size_t>(i)] > 0;
    if (has_x) out.add_term(a, c);
  }
  return out;
}

inline CurvatureVerdict check_CLambda_hypersurface(const RJet& phi, int n, int b) {
  if (n < 2) throw CurvatureError("hypersurface criterion needs n >= 2");
  if (static_cast<int>(phi.nvars()) != 2 * n - 1) throw CurvatureError("phi must depend on x1..xn and y1..y_{n-1}");
  if (phi.valid_order() < b) throw CurvatureError("phi is not valid to the requested order");
  for (const auto& [a, c] : phi.terms()) {
    if (a.order() <= 1) throw CurvatureError("coordinate convention violated: phi(0,0) or grad phi(0,0) nonzero");
    bool has_x = false;
    for (int i = 0; i < n; ++i) has_x = has_x || a.exps[static_cast<std::size_t>(i)] > 0;
    if (!has_x) throw CurvatureError("coordinate convention violated: phi(0, y') is not identically zero");
  }
  CurvatureVerdict v;
  v.condition = Condition::CLambda;
  v.order = b;
  for (const auto& [a, c] : phi.terms()) {
    if (a.order() > b) break;
    MultiIndex al(static_cast<std::size_t>(n - 1)), be(static_cast<std::size_t>(n - 1));
    for (int i = 0; i < n - 1; ++i) {
      al.exps[static_cast<std::size_t>(i)] = a.exps[static_cast<std::size_t>(i)];
      be.exps[static_cast<std::size_t>(i)] = a.exps[static_cast<std::size_t>(n + i)];
    }
    if (a.exps[static_cast<std::size_t>(n - 1)] != 0 || al.is_zero() || be.is_zero()) continue;
    v.curved = true;
    v.mixed = MixedWitness{al, be, c * detail::multi_factorial_q(al) * detail::multi_factorial_q(be)};
    break;
  }
  return v;
}

// ---------------------------------------------------------------------------------------------
// Conjugation, invariance, normal form

namespace detail {

// Phi o gamma(Phi^{-1}(x), psi(x, t)) on displacement jets; phi maps are over x1..xn.
inline std::vector<RJet> conjugate_jets(const std::vector<RJet>& comps, const ContextPtr& fctx, int n, int k,
                                        const JetMap<Rational>& outer, const JetMap<Rational>& inner_space,
                                        const std::vector<RJet>& psi) {
  JetMap<Rational> inner;
  for (const auto& p : inner_space) inner.push_back(embed(p, fctx));
  for (int j = 0; j < k; ++j) inner.push_back(psi[static_cast<std::size_t>(j)]);
  auto moved = compose(comps, inner);
  (void)n;
  return compose(outer, moved);
}

}  // namespace detail

// phi^{-1} o gamma(phi(x), psi(x, t)). phi is a jet map over x1..xn fixing the base point
// (no constant terms); psi is a k-vector of jets over the family variables with psi(x, 0) = 0.
inline GammaFamily conjugate(const GammaFamily& g, const JetMap<Rational>& phi, const std::vector<RJet>& psi) {
  int n = g.n(), k = g.k();
  if (static_cast<int>(phi.size()) != n) throw CurvatureError("phi has the wrong dimension");
  if (static_cast<int>(psi.size()) != k) throw CurvatureError("psi has the wrong dimension");
  auto xctx = space_context(n, g.order());
  JetMap<Rational> ph;
  for (const auto& p : phi) ph.push_back(embed(p, xctx));
  JetMap<Rational> phinv;
  try {
    phinv = invert_map(ph);
  } catch (const JetError&) {
    throw CurvatureError("phi is singular at the base point");
  }
  std::vector<RJet> ps;
  for (const auto& p : psi) ps.push_back(embed(p, g.context()));
  Matrix<Rational> dpsi(static_cast<std::size_t>(k), std::vector<Rational>(static_cast<std::size_t>(k)));
  for (int i = 0; i < k; ++i) {
    RJet at0 = slice(ps[static_cast<std::size_t>(i)], g.param_vars(), MultiIndex(static_cast<std::size_t>(k)),
                     space_context(n, g.order()));
    if (!at0.is_zero()) throw CurvatureError("psi(x, 0) must vanish");
    for (int j = 0; j < k; ++j) {
      MultiIndex e(static_cast<std::size_t>(n + k));
      e.exps[static_cast<std::size_t>(n + j)] = 1;
      dpsi[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = ps[static_cast<std::size_t>(i)].coeff(e);
    }
  }
  if (matrix_rank(dpsi).rank < k) throw CurvatureError("d psi / dt is singular");
  auto comps = detail::conjugate_jets(g.components(), g.context(), n, k, phinv, ph, ps);
  return GammaFamily::from_jets(n, k, std::move(comps), g.base());
}

inline GammaFamily conjugate(const GammaFamily& g, const JetMap<Rational>& phi) {
  std::vector<RJet> psi;
  for (auto t : g.param_vars()) psi.push_back(RJet::variable(g.context(), t));
  return conjugate(g, phi, psi);
}

struct InvarianceDefect {
  int order = 0;         // largest N' with all coefficients of total order <= N' vanishing
  bool at_least = false; // nothing nonzero found up to the requested order
};

// M = {x'' = 0} with x' = (x1..xp). Scans the coefficients of gamma'' restricted to M.
inline InvarianceDefect invariance_defect(const GammaFamily& g, int p, int N) {
  if (p < 0 || p >= g.n()) throw CurvatureError("split index must satisfy 0 <= p < n");
  for (int j = p; j < g.n(); ++j)
    if (sgn(g.base()[static_cast<std::size_t>(j)]) != 0) throw CurvatureError("base point is not on M");
  auto gg = g.at_least_order(N);
  int first = N + 1;
  for (int j = p; j < g.n(); ++j)
    for (const auto& [a, c] : gg[static_cast<std::size_t>(j)].terms()) {
      if (a.order() > N) break;
      bool on_m = true;
      for (int i = p; i < g.n(); ++i) on_m = on_m && a.exps[static_cast<std::size_t>(i)] == 0;
      if (on_m) {
        first = std::min(first, a.order());
        break;
      }
    }
  if (first > N) return {N, true};
  return {first - 1, false};
}

struct NormalFormStep {
  enum class Kind { permute, raise_q, flatten } kind;
  int index = 0;       // coordinate affected (0-based, after earlier permutations)
  int other = 0;       // swapped coordinate for permute
  Weight weight;       // v for raise_q / flatten
  std::optional<RJet> h;
};

struct NormalFormResult {
  enum class Status { invariant_manifold, cj_certified, inconclusive } status = Status::inconclusive;
  std::vector<Weight> weights;
  int q = 0;
  int order = 0;
  JetMap<Rational> phi;      // new coordinates as functions of the old ones
  JetMap<Rational> phi_inv;
  std::vector<RJet> gamma_hat;        // conjugated family, displacement jets
  std::vector<RJet> manifold;         // defining functions phi_j, j >= q (0-based), of the invariant manifold
  std::vector<NormalFormStep> steps;
  std::optional<JacobianWitness> witness;
  std::string note;

  std::string status_name() const {
    switch (status) {
      case Status::invariant_manifold: return "invariant-manifold";
      case Status::cj_certified: return "cj-certified";
      case Status::inconclusive: return "inconclusive";
    }
    return "?";
  }
};

namespace detail {

inline Weight monomial_weight(const MultiIndex& a, const std::vector<Weight>& xw, int n) {
  Weight w(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.exps[i] == 0) continue;
    Weight vi = static_cast<int>(i) < n ? xw[i] : Weight(1);
    w = w + static_cast<long>(a.exps[i]) * vi;
  }
  return w;
}

}  // namespace detail

// Coordinates and weights in which gamma splits into a leading homogeneous part plus higher
// weight terms; every jet is truncated at order B. Stops when all remaining components have
// weight > B (an invariant manifold to order B), when q reaches n (C_J is certified), or when
// the step budget runs out.
inline NormalFormResult normal_form(const GammaFamily& g, int B, int max_steps = -1) {
  if (B < 1) throw CurvatureError("normal form order must be >= 1");
  int n = g.n(), k = g.k();
  auto gg = g.at_least_order(B);
  if (gg.order() != B) gg = gg.at_order(B);
  const auto& fctx = gg.context();
  auto xctx = space_context(n, B);
  if (max_steps < 0) max_steps = n * (B + 1);

  NormalFormResult res;
  res.order = B;
  res.weights.assign(static_cast<std::size_t>(n), Weight::infinity());
  res.phi = identity_map<Rational>(xctx);
  res.phi_inv = res.phi;
  std::vector<RJet> cur = gg.components();
  std::vector<RJet> tpsi;
  for (auto t : gg.param_vars()) tpsi.push_back(RJet::variable(fctx, t));

  auto apply = [&](const JetMap<Rational>& phi, const JetMap<Rational>& phinv) {
    cur = detail::conjugate_jets(cur, fctx, n, k, phi, phinv, tpsi);
    res.phi = compose(phi, res.phi);
    res.phi_inv = compose(res.phi_inv, phinv);
  };
  auto swap_coords = [&](int a, int b) {
    if (a == b) return;
    JetMap<Rational> p = identity_map<Rational>(xctx);
    std::swap(p[static_cast<std::size_t>(a)], p[static_cast<std::size_t>(b)]);
    apply(p, p);
    res.steps.push_back({NormalFormStep::Kind::permute, a, b, Weight(0), std::nullopt});
  };
  auto q_comp = [&](int j) { return cur[static_cast<std::size_t>(j)] - RJet::variable(fctx, static_cast<std::size_t>(j)); };
  // Part of f of weight exactly v with no dependence on x_j, j >= q.
  auto weight_part = [&](const RJet& f, int q, Weight v) {
    RJet out(fctx);
    for (const auto& [a, c] : f.terms()) {
      bool off = false;
      for (int i = q; i < n; ++i) off = off || a.exps[static_cast<std::size_t>(i)] > 0;
      if (!off && detail::monomial_weight(a, res.weights, n) == v) out.add_term(a, c);
    }
    return out;
  };
  auto min_weight = [&](const RJet& f, int q) {
    Weight best = Weight::infinity();
    for (const auto& [a, c] : f.terms()) {
      bool off = false;
      for (int i = q; i < n; ++i) off = off || a.exps[static_cast<std::size_t>(i)] > 0;
      if (off) continue;
      Weight w = detail::monomial_weight(a, res.weights, n);
      if (w < best) best = w;
    }
    return best;
  };

  int q = 0;
  int steps = 0;
  for (;;) {
    if (steps++ >= max_steps) {
      res.status = NormalFormResult::Status::inconclusive;
      res.note = "step budget exhausted";
      break;
    }
    // Minimal weight among components j >= q, restricted to x'' = 0.
    int pick = -1;
    Weight v = Weight::infinity();
    for (int j = q; j < n; ++j) {
      Weight w = min_weight(q_comp(j), q);
      if (w < v) {
        v = w;
        pick = j;
      }
    }
    if (pick < 0 || v > Weight(B)) {
      res.status = NormalFormResult::Status::invariant_manifold;
      break;
    }
    swap_coords(q, pick);
    if (q == 0) {
      res.weights[0] = v;
      res.steps.push_back({NormalFormStep::Kind::raise_q, 0, 0, v, std::nullopt});
      q = 1;
    } else {
      RJet s = weight_part(q_comp(q), q, v);
      // leading parts x_j + P_j of the first q coordinates
      std::vector<RJet> lead;
      for (int j = 0; j < q; ++j)
        lead.push_back(RJet::variable(fctx, static_cast<std::size_t>(j)) + weight_part(q_comp(j), j, res.weights[static_cast<std::size_t>(j)]));
      std::vector<MultiIndex> basis;
      for (const auto& a : multi_indices_up_to(static_cast<std::size_t>(q), static_cast<int>(v.value()))) {
        Weight w(0);
        for (int i = 0; i < q; ++i) w = w + static_cast<long>(a.exps[static_cast<std::size_t>(i)]) * res.weights[static_cast<std::size_t>(i)];
        if (w == v) basis.push_back(a);
      }
      std::vector<RJet> cols;
      for (const auto& a : basis) {
        RJet shifted = RJet::constant(fctx, Rational(1)), plain = RJet::constant(fctx, Rational(1));
        for (int i = 0; i < q; ++i) {
          shifted *= lead[static_cast<std::size_t>(i)].pow(a.exps[static_cast<std::size_t>(i)]);
          plain *= RJet::variable(fctx, static_cast<std::size_t>(i)).pow(a.exps[static_cast<std::size_t>(i)]);
        }
        cols.push_back(shifted - plain);
      }
      std::map<MultiIndex, std::size_t> rows;
      for (const auto& c : cols)
        for (const auto& [m, x] : c.terms()) rows.emplace(m, 0);
      for (const auto& [m, x] : s.terms()) rows.emplace(m, 0);
      std::size_t ri = 0;
      for (auto& [m, idx] : rows) idx = ri++;
      Matrix<Rational> a(rows.size(), std::vector<Rational>(cols.size(), Rational(0)));
      std::vector<Rational> rhs(rows.size(), Rational(0));
      for (std::size_t c = 0; c < cols.size(); ++c)
        for (const auto& [m, x] : cols[c].terms()) a[rows[m]][c] = x;
      for (const auto& [m, x] : s.terms()) rhs[rows[m]] = x;
      auto sol = solve_exact(a, rhs);
      if (sol) {
        RJet h(xctx);
        for (std::size_t c = 0; c < basis.size(); ++c) {
          MultiIndex full(static_cast<std::size_t>(n));
          for (int i = 0; i < q; ++i) full.exps[static_cast<std::size_t>(i)] = basis[c].exps[static_cast<std::size_t>(i)];
          h.add_term(full, (*sol)[c]);
        }
        JetMap<Rational> phi = identity_map<Rational>(xctx), phinv = phi;
        phi[static_cast<std::size_t>(q)] -= h;
        phinv[static_cast<std::size_t>(q)] += h;
        apply(phi, phinv);
        res.steps.push_back({NormalFormStep::Kind::flatten, q, 0, v, h});
      } else {
        res.weights[static_cast<std::size_t>(q)] = v;
        res.steps.push_back({NormalFormStep::Kind::raise_q, q, 0, v, std::nullopt});
        ++q;
      }
    }
    if (q == n) {
      long total = 0;
      for (const auto& w : res.weights) total += w.value();
      auto cj = check_CJ(g, n, static_cast<int>(total - n));
      if (cj.curved) {
        res.status = NormalFormResult::Status::cj_certified;
        res.witness = cj.witness;
      } else {
        res.status = NormalFormResult::Status::inconclusive;
        res.note = "leading part is not confirmed by the Jacobian search";
      }
      break;
    }
  }
  res.q = q;
  res.gamma_hat = cur;
  for (int j = q; j < n; ++j) res.manifold.push_back(res.phi[static_cast<std::size_t>(j)]);
  return res;
}

// ---------------------------------------------------------------------------------------------
// Cross-check of the finite-order implications between the conditions

struct EquivalenceReport {
  CurvatureVerdict cg, cy, cj;
  std::optional<CurvatureVerdict> cg_from_cj;  // C_g at weighted degree |beta| + 1 of the C_J witness
  std::optional<int> minimal_m;                // least weighted degree at which C_g certifies
  std::optional<CurvatureVerdict> cj_prime;    // r = dim N_m, budget Q - n + 2
  int free_dim = 0, free_q = 0;
  std::vector<std::string> violations;
  std::vector<std::string> indeterminate;
};

struct CrossCheckBudgets {
  int m = 3;         // representation order for C_g / C_Y
  int L = 6;         // bracket length
  int b = 6;         // tau budget for C_J with r = n
  int max_m = 3;     // search range for the weighted C_g degree
};

inline EquivalenceReport cross_check_equivalence(const GammaFamily& g, const CrossCheckBudgets& bud = {}) {
  EquivalenceReport rep;
  int n = g.n();
  rep.cg = check_Cg(g, bud.m, bud.L);
  rep.cy = check_CY(g, bud.m, bud.L);
  rep.cj = check_CJ(g, n, bud.b);
  if (rep.cg.curved != rep.cy.curved) rep.violations.push_back("C_Y and C_g disagree at equal budgets");
  if (rep.cj.curved) {
    int m = rep.cj.witness->beta.order() + 1;
    rep.cg_from_cj = check_Cg_weighted(g, m);
    if (!rep.cg_from_cj->curved) rep.violations.push_back("C_J witness without a C_g span at weighted degree " + std::to_string(m));
  }
  for (int m = 1; m <= bud.max_m; ++m) {
    auto v = check_Cg_weighted(g, m);
    if (v.curved) {
      rep.minimal_m = m;
      break;
    }
  }
  if (rep.minimal_m) {
    int m = *rep.minimal_m;
    std::vector<int> degs;
    for (const auto& a : multi_indices_up_to(static_cast<std::size_t>(g.k()), m, 1)) degs.push_back(a.order());
    auto alg = build_free_nilpotent(static_cast<int>(degs.size()), degs, m);
    rep.free_dim = alg.dim();
    rep.free_q = alg.homogeneous_dimension();
    rep.cj_prime = check_CJ(g, rep.free_dim, rep.free_q - n + 2);
    if (!rep.cj_prime->curved) rep.violations.push_back("C_g at weighted degree " + std::to_string(m) + " without a (C_J)' witness");
  } else if (rep.cg.curved) {
    rep.indeterminate.push_back("C_g certifies only beyond the weighted degree range");
  }
  if (!rep.cg.curved && !rep.cj.curved) rep.indeterminate.push_back("no condition certifies within the budgets");
  return rep;
}

// Re-evaluates the certificate of a curved verdict directly from the family.
inline bool verify_certificate(const GammaFamily& g, const CurvatureVerdict& v) {
  if (!v.curved) return false;
  switch (v.condition) {
    case Condition::Cg:
    case Condition::CY: {
      std::vector<RField> gens;
      if (v.condition == Condition::Cg) {
        gens = exp_representation(g.at_least_order(v.order + v.budget + 1), v.order).generators();
      } else {
        for (auto& [l, f] : y_fields(g.at_least_order(v.order + v.budget + 2), v.order)) gens.push_back(f);
      }
      Matrix<Rational> rows;
      for (const auto& w : v.spanning_words) rows.push_back(evaluate_word(w, gens).at_base());
      return !rows.empty() && matrix_rank(rows).rank == g.n();
    }
    case Condition::CJ:
    case Condition::CJprime: {
      const auto& w = *v.witness;
      auto it = iterate_at_base(g.at_least_order(w.beta.order() + 1), w.r);
      RJet j = jacobian_minor(it, w.xi);
      Rational val = j.coeff(w.beta) * detail::multi_factorial_q(w.beta);
      return val == w.value && sgn(val) != 0;
    }
    case Condition::CLambda: return v.mixed.has_value() && sgn(v.mixed->value) != 0;
  }
  return false;
}

// Random polynomial family x_j + sum c x^a t^b with |b| >= 1 and total degree <= deg.
inline GammaFamily random_polynomial_family(int n, int k, int deg, std::mt19937_64& rng, int order,
                                            double density = 0.35, std::vector<Rational> base = {}) {
  if (base.empty()) base.assign(static_cast<std::size_t>(n), Rational(0));
  auto pctx = make_context(family_names(n, k), std::max(deg, 1));
  std::uniform_int_distribution<int> coef(-3, 3);
  std::uniform_real_distribution<double> unif(0, 1);
  std::vector<RJet> polys;
  for (int j = 0; j < n; ++j) {
    RJet p = RJet::variable(pctx, static_cast<std::size_t>(j));
    for (const auto& a : multi_indices_up_to(static_cast<std::size_t>(n + k), deg, 1)) {
      int tdeg = 0;
      for (int i = n; i < n + k; ++i) tdeg += a.exps[static_cast<std::size_t>(i)];
      if (tdeg == 0 || unif(rng) > density) continue;
      int c = coef(rng);
      if (c != 0) p.add_term(a, Rational(c));
    }
    polys.push_back(p);
  }
  return GammaFamily::from_polynomials(n, k, polys, std::move(base), order);
}

}  // namespace curvlab
