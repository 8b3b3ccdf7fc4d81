#pragma once

#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "curvlab/jet.hpp"
#include "curvlab/linalg.hpp"

namespace curvlab {

// Vector field sum_j a_j d/dx_j with jet coefficients. The jets may carry parameter
// variables besides the space variables; derivatives act on space variables only.
template <class S>
class VField {
 public:
  VField() = default;
  // Field on all variables of the context.
  VField(ContextPtr ctx, std::vector<Jet<S>> comps) : ctx_(std::move(ctx)), comps_(std::move(comps)) {
    for (std::size_t i = 0; i < comps_.size(); ++i) space_.push_back(i);
    validate();
  }
  // Field whose space variables are the listed context variables.
  VField(ContextPtr ctx, std::vector<std::size_t> space, std::vector<Jet<S>> comps)
      : ctx_(std::move(ctx)), space_(std::move(space)), comps_(std::move(comps)) {
    validate();
  }

  static VField zero(const ContextPtr& ctx, std::vector<std::size_t> space) {
    std::vector<Jet<S>> c(space.size(), Jet<S>(ctx));
    return VField(ctx, std::move(space), std::move(c));
  }
  static VField zero(const ContextPtr& ctx) {
    std::vector<std::size_t> sp;
    for (std::size_t i = 0; i < ctx->nvars(); ++i) sp.push_back(i);
    return zero(ctx, sp);
  }
  // Constant coordinate field e_i.
  static VField coordinate(const ContextPtr& ctx, std::vector<std::size_t> space, std::size_t i) {
    VField v = zero(ctx, std::move(space));
    v.comps_.at(i) = Jet<S>::constant(ctx, S(1));
    return v;
  }

  const ContextPtr& context() const { return ctx_; }
  std::size_t dim() const { return comps_.size(); }
  const std::vector<std::size_t>& space_vars() const { return space_; }
  const Jet<S>& operator[](std::size_t j) const { return comps_[j]; }
  Jet<S>& operator[](std::size_t j) { return comps_[j]; }
  const std::vector<Jet<S>>& components() const { return comps_; }

  int valid_order() const {
    int v = ctx_->order;
    for (const auto& c : comps_) v = std::min(v, c.valid_order());
    return v;
  }
  bool is_zero() const {
    for (const auto& c : comps_)
      if (!c.is_zero()) return false;
    return true;
  }

  // Directional derivative V(f) = sum_j a_j d_j f.
  Jet<S> apply(const Jet<S>& f) const {
    Jet<S> r(ctx_);
    for (std::size_t j = 0; j < comps_.size(); ++j) {
      if (comps_[j].is_zero() && comps_[j].valid_order() >= ctx_->order) continue;
      r += comps_[j] * f.partial(space_[j]);
    }
    return r;
  }

  std::vector<S> at_base() const {
    std::vector<S> v;
    for (const auto& c : comps_) v.push_back(c.constant_term());
    return v;
  }

  VField operator-() const {
    VField r(*this);
    for (auto& c : r.comps_) c = -c;
    return r;
  }
  VField& operator+=(const VField& o) {
    check(o);
    for (std::size_t j = 0; j < comps_.size(); ++j) comps_[j] += o.comps_[j];
    return *this;
  }
  VField& operator-=(const VField& o) {
    check(o);
    for (std::size_t j = 0; j < comps_.size(); ++j) comps_[j] -= o.comps_[j];
    return *this;
  }
  friend VField operator+(VField a, const VField& b) { return a += b; }
  friend VField operator-(VField a, const VField& b) { return a -= b; }
  friend VField operator*(const S& c, VField v) {
    for (auto& x : v.comps_) x *= c;
    return v;
  }
  // Multiplication by a function.
  friend VField operator*(const Jet<S>& f, VField v) {
    for (auto& x : v.comps_) x = f * x;
    return v;
  }

  bool equals(const VField& o) const {
    check(o);
    for (std::size_t j = 0; j < comps_.size(); ++j)
      if (!comps_[j].equals(o.comps_[j])) return false;
    return true;
  }

  void check(const VField& o) const {
    if (!same_context(ctx_, o.ctx_) || space_ != o.space_) throw JetError("vector field context mismatch");
  }

  std::string str() const {
    std::string s;
    for (std::size_t j = 0; j < comps_.size(); ++j) {
      if (comps_[j].is_zero()) continue;
      if (!s.empty()) s += " + ";
      s += "(" + comps_[j].str() + ")d/d" + ctx_->names[space_[j]];
    }
    return s.empty() ? "0" : s;
  }

 private:
  void validate() const {
    if (comps_.size() != space_.size()) throw JetError("component count does not match space dimension");
    for (const auto& c : comps_)
      if (!same_context(c.context(), ctx_)) throw JetError("component jet in a foreign context");
    for (auto i : space_)
      if (i >= ctx_->nvars()) throw JetError("space variable out of range");
  }

  ContextPtr ctx_;
  std::vector<std::size_t> space_;
  std::vector<Jet<S>> comps_;
};

using RField = VField<Rational>;

template <class S>
VField<S> bracket(const VField<S>& v, const VField<S>& w) {
  v.check(w);
  std::vector<Jet<S>> c;
  for (std::size_t j = 0; j < v.dim(); ++j) c.push_back(v.apply(w[j]) - w.apply(v[j]));
  return VField<S>(v.context(), v.space_vars(), std::move(c));
}

// Jet of x -> exp(V)(x): the time-one flow of V, given as displacement jets in the
// context of V. V must vanish where all non-space variables vanish, so the Lie series
// sum_k V^k(x)/k! terminates at the context order.
template <class S>
JetMap<S> flow_exp(const VField<S>& v) {
  const auto& ctx = v.context();
  const auto& sp = v.space_vars();
  std::vector<bool> is_space(ctx->nvars(), false);
  for (auto i : sp) is_space[i] = true;
  bool has_params = false;
  for (std::size_t i = 0; i < ctx->nvars(); ++i) has_params = has_params || !is_space[i];
  for (std::size_t j = 0; j < v.dim(); ++j)
    for (const auto& [k, c] : v[j].terms()) {
      bool param_free = true;
      for (std::size_t i = 0; i < k.size(); ++i)
        if (!is_space[i] && k.exps[i] > 0) param_free = false;
      if (param_free) throw JetError("flow_exp: field has a term free of the flow parameters");
    }
  if (!has_params) throw JetError("flow_exp: field has no flow parameters");
  JetMap<S> out;
  for (std::size_t j = 0; j < v.dim(); ++j) {
    Jet<S> term = Jet<S>::variable(ctx, sp[j]);
    Jet<S> sum = term;
    for (int k = 1; k <= ctx->order; ++k) {
      term = v.apply(term);
      term *= S(1) / S(k);
      if (term.is_zero() && term.valid_order() >= sum.valid_order()) break;
      sum += term;
    }
    out.push_back(std::move(sum));
  }
  return out;
}

// Pushforward phi_* V where phi is a diffeomorphism jet over the space context of V
// (displacement coordinates, phi(0) = 0).
template <class S>
VField<S> pushforward(const JetMap<S>& phi, const VField<S>& v) {
  const auto& ctx = v.context();
  if (phi.size() != v.dim() || v.dim() != ctx->nvars()) throw JetError("pushforward: dimension mismatch");
  auto phinv = invert_map(phi);
  std::vector<Jet<S>> dv;
  for (std::size_t i = 0; i < phi.size(); ++i) dv.push_back(v.apply(phi[i]));
  auto c = compose(dv, phinv);
  return VField<S>(ctx, v.space_vars(), std::move(c));
}

template <class S>
int span_rank(const std::vector<VField<S>>& fields) {
  if (fields.empty()) return 0;
  Matrix<S> m;
  for (const auto& f : fields) m.push_back(f.at_base());
  return matrix_rank(m).rank;
}

// A bracket word over generator labels: [g0,[g1,[...,g_last]]] (right-normed).
using BracketWord = std::vector<int>;

inline std::string word_str(const BracketWord& w, const std::vector<std::string>& labels) {
  if (w.size() == 1) return labels.at(static_cast<std::size_t>(w[0]));
  std::string s = labels.at(static_cast<std::size_t>(w[0]));
  BracketWord rest(w.begin() + 1, w.end());
  return "[" + s + "," + word_str(rest, labels) + "]";
}

template <class S>
VField<S> evaluate_word(const BracketWord& w, const std::vector<VField<S>>& gens) {
  VField<S> f = gens.at(static_cast<std::size_t>(w.back()));
  for (std::size_t i = w.size() - 1; i-- > 0;) f = bracket(gens.at(static_cast<std::size_t>(w[i])), f);
  return f;
}

template <class S>
struct ClosureResult {
  std::vector<VField<S>> fields;
  std::vector<BracketWord> words;
  std::vector<long> weights;
  int rank = 0;                          // rank at the base point
  std::vector<std::size_t> spanning;     // indices into fields forming a basis at the base
  int max_length_used = 0;
  bool saturated = false;                // no new independent field appeared at some length
};

namespace detail {

// Incremental echelon form over sparse coefficient vectors of fields.
template <class S>
class FieldSpan {
 public:
  using Key = std::pair<std::size_t, MultiIndex>;
  using Vec = std::map<Key, S>;

  static Vec vectorize(const VField<S>& f, int upto) {
    Vec v;
    for (std::size_t j = 0; j < f.dim(); ++j)
      for (const auto& [k, c] : f[j].terms())
        if (k.order() <= upto) v.emplace(Key{j, k}, c);
    return v;
  }
  // True when the vector is independent of the accepted ones; it is then accepted.
  bool insert(Vec v) {
    reduce(v);
    if (v.empty()) return false;
    S lead = v.begin()->second;
    for (auto& [k, c] : v) c /= lead;
    Key piv = v.begin()->first;
    for (auto& [pk, row] : rows_) eliminate(row, piv, v);
    rows_.emplace(piv, std::move(v));
    return true;
  }
  bool independent(Vec v) const {
    reduce(v);
    return !v.empty();
  }

 private:
  static void eliminate(Vec& target, const Key& piv, const Vec& row) {
    auto it = target.find(piv);
    if (it == target.end()) return;
    S f = it->second;
    for (const auto& [k, c] : row) {
      auto jt = target.find(k);
      S nv = (jt == target.end() ? S(0) : jt->second) - f * c;
      if (is_zero(nv)) {
        if (jt != target.end()) target.erase(jt);
      } else if (jt == target.end()) {
        target.emplace(k, nv);
      } else {
        jt->second = nv;
      }
    }
  }
  void reduce(Vec& v) const {
    for (const auto& [piv, row] : rows_) eliminate(v, piv, row);
    if constexpr (!ScalarTraits<S>::exact) {
      for (auto it = v.begin(); it != v.end();)
        it = std::fabs(it->second) < 1e-11 ? v.erase(it) : std::next(it);
    }
  }
  std::map<Key, Vec> rows_;
};

}  // namespace detail

// Iterated right-normed commutators of the generators up to bracket length max_len,
// discarding any bracket whose jet is a linear combination of those already kept (to the
// bracket's valid order). With max_weight >= 0 only words of total weight <= max_weight
// are formed. Stops early once the base rank equals the dimension or a whole length adds
// nothing new.
template <class S>
ClosureResult<S> lie_closure(const std::vector<VField<S>>& gens, int max_len, const std::vector<long>& gen_weights = {},
                             long max_weight = -1) {
  ClosureResult<S> res;
  if (gens.empty()) return res;
  std::size_t n = gens.front().dim();
  std::vector<long> gw = gen_weights.empty() ? std::vector<long>(gens.size(), 1) : gen_weights;
  // Under a weight cap a bracket only counts as redundant when it is a combination of kept
  // fields of no larger weight; otherwise its own brackets could be lost.
  auto threshold = [&](long weight) { return max_weight >= 0 ? weight : std::numeric_limits<long>::max(); };
  std::vector<detail::FieldSpan<S>> spans;  // one per (truncation order, weight threshold)
  std::map<std::pair<int, long>, std::size_t> span_index;
  auto span_for = [&](int o, long cap) -> detail::FieldSpan<S>& {
    auto key = std::pair(o, cap);
    auto it = span_index.find(key);
    if (it == span_index.end()) {
      spans.emplace_back();
      it = span_index.emplace(key, spans.size() - 1).first;
      for (std::size_t i = 0; i < res.fields.size(); ++i)
        if (res.weights[i] <= cap) spans[it->second].insert(detail::FieldSpan<S>::vectorize(res.fields[i], o));
    }
    return spans[it->second];
  };
  Matrix<S> base_rows;
  auto try_add = [&](VField<S> f, BracketWord w, long weight) {
    int o = f.valid_order();
    if (o < 0) return false;
    if (f.is_zero()) return false;
    auto vec = detail::FieldSpan<S>::vectorize(f, o);
    if (!span_for(o, threshold(weight)).independent(vec)) return false;
    for (auto& [key, idx] : span_index)
      if (weight <= key.second) spans[idx].insert(detail::FieldSpan<S>::vectorize(f, key.first));
    base_rows.push_back(f.at_base());
    res.fields.push_back(std::move(f));
    res.words.push_back(std::move(w));
    res.weights.push_back(weight);
    return true;
  };
  std::vector<std::size_t> level;
  for (std::size_t g = 0; g < gens.size(); ++g) {
    if (max_weight >= 0 && gw[g] > max_weight) continue;
    if (try_add(gens[g], BracketWord{static_cast<int>(g)}, gw[g])) level.push_back(res.fields.size() - 1);
  }
  res.max_length_used = 1;
  auto current_rank = [&]() { return base_rows.empty() ? 0 : matrix_rank(base_rows).rank; };
  for (int len = 2; len <= max_len && current_rank() < static_cast<int>(n); ++len) {
    std::vector<std::size_t> next;
    for (std::size_t g = 0; g < gens.size(); ++g) {
      for (std::size_t idx : level) {
        long wt = gw[g] + res.weights[idx];
        if (max_weight >= 0 && wt > max_weight) continue;
        BracketWord w{static_cast<int>(g)};
        w.insert(w.end(), res.words[idx].begin(), res.words[idx].end());
        if (try_add(bracket(gens[g], res.fields[idx]), std::move(w), wt)) next.push_back(res.fields.size() - 1);
      }
    }
    res.max_length_used = len;
    if (next.empty()) {
      res.saturated = true;
      break;
    }
    level = std::move(next);
  }
  if (!base_rows.empty()) {
    auto rr = matrix_rank(base_rows);
    res.rank = rr.rank;
    res.spanning = rr.pivot_rows;
  }
  return res;
}

}  // namespace curvlab
