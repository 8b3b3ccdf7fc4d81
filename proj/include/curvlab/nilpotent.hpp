#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "curvlab/jet.hpp"
#include "curvlab/linalg.hpp"

namespace curvlab {

// Basic commutator: a generator or the bracket of two earlier basis words.
struct HallWord {
  int generator = -1;  // 0-based generator index for length-1 words
  int left = -1;       // basis indices of the factors otherwise
  int right = -1;
  int degree = 0;      // weighted degree
  int length = 0;
  std::vector<int> foliage;

  bool is_generator() const { return generator >= 0; }
};

using TensorWord = std::vector<int>;
template <class C>
using Tensor = std::map<TensorWord, C>;

namespace detail {

inline bool coeff_is_zero(const Rational& c) { return sgn(c) == 0; }
inline bool coeff_is_zero(double c) { return c == 0.0; }
template <class S>
bool coeff_is_zero(const Jet<S>& c) {
  return c.is_zero();
}

template <class C>
void tensor_add(Tensor<C>& acc, const TensorWord& w, const std::type_identity_t<C>& c) {
  if (coeff_is_zero(c)) return;
  auto it = acc.find(w);
  if (it == acc.end()) {
    acc.emplace(w, c);
  } else {
    it->second += c;
    if (coeff_is_zero(it->second)) acc.erase(it);
  }
}

}  // namespace detail

// Free nilpotent Lie algebra on p weighted generators, truncated above weighted degree m.
//
// Hall basis convention: words are ordered by length, then lexicographically by foliage.
// A bracket [u, v] of basis words is basic when u < v and, if v = [v1, v2], also v1 <= u.
class NilpotentAlgebra {
 public:
  using SparseVector = std::vector<std::pair<int, Rational>>;

  NilpotentAlgebra() = default;

  static NilpotentAlgebra build(int p, std::vector<int> degrees, int m) {
    if (p < 1) throw std::invalid_argument("nilpotent algebra needs at least one generator");
    if (static_cast<int>(degrees.size()) != p) throw std::invalid_argument("expected one degree per generator");
    for (int a : degrees)
      if (a < 1) throw std::invalid_argument("generator degrees must be positive");
    if (m < *std::max_element(degrees.begin(), degrees.end()))
      throw std::invalid_argument("order m is smaller than a generator degree");
    NilpotentAlgebra g;
    g.p_ = p;
    g.degrees_ = std::move(degrees);
    g.m_ = m;
    g.enumerate_basis();
    g.expand_basis();
    g.build_decompositions();
    g.build_structure_constants();
    return g;
  }

  int p() const { return p_; }
  int m() const { return m_; }
  const std::vector<int>& generator_degrees() const { return degrees_; }
  int dim() const { return static_cast<int>(basis_.size()); }
  const std::vector<HallWord>& basis() const { return basis_; }
  const HallWord& word(int i) const { return basis_.at(static_cast<std::size_t>(i)); }
  int degree(int i) const { return word(i).degree; }
  std::vector<int> degrees() const {
    std::vector<int> d;
    for (const auto& w : basis_) d.push_back(w.degree);
    return d;
  }
  int homogeneous_dimension() const {
    int q = 0;
    for (const auto& w : basis_) q += w.degree;
    return q;
  }
  // Basis index of the length-1 word of generator g (0-based).
  int generator_index(int g) const { return gen_index_.at(static_cast<std::size_t>(g)); }
  bool same_as(const NilpotentAlgebra& o) const { return p_ == o.p_ && m_ == o.m_ && degrees_ == o.degrees_; }

  // c^K_{IJ} as a sparse vector over K.
  const SparseVector& structure_constants(int i, int j) const {
    return consts_.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j));
  }

  std::string word_str(int i) const {
    const auto& w = word(i);
    if (w.is_generator()) return "Y" + std::to_string(w.generator + 1);
    return "[" + word_str(w.left) + "," + word_str(w.right) + "]";
  }

  // Expansion of a basis word in the free associative algebra.
  const Tensor<Rational>& expansion(int i) const { return expansions_.at(static_cast<std::size_t>(i)); }

  int word_degree(const TensorWord& w) const {
    int s = 0;
    for (int l : w) s += degrees_[static_cast<std::size_t>(l)];
    return s;
  }

  // Hall coordinates of a Lie element given as a tensor. Throws if the tensor is not a Lie element.
  template <class C>
  std::vector<C> to_hall(const Tensor<C>& t, const C& zero) const {
    std::vector<C> out(basis_.size(), zero);
    std::map<std::vector<int>, Tensor<C>> groups;
    for (const auto& [w, c] : t) {
      if (w.empty()) throw std::invalid_argument("tensor has a constant term");
      if (word_degree(w) > m_) continue;
      groups[multidegree(w)].emplace(w, c);
    }
    for (const auto& [md, part] : groups) {
      auto it = decomp_.find(md);
      if (it == decomp_.end()) throw std::logic_error("tensor is not a Lie element");
      const Decomposition& dc = it->second;
      std::vector<C> x(dc.hall.size(), zero);
      for (std::size_t r = 0; r < dc.pivot_words.size(); ++r) {
        auto pw = part.find(dc.pivot_words[r]);
        if (pw == part.end()) continue;
        for (std::size_t j = 0; j < dc.hall.size(); ++j)
          if (sgn(dc.inverse[j][r]) != 0) x[j] += pw->second * dc.inverse[j][r];
      }
      Tensor<C> check = part;
      for (std::size_t j = 0; j < dc.hall.size(); ++j) {
        if (detail::coeff_is_zero(x[j])) continue;
        for (const auto& [w, c] : expansions_[static_cast<std::size_t>(dc.hall[j])]) detail::tensor_add(check, w, -(x[j] * c));
      }
      if (!check.empty()) throw std::logic_error("tensor is not a Lie element");
      for (std::size_t j = 0; j < dc.hall.size(); ++j) out[static_cast<std::size_t>(dc.hall[j])] = x[j];
    }
    return out;
  }

  // Tensor of sum_I x_I Y_I.
  template <class C>
  Tensor<C> to_tensor(const std::vector<C>& x) const {
    check_dim(x.size());
    Tensor<C> t;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (detail::coeff_is_zero(x[i])) continue;
      for (const auto& [w, c] : expansions_[i]) detail::tensor_add(t, w, x[i] * c);
    }
    return t;
  }

  // Product in the free associative algebra, truncated above degree m.
  template <class C>
  Tensor<C> tensor_mul(const Tensor<C>& a, const Tensor<C>& b) const {
    Tensor<C> r;
    for (const auto& [wa, ca] : a) {
      int da = word_degree(wa);
      for (const auto& [wb, cb] : b) {
        if (da + word_degree(wb) > m_) continue;
        TensorWord w = wa;
        w.insert(w.end(), wb.begin(), wb.end());
        detail::tensor_add(r, w, ca * cb);
      }
    }
    return r;
  }

  // Lie bracket of Hall-coordinate vectors via the structure constants.
  template <class C>
  std::vector<C> bracket(const std::vector<C>& x, const std::vector<C>& y) const {
    check_dim(x.size());
    check_dim(y.size());
    C zero = x.front() * Rational(0);
    std::vector<C> r(basis_.size(), zero);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (detail::coeff_is_zero(x[i])) continue;
      for (std::size_t j = 0; j < y.size(); ++j) {
        if (detail::coeff_is_zero(y[j])) continue;
        C xy = x[i] * y[j];
        for (const auto& [k, c] : consts_[i][j]) r[static_cast<std::size_t>(k)] += xy * c;
      }
    }
    return r;
  }

  void check_dim(std::size_t n) const {
    if (n != basis_.size())
      throw std::invalid_argument("element has " + std::to_string(n) + " coordinates, algebra dimension is " +
                                  std::to_string(basis_.size()));
  }

 private:
  struct Decomposition {
    std::vector<int> hall;
    std::vector<TensorWord> pivot_words;
    Matrix<Rational> inverse;  // hall.size() x pivot_words.size()
  };

  std::vector<int> multidegree(const TensorWord& w) const {
    std::vector<int> md(static_cast<std::size_t>(p_), 0);
    for (int l : w) ++md[static_cast<std::size_t>(l)];
    return md;
  }

  void enumerate_basis() {
    for (int g = 0; g < p_; ++g) {
      HallWord w;
      w.generator = g;
      w.degree = degrees_[static_cast<std::size_t>(g)];
      w.length = 1;
      w.foliage = {g};
      gen_index_.push_back(static_cast<int>(basis_.size()));
      basis_.push_back(w);
    }
    for (int len = 2; len <= m_; ++len) {
      std::vector<HallWord> fresh;
      int count = static_cast<int>(basis_.size());
      for (int u = 0; u < count; ++u) {
        for (int v = u + 1; v < count; ++v) {
          const HallWord& wu = basis_[static_cast<std::size_t>(u)];
          const HallWord& wv = basis_[static_cast<std::size_t>(v)];
          if (wu.length + wv.length != len || wu.degree + wv.degree > m_) continue;
          if (!wv.is_generator() && wv.left > u) continue;
          HallWord w;
          w.left = u;
          w.right = v;
          w.degree = wu.degree + wv.degree;
          w.length = len;
          w.foliage = wu.foliage;
          w.foliage.insert(w.foliage.end(), wv.foliage.begin(), wv.foliage.end());
          fresh.push_back(w);
        }
      }
      std::sort(fresh.begin(), fresh.end(), [](const HallWord& a, const HallWord& b) {
        if (a.foliage != b.foliage) return a.foliage < b.foliage;
        return std::pair(a.left, a.right) < std::pair(b.left, b.right);
      });
      basis_.insert(basis_.end(), fresh.begin(), fresh.end());
    }
  }

  void expand_basis() {
    for (const auto& w : basis_) {
      Tensor<Rational> t;
      if (w.is_generator()) {
        t.emplace(TensorWord{w.generator}, Rational(1));
      } else {
        const auto& a = expansions_[static_cast<std::size_t>(w.left)];
        const auto& b = expansions_[static_cast<std::size_t>(w.right)];
        for (const auto& [wa, ca] : a)
          for (const auto& [wb, cb] : b) {
            TensorWord ab = wa, ba = wb;
            ab.insert(ab.end(), wb.begin(), wb.end());
            ba.insert(ba.end(), wa.begin(), wa.end());
            detail::tensor_add(t, ab, Rational(ca * cb));
            detail::tensor_add(t, ba, Rational(-ca * cb));
          }
      }
      expansions_.push_back(std::move(t));
    }
  }

  void build_decompositions() {
    std::map<std::vector<int>, std::vector<int>> by_md;
    for (std::size_t i = 0; i < basis_.size(); ++i) by_md[multidegree(basis_[i].foliage)].push_back(static_cast<int>(i));
    for (const auto& [md, hall] : by_md) {
      std::map<TensorWord, std::size_t> rows;
      for (int h : hall)
        for (const auto& kv : expansions_[static_cast<std::size_t>(h)]) rows.emplace(kv.first, 0);
      std::vector<TensorWord> words;
      for (auto& [w, idx] : rows) {
        idx = words.size();
        words.push_back(w);
      }
      Matrix<Rational> a(words.size(), std::vector<Rational>(hall.size(), Rational(0)));
      for (std::size_t j = 0; j < hall.size(); ++j)
        for (const auto& [w, c] : expansions_[static_cast<std::size_t>(hall[j])]) a[rows[w]][j] = c;
      RankResult rr = rank_fraction_free(a);
      if (rr.rank != static_cast<int>(hall.size())) throw std::logic_error("Hall word expansions are dependent");
      Decomposition dc;
      dc.hall = hall;
      Matrix<Rational> sq;
      for (std::size_t r : rr.pivot_rows) {
        dc.pivot_words.push_back(words[r]);
        sq.push_back(a[r]);
      }
      // sq is square with rows = pivot words; the coefficient map is its inverse.
      dc.inverse = invert_matrix<Rational>(sq);
      decomp_.emplace(md, std::move(dc));
    }
  }

  void build_structure_constants() {
    std::size_t d = basis_.size();
    consts_.assign(d, std::vector<SparseVector>(d));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        if (i == j || basis_[i].degree + basis_[j].degree > m_) continue;
        if (j < i) {
          for (const auto& [k, c] : consts_[j][i]) consts_[i][j].emplace_back(k, -c);
          continue;
        }
        Tensor<Rational> t = tensor_mul(expansions_[i], expansions_[j]);
        for (const auto& [w, c] : tensor_mul(expansions_[j], expansions_[i])) detail::tensor_add(t, w, Rational(-c));
        auto x = to_hall<Rational>(t, Rational(0));
        for (std::size_t k = 0; k < d; ++k)
          if (sgn(x[k]) != 0) consts_[i][j].emplace_back(static_cast<int>(k), x[k]);
      }
  }

  int p_ = 0;
  int m_ = 0;
  std::vector<int> degrees_;
  std::vector<HallWord> basis_;
  std::vector<int> gen_index_;
  std::vector<Tensor<Rational>> expansions_;
  std::map<std::vector<int>, Decomposition> decomp_;
  std::vector<std::vector<SparseVector>> consts_;
};

inline NilpotentAlgebra build_free_nilpotent(int p, std::vector<int> degrees, int m) {
  return NilpotentAlgebra::build(p, std::move(degrees), m);
}

namespace detail {

template <class C>
void require_no_constant(const std::vector<C>&) {}
template <class S>
void require_no_constant(const std::vector<Jet<S>>& x) {
  for (const auto& c : x)
    if (!ScalarTraits<S>::is_zero(c.constant_term())) throw std::invalid_argument("bch: input has a constant term");
}

// sum_{k>=1} a^k / k!
template <class C>
Tensor<C> exp_minus_one(const NilpotentAlgebra& g, const Tensor<C>& a) {
  Tensor<C> sum = a, power = a;
  for (int k = 2; !power.empty(); ++k) {
    power = g.tensor_mul(power, a);
    Rational inv(1, k);
    inv.canonicalize();
    for (auto& [w, c] : power) c *= inv;
    for (const auto& [w, c] : power) tensor_add(sum, w, c);
  }
  return sum;
}

}  // namespace detail

// log(exp(A) exp(B)) in Hall coordinates. C is Rational or a rational jet (polynomial coefficients).
template <class C>
std::vector<C> bch(const NilpotentAlgebra& g, const std::vector<C>& a, const std::vector<C>& b) {
  g.check_dim(a.size());
  g.check_dim(b.size());
  detail::require_no_constant(a);
  detail::require_no_constant(b);
  Tensor<C> ea = detail::exp_minus_one(g, g.to_tensor(a));
  Tensor<C> eb = detail::exp_minus_one(g, g.to_tensor(b));
  Tensor<C> z = ea;
  for (const auto& [w, c] : eb) detail::tensor_add(z, w, c);
  for (const auto& [w, c] : g.tensor_mul(ea, eb)) detail::tensor_add(z, w, c);
  Tensor<C> log = z, power = z;
  for (int k = 2; !power.empty(); ++k) {
    power = g.tensor_mul(power, z);
    Rational f((k % 2 == 0) ? -1 : 1, k);
    f.canonicalize();
    for (const auto& [w, c] : power) detail::tensor_add(log, w, C(c * f));
  }
  C zero = a.front() * Rational(0);
  return g.to_hall(log, zero);
}

// Homogeneous component of weighted degree k of a Hall-coordinate vector.
template <class C>
std::vector<C> degree_part(const NilpotentAlgebra& g, const std::vector<C>& x, int k) {
  g.check_dim(x.size());
  std::vector<C> r = x;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (g.degree(static_cast<int>(i)) != k) r[i] = r[i] * Rational(0);
  return r;
}

// delta_r(u)_I = r^{|I|} u_I.
template <class S>
std::vector<S> dilate(const NilpotentAlgebra& g, const std::vector<S>& u, const S& r) {
  g.check_dim(u.size());
  if (!(r > 0)) throw std::invalid_argument("dilation factor must be positive");
  std::vector<S> out(u);
  for (std::size_t i = 0; i < u.size(); ++i)
    for (int e = 0; e < g.degree(static_cast<int>(i)); ++e) out[i] *= r;
  return out;
}

// rho(u) = sum_I |u_I|^{1/|I|}.
template <class S>
double norm_rho(const NilpotentAlgebra& g, const std::vector<S>& u) {
  g.check_dim(u.size());
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i)
    s += std::pow(std::fabs(to_double(u[i])), 1.0 / g.degree(static_cast<int>(i)));
  return s;
}

// Group law in exponential coordinates of the first kind.
//
// multiply(u, v) returns the coordinates of exp(v.Y) exp(u.Y); its components are the polynomials
// P_I(u, v) in the variables u1..ud, v1..vd.
class GroupLaw {
 public:
  explicit GroupLaw(NilpotentAlgebra alg) : alg_(std::move(alg)) {
    int d = alg_.dim();
    std::vector<std::string> names = numbered_names("u", static_cast<std::size_t>(d));
    for (const auto& s : numbered_names("v", static_cast<std::size_t>(d))) names.push_back(s);
    ctx_ = make_context(names, std::max(alg_.m(), 1));
    std::vector<RJet> u, v;
    for (int i = 0; i < d; ++i) {
      u.push_back(RJet::variable(ctx_, static_cast<std::size_t>(i)));
      v.push_back(RJet::variable(ctx_, static_cast<std::size_t>(d + i)));
    }
    poly_ = bch(alg_, v, u);
    weights_.clear();
    for (int i = 0; i < 2 * d; ++i) weights_.push_back(Weight(alg_.degree(i % d)));
  }

  const NilpotentAlgebra& algebra() const { return alg_; }
  const ContextPtr& context() const { return ctx_; }
  const std::vector<RJet>& polynomials() const { return poly_; }
  // Variable weights |J| for u_J and v_J.
  const std::vector<Weight>& variable_weights() const { return weights_; }

  template <class S>
  std::vector<S> multiply(const std::vector<S>& u, const std::vector<S>& v) const {
    alg_.check_dim(u.size());
    alg_.check_dim(v.size());
    std::vector<S> args(u);
    args.insert(args.end(), v.begin(), v.end());
    std::vector<S> w;
    for (const auto& p : poly_) w.push_back(p.template evaluate<S>(args));
    return w;
  }

  template <class S>
  std::vector<S> inverse(const std::vector<S>& u) const {
    alg_.check_dim(u.size());
    std::vector<S> r(u);
    for (auto& x : r) x = -x;
    return r;
  }

  // d(x, y) = rho(x^{-1} y).
  double quasi_distance(const std::vector<double>& x, const std::vector<double>& y) const {
    return norm_rho(alg_, multiply(y, inverse(x)));
  }

  // Constant c with rho(exp(a)exp(b)) <= c (rho(a) + rho(b)). If s = rho(a) + rho(b) then
  // |u_J| <= s^{|J|} for both factors, so |P_I| <= L_I s^{|I|} with L_I the sum of |coefficients|
  // of P_I, and c = sum_I L_I^{1/|I|}.
  double triangle_constant() const {
    double c = 0;
    for (std::size_t i = 0; i < poly_.size(); ++i) {
      double l = 0;
      for (const auto& [k, coef] : poly_[i].terms()) l += std::fabs(coef.get_d());
      c += std::pow(l, 1.0 / alg_.degree(static_cast<int>(i)));
    }
    return c;
  }

 private:
  NilpotentAlgebra alg_;
  ContextPtr ctx_;
  std::vector<RJet> poly_;
  std::vector<Weight> weights_;
};

inline std::vector<Rational> group_multiply(const GroupLaw& law, const std::vector<Rational>& u,
                                            const std::vector<Rational>& v) {
  return law.multiply(u, v);
}

// Monte Carlo Lebesgue volume of {rho(u) < r}. The ball lies in the box |u_I| <= r^{|I|}, which is
// sampled uniformly.
inline double ball_volume_mc(const NilpotentAlgebra& g, double r, std::size_t samples, std::uint64_t seed) {
  if (!(r > 0)) throw std::invalid_argument("radius must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<double> half;
  double box = 1;
  for (int i = 0; i < g.dim(); ++i) {
    half.push_back(std::pow(r, g.degree(i)));
    box *= 2 * half.back();
  }
  std::vector<double> u(half.size());
  std::size_t hits = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = half[i] * unit(rng);
    if (norm_rho(g, u) < r) ++hits;
  }
  return box * static_cast<double>(hits) / static_cast<double>(samples);
}

}  // namespace curvlab
