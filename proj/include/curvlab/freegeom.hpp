#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "curvlab/curvature.hpp"
#include "curvlab/jet.hpp"
#include "curvlab/linalg.hpp"
#include "curvlab/nilpotent.hpp"
#include "curvlab/vfield.hpp"

namespace curvlab {

struct LiftError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ChartError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fields X_I for every Hall basis element, built from the generators by bracketing.
inline std::vector<RField> hall_fields(const NilpotentAlgebra& alg, const std::vector<RField>& gens) {
  if (static_cast<int>(gens.size()) != alg.p()) throw LiftError("generator count does not match the algebra");
  std::vector<RField> out;
  for (int i = 0; i < alg.dim(); ++i) {
    const auto& w = alg.word(i);
    if (w.is_generator())
      out.push_back(gens[static_cast<std::size_t>(w.generator)]);
    else
      out.push_back(bracket(out[static_cast<std::size_t>(w.left)], out[static_cast<std::size_t>(w.right)]));
  }
  return out;
}

// Copies terms position by position into a context with the same number of variables.
inline RJet rename_jet(const RJet& j, const ContextPtr& target) {
  if (j.nvars() != target->nvars()) throw JetError("rename: arity mismatch");
  RJet r(target);
  r.limit_valid_order(j.valid_order());
  for (const auto& [k, c] : j.terms()) r.add_term(k, c);
  return r;
}

// Left-invariant fields Y_I(y) = d/ds (y . exp(s Y_I)) at s = 0 in exponential coordinates y1..yd.
inline std::vector<RField> left_invariant_fields(const GroupLaw& law, const ContextPtr& yctx) {
  int d = law.algebra().dim();
  if (static_cast<int>(yctx->nvars()) != d) throw LiftError("coordinate context has the wrong dimension");
  std::vector<std::size_t> uvars;
  for (int i = 0; i < d; ++i) uvars.push_back(static_cast<std::size_t>(i));
  auto vctx = make_context(numbered_names("v", static_cast<std::size_t>(d)), yctx->order);
  std::vector<RField> out;
  for (int i = 0; i < d; ++i) {
    std::vector<RJet> comps;
    for (const auto& p : law.polynomials())
    {
      // The group law is polynomial, so its partials are exact at any order.
      auto s = slice(p, uvars, MultiIndex::unit(static_cast<std::size_t>(d), static_cast<std::size_t>(i)), vctx);
      RJet c(yctx);
      for (const auto& [a, v] : s.terms()) c.add_term(a, v);
      comps.push_back(std::move(c));
    }
    out.emplace_back(yctx, std::move(comps));
  }
  return out;
}

inline Matrix<RJet> jet_matmul(const Matrix<RJet>& a, const Matrix<RJet>& b) {
  Matrix<RJet> c;
  for (const auto& row : a) {
    std::vector<RJet> out;
    for (std::size_t j = 0; j < b.front().size(); ++j) {
      RJet s(row.front().context());
      for (std::size_t k = 0; k < row.size(); ++k) s += row[k] * b[k][j];
      out.push_back(std::move(s));
    }
    c.push_back(std::move(out));
  }
  return c;
}

// Inverse of a square jet matrix with invertible constant part.
inline Matrix<RJet> jet_matrix_inverse(const Matrix<RJet>& a) {
  std::size_t n = a.size();
  const auto& ctx = a[0][0].context();
  Matrix<Rational> a0(n, std::vector<Rational>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a0[i][j] = a[i][j].constant_term();
  Matrix<Rational> a0inv;
  try {
    a0inv = invert_matrix(a0);
  } catch (const JetError&) {
    throw LiftError("jet matrix is singular at the base point");
  }
  Matrix<RJet> ainv0(n, std::vector<RJet>(n, RJet(ctx)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) ainv0[i][j] = RJet::constant(ctx, a0inv[i][j]);
  // A = A0 (1 + B) with B = A0^{-1} (A - A0) nilpotent modulo the order.
  Matrix<RJet> nil = a;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) nil[i][j] -= RJet::constant(ctx, a0[i][j]);
  Matrix<RJet> b = jet_matmul(ainv0, nil);
  for (auto& row : b)
    for (auto& x : row) x = -x;
  Matrix<RJet> total = ainv0, term = ainv0;
  for (int k = 1; k <= ctx->order; ++k) {
    term = jet_matmul(b, term);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) total[i][j] += term[i][j];
  }
  return total;
}

// Lifted frame X~_i on R^d (coordinates y1..yd on the graph manifold) with pi_* X~_i = X_i.
struct FreeFrame {
  NilpotentAlgebra algebra;
  int n = 0, d = 0, m = 0;
  std::vector<int> degrees;
  ContextPtr xctx, yctx;
  std::vector<RField> fields;          // X_i on R^n
  std::vector<RField> basic_fields;    // X_I on R^n
  std::vector<std::size_t> pivots;     // basic I with {X_I(x0)} a basis; the complement S is spanned by e_I, I a pivot
  std::vector<RField> group_fields;    // left-invariant Y_I on N
  JetMap<Rational> projection;         // pi(y) = exp(sum y_I X_I)(x0), displacement
  std::vector<RField> lifted;          // X~_i
  std::vector<RField> lifted_basic;    // X~_I
  JetMap<Rational> product_chart;      // y -> (pi(y), y_I for I not a pivot)
  std::vector<RField> lifted_product;  // X~_i in the (x, z) coordinates of the product chart
};

// order: jet order of the lifted fields; defaults to m + 1.
inline FreeFrame lift_free(const std::vector<RField>& xs, const std::vector<int>& degrees, int m, int order = -1) {
  if (xs.empty()) throw LiftError("no vector fields to lift");
  if (xs.size() != degrees.size()) throw LiftError("one degree per field is required");
  if (order < 0) order = m + 1;
  FreeFrame f;
  f.n = static_cast<int>(xs.front().dim());
  f.m = m;
  f.degrees = degrees;
  f.fields = xs;
  f.xctx = xs.front().context();
  try {
    f.algebra = build_free_nilpotent(static_cast<int>(xs.size()), degrees, m);
  } catch (const std::invalid_argument& e) {
    throw LiftError(e.what());
  }
  f.d = f.algebra.dim();
  f.basic_fields = hall_fields(f.algebra, xs);
  for (const auto& b : f.basic_fields)
    if (b.valid_order() < order)
      throw LiftError("input fields are not valid to the order the lift needs (" + std::to_string(order) +
                      " after brackets)");
  Matrix<Rational> chosen;
  for (int i = 0; i < f.d; ++i) {
    auto trial = chosen;
    trial.push_back(f.basic_fields[static_cast<std::size_t>(i)].at_base());
    if (matrix_rank(trial).rank > static_cast<int>(chosen.size())) {
      chosen = std::move(trial);
      f.pivots.push_back(static_cast<std::size_t>(i));
    }
  }
  if (static_cast<int>(f.pivots.size()) < f.n) throw LiftError("the commutators of degree <= m do not span at the base point");

  f.yctx = make_context(numbered_names("y", static_cast<std::size_t>(f.d)), order);
  GroupLaw law(f.algebra);
  f.group_fields = left_invariant_fields(law, f.yctx);

  // pi(y) = exp(sum y_I X_I)(x0)
  auto names = f.xctx->names;
  for (const auto& s : f.yctx->names) names.push_back(s);
  auto big = make_context(names, order);
  std::vector<std::size_t> space;
  for (int j = 0; j < f.n; ++j) space.push_back(static_cast<std::size_t>(j));
  std::vector<RJet> vc(static_cast<std::size_t>(f.n), RJet(big));
  for (int i = 0; i < f.d; ++i) {
    RJet yi = RJet::variable(big, static_cast<std::size_t>(f.n + i));
    for (int j = 0; j < f.n; ++j)
      vc[static_cast<std::size_t>(j)] += yi * embed(f.basic_fields[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], big);
  }
  auto flow = flow_exp(RField(big, space, vc));
  for (int j = 0; j < f.n; ++j)
    f.projection.push_back(slice(flow[static_cast<std::size_t>(j)], space, MultiIndex(static_cast<std::size_t>(f.n)), f.yctx));

  // X~_i = Y_i - w_i with w_i in S and (Y_i - w_i) tangent to the graph: D pi (Y_i - w_i) = X_i(pi).
  Matrix<RJet> dpi, dpi_s;
  for (const auto& e : f.projection) {
    std::vector<RJet> row, row_s;
    for (int k = 0; k < f.d; ++k) row.push_back(e.partial(static_cast<std::size_t>(k)));
    for (auto p : f.pivots) row_s.push_back(row[p]);
    dpi.push_back(std::move(row));
    dpi_s.push_back(std::move(row_s));
  }
  auto dpi_s_inv = jet_matrix_inverse(dpi_s);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const RField& y = f.group_fields[static_cast<std::size_t>(f.algebra.generator_index(static_cast<int>(i)))];
    auto x_at_pi = compose(xs[i].components(), f.projection);
    Matrix<RJet> rhs;
    for (int j = 0; j < f.n; ++j) {
      RJet s(f.yctx);
      for (int k = 0; k < f.d; ++k) s += dpi[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] * y[static_cast<std::size_t>(k)];
      s -= x_at_pi[static_cast<std::size_t>(j)];
      rhs.push_back({s});
    }
    auto w = jet_matmul(dpi_s_inv, rhs);
    std::vector<RJet> comps = y.components();
    for (std::size_t r = 0; r < f.pivots.size(); ++r) comps[f.pivots[r]] -= w[r][0];
    f.lifted.emplace_back(f.yctx, std::move(comps));
  }
  f.lifted_basic = hall_fields(f.algebra, f.lifted);

  f.product_chart = f.projection;
  std::vector<bool> is_pivot(static_cast<std::size_t>(f.d), false);
  for (auto p : f.pivots) is_pivot[p] = true;
  for (int i = 0; i < f.d; ++i)
    if (!is_pivot[static_cast<std::size_t>(i)]) f.product_chart.push_back(RJet::variable(f.yctx, static_cast<std::size_t>(i)));
  auto xz_names = f.xctx->names;
  for (const auto& s : numbered_names("z", static_cast<std::size_t>(f.d - f.n))) xz_names.push_back(s);
  auto xzctx = make_context(xz_names, order);
  for (const auto& l : f.lifted) {
    auto pf = pushforward(f.product_chart, l);
    std::vector<RJet> comps;
    for (const auto& c : pf.components()) comps.push_back(rename_jet(c, xzctx));
    f.lifted_product.emplace_back(xzctx, std::move(comps));
  }
  return f;
}

// Coordinates u = Theta_x(y) with y = exp(sum u_I X_I)(x) for d fields spanning at the base.
// The forward map is an exact jet; numeric queries refine the jet inverse by Newton steps on it.
class ThetaChart {
 public:
  ThetaChart(const std::vector<RField>& fields, std::vector<int> weights, int order, double radius = 0.5)
      : d_(static_cast<int>(fields.size())), weights_(std::move(weights)), radius_(radius) {
    if (fields.empty()) throw ChartError("no fields");
    if (static_cast<int>(weights_.size()) != d_) throw ChartError("one weight per field is required");
    if (static_cast<int>(fields.front().dim()) != d_) throw ChartError("the chart needs exactly dim fields");
    Matrix<Rational> base;
    for (const auto& f : fields) base.push_back(f.at_base());
    if (matrix_rank(base).rank != d_) throw ChartError("fields do not span at the base point");
    auto names = numbered_names("x", static_cast<std::size_t>(d_));
    for (const auto& s : numbered_names("u", static_cast<std::size_t>(d_))) names.push_back(s);
    ctx_ = make_context(names, order);
    std::vector<std::size_t> space;
    for (int j = 0; j < d_; ++j) space.push_back(static_cast<std::size_t>(j));
    std::vector<RJet> vc(static_cast<std::size_t>(d_), RJet(ctx_));
    auto fx = make_context(numbered_names("x", static_cast<std::size_t>(d_)), fields.front().context()->order);
    for (int i = 0; i < d_; ++i) {
      RJet ui = RJet::variable(ctx_, static_cast<std::size_t>(d_ + i));
      for (int j = 0; j < d_; ++j)
        vc[static_cast<std::size_t>(j)] += ui * embed(rename_jet(fields[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], fx), ctx_);
    }
    forward_ = flow_exp(RField(ctx_, space, vc));
    JetMap<Rational> full;
    for (int i = 0; i < d_; ++i) full.push_back(RJet::variable(ctx_, static_cast<std::size_t>(i)));
    for (const auto& c : forward_) full.push_back(c);
    auto inv = invert_map(full);
    theta_.assign(inv.begin() + d_, inv.end());
    for (const auto& c : forward_) {
      std::vector<RJet> row;
      for (int i = 0; i < d_; ++i) row.push_back(c.partial(static_cast<std::size_t>(d_ + i)));
      dforward_.push_back(std::move(row));
    }
  }

  int dim() const { return d_; }
  const std::vector<int>& weights() const { return weights_; }
  double radius() const { return radius_; }
  const ContextPtr& context() const { return ctx_; }
  // exp(sum u_I X_I)(x) as jets in (x, u).
  const JetMap<Rational>& forward_jets() const { return forward_; }
  // Theta as jets in (x, y), reusing the variable slots of (x, u).
  const JetMap<Rational>& theta_jets() const { return theta_; }

  std::vector<double> forward(const std::vector<double>& x, const std::vector<double>& u) const {
    auto args = concat(x, u);
    std::vector<double> out;
    for (const auto& c : forward_) out.push_back(c.evaluate<double>(args));
    return out;
  }

  std::vector<double> theta(const std::vector<double>& x, const std::vector<double>& y) const {
    check_in_chart(x);
    check_in_chart(y);
    auto args = concat(x, y);
    std::vector<double> u;
    for (const auto& c : theta_) u.push_back(c.evaluate<double>(args));
    for (int it = 0; it < 50; ++it) {
      auto fu = forward(x, u);
      double err = 0;
      std::vector<double> r(static_cast<std::size_t>(d_));
      for (int j = 0; j < d_; ++j) {
        r[static_cast<std::size_t>(j)] = y[static_cast<std::size_t>(j)] - fu[static_cast<std::size_t>(j)];
        err = std::max(err, std::fabs(r[static_cast<std::size_t>(j)]));
      }
      if (err < 1e-14) return u;
      auto a = concat(x, u);
      Matrix<double> jac(static_cast<std::size_t>(d_), std::vector<double>(static_cast<std::size_t>(d_)));
      for (int j = 0; j < d_; ++j)
        for (int i = 0; i < d_; ++i)
          jac[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = dforward_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)].evaluate<double>(a);
      Matrix<double> inv;
      try {
        inv = invert_matrix(jac);
      } catch (const JetError&) {
        throw ChartError("singular chart Jacobian");
      }
      for (int i = 0; i < d_; ++i)
        for (int j = 0; j < d_; ++j) u[static_cast<std::size_t>(i)] += inv[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(j)];
    }
    throw ChartError("Newton iteration for the chart did not converge");
  }

  double rho(const std::vector<double>& u) const {
    double s = 0;
    for (int i = 0; i < d_; ++i) s += std::pow(std::fabs(u[static_cast<std::size_t>(i)]), 1.0 / weights_[static_cast<std::size_t>(i)]);
    return s;
  }
  double distance(const std::vector<double>& x, const std::vector<double>& y) const { return rho(theta(x, y)); }

  std::vector<double> dilate(const std::vector<double>& x, const std::vector<double>& y, double r) const {
    if (r <= 0) throw std::invalid_argument("dilation factor must be positive");
    auto u = theta(x, y);
    for (int i = 0; i < d_; ++i) u[static_cast<std::size_t>(i)] *= std::pow(r, weights_[static_cast<std::size_t>(i)]);
    return forward(x, u);
  }

  // delta_r^x(y) as jets in (x, y) for rational r.
  JetMap<Rational> dilation_jets(const Rational& r) const {
    JetMap<Rational> inner;
    for (int i = 0; i < d_; ++i) inner.push_back(RJet::variable(ctx_, static_cast<std::size_t>(i)));
    for (int i = 0; i < d_; ++i) inner.push_back(theta_[static_cast<std::size_t>(i)] * rpow(r, weights_[static_cast<std::size_t>(i)]));
    return compose(forward_, inner);
  }

 private:
  static std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> r(a);
    r.insert(r.end(), b.begin(), b.end());
    return r;
  }
  void check_in_chart(const std::vector<double>& p) const {
    if (static_cast<int>(p.size()) != d_) throw ChartError("point has the wrong dimension");
    for (double v : p)
      if (!(std::fabs(v) <= radius_)) throw ChartError("point outside the chart radius");
  }

  int d_;
  std::vector<int> weights_;
  double radius_;
  ContextPtr ctx_;
  JetMap<Rational> forward_, theta_;
  std::vector<std::vector<RJet>> dforward_;
};

inline ThetaChart chart_from_frame(const FreeFrame& f, int order = -1, double radius = 0.5) {
  std::vector<int> w;
  for (int i = 0; i < f.d; ++i) w.push_back(f.algebra.degree(i));
  return ThetaChart(f.lifted_basic, w, order < 0 ? f.yctx->order : order, radius);
}

inline ThetaChart group_chart(const NilpotentAlgebra& alg, int order, double radius = 0.5) {
  GroupLaw law(alg);
  auto yctx = make_context(numbered_names("y", static_cast<std::size_t>(alg.dim())), order);
  return ThetaChart(left_invariant_fields(law, yctx), alg.degrees(), order, radius);
}

// Family exp(sum_{|alpha| <= m} t^alpha X~_alpha / alpha!)(y) in the lifted space, with X_alpha the
// exponential representation of gamma.
struct LiftedFamily {
  FreeFrame frame;
  std::vector<MultiIndex> alphas;
  GammaFamily family;
};

inline LiftedFamily lift_family(const GammaFamily& g, int m, int order = -1) {
  if (order < 0) order = m + 1;
  auto rep = exp_representation(g.at_least_order(order + 2 * m + 1), m);
  std::vector<int> deg;
  for (const auto& a : rep.alphas) deg.push_back(a.order());
  LiftedFamily lf{lift_free(rep.generators(), deg, m, order), rep.alphas, GammaFamily()};
  int d = lf.frame.d, k = g.k();
  auto ctx = make_context(family_names(d, k), order);
  auto sctx = space_context(d, order);
  std::vector<RJet> comps(static_cast<std::size_t>(d), RJet(ctx));
  for (std::size_t i = 0; i < rep.alphas.size(); ++i) {
    const auto& a = rep.alphas[i];
    MultiIndex full(static_cast<std::size_t>(d + k));
    for (int j = 0; j < k; ++j) full.exps[static_cast<std::size_t>(d + j)] = a.exps[static_cast<std::size_t>(j)];
    RJet ta = RJet::monomial(ctx, full, Rational(1) / detail::multi_factorial_q(a));
    for (int j = 0; j < d; ++j)
      comps[static_cast<std::size_t>(j)] += embed(rename_jet(lf.frame.lifted[i][static_cast<std::size_t>(j)], sctx), ctx) * ta;
  }
  std::vector<std::size_t> space;
  for (int i = 0; i < d; ++i) space.push_back(static_cast<std::size_t>(i));
  lf.family = GammaFamily::from_jets(d, k, flow_exp(RField(ctx, space, comps)),
                                     std::vector<Rational>(static_cast<std::size_t>(d), Rational(0)));
  return lf;
}

inline std::vector<std::string> gamma_tilde_names(int n, int factors, int k) {
  auto names = numbered_names("x", static_cast<std::size_t>(n));
  for (const auto& s : numbered_names("tau", static_cast<std::size_t>(factors * k))) names.push_back(s);
  return names;
}

// gamma_{t^{2N}}^{-1} o gamma_{t^{2N-1}} o ... o gamma_{t^2}^{-1} o gamma_{t^1}(x), jets in x1..xn, tau1..tau_{2Nk}.
inline JetMap<Rational> gamma_tilde(const GammaFamily& g, int N) {
  if (N < 1) throw CurvatureError("gamma_tilde needs N >= 1");
  auto inv = gamma_inverse(g);
  int n = g.n(), k = g.k();
  auto ctx = make_context(gamma_tilde_names(n, 2 * N, k), g.order());
  JetMap<Rational> cur;
  for (int i = 0; i < n; ++i) cur.push_back(RJet::variable(ctx, static_cast<std::size_t>(i)));
  for (int step = 0; step < 2 * N; ++step) {
    JetMap<Rational> inner = cur;
    for (int j = 0; j < k; ++j) inner.push_back(RJet::variable(ctx, static_cast<std::size_t>(n + step * k + j)));
    cur = compose(step % 2 == 0 ? g.components() : inv.components(), inner);
  }
  return cur;
}

// delta_{2^j}^x(Gamma~(x, 2^{-j} tau)) using the local dilations of the chart.
inline JetMap<Rational> gamma_tilde_scaled(const ThetaChart& chart, const GammaFamily& g, int N, int j) {
  if (chart.dim() != g.n()) throw ChartError("chart and family dimensions differ");
  auto gt = gamma_tilde(g, N);
  const auto& ctx = gt.front().context();
  int n = g.n();
  Rational s = Rational(1) / rpow(Rational(2), j);
  JetMap<Rational> scaled;
  for (const auto& c : gt) {
    RJet r(ctx);
    r.limit_valid_order(c.valid_order());
    for (const auto& [a, v] : c.terms()) {
      int tdeg = 0;
      for (std::size_t i = static_cast<std::size_t>(n); i < a.size(); ++i) tdeg += a.exps[i];
      r.add_term(a, v * rpow(s, tdeg));
    }
    scaled.push_back(std::move(r));
  }
  auto dil = chart.dilation_jets(rpow(Rational(2), j));
  JetMap<Rational> inner;
  for (int i = 0; i < n; ++i) inner.push_back(RJet::variable(ctx, static_cast<std::size_t>(i)));
  for (const auto& c : scaled) inner.push_back(c);
  return compose(dil, inner);
}

// Lowest (|beta|, beta, xi) with d_tau^beta J_xi(0, 0) != 0 for Gamma~, |beta| <= upto.
inline std::optional<JacobianWitness> gamma_tilde_witness(const GammaFamily& g, int N, int upto) {
  auto gt = gamma_tilde(g, N);
  int n = g.n();
  auto tctx = make_context(tau_names(2 * N, g.k()), gt.front().order());
  std::vector<std::size_t> xvars;
  for (int i = 0; i < n; ++i) xvars.push_back(static_cast<std::size_t>(i));
  JetMap<Rational> at0;
  for (const auto& c : gt) at0.push_back(slice(c, xvars, MultiIndex(static_cast<std::size_t>(n)), tctx));
  auto w = detail::lowest_witness(at0, 2 * N, n, g.k(), upto);
  if (w) w->r = 2 * N;
  return w;
}

struct UniformJacobianRow {
  int j = 0;
  double min_abs = 0, max_abs = 0;
  int samples = 0;
};

// min / max over sampled (x, tau) in [-box, box] of |d_tau^beta J_xi^{(j)}(x, tau)|; xi is 1-based over tau.
inline std::vector<UniformJacobianRow> uniform_jacobian_check(const ThetaChart& chart, const GammaFamily& g, int N,
                                                              const std::vector<int>& js, const std::vector<int>& xi,
                                                              const MultiIndex& beta, int samples, std::uint64_t seed,
                                                              double box = 0.1) {
  int n = g.n();
  if (static_cast<int>(xi.size()) != n) throw CurvatureError("xi must select n parameters");
  std::vector<UniformJacobianRow> rows;
  for (int j : js) {
    auto gs = gamma_tilde_scaled(chart, g, N, j);
    std::vector<std::vector<RJet>> m;
    for (const auto& c : gs) {
      std::vector<RJet> row;
      for (int col : xi) row.push_back(c.partial(static_cast<std::size_t>(n + col - 1)));
      m.push_back(std::move(row));
    }
    RJet jac = jet_determinant(m);
    for (std::size_t i = 0; i < beta.size(); ++i)
      for (int e = 0; e < beta.exps[i]; ++e) jac = jac.partial(static_cast<std::size_t>(n) + i);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-box, box);
    UniformJacobianRow row;
    row.j = j;
    row.min_abs = INFINITY;
    for (int s = 0; s < samples; ++s) {
      std::vector<double> pt;
      for (std::size_t i = 0; i < jac.nvars(); ++i) pt.push_back(unif(rng));
      double v = std::fabs(jac.evaluate<double>(pt));
      row.min_abs = std::min(row.min_abs, v);
      row.max_abs = std::max(row.max_abs, v);
    }
    row.samples = samples;
    rows.push_back(row);
  }
  return rows;
}

// Exact certificate for a lifted frame: D pi X~_i = X_i o pi up to the common valid order,
// X~_I(0) = e_I (so rank d), and [X~_I, X~_J](0) = sum_K c^K_IJ e_K whenever |I| + |J| <= m.
struct LiftCheck {
  bool projects = true;
  int checked_order = -1;  // least order up to which the projection identity was compared
  bool unit_at_base = true;
  int rank = 0;
  bool constants_match = true;
  std::size_t brackets_checked = 0;
  bool ok() const { return projects && unit_at_base && constants_match; }
};

inline LiftCheck verify_lift(const FreeFrame& f) {
  LiftCheck c;
  for (std::size_t i = 0; i < f.lifted.size(); ++i) {
    auto rhs = compose(f.fields[i].components(), f.projection);
    for (int j = 0; j < f.n; ++j) {
      const auto& pj = f.projection[static_cast<std::size_t>(j)];
      RJet lhs(f.yctx);
      for (int k = 0; k < f.d; ++k) lhs += pj.partial(static_cast<std::size_t>(k)) * f.lifted[i][static_cast<std::size_t>(k)];
      int upto = std::min(lhs.valid_order(), rhs[static_cast<std::size_t>(j)].valid_order());
      c.checked_order = c.checked_order < 0 ? upto : std::min(c.checked_order, upto);
      if (!lhs.equals_to_order(rhs[static_cast<std::size_t>(j)], upto)) c.projects = false;
    }
  }
  Matrix<Rational> base;
  for (int i = 0; i < f.d; ++i) {
    auto v = f.lifted_basic[static_cast<std::size_t>(i)].at_base();
    for (int k = 0; k < f.d; ++k)
      if (v[static_cast<std::size_t>(k)] != Rational(i == k ? 1 : 0)) c.unit_at_base = false;
    base.push_back(std::move(v));
  }
  c.rank = matrix_rank(base).rank;
  if (c.rank != f.d) c.unit_at_base = false;
  for (int i = 0; i < f.d; ++i)
    for (int j = i + 1; j < f.d; ++j) {
      if (f.algebra.degree(i) + f.algebra.degree(j) > f.m) continue;
      auto b = bracket(f.lifted_basic[static_cast<std::size_t>(i)], f.lifted_basic[static_cast<std::size_t>(j)]).at_base();
      std::vector<Rational> expect(static_cast<std::size_t>(f.d), Rational(0));
      for (const auto& [k, v] : f.algebra.structure_constants(i, j)) expect[static_cast<std::size_t>(k)] = v;
      ++c.brackets_checked;
      if (b != expect) c.constants_match = false;
    }
  return c;
}

}  // namespace curvlab
