#pragma once

#include <fftw3.h>

#include <Eigen/Sparse>
#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "curvlab/freegeom.hpp"

namespace curvlab {

struct OplabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Point = std::vector<double>;

// ---------------------------------------------------------------------------------------------
// Grid

// Periodic box [-side/2, side/2)^n with `points` samples per axis.
struct Grid {
  int n = 1;
  double side = 1;
  int points = 2;

  double spacing() const { return side / points; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int i = 0; i < n; ++i) s *= static_cast<std::size_t>(points);
    return s;
  }
  double coord(int i) const { return -side / 2 + i * spacing(); }
  double cell_volume() const { return std::pow(spacing(), n); }
  // Axis 0 varies slowest.
  std::size_t flat(const std::vector<int>& idx) const {
    std::size_t f = 0;
    for (int a = 0; a < n; ++a) f = f * static_cast<std::size_t>(points) + static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]);
    return f;
  }
  std::vector<int> unflat(std::size_t f) const {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int a = n - 1; a >= 0; --a) {
      idx[static_cast<std::size_t>(a)] = static_cast<int>(f % static_cast<std::size_t>(points));
      f /= static_cast<std::size_t>(points);
    }
    return idx;
  }
  Point point(std::size_t f) const {
    auto idx = unflat(f);
    Point p;
    for (int i : idx) p.push_back(coord(i));
    return p;
  }
  int wrap(long i) const {
    long m = i % points;
    return static_cast<int>(m < 0 ? m + points : m);
  }
};

inline Grid make_grid(int n, double side, int points) {
  if (n < 1) throw OplabError("grid dimension must be positive");
  if (points < 2 || (points & (points - 1)) != 0) throw OplabError("points per axis must be a power of two");
  if (!(side > 0)) throw OplabError("box side must be positive");
  return Grid{n, side, points};
}

using Field = std::vector<double>;

inline Field sample_field(const Grid& g, const std::function<double(const Point&)>& f) {
  Field v(g.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(g.point(i));
  return v;
}

inline double lp_norm(const Grid& g, const Field& f, double p) {
  double s = 0;
  if (std::isinf(p)) {
    for (double v : f) s = std::max(s, std::fabs(v));
    return s;
  }
  for (double v : f) s += std::pow(std::fabs(v), p);
  return std::pow(s * g.cell_volume(), 1 / p);
}

// ---------------------------------------------------------------------------------------------
// Smooth cutoffs

// C-infinity step: 1 on s <= 1, 0 on s >= 2.
inline double smooth_cutoff(double s) {
  s = std::fabs(s);
  if (s <= 1) return 1;
  if (s >= 2) return 0;
  auto f = [](double u) { return u > 0 ? std::exp(-1 / u) : 0.0; };
  double a = f(2 - s), b = f(s - 1);
  return a / (a + b);
}

// eta(s) = chi(s) - chi(2s), supported in 1/2 <= |s| <= 2; sum_{j>=0} eta(2^j s) = 1 on 0 < |s| <= 1.
inline double dyadic_bump(double s) { return smooth_cutoff(s) - smooth_cutoff(2 * s); }

// C-infinity bump supported in |x| < 1.
inline double bump(double r) { return std::fabs(r) < 1 ? std::exp(-1 / (1 - r * r)) : 0.0; }

// ---------------------------------------------------------------------------------------------
// Families in float form

// gamma(x, t) as a numeric map, with its inverse in x when the experiment needs the adjoint form.
struct NumericFamily {
  int n = 1, k = 1;
  std::string name;
  std::function<Point(const Point&, const Point&)> map;
  std::function<Point(const Point&, const Point&)> inverse;
};

inline NumericFamily translation_line() {
  return {1, 1, "x - t", [](const Point& x, const Point& t) { return Point{x[0] - t[0]}; },
          [](const Point& y, const Point& t) { return Point{y[0] + t[0]}; }};
}

inline NumericFamily parabola_family() {
  return {2, 1, "x - (t, t^2)", [](const Point& x, const Point& t) { return Point{x[0] - t[0], x[1] - t[0] * t[0]}; },
          [](const Point& y, const Point& t) { return Point{y[0] + t[0], y[1] + t[0] * t[0]}; }};
}

// Flat family: the lines x2 = const are invariant.
inline NumericFamily flat_line_family() {
  return {2, 1, "(x1 + t, x2)", [](const Point& x, const Point& t) { return Point{x[0] + t[0], x[1]}; },
          [](const Point& y, const Point& t) { return Point{y[0] - t[0], y[1]}; }};
}

inline NumericFamily from_gamma(const GammaFamily& g, const std::string& name = "gamma") {
  if (!g.has_closed_form()) throw OplabError("family has no closed form to evaluate");
  NumericFamily f;
  f.n = g.n();
  f.k = g.k();
  f.name = name;
  f.map = [g](const Point& x, const Point& t) { return g.evaluate<double>(x, t); };
  return f;
}

// ---------------------------------------------------------------------------------------------
// Kernels

struct KernelSpec {
  int k = 1;
  std::string name;
  std::function<double(const Point&)> K;
  double a = 0.5;       // K is truncated smoothly: equal to K on |t| <= a, zero for |t| >= 2a
  bool singular = true; // homogeneous of degree -k; otherwise a smooth nonnegative density

  double cutoff(const Point& t) const { return smooth_cutoff(norm(t) / a); }
  // K_j(t) = K(t) eta(2^j |t| / a), supported in a 2^{-j} [1/2, 2].
  double piece(const Point& t, int j) const { return K(t) * dyadic_bump(std::ldexp(norm(t), j) / a); }
  double truncated(const Point& t) const { return K(t) * cutoff(t); }
  static double norm(const Point& t) {
    double s = 0;
    for (double v : t) s += v * v;
    return std::sqrt(s);
  }
};

inline KernelSpec hilbert_kernel(double a = 0.5) {
  return {1, "1/t", [](const Point& t) { return 1 / t[0]; }, a, true};
}

inline KernelSpec riesz_kernel(int k, double a = 0.5) {
  if (k < 2) throw OplabError("Riesz-type kernel needs k >= 2");
  return {k, "t1/|t|^(k+1)", [k](const Point& t) { return t[0] / std::pow(KernelSpec::norm(t), k + 1); }, a, true};
}

inline KernelSpec default_kernel(int k, double a = 0.5) { return k == 1 ? hilbert_kernel(a) : riesz_kernel(k, a); }

// Smooth nonnegative density (the cutoff itself), for nonsingular averaging operators.
inline KernelSpec smooth_density(int k, double a = 0.5) {
  return {k, "smooth bump", [](const Point&) { return 1.0; }, a, false};
}

// Composite Gauss-Legendre nodes and weights on [lo, hi].
inline std::vector<std::pair<double, double>> gauss_legendre(double lo, double hi, int panels) {
  using GL = boost::math::quadrature::gauss<double, 20>;
  std::vector<std::pair<double, double>> out;
  double w = (hi - lo) / panels;
  for (int p = 0; p < panels; ++p) {
    double c = lo + (p + 0.5) * w, h = w / 2;
    for (std::size_t i = 0; i < GL::abscissa().size(); ++i) {
      out.emplace_back(c - h * GL::abscissa()[i], h * GL::weights()[i]);
      out.emplace_back(c + h * GL::abscissa()[i], h * GL::weights()[i]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Mean of K over the unit sphere of R^k.
inline double sphere_mean(const KernelSpec& ks, int samples = 4096) {
  if (ks.k == 1) return (ks.K({1.0}) + ks.K({-1.0})) / 2;
  if (ks.k == 2) {
    double s = 0;
    for (int i = 0; i < samples; ++i) {
      double th = 2 * std::numbers::pi * i / samples;
      s += ks.K({std::cos(th), std::sin(th)});
    }
    return s / samples;
  }
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  double s = 0;
  for (int i = 0; i < samples; ++i) {
    Point t(static_cast<std::size_t>(ks.k));
    for (auto& v : t) v = nd(rng);
    double r = KernelSpec::norm(t);
    for (auto& v : t) v /= r;
    s += ks.K(t);
  }
  return s / samples;
}

// Quadrature in t: nodes with weights already multiplied by the kernel value.
struct TNodes {
  std::vector<Point> t;
  std::vector<double> w;
};

// Radial shell rmin <= |t| <= rmax with nodes no farther apart than `spacing`; t <-> -t paired for k = 1,
// and antipodal for k = 2, so odd kernels cancel exactly on constants.
inline TNodes shell_nodes(const KernelSpec& ks, double rmin, double rmax, double spacing,
                          const std::function<double(const Point&)>& weight) {
  TNodes q;
  int panels = std::max(1, static_cast<int>(std::ceil((rmax - rmin) / (2 * spacing))));
  auto radial = gauss_legendre(rmin, rmax, panels);
  if (ks.k == 1) {
    for (auto [r, w] : radial)
      for (double sgn : {1.0, -1.0}) {
        Point t{sgn * r};
        double v = weight(t);
        if (v == 0) continue;
        q.t.push_back(t);
        q.w.push_back(w * v);
      }
    return q;
  }
  if (ks.k == 2) {
    int m = std::max(8, 2 * static_cast<int>(std::ceil(std::numbers::pi * rmax / spacing)));
    for (auto [r, w] : radial)
      for (int i = 0; i < m; ++i) {
        double th = 2 * std::numbers::pi * i / m;
        Point t{r * std::cos(th), r * std::sin(th)};
        double v = weight(t);
        if (v == 0) continue;
        q.t.push_back(t);
        q.w.push_back(w * r * 2 * std::numbers::pi / m * v);
      }
    return q;
  }
  throw OplabError("quadrature is implemented for k = 1 and k = 2");
}

// Nodes for the dyadic piece K_j.
inline TNodes piece_nodes(const KernelSpec& ks, int j, double spacing) {
  double r = std::ldexp(ks.a, -j);
  return shell_nodes(ks, r / 2, 2 * r, spacing, [&](const Point& t) { return ks.piece(t, j); });
}

// Nodes for the whole truncated kernel; singular kernels keep the principal value by dropping
// |t| < eps symmetrically.
inline TNodes kernel_nodes(const KernelSpec& ks, double spacing, double eps = 0) {
  if (ks.singular && eps <= 0) throw OplabError("principal value needs eps > 0");
  return shell_nodes(ks, ks.singular ? eps : 0, 2 * ks.a, spacing, [&](const Point& t) { return ks.truncated(t); });
}

// ---------------------------------------------------------------------------------------------
// Interpolation

struct Stencil {
  std::vector<std::size_t> idx;
  std::vector<double> w;
};

inline double keys_cubic(double s) {
  s = std::fabs(s);
  if (s < 1) return (1.5 * s - 2.5) * s * s + 1;
  if (s < 2) return ((-0.5 * s + 2.5) * s - 4) * s + 2;
  return 0;
}

// Separable periodic interpolation weights; order 1 (multilinear) or 3 (cubic convolution).
// Points closer than `margin` to the box boundary are rejected.
inline Stencil interp_stencil(const Grid& g, const Point& p, int order, double margin, bool periodic = false) {
  if (order != 1 && order != 3) throw OplabError("interpolation order must be 1 or 3");
  std::vector<std::vector<std::pair<int, double>>> axes(static_cast<std::size_t>(g.n));
  for (int a = 0; a < g.n; ++a) {
    double x = p[static_cast<std::size_t>(a)];
    if (!std::isfinite(x) || (!periodic && !(std::fabs(x) <= g.side / 2 - margin))) throw OplabError("gamma leaves the box");
    double s = (x + g.side / 2) / g.spacing();
    long base = static_cast<long>(std::floor(s));
    double f = s - static_cast<double>(base);
    auto& ax = axes[static_cast<std::size_t>(a)];
    if (order == 1) {
      ax = {{g.wrap(base), 1 - f}, {g.wrap(base + 1), f}};
    } else {
      for (int o = -1; o <= 2; ++o) ax.emplace_back(g.wrap(base + o), keys_cubic(f - o));
    }
  }
  Stencil st;
  std::vector<int> idx(static_cast<std::size_t>(g.n));
  std::function<void(int, double)> rec = [&](int a, double w) {
    if (a == g.n) {
      if (w != 0) {
        st.idx.push_back(g.flat(idx));
        st.w.push_back(w);
      }
      return;
    }
    for (auto [i, wi] : axes[static_cast<std::size_t>(a)]) {
      idx[static_cast<std::size_t>(a)] = i;
      rec(a + 1, w * wi);
    }
  };
  rec(0, 1);
  return st;
}

// ---------------------------------------------------------------------------------------------
// Discrete operators

using SparseOp = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct DiscreteOp {
  std::string what;
  int j = -1;
  Grid grid;
  SparseOp mat;

  Field apply(const Field& f) const {
    Eigen::Map<const Eigen::VectorXd> v(f.data(), static_cast<long>(f.size()));
    Eigen::VectorXd r = mat * v;
    return Field(r.data(), r.data() + r.size());
  }
  Field apply_adjoint(const Field& f) const {
    Eigen::Map<const Eigen::VectorXd> v(f.data(), static_cast<long>(f.size()));
    Eigen::VectorXd r = mat.transpose() * v;
    return Field(r.data(), r.data() + r.size());
  }
  // max over rows of sum |entries| (in the measure h^n of the grid this is sup_x int |kernel(x, y)| dy)
  double max_abs_row_sum() const {
    double best = 0;
    for (long r = 0; r < mat.outerSize(); ++r) {
      double s = 0;
      for (SparseOp::InnerIterator it(mat, r); it; ++it) s += std::fabs(it.value());
      best = std::max(best, s);
    }
    return best;
  }
};

struct OpOptions {
  int interp_order = 3;
  double margin = 0.0;             // keep gamma_t(x) this far inside the box
  double nodes_per_cell = 2.0;     // quadrature nodes per grid spacing along t
  bool periodic = false;           // wrap gamma_t(x) around the box instead of rejecting it
};

using Cutoff = std::function<double(const Point&)>;

// Radial cutoff psi(x) = chi(|x| / r): 1 on |x| <= r, 0 on |x| >= 2r.
inline Cutoff radial_cutoff(double r) {
  return [r](const Point& x) { return smooth_cutoff(KernelSpec::norm(x) / r); };
}

// Rows of (A f)(x) = psi(x) sum_q w_q f(phi(x, t_q)), with phi = gamma (or its inverse for the adjoint form)
// and an extra weight factor c(x, t).
inline SparseOp assemble(const Grid& g, const std::function<Point(const Point&, const Point&)>& phi, const TNodes& q,
                         const Cutoff& psi, const OpOptions& o,
                         const std::function<double(const Point&, const Point&)>& factor = nullptr) {
  std::vector<Eigen::Triplet<double>> trip;
  std::unordered_map<std::size_t, double> row;
  std::vector<std::pair<std::size_t, double>> sorted;
  for (std::size_t r = 0; r < g.size(); ++r) {
    Point x = g.point(r);
    double px = psi(x);
    if (px == 0) continue;
    row.clear();
    for (std::size_t i = 0; i < q.t.size(); ++i) {
      Point y = phi(x, q.t[i]);
      double w = px * q.w[i] * (factor ? factor(x, q.t[i]) : 1.0);
      if (w == 0) continue;
      auto st = interp_stencil(g, y, o.interp_order, o.margin, o.periodic);
      for (std::size_t s = 0; s < st.idx.size(); ++s) row[st.idx[s]] += w * st.w[s];
    }
    sorted.assign(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end());
    for (auto [c, v] : sorted)
      if (v != 0) trip.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
  }
  SparseOp m(static_cast<long>(g.size()), static_cast<long>(g.size()));
  m.setFromTriplets(trip.begin(), trip.end());
  m.makeCompressed();
  return m;
}

inline void check_family(const Grid& g, const NumericFamily& gam, const KernelSpec& ks) {
  if (gam.n != g.n) throw OplabError("family and grid dimensions differ");
  if (gam.k != ks.k) throw OplabError("family and kernel parameter dimensions differ");
}

// T_j f(x) = psi(x) int f(gamma_t(x)) K_j(t) dt.
inline DiscreteOp build_Tj(const Grid& g, const NumericFamily& gam, const KernelSpec& ks, const Cutoff& psi, int j,
                           const OpOptions& o = {}) {
  check_family(g, gam, ks);
  auto q = piece_nodes(ks, j, g.spacing() / o.nodes_per_cell);
  return {"T_" + std::to_string(j), j, g, assemble(g, gam.map, q, psi, o)};
}

// T = sum_{j <= J} T_j: the principal value truncated at eps = a 2^{-J}.
inline DiscreteOp build_T(const Grid& g, const NumericFamily& gam, const KernelSpec& ks, const Cutoff& psi, int J,
                          const OpOptions& o = {}) {
  check_family(g, gam, ks);
  DiscreteOp t{"T", -1, g, SparseOp(static_cast<long>(g.size()), static_cast<long>(g.size()))};
  for (int j = 0; j <= J; ++j) t.mat += build_Tj(g, gam, ks, psi, j, o).mat;
  t.what = "T(J=" + std::to_string(J) + ")";
  return t;
}

// T_j' f(y) = psi(y) int f(gamma_t^{-1}(y)) K_j(t) dt, the model for the adjoint of T_j.
inline DiscreteOp build_Tj_adjoint_form(const Grid& g, const NumericFamily& gam, const KernelSpec& ks, const Cutoff& psi,
                                        int j, const OpOptions& o = {}) {
  check_family(g, gam, ks);
  if (!gam.inverse) throw OplabError("family has no inverse");
  auto q = piece_nodes(ks, j, g.spacing() / o.nodes_per_cell);
  return {"T'_" + std::to_string(j), j, g, assemble(g, gam.inverse, q, psi, o)};
}

// Averaging operator with a smooth kernel: T f(x) = psi(x) int f(gamma_t(x)) K(t) chi(|t|/a) dt.
inline DiscreteOp build_average(const Grid& g, const NumericFamily& gam, const KernelSpec& ks, const Cutoff& psi,
                                const OpOptions& o = {}) {
  check_family(g, gam, ks);
  if (ks.singular) throw OplabError("averaging operator needs a nonsingular kernel");
  auto q = kernel_nodes(ks, g.spacing() / o.nodes_per_cell);
  return {"A", -1, g, assemble(g, gam.map, q, psi, o)};
}

// ---------------------------------------------------------------------------------------------
// Operator norms

struct NormResult {
  double value = 0;
  int iterations = 0;
  bool converged = false;
};

using LinearMap = std::function<Field(const Field&)>;

// sqrt of the top eigenvalue of A^* A by power iteration from a seeded start vector.
inline NormResult op_norm(const LinearMap& a, const LinearMap& a_adj, std::size_t size, std::uint64_t seed = 1,
                          double tol = 1e-6, int max_iter = 2000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Field v(size);
  for (auto& x : v) x = u(rng);
  auto normalize = [](Field& f) {
    double s = 0;
    for (double x : f) s += x * x;
    s = std::sqrt(s);
    if (s > 0)
      for (auto& x : f) x /= s;
    return s;
  };
  normalize(v);
  NormResult r;
  double prev = -1;
  for (int it = 1; it <= max_iter; ++it) {
    Field w = a_adj(a(v));
    double lam = normalize(w);
    v = std::move(w);
    r.iterations = it;
    r.value = std::sqrt(lam);
    if (lam == 0) {
      r.converged = true;
      return r;
    }
    if (prev > 0 && std::fabs(lam - prev) <= tol * lam) {
      r.converged = true;
      return r;
    }
    prev = lam;
  }
  return r;
}

inline NormResult op_norm(const DiscreteOp& a, std::uint64_t seed = 1, double tol = 1e-6) {
  return op_norm([&](const Field& f) { return a.apply(f); }, [&](const Field& f) { return a.apply_adjoint(f); },
                 a.grid.size(), seed, tol);
}

inline NormResult op_norm_adjoint(const DiscreteOp& a, std::uint64_t seed = 1, double tol = 1e-6) {
  return op_norm([&](const Field& f) { return a.apply_adjoint(f); }, [&](const Field& f) { return a.apply(f); },
                 a.grid.size(), seed, tol);
}

// ---------------------------------------------------------------------------------------------
// Fits

struct LineFit {
  double slope = 0, intercept = 0;
  std::size_t used = 0;
};

inline LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw OplabError("a fit needs at least two points");
  double n = static_cast<double>(x.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LineFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  f.used = x.size();
  return f;
}

inline LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log2(x[i]));
    ly.push_back(std::log2(y[i]));
  }
  return least_squares(lx, ly);
}

// Least squares on (log2 x, log2 y) over the middle half of the points (first and last quarter dropped).
inline LineFit loglog_fit_middle(const std::vector<double>& x, const std::vector<double>& y) {
  std::size_t n = x.size(), lo = n / 4, hi = n - n / 4;
  if (hi - lo < 2) {
    lo = 0;
    hi = n;
  }
  std::vector<double> lx, ly;
  for (std::size_t i = lo; i < hi; ++i) {
    lx.push_back(std::log2(x[i]));
    ly.push_back(std::log2(y[i]));
  }
  return least_squares(lx, ly);
}

// ---------------------------------------------------------------------------------------------
// Almost orthogonality

struct DecayEntry {
  int i = 0, j = 0;
  double ti_tj_star = 0, ti_star_tj = 0;
};

struct DecayTable {
  std::vector<DecayEntry> entries;
  std::vector<int> gaps;            // |i - j|
  std::vector<double> by_gap;       // max over pairs with that gap of ||T_i T_j^*||
  std::vector<int> under_resolved;  // j with a 2^{-j} / 2 below the grid spacing
  double epsilon = 0;               // fitted decay exponent: by_gap ~ 2^{-epsilon gap}
  double diag_ratio = 0;            // max_j ||T_j T_j^*|| / ||T_j||^2
};

inline DecayTable orthogonality_decay(const Grid& g, const NumericFamily& gam, const KernelSpec& ks, const Cutoff& psi,
                                      int jmin, int jmax, const OpOptions& o = {}, std::uint64_t seed = 1) {
  std::vector<DiscreteOp> t;
  DecayTable d;
  for (int j = jmin; j <= jmax; ++j) {
    t.push_back(build_Tj(g, gam, ks, psi, j, o));
    if (std::ldexp(ks.a, -j) / 2 < g.spacing()) d.under_resolved.push_back(j);
  }
  int cnt = jmax - jmin + 1;
  std::vector<std::vector<double>> ab(static_cast<std::size_t>(cnt), std::vector<double>(static_cast<std::size_t>(cnt)));
  for (int i = 0; i < cnt; ++i)
    for (int j = i; j < cnt; ++j) {
      const auto& ti = t[static_cast<std::size_t>(i)];
      const auto& tj = t[static_cast<std::size_t>(j)];
      // ||T_i T_j^*|| = ||T_j T_i^*||, ||T_i^* T_j|| = ||T_j^* T_i||
      auto n1 = op_norm([&](const Field& f) { return ti.apply(tj.apply_adjoint(f)); },
                        [&](const Field& f) { return tj.apply(ti.apply_adjoint(f)); }, g.size(), seed);
      auto n2 = op_norm([&](const Field& f) { return ti.apply_adjoint(tj.apply(f)); },
                        [&](const Field& f) { return tj.apply_adjoint(ti.apply(f)); }, g.size(), seed);
      d.entries.push_back({jmin + i, jmin + j, n1.value, n2.value});
      if (i != j) d.entries.push_back({jmin + j, jmin + i, n1.value, n2.value});
      ab[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = n1.value;
      if (i == j) {
        double nj = op_norm(ti, seed).value;
        d.diag_ratio = std::max(d.diag_ratio, n1.value / (nj * nj));
      }
    }
  for (int gap = 0; gap < cnt; ++gap) {
    double best = 0;
    for (int i = 0; i + gap < cnt; ++i) best = std::max(best, ab[static_cast<std::size_t>(i)][static_cast<std::size_t>(i + gap)]);
    d.gaps.push_back(gap);
    d.by_gap.push_back(best);
  }
  std::vector<double> x, y;
  for (std::size_t k = 1; k < d.gaps.size(); ++k) {
    x.push_back(d.gaps[k]);
    y.push_back(std::log2(d.by_gap[k]));
  }
  if (x.size() >= 2) d.epsilon = -least_squares(x, y).slope;
  return d;
}

// ---------------------------------------------------------------------------------------------
// Mollifiers

// Phi: a C-infinity bump of radius 1/2 centred at `center`, normalized to integral 1 on the grid scale.
struct Mollifier {
  Point center;
  double radius = 0.5;
  double operator()(const Point& u) const {
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      double d = u[i] - (i < center.size() ? center[i] : 0.0);
      s += d * d;
    }
    return bump(std::sqrt(s) / radius);
  }
};

struct MollifierOptions {
  Mollifier phi{{0.25}, 0.5};
  Cutoff chi0;                                  // X_0
  const ThetaChart* chart = nullptr;            // Theta-adapted mode when set
};

// S_j(x, y) = X0(x) Phi_j(u) X0(y) h^n, u = y - x (Euclidean) or Theta_x(y); Phi_j(u) = 2^{jQ} Phi(delta_{2^j} u).
// The normalization of Phi is taken from a fine quadrature so that int Phi = 1.
inline DiscreteOp build_Sj(const Grid& g, int j, const MollifierOptions& mo) {
  std::vector<int> w(static_cast<std::size_t>(g.n), 1);
  if (mo.chart) {
    if (mo.chart->dim() != g.n) throw OplabError("chart and grid dimensions differ");
    w = mo.chart->weights();
  }
  int Q = 0;
  for (int v : w) Q += v;
  // int Phi over R^n: the bump integral does not depend on the center.
  double mass = 0;
  {
    int m = 64;
    double hh = 2 * mo.phi.radius / m;
    std::vector<int> idx(static_cast<std::size_t>(g.n), 0);
    std::function<void(int, Point&)> rec = [&](int a, Point& u) {
      if (a == g.n) {
        Point c(u);
        for (std::size_t i = 0; i < c.size(); ++i) c[i] += i < mo.phi.center.size() ? mo.phi.center[i] : 0.0;
        mass += mo.phi(c) * std::pow(hh, g.n);
        return;
      }
      for (int i = 0; i < m; ++i) {
        u[static_cast<std::size_t>(a)] = -mo.phi.radius + (i + 0.5) * hh;
        rec(a + 1, u);
      }
    };
    Point u(static_cast<std::size_t>(g.n));
    rec(0, u);
  }
  double scale = std::ldexp(1.0, j * Q) / mass;
  // Support of Phi_j in u: |u_i| <= 2^{-j w_i} (|c| + r).
  double cmax = mo.phi.radius;
  for (double c : mo.phi.center) cmax += std::fabs(c);
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<Field> cache;
  for (std::size_t r = 0; r < g.size(); ++r) {
    Point x = g.point(r);
    double cx = mo.chi0 ? mo.chi0(x) : 1.0;
    if (cx == 0) continue;
    auto xi = g.unflat(r);
    // Neighbours within the support box; in chart mode |y - x| is bounded by a multiple of the largest |u_I|.
    int reach = static_cast<int>(std::ceil(cmax * std::ldexp(mo.chart ? 4.0 : 1.0, -j) / g.spacing())) + 1;
    reach = std::min(reach, g.points / 2);
    std::vector<int> off(static_cast<std::size_t>(g.n), -reach);
    std::vector<std::pair<std::size_t, double>> row;
    while (true) {
      std::vector<int> yi(xi);
      Point y(static_cast<std::size_t>(g.n)), u(static_cast<std::size_t>(g.n));
      bool inside = true;
      for (int a = 0; a < g.n; ++a) {
        long raw = xi[static_cast<std::size_t>(a)] + off[static_cast<std::size_t>(a)];
        if (raw < 0 || raw >= g.points) inside = false;
        yi[static_cast<std::size_t>(a)] = g.wrap(raw);
        y[static_cast<std::size_t>(a)] = g.coord(yi[static_cast<std::size_t>(a)]);
      }
      if (inside) {
        double cy = mo.chi0 ? mo.chi0(y) : 1.0;
        if (cy != 0) {
          if (mo.chart) {
            u = mo.chart->theta(x, y);
          } else {
            for (int a = 0; a < g.n; ++a) u[static_cast<std::size_t>(a)] = y[static_cast<std::size_t>(a)] - x[static_cast<std::size_t>(a)];
          }
          for (int a = 0; a < g.n; ++a) u[static_cast<std::size_t>(a)] = std::ldexp(u[static_cast<std::size_t>(a)], j * w[static_cast<std::size_t>(a)]);
          double v = mo.phi(u);
          if (v != 0) row.emplace_back(g.flat(yi), cx * cy * v * scale * g.cell_volume());
        }
      }
      int a = g.n - 1;
      while (a >= 0 && ++off[static_cast<std::size_t>(a)] > reach) off[static_cast<std::size_t>(a--)] = -reach;
      if (a < 0) break;
    }
    std::sort(row.begin(), row.end());
    for (auto [c, v] : row) trip.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
  }
  SparseOp m(static_cast<long>(g.size()), static_cast<long>(g.size()));
  m.setFromTriplets(trip.begin(), trip.end());
  return {"S_" + std::to_string(j), j, g, m};
}

inline DiscreteOp build_Rj(const Grid& g, int j, const MollifierOptions& mo) {
  auto a = build_Sj(g, j + 1, mo), b = build_Sj(g, j, mo);
  return {"R_" + std::to_string(j), j, g, a.mat - b.mat};
}

struct CalibrationRow {
  int j = 0;
  double defect = 0;     // sup_x |int S_j(x, y) dy - X0(x)^2|
  double r_row_sum = 0;  // sup_x int |R_j(x, y)| dy
};

struct Calibration {
  std::vector<CalibrationRow> rows;
  double slope = 0;  // log2 defect against j
};

inline Calibration mollifier_calibration(const Grid& g, int jmin, int jmax, const MollifierOptions& mo) {
  Calibration c;
  std::vector<double> xs, ys;
  for (int j = jmin; j <= jmax; ++j) {
    auto s = build_Sj(g, j, mo);
    Field one(g.size(), 1.0);
    auto rs = s.apply(one);
    double worst = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double cx = mo.chi0 ? mo.chi0(g.point(i)) : 1.0;
      worst = std::max(worst, std::fabs(rs[i] - cx * cx));
    }
    CalibrationRow row{j, worst, 0};
    auto s1 = build_Sj(g, j + 1, mo);
    DiscreteOp rj{"R", j, g, s1.mat - s.mat};
    row.r_row_sum = rj.max_abs_row_sum();
    c.rows.push_back(row);
    xs.push_back(j);
    ys.push_back(std::log2(worst));
  }
  c.slope = least_squares(xs, ys).slope;
  return c;
}

// ---------------------------------------------------------------------------------------------
// Maximal function

// M f(x) = sup_r r^{-k} |psi(x) int_{|t| <= r} f(gamma_t(x)) dt| over the radius schedule.
inline Field maximal_fn(const Grid& g, const NumericFamily& gam, const Field& f, const std::vector<double>& radii,
                        const Cutoff& psi, const OpOptions& o = {}) {
  if (f.size() != g.size()) throw OplabError("field does not match the grid");
  KernelSpec unit{gam.k, "1", [](const Point&) { return 1.0; }, 1.0, false};
  Field m(g.size(), 0.0);
  for (double r : radii) {
    if (!(r > 0)) throw OplabError("radii must be positive");
    auto q = shell_nodes(unit, 0, r, g.spacing() / o.nodes_per_cell, [](const Point&) { return 1.0; });
    for (std::size_t i = 0; i < g.size(); ++i) {
      Point x = g.point(i);
      double px = psi(x);
      if (px == 0) continue;
      double s = 0;
      for (std::size_t n = 0; n < q.t.size(); ++n) {
        auto st = interp_stencil(g, gam.map(x, q.t[n]), o.interp_order, o.margin, o.periodic);
        double v = 0;
        for (std::size_t a = 0; a < st.idx.size(); ++a) v += st.w[a] * f[st.idx[a]];
        s += q.w[n] * v;
      }
      m[i] = std::max(m[i], std::fabs(px * s) / std::pow(r, gam.k));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------------------------
// Sobolev norms

// ||f||_{H_s}^2 = sum_xi (1 + |xi|^2)^s |f^(xi)|^2 on the periodic box, normalized so s = 0 gives the L^2 norm.
inline double sobolev_norm(const Grid& g, const Field& f, double s) {
  if (f.size() != g.size()) throw OplabError("field does not match the grid");
  std::vector<int> dims(static_cast<std::size_t>(g.n), g.points);
  int last = g.points / 2 + 1;
  std::size_t csize = g.size() / static_cast<std::size_t>(g.points) * static_cast<std::size_t>(last);
  std::vector<double> in(f);
  auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * csize));
  fftw_plan p = fftw_plan_dft_r2c(g.n, dims.data(), in.data(), out, FFTW_ESTIMATE);
  fftw_execute(p);
  double total = 0, two_pi_l = 2 * std::numbers::pi / g.side;
  for (std::size_t c = 0; c < csize; ++c) {
    std::size_t rem = c;
    int kl = static_cast<int>(rem % static_cast<std::size_t>(last));
    rem /= static_cast<std::size_t>(last);
    double xi2 = std::pow(kl * two_pi_l, 2);
    for (int a = g.n - 2; a >= 0; --a) {
      int ka = static_cast<int>(rem % static_cast<std::size_t>(g.points));
      rem /= static_cast<std::size_t>(g.points);
      if (ka > g.points / 2) ka -= g.points;
      xi2 += std::pow(ka * two_pi_l, 2);
    }
    // r2c stores half the last axis; interior frequencies stand for a conjugate pair.
    double mult = (kl == 0 || (g.points % 2 == 0 && kl == g.points / 2)) ? 1.0 : 2.0;
    double mag = out[c][0] * out[c][0] + out[c][1] * out[c][1];
    total += mult * std::pow(1 + xi2, s) * mag;
  }
  fftw_destroy_plan(p);
  fftw_free(out);
  return std::sqrt(total * g.cell_volume() / static_cast<double>(g.size()));
}

// ---------------------------------------------------------------------------------------------
// Smoothing probe

struct SmoothingRow {
  double delta = 0;
  double ratio = 0;       // ||T f_delta||_{H_s} / ||f_delta||_{L^2}
  double slab_ratio = 0;  // same with the H_s norm taken in x'' and integrated over |x'| <= delta only
};

struct SmoothingProbe {
  std::vector<SmoothingRow> rows;
  double slope = 0, slab_slope = 0;  // log2 ratio against log2 delta
  double max_over_min = 0;
};

// f_delta(x) = phi(delta^{-1} x', delta^{-N} x'') with x'' the last coordinate (n = 2).
inline Field anisotropic_bump(const Grid& g, double delta, int N) {
  return sample_field(g, [&](const Point& x) {
    return smooth_cutoff(2 * x[0] / delta) * smooth_cutoff(2 * x[1] / std::pow(delta, N));
  });
}

inline SmoothingProbe smoothing_probe(const Grid& g, const NumericFamily& gam, const KernelSpec& ks, const Cutoff& psi,
                                      double s, const std::vector<double>& deltas, int N, const OpOptions& o = {}) {
  if (g.n != 2) throw OplabError("the smoothing probe runs on planar grids");
  auto t = build_average(g, gam, ks, psi, o);
  SmoothingProbe pr;
  std::vector<double> lx, ly, ls;
  Grid line = make_grid(1, g.side, g.points);
  for (double d : deltas) {
    if (std::pow(d, N) < 2 * g.spacing()) throw OplabError("delta^N is below the grid resolution");
    auto f = anisotropic_bump(g, d, N);
    auto tf = t.apply(f);
    double fl2 = lp_norm(g, f, 2);
    SmoothingRow row{d, sobolev_norm(g, tf, s) / fl2, 0};
    double slab = 0;
    for (int i = 0; i < g.points; ++i) {
      if (std::fabs(g.coord(i)) > d) continue;
      Field col(static_cast<std::size_t>(g.points));
      for (int k = 0; k < g.points; ++k) col[static_cast<std::size_t>(k)] = tf[g.flat({i, k})];
      double hs = sobolev_norm(line, col, s);
      slab += hs * hs * g.spacing();
    }
    row.slab_ratio = std::sqrt(slab) / fl2;
    pr.rows.push_back(row);
    lx.push_back(std::log2(d));
    ly.push_back(std::log2(row.ratio));
    ls.push_back(std::log2(row.slab_ratio));
  }
  pr.slope = least_squares(lx, ly).slope;
  pr.slab_slope = least_squares(lx, ls).slope;
  double mx = 0, mn = INFINITY;
  for (const auto& r : pr.rows) {
    mx = std::max(mx, r.ratio);
    mn = std::min(mn, r.ratio);
  }
  pr.max_over_min = mx / mn;
  return pr;
}

// ---------------------------------------------------------------------------------------------
// Oscillatory integrals

// I(lambda) = int_0^1 exp(i lambda F(tau)) dtau by composite Gauss-Legendre resolving the oscillation.
inline std::complex<double> oscillatory_integral(const std::function<double(double)>& F, double lambda, double fprime_max) {
  int panels = std::max(4, static_cast<int>(std::ceil(std::fabs(lambda) * fprime_max / std::numbers::pi)) + 4);
  std::complex<double> s = 0;
  for (auto [t, w] : gauss_legendre(0, 1, panels)) s += w * std::polar(1.0, lambda * F(t));
  return s;
}

struct VdcRow {
  double lambda = 0, abs_value = 0, envelope = 0;
};

struct VdcResult {
  std::vector<VdcRow> rows;
  double exponent = 0;  // log-log fit of the envelope over the whole schedule
  bool trivial_bound_holds = true;  // |I| <= 1 for every lambda
};

// The envelope is max |I| over [lambda, lambda + 2 pi / (F(1) - F(0)) * 1.5], which covers one period of the
// endpoint oscillation.
inline VdcResult vdc_decay(const std::function<double(double)>& F, double fprime_max, const std::vector<double>& lambdas,
                           int window_samples = 24) {
  VdcResult r;
  double range = std::fabs(F(1) - F(0));
  double width = range > 0 ? 3 * std::numbers::pi / range : 1.0;
  std::vector<double> xs, ys;
  for (double lam : lambdas) {
    VdcRow row;
    row.lambda = lam;
    row.abs_value = std::abs(oscillatory_integral(F, lam, fprime_max));
    row.envelope = row.abs_value;
    for (int i = 1; i < window_samples; ++i)
      row.envelope = std::max(row.envelope, std::abs(oscillatory_integral(F, lam + width * i / (window_samples - 1), fprime_max)));
    if (row.abs_value > 1 + 1e-12) r.trivial_bound_holds = false;
    r.rows.push_back(row);
    xs.push_back(lam);
    ys.push_back(row.envelope);
  }
  r.exponent = loglog_fit(xs, ys).slope;
  return r;
}

inline std::vector<double> log_schedule(double lo, double hi, int count) {
  std::vector<double> v;
  for (int i = 0; i < count; ++i) v.push_back(lo * std::pow(hi / lo, count == 1 ? 0.0 : static_cast<double>(i) / (count - 1)));
  return v;
}

// ---------------------------------------------------------------------------------------------
// Pushforward densities

struct Histogram {
  int dim = 1;
  std::vector<double> lo, hi;
  int bins = 1;
  std::vector<double> density;  // mass / (sample count * bin volume) * total mass of psi dtau
  double bin_width(int a) const { return (hi[static_cast<std::size_t>(a)] - lo[static_cast<std::size_t>(a)]) / bins; }
  double bin_volume() const {
    double v = 1;
    for (int a = 0; a < dim; ++a) v *= bin_width(a);
    return v;
  }
};

struct PushforwardResult {
  Histogram hist;
  std::size_t outside = 0;
  std::vector<int> shifts;        // in bins along axis 0
  std::vector<double> modulus;    // int |h(y - z) - h(y)| dy
  double modulus_exponent = 0;    // fitted over the middle half of the shifts
  double max_density = 0;
};

// Monte Carlo histogram of Phi_*(psi dtau) for tau uniform on [-1, 1]^d, psi a density on that box.
inline PushforwardResult pushforward_density(const std::function<Point(const Point&)>& phi, int d,
                                             const std::function<double(const Point&)>& psi, std::vector<double> lo,
                                             std::vector<double> hi, int bins, std::size_t samples, std::uint64_t seed) {
  PushforwardResult r;
  auto& h = r.hist;
  h.dim = static_cast<int>(lo.size());
  h.lo = std::move(lo);
  h.hi = std::move(hi);
  h.bins = bins;
  std::size_t cells = 1;
  for (int a = 0; a < h.dim; ++a) cells *= static_cast<std::size_t>(bins);
  h.density.assign(cells, 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  double box = std::pow(2.0, d);
  for (std::size_t s = 0; s < samples; ++s) {
    Point tau(static_cast<std::size_t>(d));
    for (auto& v : tau) v = u(rng);
    double w = psi(tau);
    if (w == 0) continue;
    Point y = phi(tau);
    std::size_t f = 0;
    bool in = true;
    for (int a = 0; a < h.dim; ++a) {
      double c = (y[static_cast<std::size_t>(a)] - h.lo[static_cast<std::size_t>(a)]) / h.bin_width(a);
      if (!(c >= 0 && c < bins)) {
        in = false;
        break;
      }
      f = f * static_cast<std::size_t>(bins) + static_cast<std::size_t>(c);
    }
    if (!in) {
      ++r.outside;
      continue;
    }
    h.density[f] += w;
  }
  double norm = box / (static_cast<double>(samples) * h.bin_volume());
  for (auto& v : h.density) {
    v *= norm;
    r.max_density = std::max(r.max_density, v);
  }
  if (r.outside == samples) throw OplabError("pushforward: no mass inside the histogram box");
  std::size_t stride = cells / static_cast<std::size_t>(bins);
  for (int z = 1; z <= bins / 2; z *= 2) {
    double s = 0;
    for (std::size_t c = 0; c < cells; ++c) {
      int i0 = static_cast<int>(c / stride);
      double shifted = i0 - z >= 0 ? h.density[c - static_cast<std::size_t>(z) * stride] : 0.0;
      s += std::fabs(shifted - h.density[c]);
    }
    // bins shifted out of the box carry their mass as well
    for (std::size_t c = cells - static_cast<std::size_t>(z) * stride; c < cells; ++c) s += std::fabs(h.density[c]);
    r.shifts.push_back(z);
    r.modulus.push_back(s * h.bin_volume());
  }
  std::vector<double> zs;
  for (int z : r.shifts) zs.push_back(z * h.bin_width(0));
  if (zs.size() >= 2) r.modulus_exponent = loglog_fit_middle(zs, r.modulus).slope;
  return r;
}

// L^1 distance between the histogram and the bin averages of a reference density.
inline double histogram_l1_error(const Histogram& h, const std::function<double(double, double)>& bin_mass) {
  if (h.dim != 1) throw OplabError("reference comparison is implemented for 1-d histograms");
  double s = 0;
  for (int b = 0; b < h.bins; ++b) {
    double a = h.lo[0] + b * h.bin_width(0), c = a + h.bin_width(0);
    s += std::fabs(h.density[static_cast<std::size_t>(b)] * h.bin_width(0) - bin_mass(a, c));
  }
  return s;
}

}  // namespace curvlab
