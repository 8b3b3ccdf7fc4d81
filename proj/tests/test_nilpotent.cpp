#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "curvlab/nilpotent.hpp"
#include "curvlab/parse.hpp"

using namespace curvlab;

namespace {

// Graded dimensions of the free Lie algebra on weighted generators by the Witt/Moebius formula:
// n l_n = sum_{e | n} mu(e) c_{n/e}, with c_N = N [t^N] (-log(1 - sum_i t^{a_i})).
std::vector<long> witt_dims(const std::vector<int>& deg, int m) {
  auto mobius = [](int n) {
    int r = 1;
    for (int q = 2; q * q <= n; ++q)
      if (n % q == 0) {
        n /= q;
        if (n % q == 0) return 0;
        r = -r;
      }
    return n > 1 ? -r : r;
  };
  std::vector<Rational> f(static_cast<std::size_t>(m) + 1, Rational(0));
  for (int a : deg) f[static_cast<std::size_t>(a)] += 1;
  std::vector<Rational> logser(f.size(), Rational(0)), power = f;
  for (int j = 1; j <= m; ++j) {
    for (int n = 0; n <= m; ++n) logser[n] += power[n] / j;
    std::vector<Rational> next(f.size(), Rational(0));
    for (int a = 0; a <= m; ++a)
      for (int b = 0; a + b <= m; ++b) next[a + b] += power[a] * f[b];
    power = next;
  }
  std::vector<long> dims;
  for (int n = 1; n <= m; ++n) {
    Rational s = 0;
    for (int e = 1; e <= n; ++e)
      if (n % e == 0) s += mobius(e) * (n / e) * logser[n / e];
    s /= n;
    EXPECT_EQ(s.get_den(), 1);
    dims.push_back(s.get_num().get_si());
  }
  return dims;
}

std::vector<long> hall_dims(const NilpotentAlgebra& g) {
  std::vector<long> d(static_cast<std::size_t>(g.m()), 0);
  for (const auto& w : g.basis()) ++d[static_cast<std::size_t>(w.degree - 1)];
  return d;
}

std::vector<Rational> unit(const NilpotentAlgebra& g, int i) {
  std::vector<Rational> e(static_cast<std::size_t>(g.dim()), Rational(0));
  e[static_cast<std::size_t>(i)] = 1;
  return e;
}

std::vector<Rational> random_element(const NilpotentAlgebra& g, std::mt19937& rng) {
  std::uniform_int_distribution<int> num(-6, 6), den(1, 4);
  std::vector<Rational> u;
  for (int i = 0; i < g.dim(); ++i) {
    Rational r(num(rng), den(rng));
    r.canonicalize();
    u.push_back(r);
  }
  return u;
}

std::vector<Rational> add(std::vector<Rational> a, const std::vector<Rational>& b, const Rational& s = 1) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
  return a;
}

// Dynkin's series for log(e^a e^b), built from right-nested brackets through the structure constants.
std::vector<Rational> dynkin(const NilpotentAlgebra& g, const std::vector<Rational>& a, const std::vector<Rational>& b) {
  int m = g.m();
  std::vector<Rational> total(a.size(), Rational(0));
  std::vector<std::pair<int, int>> blocks;
  std::function<void(int)> rec = [&](int used) {
    if (!blocks.empty()) {
      int k = static_cast<int>(blocks.size());
      Rational coef((k % 2 == 1) ? 1 : -1, k);
      coef.canonicalize();
      std::vector<const std::vector<Rational>*> seq;
      Rational denom = used;
      for (auto [r, s] : blocks) {
        for (int i = 0; i < r; ++i) seq.push_back(&a);
        for (int i = 0; i < s; ++i) seq.push_back(&b);
        denom *= factorial(r) * factorial(s);
      }
      std::vector<Rational> nested = *seq.back();
      for (int i = static_cast<int>(seq.size()) - 2; i >= 0; --i) nested = g.bracket(*seq[static_cast<std::size_t>(i)], nested);
      total = add(total, nested, coef / denom);
    }
    for (int r = 0; used + r <= m; ++r)
      for (int s = 0; used + r + s <= m; ++s) {
        if (r + s == 0) continue;
        blocks.emplace_back(r, s);
        rec(used + r + s);
        blocks.pop_back();
      }
  };
  rec(0);
  return total;
}

}  // namespace

TEST(Nilpotent, HeisenbergBasis) {
  auto g = build_free_nilpotent(2, {1, 1}, 2);
  ASSERT_EQ(g.dim(), 3);
  EXPECT_EQ(g.homogeneous_dimension(), 4);
  EXPECT_EQ(g.word_str(0), "Y1");
  EXPECT_EQ(g.word_str(1), "Y2");
  EXPECT_EQ(g.word_str(2), "[Y1,Y2]");
}

TEST(Nilpotent, LengthThreeBasis) {
  auto g = build_free_nilpotent(2, {1, 1}, 3);
  ASSERT_EQ(g.dim(), 5);
  EXPECT_EQ(g.homogeneous_dimension(), 10);
  EXPECT_EQ(g.word_str(3), "[Y1,[Y1,Y2]]");
  EXPECT_EQ(g.word_str(4), "[Y2,[Y1,Y2]]");
}

TEST(Nilpotent, AbelianLine) {
  auto g = build_free_nilpotent(1, {1}, 1);
  EXPECT_EQ(g.dim(), 1);
  EXPECT_EQ(g.homogeneous_dimension(), 1);
}

TEST(Nilpotent, RejectsBadInput) {
  EXPECT_THROW(build_free_nilpotent(2, {1, 3}, 2), std::invalid_argument);
  EXPECT_THROW(build_free_nilpotent(0, {}, 2), std::invalid_argument);
  EXPECT_THROW(build_free_nilpotent(2, {1}, 2), std::invalid_argument);
}

// Frozen from a sympy run of the same formula (tests/oracles/bch_oracle.py).
TEST(Nilpotent, DimensionsMatchFrozenOracle) {
  struct Case {
    std::vector<int> deg;
    int m;
    std::vector<long> graded;
    int d, q;
  };
  std::vector<Case> cases = {
      {{1, 1}, 2, {2, 1}, 3, 4},          {{1, 1}, 3, {2, 1, 2}, 5, 10},         {{1, 1, 1}, 2, {3, 3}, 6, 9},
      {{1, 2, 3}, 3, {1, 1, 2}, 4, 9},    {{1}, 1, {1}, 1, 1},                   {{1, 1}, 4, {2, 1, 2, 3}, 8, 22},
      {{1, 2}, 4, {1, 1, 1, 1}, 4, 10},   {{1, 1, 2, 2, 2}, 2, {2, 4}, 6, 10},
  };
  for (const auto& c : cases) {
    auto g = build_free_nilpotent(static_cast<int>(c.deg.size()), c.deg, c.m);
    EXPECT_EQ(hall_dims(g), c.graded);
    EXPECT_EQ(g.dim(), c.d);
    EXPECT_EQ(g.homogeneous_dimension(), c.q);
  }
}

TEST(Nilpotent, DimensionsMatchWittFormula) {
  std::vector<std::pair<std::vector<int>, int>> cases = {
      {{1, 1}, 5}, {{1, 1, 1}, 4}, {{1, 2}, 5}, {{2, 3}, 6}, {{1, 1, 2}, 4}, {{1, 1, 1, 1}, 3}, {{1, 1, 2, 2, 2, 3, 3, 3, 3}, 3},
  };
  for (const auto& [deg, m] : cases) {
    auto g = build_free_nilpotent(static_cast<int>(deg.size()), deg, m);
    EXPECT_EQ(hall_dims(g), witt_dims(deg, m));
  }
}

TEST(Nilpotent, StructureConstantInvariants) {
  for (auto [deg, m] : std::vector<std::pair<std::vector<int>, int>>{{{1, 1}, 4}, {{1, 1, 1}, 3}, {{1, 2}, 4}}) {
    auto g = build_free_nilpotent(static_cast<int>(deg.size()), deg, m);
    int d = g.dim();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        auto ij = g.bracket(unit(g, i), unit(g, j));
        auto ji = g.bracket(unit(g, j), unit(g, i));
        EXPECT_EQ(add(ij, ji), std::vector<Rational>(static_cast<std::size_t>(d), Rational(0)));
        for (const auto& [k, c] : g.structure_constants(i, j)) EXPECT_EQ(g.degree(k), g.degree(i) + g.degree(j));
        for (int k = 0; k < d; ++k) {
          auto a = g.bracket(unit(g, i), g.bracket(unit(g, j), unit(g, k)));
          auto b = g.bracket(unit(g, j), g.bracket(unit(g, k), unit(g, i)));
          auto c = g.bracket(unit(g, k), g.bracket(unit(g, i), unit(g, j)));
          EXPECT_EQ(add(add(a, b), c), std::vector<Rational>(static_cast<std::size_t>(d), Rational(0)));
        }
      }
  }
}

TEST(Nilpotent, BchLowOrderTerms) {
  auto g = build_free_nilpotent(2, {1, 1}, 3);
  auto a = unit(g, 0), b = unit(g, 1);
  auto c = bch(g, a, b);
  EXPECT_EQ(degree_part(g, c, 1), add(a, b));
  auto ab = g.bracket(a, b);
  EXPECT_EQ(degree_part(g, c, 2), add(std::vector<Rational>(5, Rational(0)), ab, Rational(1, 2)));
  // sympy oracle in the free associative algebra: degree 3 is 1/12[a,[a,b]] - 1/12[b,[a,b]]
  auto c3 = add(add(std::vector<Rational>(5, Rational(0)), g.bracket(a, ab), Rational(1, 12)), g.bracket(b, ab),
                Rational(-1, 12));
  EXPECT_EQ(degree_part(g, c, 3), c3);
  EXPECT_EQ(c[3], Rational(1, 12));
  EXPECT_EQ(c[4], Rational(-1, 12));
}

TEST(Nilpotent, BchWithZero) {
  auto g = build_free_nilpotent(2, {1, 1}, 3);
  std::mt19937 rng(5);
  auto a = random_element(g, rng);
  std::vector<Rational> zero(a.size(), Rational(0));
  EXPECT_EQ(bch(g, a, zero), a);
  EXPECT_EQ(bch(g, zero, a), a);
}

TEST(Nilpotent, BchMatchesDynkinSeries) {
  std::mt19937 rng(17);
  for (auto [deg, m] : std::vector<std::pair<std::vector<int>, int>>{{{1, 1}, 4}, {{1, 1, 1}, 3}, {{1, 2}, 5}}) {
    auto g = build_free_nilpotent(static_cast<int>(deg.size()), deg, m);
    for (int trial = 0; trial < 5; ++trial) {
      auto a = random_element(g, rng), b = random_element(g, rng);
      EXPECT_EQ(bch(g, a, b), dynkin(g, a, b));
    }
  }
}

TEST(Nilpotent, BchRejectsConstantTerm) {
  auto g = build_free_nilpotent(2, {1, 1}, 2);
  auto ctx = make_context({"s"}, 3);
  std::vector<RJet> a(3, RJet(ctx)), b(3, RJet(ctx));
  a[0] = RJet::constant(ctx, Rational(1));
  EXPECT_THROW(bch(g, a, b), std::invalid_argument);
}

TEST(Nilpotent, HeisenbergGroupLaw) {
  GroupLaw law(build_free_nilpotent(2, {1, 1}, 2));
  const auto& c = law.context();
  const auto& p = law.polynomials();
  ASSERT_EQ(p.size(), 3u);
  EXPECT_TRUE(p[0].equals(parse_polynomial("u1 + v1", c)));
  EXPECT_TRUE(p[1].equals(parse_polynomial("u2 + v2", c)));
  EXPECT_TRUE(p[2].equals(parse_polynomial("u3 + v3 + 1/2*(v1*u2 - v2*u1)", c)));
}

TEST(Nilpotent, GroupAxioms) {
  std::mt19937 rng(23);
  for (auto [deg, m] : std::vector<std::pair<std::vector<int>, int>>{{{1, 1}, 2}, {{1, 1}, 3}, {{1, 1, 1}, 2}, {{1, 2}, 4}}) {
    GroupLaw law(build_free_nilpotent(static_cast<int>(deg.size()), deg, m));
    const auto& g = law.algebra();
    std::vector<Rational> zero(static_cast<std::size_t>(g.dim()), Rational(0));
    for (int trial = 0; trial < 20; ++trial) {
      auto u = random_element(g, rng), v = random_element(g, rng), w = random_element(g, rng);
      EXPECT_EQ(law.multiply(law.multiply(u, v), w), law.multiply(u, law.multiply(v, w)));
      EXPECT_EQ(law.multiply(u, zero), u);
      EXPECT_EQ(law.multiply(zero, u), u);
      EXPECT_EQ(law.multiply(u, law.inverse(u)), zero);
      // the polynomials agree with a direct BCH on rationals: coordinates of exp(v) exp(u)
      EXPECT_EQ(law.multiply(u, v), bch(g, v, u));
    }
  }
}

TEST(Nilpotent, DilationsAreAutomorphisms) {
  std::mt19937 rng(29);
  for (auto [deg, m] : std::vector<std::pair<std::vector<int>, int>>{{{1, 1}, 3}, {{1, 2}, 4}, {{1, 1, 1}, 2}}) {
    GroupLaw law(build_free_nilpotent(static_cast<int>(deg.size()), deg, m));
    const auto& g = law.algebra();
    for (int trial = 0; trial < 20; ++trial) {
      auto u = random_element(g, rng), v = random_element(g, rng);
      Rational r(static_cast<long>(rng() % 7 + 1), static_cast<long>(rng() % 5 + 1));
      r.canonicalize();
      EXPECT_EQ(dilate(g, law.multiply(u, v), r), law.multiply(dilate(g, u, r), dilate(g, v, r)));
    }
  }
}

TEST(Nilpotent, GroupPolynomialsAreHomogeneous) {
  for (auto [deg, m] : std::vector<std::pair<std::vector<int>, int>>{{{1, 1}, 3}, {{1, 2}, 4}, {{1, 1, 1}, 3}}) {
    GroupLaw law(build_free_nilpotent(static_cast<int>(deg.size()), deg, m));
    const auto& g = law.algebra();
    std::size_t d = static_cast<std::size_t>(g.dim());
    // symbolic check: substitute u_J -> r^{|J|} u_J in a context carrying r
    std::vector<std::string> names = law.context()->names;
    names.push_back("r");
    auto big = make_context(names, 2 * m + 1);
    RJet r = RJet::variable(big, "r");
    std::vector<RJet> subst;
    for (std::size_t j = 0; j < 2 * d; ++j)
      subst.push_back(RJet::variable(big, j) * r.pow(g.degree(static_cast<int>(j % d))));
    for (std::size_t i = 0; i < d; ++i) {
      for (const auto& [k, c] : law.polynomials()[i].terms())
        EXPECT_EQ(k.weighted_order(law.variable_weights()), Weight(g.degree(static_cast<int>(i))));
      RJet lhs = compose(law.polynomials()[i], subst);
      RJet rhs = embed(law.polynomials()[i], big) * r.pow(g.degree(static_cast<int>(i)));
      EXPECT_TRUE(lhs.equals(rhs));
    }
  }
}

TEST(Nilpotent, DilationAndNormExamples) {
  auto g = build_free_nilpotent(2, {1, 1}, 2);
  EXPECT_EQ(dilate(g, std::vector<Rational>{1, 1, 1}, Rational(2)), (std::vector<Rational>{2, 2, 4}));
  std::vector<double> u{1, 0, 4};
  EXPECT_DOUBLE_EQ(norm_rho(g, u), 3.0);
  EXPECT_DOUBLE_EQ(norm_rho(g, dilate(g, u, 2.0)), 6.0);
  EXPECT_THROW(dilate(g, u, 0.0), std::invalid_argument);
  EXPECT_THROW(dilate(g, u, -1.0), std::invalid_argument);
  GroupLaw law(g);
  EXPECT_DOUBLE_EQ(law.quasi_distance(u, u), 0.0);
  EXPECT_THROW(law.multiply(std::vector<double>{1, 2}, u), std::invalid_argument);
}

TEST(Nilpotent, NormScalesUnderDilation) {
  auto g = build_free_nilpotent(2, {1, 2}, 4);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> unif(-2, 2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> u;
    for (int i = 0; i < g.dim(); ++i) u.push_back(unif(rng));
    double r = std::exp(unif(rng));
    EXPECT_NEAR(norm_rho(g, dilate(g, u, r)), r * norm_rho(g, u), 1e-9 * r * norm_rho(g, u));
  }
}

TEST(Nilpotent, QuasiTriangleInequality) {
  for (auto [deg, m] : std::vector<std::pair<std::vector<int>, int>>{{{1, 1}, 2}, {{1, 1}, 3}}) {
    GroupLaw law(build_free_nilpotent(static_cast<int>(deg.size()), deg, m));
    double c = law.triangle_constant();
    EXPECT_GE(c, 1.0);
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> unif(-1, 1);
    auto sample = [&] {
      std::vector<double> u;
      double s = std::exp(3 * unif(rng));
      for (int i = 0; i < law.algebra().dim(); ++i) u.push_back(unif(rng));
      return dilate(law.algebra(), u, s);
    };
    int violations = 0;
    for (int t = 0; t < 10000; ++t) {
      auto x = sample(), y = sample(), z = sample();
      double lhs = law.quasi_distance(x, z);
      double rhs = c * (law.quasi_distance(x, y) + law.quasi_distance(y, z));
      if (lhs > rhs * (1 + 1e-12)) ++violations;
    }
    EXPECT_EQ(violations, 0);
  }
}

TEST(Nilpotent, BallVolumeExponent) {
  auto g = build_free_nilpotent(2, {1, 1}, 2);
  std::vector<double> xs, ys;
  for (int k = 0; k <= 4; ++k) {
    double r = std::pow(2.0, -k);
    xs.push_back(std::log(r));
    ys.push_back(std::log(ball_volume_mc(g, r, 100000, 7 + static_cast<std::uint64_t>(k))));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / xs.size();
    my += ys[i] / ys.size();
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  EXPECT_NEAR(sxy / sxx, 4.0, 0.2);
  EXPECT_EQ(ball_volume_mc(g, 0.5, 1000, 3), ball_volume_mc(g, 0.5, 1000, 3));
}
