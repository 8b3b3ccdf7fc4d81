#include <gtest/gtest.h>

#include <random>

#include "curvlab/jet.hpp"
#include "curvlab/parse.hpp"

using namespace curvlab;

namespace {

RJet P(const std::string& s, const ContextPtr& c) { return parse_polynomial(s, c); }

RJet random_jet(const ContextPtr& c, std::mt19937& rng, int max_order, bool constant_term) {
  std::uniform_int_distribution<int> coef(-3, 3);
  RJet j(c);
  for (int o = constant_term ? 0 : 1; o <= max_order; ++o)
    for (const auto& m : multi_indices_of_order(c->nvars(), o))
      if (rng() % 3 == 0) j.add_term(m, Rational(coef(rng), 1 + static_cast<long>(rng() % 3)));
  return j;
}

}  // namespace

TEST(Jets, ArithmeticExamples) {
  auto c2 = make_context({"x"}, 2);
  EXPECT_TRUE((P("x", c2) + P("x^2", c2)).equals(P("x + x^2", c2)));
  EXPECT_TRUE((P("x", c2) * P("x", c2)).equals(P("x^2", c2)));
  auto c1 = make_context({"x"}, 1);
  RJet sq = P("x", c1) * P("x", c1);
  EXPECT_TRUE(sq.is_zero());
  EXPECT_EQ(sq.valid_order(), 1);
}

TEST(Jets, ContextMismatchThrows) {
  auto a = make_context({"x"}, 2);
  auto b = make_context({"y"}, 2);
  EXPECT_THROW(P("x", a) + P("y", b), JetError);
  EXPECT_THROW(make_context({"x", "x"}, 2), std::invalid_argument);
  EXPECT_THROW(make_context({"x"}, 0), std::invalid_argument);
}

TEST(Jets, ComposeExamples) {
  auto cy = make_context({"y"}, 2);
  auto cx = make_context({"x"}, 2);
  EXPECT_TRUE(compose(P("y", cy), {P("x", cx)}).equals(P("x", cx)));
  // sympy oracle: (x+x^2) + (x+x^2)^2 truncated at 2 = x + 2x^2
  EXPECT_TRUE(compose(P("y + y^2", cy), {P("x + x^2", cx)}).equals(P("x + 2*x^2", cx)));
  auto cy1 = make_context({"y"}, 1);
  auto cx1 = make_context({"x"}, 1);
  EXPECT_TRUE(compose(P("y^2", cy1), {P("x", cx1)}).is_zero());
  EXPECT_THROW(compose(P("y", cy), {P("1 + x", cx)}), JetError);
  EXPECT_THROW(compose(P("y", cy), {P("x", cx), P("x", cx)}), JetError);
}

TEST(Jets, InvertMapExamples) {
  auto c3 = make_context({"x"}, 3);
  EXPECT_TRUE(invert_map<Rational>({P("x", c3)})[0].equals(P("x", c3)));
  EXPECT_TRUE(invert_map<Rational>({P("x + x^2", c3)})[0].equals(P("x - x^2 + 2*x^3", c3)));
  auto c2 = make_context({"x"}, 2);
  EXPECT_THROW(invert_map<Rational>({P("x^2", c2)}), JetError);
  // Two-variable map; expected inverse from a sympy fixed-point oracle.
  auto c = make_context({"x1", "x2"}, 4);
  auto g = invert_map<Rational>({P("x1 + x1*x2 + x2^3", c), P("x2 - x1^2 + 2*x1*x2^2", c)});
  EXPECT_TRUE(g[0].equals(P("4*x1^3*x2 - x1^3 - x1^2*x2^2 - x1*x2^3 + x1*x2^2 - x1*x2 + x1 + x2^4 - x2^3", c)));
  EXPECT_TRUE(g[1].equals(P("-2*x1^4 - 4*x1^3*x2 + 3*x1^2*x2^2 - 2*x1^2*x2 + x1^2 - 2*x1*x2^2 + x2", c)));
}

TEST(Jets, CoeffAndPartial) {
  auto c = make_context({"x"}, 3);
  EXPECT_EQ(P("x + 2*x^2", c).coeff(MultiIndex{2}), Rational(2));
  EXPECT_TRUE(P("x^3", c).partial(0).equals(P("3*x^2", c)));
  RJet d = P("x^3", c).partial(0);
  EXPECT_EQ(d.valid_order(), 2);
  EXPECT_THROW(d.coeff(MultiIndex{3}), JetError);
}

TEST(Jets, RingAxiomsRandomized) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    auto c = make_context({"a", "b", "c"}, 4);
    RJet x = random_jet(c, rng, 4, true), y = random_jet(c, rng, 4, true), z = random_jet(c, rng, 4, true);
    EXPECT_TRUE(((x * y) * z).equals(x * (y * z)));
    EXPECT_TRUE((x * (y + z)).equals(x * y + x * z));
    EXPECT_TRUE((x * y).equals(y * x));
    EXPECT_TRUE(((x + y) - y).equals(x));
  }
}

TEST(Jets, ComposeAssociativeRandomized) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 15; ++trial) {
    auto c = make_context({"u", "v"}, 4);
    JetMap<Rational> f{random_jet(c, rng, 4, false), random_jet(c, rng, 4, false)};
    JetMap<Rational> g{random_jet(c, rng, 4, false), random_jet(c, rng, 4, false)};
    JetMap<Rational> h{random_jet(c, rng, 4, false), random_jet(c, rng, 4, false)};
    auto lhs = compose(compose(f, g), h);
    auto rhs = compose(f, compose(g, h));
    for (int i = 0; i < 2; ++i) EXPECT_TRUE(lhs[i].equals(rhs[i]));
  }
}

TEST(Jets, InvertRoundTripRandomized) {
  std::mt19937 rng(3);
  for (int n = 1; n <= 3; ++n)
    for (int order = 2; order <= 6; order += 2)
      for (int trial = 0; trial < 4; ++trial) {
        auto c = make_context(numbered_names("x", static_cast<std::size_t>(n)), order);
        JetMap<Rational> f;
        for (int i = 0; i < n; ++i) {
          RJet fi = random_jet(c, rng, order, false);
          for (const auto& m : multi_indices_of_order(static_cast<std::size_t>(n), 1)) fi.add_term(m, -fi.coeff(m));
          fi += RJet::variable(c, static_cast<std::size_t>(i));
          f.push_back(fi);
        }
        auto g = invert_map(f);
        auto id = identity_map<Rational>(c);
        auto fg = compose(f, g), gf = compose(g, f);
        for (int i = 0; i < n; ++i) {
          EXPECT_TRUE(fg[i].equals_to_order(id[i], order));
          EXPECT_TRUE(gf[i].equals_to_order(id[i], order));
        }
      }
}

TEST(Jets, ValidOrderIndependentOfTruncation) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937 r1 = rng, r2 = rng;
    rng.discard(1000);
    auto cN = make_context({"x", "y"}, 4);
    auto cM = make_context({"x", "y"}, 6);
    RJet a = random_jet(cN, r1, 4, false), b = random_jet(cN, r1, 4, true);
    RJet a2 = random_jet(cM, r2, 4, false), b2 = random_jet(cM, r2, 4, true);
    RJet p = (a * b).partial(0) * b + a;
    RJet q = (a2 * b2).partial(0) * b2 + a2;
    for (const auto& [k, v] : p.terms()) EXPECT_EQ(v, q.coeff(k));
    for (int o = 0; o <= p.valid_order(); ++o)
      for (const auto& m : multi_indices_of_order(2, o)) EXPECT_EQ(p.coeff(m), q.coeff(m));
  }
}

TEST(Jets, WeightedOrderWithInfinity) {
  std::vector<Weight> w{Weight(1), Weight::infinity(), Weight(1)};
  EXPECT_EQ(MultiIndex({2, 0, 1}).weighted_order(w), Weight(3));
  EXPECT_TRUE(MultiIndex({0, 1, 0}).weighted_order(w).is_infinite());
  EXPECT_LT(Weight(1000000), Weight::infinity());
}
