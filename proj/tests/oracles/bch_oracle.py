"""Independent oracle: BCH terms from noncommutative sympy series, and Witt-formula dimensions."""
import sympy as sp
from sympy import Rational as Q

a, b = sp.symbols("a b", commutative=False)


def trunc_deg(expr, n):
    expr = sp.expand(expr)
    out = 0
    for term in sp.Add.make_args(expr):
        deg = sum(e for base, e in (f.as_base_exp() for f in sp.Mul.make_args(term)) if base in (a, b))
        if deg <= n:
            out += term
    return out


N = 3
ea = sum(a**k / sp.factorial(k) for k in range(N + 1))
eb = sum(b**k / sp.factorial(k) for k in range(N + 1))
prod = trunc_deg(ea * eb, N)
w = prod - 1
logp = trunc_deg(sum((-1) ** (k + 1) * w**k / k for k in range(1, N + 1)), N)


def br(x, y):
    return x * y - y * x


for name, cand in [("1/12[a,[a,b]] + 1/12[b,[a,b]]", Q(1, 12) * br(a, br(a, b)) + Q(1, 12) * br(b, br(a, b))),
                   ("1/12[a,[a,b]] - 1/12[b,[a,b]]", Q(1, 12) * br(a, br(a, b)) - Q(1, 12) * br(b, br(a, b)))]:
    diff = sp.expand(logp - (a + b + Q(1, 2) * br(a, b) + cand))
    print(name, "matches log(e^a e^b) to degree 3:", diff == 0)


def mobius(n):
    return sp.mobius(n)


def witt_graded_dims(degrees, m):
    """Dimension of each weighted-degree piece of the free Lie algebra on generators of the given degrees."""
    # Generating function: prod (1 - t^deg)^(-dim_deg) over Lie pieces = 1/(1 - sum t^{a_i}).
    # Equivalently dim_n = sum_{d|n} mu(d)/d * c_{n/d}-style necklace count on the weighted alphabet.
    c = [0] * (m + 1)  # number of words of weight n (with powers) via log of 1/(1-g)
    g = [0] * (m + 1)
    for d in degrees:
        g[d] += 1
    # coefficients of -log(1 - g(t)) = sum_n s_n t^n / n where s_n = sum over words of weight n of (length-weighted) ...
    t = sp.symbols("t")
    G = sum(g[i] * t**i for i in range(m + 1))
    L = sp.series(-sp.log(1 - G), t, 0, m + 1).removeO()
    s = [sp.expand(L).coeff(t, n) * n for n in range(m + 1)]
    dims = []
    for n in range(1, m + 1):
        val = sum(sp.mobius(d) * s[n // d] for d in sp.divisors(n)) / n
        dims.append(int(val))
    return dims


for degs, m in [((1, 1), 2), ((1, 1), 3), ((1, 1, 1), 2), ((1, 2, 3), 3), ((1,), 1), ((1, 1), 4), ((1, 2), 4), ((1, 1, 2, 2, 2), 2)]:
    dims = witt_graded_dims(degs, m)
    d = sum(dims)
    Qh = sum((i + 1) * x for i, x in enumerate(dims))
    print("degrees", degs, "m", m, "graded", dims, "d", d, "Q", Qh)
