"""Shared fixtures and brute-force oracles.

The oracles work on plain Python callables and recursion, never on
``LatticeFn`` arrays, so they give an independent route to the values the
package computes with index arithmetic.
"""

import numpy as np
import pytest

from qvar.expr import differentiate, eval_expression
from qvar.lattice import make_lattice


def jackson(func, q, i=1):
    """``D_q^i`` of a callable, by direct recursion on the definition."""
    if i == 0:
        return func
    inner = jackson(func, q, i - 1)
    return lambda t: (inner(q * t) - inner(t)) / ((q - 1.0) * t)


def compose_sigma(func, q, j):
    return lambda t: func(q**j * t)


def angle_brute(x, q, r):
    """``<x>`` as a callable returning ``(t, u1, ..., u{r+1})``."""
    parts = [compose_sigma(x, q, r)]
    parts += [jackson(compose_sigma(x, q, r - i), q, i) for i in range(1, r + 1)]
    return lambda t: [t] + [p(t) for p in parts]


def el_brute(L, x, q):
    """Euler-Lagrange residual of callable ``x`` as a callable."""
    r = L.r
    args = angle_brute(x, q, r)
    terms = []
    for i in range(r + 1):
        dL = differentiate(L, i + 2)
        f_i = (lambda d: lambda t: eval_expression(d, args(t)))(dL)
        terms.append((i, jackson(f_i, q, i)))
    return lambda t: sum((-1) ** i * q ** (-(i * (i - 1) // 2)) * g(t) for i, g in terms)


def brute_q_integral(func, a, q, n):
    return sum((q - 1.0) * a * q**k * func(a * q**k) for k in range(n))


@pytest.fixture
def lat2():
    return make_lattice(1.0, 2.0, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def lagrangian_family(r):
    """Fixed family of smooth order-``r`` Lagrangians touching every argument."""
    top = f"u{r + 1}"
    mid = "".join(f" + u{j}*{top}/4 - u{j}^2/{j}" for j in range(2, r + 1))
    return [
        f"-({top}^2) + sin(u1)" + mid,
        f"u1*{top} - cos(u1)/2 - {top}^2/4" + mid,
        f"exp(sin(u1)) - {top}^2/2 + u2*t/(1 + t)" + mid,
        f"-({top} - t)^2 + u1^3/3" + mid,
        f"sqrt(1 + u1^2) * {top} - {top}^2" + mid,
        f"ln(1 + {top}^2) + u1*u2" + mid,
    ]


def boundary_bump(rng, n, r):
    """Random values on ``0..n-1`` vanishing on the first and last ``r`` indices."""
    eta = rng.normal(size=n)
    eta[:r] = 0.0
    eta[n - r :] = 0.0
    return eta


RATIOS = (1.1, 1.5, 2.0, 3.0)


def random_case(rng, r, t_max=50.0):
    """Random lattice, path and direction for variation tests.

    The lattice stops near ``t_max`` so that ``J`` stays moderate and a
    symmetric difference quotient is not swamped by cancellation.
    """
    q = float(rng.choice(RATIOS))
    n = min(40, int(np.log(t_max) / np.log(q)) + 1)
    n = max(n, r + 2)
    lat = make_lattice(1.0, q, n)
    k_hi = n - r
    x = rng.normal(size=n)
    eta = rng.normal(size=n)
    return lat, x, eta, k_hi


def concave_lagrangian(rng, r):
    """Negative sum of squares in every ``u`` argument plus a small smooth bump.

    Each square has weight at least 0.5 and the perturbation has amplitude at
    most 0.2 with bounded second derivative, so the integrand stays strictly
    concave in ``(u1, ..., u{r+1})``.
    """
    terms = []
    for j in range(1, r + 2):
        c = rng.uniform(0.5, 2.0)
        s = rng.uniform(-1.0, 1.0)
        terms.append(f"{c:.6g}*(u{j} - ({s:.6g}))^2")
    eps = rng.uniform(0.0, 0.2)
    j = int(rng.integers(1, r + 2))
    bump = str(rng.choice(["sin", "cos"]))
    return f"-({' + '.join(terms)}) + {eps:.6g}*{bump}(u{j})/(1 + t)"
