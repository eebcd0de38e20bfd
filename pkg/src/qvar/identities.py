"""Randomized checks of the Jackson calculus identities.

Each check draws a random lattice and random lattice functions, evaluates
both sides of one identity by separate routes and compares them relative to
``max(1, |lhs|, |rhs|)``. The composition rule is checked in ulps instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from qvar.lattice import LatticeFn, QLattice, dq_k, q_integral, shift_sigma
from qvar.variational import ibp_identity_sides

__all__ = ["RATIOS", "CheckResult", "SUITES", "run_identity_suite", "ulp_distance"]

RATIOS = (1.1, 1.5, 2.0, 3.0)
REL_TOL = 1e-10
MAX_ULPS = 4


@dataclass
class CheckResult:
    name: str
    passed: int = 0
    failed: int = 0
    worst: float = 0.0

    @property
    def ok(self) -> bool:
        return self.failed == 0


def _lattice(rng: np.random.Generator, min_points: int, max_points: int = 40) -> QLattice:
    q = float(rng.choice(RATIOS))
    a = float(rng.uniform(0.5, 2.0))
    return QLattice(a, q, int(rng.integers(min_points, max_points + 1)))


def _fn(rng: np.random.Generator, lat: QLattice, nonzero: bool = False) -> LatticeFn:
    if nonzero:
        v = rng.choice([-1.0, 1.0], lat.n_points) * rng.uniform(0.5, 2.0, lat.n_points)
    else:
        v = rng.normal(size=lat.n_points)
    return LatticeFn(lat, 0, v)


def _rel(lhs, rhs) -> float:
    lhs, rhs = np.asarray(lhs, dtype=float), np.asarray(rhs, dtype=float)
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return float(np.max(np.abs(lhs - rhs))) / scale


def ulp_distance(a: float, b: float) -> int:
    """Number of representable doubles between ``a`` and ``b``."""
    ia = np.array(a, dtype=np.float64).view(np.int64).item()
    ib = np.array(b, dtype=np.float64).view(np.int64).item()
    # map the sign-magnitude layout onto a monotone integer line
    ia = ia if ia >= 0 else -(ia & 0x7FFFFFFFFFFFFFFF)
    ib = ib if ib >= 0 else -(ib & 0x7FFFFFFFFFFFFFFF)
    return abs(ia - ib)


def check_product_rule(rng) -> float:
    lat = _lattice(rng, 2)
    f, g = _fn(rng, lat), _fn(rng, lat)
    lhs = dq_k(f * g).values
    rhs = dq_k(f).values * g.values[:-1] + f.values[1:] * dq_k(g).values
    return _rel(lhs, rhs)


def check_quotient_rule(rng) -> float:
    lat = _lattice(rng, 2)
    f, g = _fn(rng, lat), _fn(rng, lat, nonzero=True)
    lhs = dq_k(f / g).values
    gv = g.values
    rhs = (dq_k(f).values * gv[:-1] - f.values[:-1] * dq_k(g).values) / (gv[:-1] * gv[1:])
    return _rel(lhs, rhs)


def check_fundamental_theorem(rng) -> float:
    lat = _lattice(rng, 2)
    f = _fn(rng, lat)
    n = int(rng.integers(0, lat.N + 1))
    return _rel(q_integral(dq_k(f), 0, n), f.at(n) - f.at(0))


def check_first_order_ibp(rng) -> float:
    lat = _lattice(rng, 3)
    f, g = _fn(rng, lat), _fn(rng, lat)
    k_lo = int(rng.integers(0, lat.N))
    k_hi = int(rng.integers(k_lo, lat.N))
    lhs = q_integral(f * dq_k(g), k_lo, k_hi)
    rhs = (f.at(k_hi) * g.at(k_hi) - f.at(k_lo) * g.at(k_lo)) - q_integral(
        dq_k(f) * shift_sigma(g), k_lo, k_hi
    )
    return _rel(lhs, rhs)


def check_higher_order_ibp(rng) -> float:
    r = int(rng.integers(1, 5))
    i = int(rng.integers(1, r + 1))
    lat = _lattice(rng, r + 2)
    f, g = _fn(rng, lat), _fn(rng, lat)
    k_hi = int(rng.integers(0, lat.N - r + 2))
    k_lo = int(rng.integers(0, k_hi + 1))
    return _rel(*ibp_identity_sides(f, g, r, i, k_lo, k_hi))


def check_derivative_of_integral(rng) -> float:
    lat = _lattice(rng, 2)
    f = _fn(rng, lat)
    big_f = LatticeFn(lat, 0, np.array([q_integral(f, 0, k) for k in range(lat.n_points)]))
    return _rel(dq_k(big_f).values, f.values[:-1])


def check_composition(rng) -> float:
    """Worst ulp distance of ``D_q[f](t_{k+1})`` from ``D_q[f o sigma](t_k) / q``."""
    lat = _lattice(rng, 3)
    f = _fn(rng, lat)
    lhs = dq_k(f).values[1:]
    rhs = dq_k(shift_sigma(f)).values / lat.q
    return float(max(ulp_distance(a, b) for a, b in zip(lhs, rhs)))


SUITES: dict[str, tuple[Callable[[np.random.Generator], float], float]] = {
    "product_rule": (check_product_rule, REL_TOL),
    "quotient_rule": (check_quotient_rule, REL_TOL),
    "fundamental_theorem": (check_fundamental_theorem, REL_TOL),
    "first_order_ibp": (check_first_order_ibp, REL_TOL),
    "higher_order_ibp": (check_higher_order_ibp, REL_TOL),
    "derivative_of_integral": (check_derivative_of_integral, REL_TOL),
    "composition_ulps": (check_composition, MAX_ULPS),
}


def run_identity_suite(trials: int = 1000, seed: int = 42) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, (check, tol) in SUITES.items():
        res = CheckResult(name)
        for _ in range(trials):
            err = check(rng)
            res.worst = max(res.worst, err)
            if err <= tol:
                res.passed += 1
            else:
                res.failed += 1
        results.append(res)
    return results
