r"""Variational operators for higher-order problems on a q-lattice.

For a trajectory ``x`` and a Lagrangian ``L`` of order ``r`` the argument
vector at ``t_k`` is

.. math::

    \langle x\rangle(t) = \bigl(t,\ x(q^r t),\ D_q[x\circ\sigma^{r-1}](t),\
        \dots,\ D_q^r[x](t)\bigr),

so ``L<x>`` and every partial ``d_{i+2} L<x>`` become lattice functions on
``x.offset .. x.last - r``. Everything here is built from those lattice
functions with :func:`~qvar.lattice.dq_k` and :func:`~qvar.lattice.shift_sigma`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from qvar.errors import DomainTooShortError, MismatchedLatticeError
from qvar.expr import ExprAst, differentiate, evaluate
from qvar.lattice import LatticeFn, dq_k, q_integral, shift_sigma

__all__ = [
    "ArgVector",
    "TransversalitySequence",
    "GapReport",
    "angle_args",
    "angle_arrays",
    "lagrangian_on",
    "partial_on",
    "functional_truncated",
    "first_variation",
    "ibp_identity_sides",
    "el_coefficient",
    "el_residual",
    "el_scale",
    "transversality_bracket",
    "transversality_term",
    "transversality_sequence",
    "liminf_envelope",
    "weak_maximality_gap",
]


@dataclass(frozen=True)
class ArgVector:
    t: float
    u: tuple[float, ...]

    def as_tuple(self) -> tuple[float, ...]:
        return (self.t, *self.u)


def _need(x: LatticeFn, length: int, what: str) -> None:
    if len(x) < length:
        raise DomainTooShortError(f"{what} needs {length} trajectory values, got {len(x)}")


def angle_arrays(x: LatticeFn, r: int) -> list[np.ndarray]:
    """``<x>`` on every index ``x.offset .. x.last - r``, one array per argument."""
    _need(x, r + 1, "argument packing")
    m = len(x) - r
    cols = [x.points[:m], shift_sigma(x, r).values]
    for i in range(1, r + 1):
        cols.append(dq_k(shift_sigma(x, r - i), i).values)
    return cols


def angle_args(x: LatticeFn, r: int, k: int) -> ArgVector:
    """``<x>(t_k)``; reads ``x`` on ``k .. k + r``."""
    if not x.covers(k, k + r):
        raise DomainTooShortError(f"<x>(t_{k}) needs x on {k}..{k + r}")
    cols = angle_arrays(x.window(k, k + r), r)
    return ArgVector(float(cols[0][0]), tuple(float(c[0]) for c in cols[1:]))


def _on(expr: ExprAst, x: LatticeFn) -> LatticeFn:
    cols = angle_arrays(x, expr.r)
    vals = np.broadcast_to(np.asarray(evaluate(expr.root, cols), dtype=float), cols[0].shape)
    return LatticeFn(x.lattice, x.offset, vals)


def lagrangian_on(L: ExprAst, x: LatticeFn) -> LatticeFn:
    """``t_k -> L<x>(t_k)`` wherever the stencil fits."""
    return _on(L, x)


def partial_on(L: ExprAst, x: LatticeFn, arg_index: int) -> LatticeFn:
    """``t_k -> d_{arg_index} L<x>(t_k)``; position 1 is ``t``."""
    return _on(differentiate(L, arg_index), x)


def functional_truncated(L: ExprAst, x: LatticeFn, k_hi: int) -> float:
    """``int_{t_0}^{t_{k_hi}} L<x>(t) d_q t``; reads ``x`` on ``0 .. k_hi - 1 + r``."""
    if k_hi == 0:
        return 0.0
    if not x.covers(0, k_hi - 1 + L.r):
        raise DomainTooShortError(f"truncated functional needs x on 0..{k_hi - 1 + L.r}")
    return q_integral(lagrangian_on(L, x.window(0, k_hi - 1 + L.r)), 0, k_hi)


def first_variation(L: ExprAst, x: LatticeFn, eta: LatticeFn, k_hi: int) -> float:
    """Directional derivative of the truncated functional along ``eta``."""
    r = L.r
    if eta.lattice != x.lattice:
        raise MismatchedLatticeError("trajectory and variation live on different lattices")
    if k_hi == 0:
        return 0.0
    hi = k_hi - 1 + r
    if not (x.covers(0, hi) and eta.covers(0, hi)):
        raise DomainTooShortError(f"first variation needs x and eta on 0..{hi}")
    x, eta = x.window(0, hi), eta.window(0, hi)
    total = None
    for i in range(r + 1):
        term = partial_on(L, x, i + 2) * dq_k(shift_sigma(eta, r - i), i)
        total = term if total is None else total + term
    return q_integral(total, 0, k_hi)


def ibp_identity_sides(
    f: LatticeFn, g: LatticeFn, r: int, i: int, k_lo: int, k_hi: int
) -> tuple[float, float]:
    """Both sides of the order-``i`` q-integration by parts identity on ``[t_lo, t_hi]``.

    ``lhs = int f D_q^i[g o sigma^(r-i)]`` and ``rhs`` is the integral of
    ``(-1)^i q^(-i(i-1)/2) D_q^i[f] g o sigma^r`` plus the boundary bracket.
    The two sides share no intermediate results beyond the Jackson operator.
    """
    if not 1 <= i <= r:
        raise ValueError(f"need 1 <= i <= r, got i={i}, r={r}")
    if f.lattice != g.lattice:
        raise MismatchedLatticeError("f and g live on different lattices")
    if k_lo > k_hi:
        raise ValueError("need k_lo <= k_hi")
    if not f.covers(k_lo, k_hi + i - 1) or not g.covers(k_lo, k_hi + r - 1):
        raise DomainTooShortError(
            f"identity on {k_lo}..{k_hi} needs f on {k_lo}..{k_hi + i - 1} "
            f"and g on {k_lo}..{k_hi + r - 1}"
        )
    inv_q = 1.0 / f.lattice.q

    lhs = q_integral(f * dq_k(shift_sigma(g, r - i), i), k_lo, k_hi)

    body = q_integral(dq_k(f, i) * shift_sigma(g, r), k_lo, k_hi)
    rhs = (-1) ** i * inv_q ** (i * (i - 1) // 2) * body

    def bracket(k: int) -> float:
        val = f.at(k) * dq_k(shift_sigma(g, r - i), i - 1).at(k)
        for kk in range(1, i):
            coeff = 1.0
            for j in range(1, kk + 1):
                coeff *= inv_q ** (i - j)
            val += (
                (-1) ** kk
                * dq_k(f, kk).at(k)
                * dq_k(shift_sigma(g, r - i + kk), i - 1 - kk).at(k)
                * coeff
            )
        return val

    rhs += bracket(k_hi) - bracket(k_lo)
    return lhs, rhs


def el_coefficient(q: float, i: int) -> float:
    """``(-1)^i (1/q)^(i(i-1)/2)``, the weight of ``D_q^i[d_{i+2} L<x>]``."""
    return (-1) ** i * (1.0 / q) ** (i * (i - 1) // 2)


def _el_parts(L: ExprAst, x: LatticeFn) -> list[LatticeFn]:
    r = L.r
    _need(x, 2 * r + 1, "Euler-Lagrange residual")
    return [dq_k(partial_on(L, x, i + 2), i) for i in range(r + 1)]


def el_residual(L: ExprAst, x: LatticeFn) -> LatticeFn:
    """Euler-Lagrange operator applied to ``x``, on ``x.offset .. x.last - 2r``."""
    q = x.lattice.q
    parts = _el_parts(L, x)
    total = parts[0] * el_coefficient(q, 0)
    for i, p in enumerate(parts[1:], start=1):
        total = total + p * el_coefficient(q, i)
    return total


def _abs_dq(f: LatticeFn, i: int) -> LatticeFn:
    lat = f.lattice
    g = f.with_values(np.abs(f.values))
    for _ in range(i):
        t = lat.points[g.offset : g.last]
        g = LatticeFn(lat, g.offset, (g.values[1:] + g.values[:-1]) / ((lat.q - 1.0) * t))
    return g


def el_scale(L: ExprAst, x: LatticeFn) -> LatticeFn:
    """Magnitude against which the residual at each index is judged.

    Applies the absolute values of every stencil coefficient to the
    absolute values of the partials, bounding the size of the terms that
    cancel in :func:`el_residual`. Floored at the smallest normal double.
    """
    r, q = L.r, x.lattice.q
    _need(x, 2 * r + 1, "Euler-Lagrange residual")
    total = None
    for i in range(r + 1):
        part = _abs_dq(partial_on(L, x, i + 2), i) * abs(el_coefficient(q, i))
        total = part if total is None else total + part
    return total.with_values(np.maximum(total.values, np.finfo(float).tiny))


def _psi(q: float, r: int, k: int, i: int) -> float:
    out = 1.0
    for j in range(1, i + 1):
        out *= (1.0 / q) ** (r - (k - 1) + (j - 1))
    return out


def _bracket_parts(L: ExprAst, x: LatticeFn, k: int) -> list[LatticeFn]:
    r, q = L.r, x.lattice.q
    if not 1 <= k <= r:
        raise ValueError(f"transversality index must be in 1..{r}, got {k}")
    top = r + 2 - (k - 1)
    parts = [partial_on(L, x, top)]
    for i in range(1, k):
        parts.append(dq_k(partial_on(L, x, top + i), i) * ((-1) ** i * _psi(q, r, k, i)))
    return parts


def _factor(x: LatticeFn, r: int, k: int) -> LatticeFn:
    return dq_k(shift_sigma(x, k - 1), r - k)


def transversality_bracket(L: ExprAst, x: LatticeFn, k: int, idx: int) -> list[float]:
    """The ``k`` summands of the ``k``-th transversality bracket at ``t_idx``."""
    r = L.r
    hi = idx + r + k - 1
    if not x.covers(idx, hi):
        raise DomainTooShortError(f"transversality k={k} at index {idx} needs x on {idx}..{hi}")
    return [p.at(idx) for p in _bracket_parts(L, x.window(idx, hi), k)]


def transversality_term(L: ExprAst, x: LatticeFn, k: int, idx: int) -> float:
    """The ``k``-th transversality expression at ``T' = t_idx``."""
    terms = transversality_bracket(L, x, k, idx)
    factor = _factor(x.window(idx, idx + L.r + k - 1), L.r, k).at(idx)
    return math.fsum(terms) * factor


def liminf_envelope(seq: Sequence[float]) -> np.ndarray:
    """Suffix minima: ``env[j] = min(seq[j:])``."""
    arr = np.asarray(seq, dtype=float)
    if arr.size == 0:
        raise ValueError("liminf envelope of an empty sequence")
    return np.minimum.accumulate(arr[::-1])[::-1]


@dataclass(frozen=True)
class TransversalitySequence:
    k: int
    sample_indices: tuple[int, ...]
    terms: np.ndarray
    envelope: np.ndarray

    @property
    def liminf_estimate(self) -> float:
        """Tail infimum at the largest sampled ``T'``; NaN when nothing was sampled."""
        return float(self.envelope[-1]) if self.envelope.size else math.nan


def transversality_sequence(
    L: ExprAst, x: LatticeFn, k: int, sample_indices: Sequence[int]
) -> TransversalitySequence:
    r = L.r
    idx = tuple(int(i) for i in sample_indices)
    if not idx:
        empty = np.empty(0)
        return TransversalitySequence(k, idx, empty, empty)
    hi = max(idx) + r + k - 1
    if not x.covers(min(idx), hi):
        raise DomainTooShortError(
            f"transversality k={k} at indices {min(idx)}..{max(idx)} needs x up to {hi}"
        )
    parts = _bracket_parts(L, x, k)
    factor = _factor(x, r, k)
    terms = np.array(
        [math.fsum(p.at(j) for p in parts) * factor.at(j) for j in idx], dtype=float
    )
    return TransversalitySequence(k, idx, terms, liminf_envelope(terms))


@dataclass(frozen=True)
class GapReport:
    """Objective gap of a challenger against a candidate over growing horizons."""

    sample_indices: tuple[int, ...]
    terms: np.ndarray
    envelope: np.ndarray
    gap_tol: float

    @property
    def liminf_estimate(self) -> float:
        return float(self.envelope[-1])

    @property
    def passes(self) -> bool:
        """Candidate not beaten by the challenger on the sampled window."""
        return self.liminf_estimate <= self.gap_tol


def weak_maximality_gap(
    L: ExprAst,
    x_star: LatticeFn,
    x: LatticeFn,
    sample_indices: Sequence[int],
    gap_tol: float | None = None,
) -> GapReport:
    """``int_{t_0}^{t_j} (L<x> - L<x_star>) d_q t`` for each sampled ``j``.

    With ``gap_tol`` unset the tolerance is ``1e-8 * (1 + S)`` where ``S``
    is the largest truncated objective magnitude of either path on the window.
    """
    if x_star.lattice != x.lattice:
        raise MismatchedLatticeError("candidate and challenger live on different lattices")
    idx = tuple(int(i) for i in sample_indices)
    if not idx:
        raise ValueError("need at least one sample index")
    if any(b <= a for a, b in zip(idx, idx[1:])) or idx[0] < 0:
        raise ValueError("sample indices must be nonnegative and strictly increasing")
    hi = max(idx[-1] - 1 + L.r, L.r)
    if not (x.covers(0, hi) and x_star.covers(0, hi)):
        raise DomainTooShortError(f"gap up to index {idx[-1]} needs both paths on 0..{hi}")
    l_x = lagrangian_on(L, x.window(0, hi))
    l_star = lagrangian_on(L, x_star.window(0, hi))
    diff = l_x - l_star
    terms = np.array([q_integral(diff, 0, j) for j in idx])
    if gap_tol is None:
        scale = max(max(abs(q_integral(l_x, 0, j)), abs(q_integral(l_star, 0, j))) for j in idx)
        gap_tol = 1e-8 * (1.0 + scale)
    return GapReport(idx, terms, liminf_envelope(terms), float(gap_tol))
