r"""Geometric lattices, functions sampled on them, and the Jackson calculus.

A lattice is the finite grid :math:`t_k = a q^k`, :math:`k = 0, \dots, N`,
with ratio :math:`q > 1`. Functions live on contiguous index windows of a
lattice (:class:`LatticeFn`). The Jackson derivative

.. math::

    D_q[f](t) = \frac{f(qt) - f(t)}{(q - 1) t}

and the forward jump :math:`\sigma(t) = qt` both reduce to index arithmetic,
and the q-integral is the weighted sum :math:`(q-1)\sum_k t_k f(t_k)`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from qvar.errors import (
    DomainTooShortError,
    InvalidBaseError,
    InvalidRatioError,
    LatticeOverflowError,
    MismatchedLatticeError,
)

__all__ = [
    "QLattice",
    "LatticeFn",
    "IntegralStatus",
    "ImproperIntegral",
    "make_lattice",
    "dq_k",
    "shift_sigma",
    "q_integral",
    "partial_sums",
    "improper_q_integral",
]


@dataclass(frozen=True)
class QLattice:
    """The grid ``t_k = a * q**k`` for ``k = 0 .. n_points - 1``."""

    a: float
    q: float
    n_points: int
    _points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        a, q, n = float(self.a), float(self.q), int(self.n_points)
        if not math.isfinite(q) or q <= 1.0:
            raise InvalidRatioError(f"lattice ratio must satisfy q > 1, got {self.q!r}")
        if not math.isfinite(a) or a <= 0.0:
            raise InvalidBaseError(f"lattice base must satisfy a > 0, got {self.a!r}")
        if n < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points!r}")
        try:
            last = a * q ** (n - 1)
        except OverflowError:
            last = math.inf
        if not math.isfinite(last):
            raise LatticeOverflowError(
                f"last lattice point a*q^{n - 1} is not representable in double precision"
            )
        # each point recomputed from (a, q, k): no cumulative drift
        pts = np.array([a * q**k for k in range(n)], dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "_points", pts)

    @property
    def N(self) -> int:
        """Largest lattice index."""
        return self.n_points - 1

    @property
    def points(self) -> np.ndarray:
        return self._points

    def point(self, k: int) -> float:
        if not 0 <= k <= self.N:
            raise IndexError(f"lattice index {k} outside 0..{self.N}")
        return float(self._points[k])

    def sample(
        self,
        func: Callable[[np.ndarray], np.ndarray] | Callable[[float], float],
        offset: int = 0,
        length: int | None = None,
    ) -> LatticeFn:
        """Sample ``func`` at ``t_offset, ..., t_{offset+length-1}``.

        ``func`` is called once on the array of points; scalar-only callables
        are applied pointwise as a fallback.
        """
        if length is None:
            length = self.n_points - offset
        t = self._points[offset : offset + length]
        try:
            values = np.asarray(func(t), dtype=float)  # type: ignore[arg-type]
            if values.shape != t.shape:
                values = np.broadcast_to(values, t.shape).astype(float)
        except TypeError:
            values = np.array([func(float(s)) for s in t], dtype=float)  # type: ignore[arg-type]
        return LatticeFn(self, offset, values)


def make_lattice(a: float, q: float, n_points: int) -> QLattice:
    return QLattice(a, q, n_points)


@dataclass(frozen=True, eq=False)
class LatticeFn:
    """Real values ``f(t_k)`` for ``k = offset .. offset + len - 1``.

    Arithmetic between two lattice functions acts on the intersection of
    their index windows. The value array is read-only.
    """

    lattice: QLattice
    offset: int
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size < 1:
            raise DomainTooShortError("a lattice function needs at least one value")
        if self.offset < 0 or self.offset + vals.size - 1 > self.lattice.N:
            raise DomainTooShortError(
                f"indices {self.offset}..{self.offset + vals.size - 1} "
                f"exceed lattice 0..{self.lattice.N}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("lattice function values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    @property
    def last(self) -> int:
        """Largest index covered."""
        return self.offset + self.values.size - 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.last + 1)

    @property
    def points(self) -> np.ndarray:
        return self.lattice.points[self.offset : self.last + 1]

    def covers(self, k_lo: int, k_hi: int) -> bool:
        return self.offset <= k_lo and k_hi <= self.last

    def at(self, k: int) -> float:
        if not self.offset <= k <= self.last:
            raise DomainTooShortError(f"index {k} outside {self.offset}..{self.last}")
        return float(self.values[k - self.offset])

    def window(self, k_lo: int, k_hi: int) -> LatticeFn:
        """Restriction to the closed index range ``[k_lo, k_hi]``."""
        if k_lo > k_hi or not self.covers(k_lo, k_hi):
            raise DomainTooShortError(
                f"window {k_lo}..{k_hi} not inside {self.offset}..{self.last}"
            )
        return LatticeFn(self.lattice, k_lo, self.values[k_lo - self.offset : k_hi - self.offset + 1])

    def with_values(self, values: np.ndarray) -> LatticeFn:
        return LatticeFn(self.lattice, self.offset, values)

    def equals(self, other: LatticeFn) -> bool:
        return (
            self.lattice == other.lattice
            and self.offset == other.offset
            and np.array_equal(self.values, other.values)
        )

    def _binary(self, other, op) -> LatticeFn:
        if isinstance(other, LatticeFn):
            if other.lattice != self.lattice:
                raise MismatchedLatticeError("lattice functions live on different lattices")
            lo, hi = max(self.offset, other.offset), min(self.last, other.last)
            if lo > hi:
                raise DomainTooShortError("lattice functions have disjoint index windows")
            a = self.values[lo - self.offset : hi - self.offset + 1]
            b = other.values[lo - other.offset : hi - other.offset + 1]
            return LatticeFn(self.lattice, lo, op(a, b))
        return LatticeFn(self.lattice, self.offset, op(self.values, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return LatticeFn(self.lattice, self.offset, float(other) - self.values)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return LatticeFn(self.lattice, self.offset, -self.values)

    def __repr__(self) -> str:
        return f"LatticeFn(offset={self.offset}, values={self.values.tolist()!r})"


def _jackson(f: LatticeFn) -> LatticeFn:
    lat = f.lattice
    t = lat.points[f.offset : f.last]
    return LatticeFn(lat, f.offset, np.diff(f.values) / ((lat.q - 1.0) * t))


def dq_k(f: LatticeFn, i: int = 1) -> LatticeFn:
    """The ``i``-th Jackson derivative of ``f``.

    Each application loses the last index, so the result keeps ``f.offset``
    and has ``len(f) - i`` values.
    """
    if i < 0:
        raise ValueError(f"derivative order must be >= 0, got {i}")
    if len(f) <= i:
        raise DomainTooShortError(
            f"order-{i} Jackson derivative needs {i + 1} values, function has {len(f)}"
        )
    for _ in range(i):
        f = _jackson(f)
    return LatticeFn(f.lattice, f.offset, f.values) if i == 0 else f


def shift_sigma(f: LatticeFn, j: int = 1) -> LatticeFn:
    """``f`` composed with ``sigma**j``: ``(f o sigma^j)(t_k) = f(t_{k+j})``."""
    if j < 0:
        raise ValueError(f"shift must be >= 0, got {j}")
    if len(f) <= j:
        raise DomainTooShortError(f"cannot shift {len(f)} values by {j}")
    return LatticeFn(f.lattice, f.offset, f.values[j:])


def q_integral(f: LatticeFn, k_lo: int, k_hi: int) -> float:
    """``(q - 1) * sum(t_k f(t_k) for k in [k_lo, k_hi))``.

    Only the indices ``k_lo .. k_hi - 1`` are read; the upper end point is
    not sampled. Reversed bounds are the caller's business (negate).
    """
    if k_lo > k_hi:
        raise ValueError(f"q_integral needs k_lo <= k_hi, got {k_lo} > {k_hi}")
    if k_lo == k_hi:
        return 0.0
    if not f.covers(k_lo, k_hi - 1):
        raise DomainTooShortError(
            f"integrand covers {f.offset}..{f.last}, integral needs {k_lo}..{k_hi - 1}"
        )
    lat = f.lattice
    vals = f.values[k_lo - f.offset : k_hi - f.offset]
    return float((lat.q - 1.0) * np.dot(lat.points[k_lo:k_hi], vals))


class IntegralStatus(enum.Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    UNDETERMINED = "undetermined"


class ImproperIntegral(NamedTuple):
    value: float
    status: IntegralStatus


def partial_sums(f: LatticeFn) -> np.ndarray:
    """``P_n = q_integral(f, 0, n)`` for ``n = 0 .. len(f)``."""
    if f.offset != 0:
        raise DomainTooShortError("partial sums start at index 0")
    lat = f.lattice
    inc = (lat.q - 1.0) * lat.points[: len(f)] * f.values
    return np.concatenate(([0.0], np.cumsum(inc)))


def improper_q_integral(
    f: LatticeFn, tail_tol: float = 1e-9, tail_window: int = 5
) -> ImproperIntegral:
    """Estimate ``int_a^inf f d_q t`` from the partial sums on the lattice.

    Converged when each of the last ``tail_window`` increments is below
    ``tail_tol`` in magnitude; Diverged when those increments share a sign,
    stay at or above ``tail_tol`` and never shrink. Anything else is
    Undetermined. The value is always the last partial sum.
    """
    if tail_window < 1:
        raise ValueError("tail_window must be >= 1")
    if f.offset != 0 or f.last != f.lattice.N:
        raise DomainTooShortError("improper integral needs f on the whole lattice")
    sums = partial_sums(f)
    value = float(sums[-1])
    inc = np.diff(sums)
    if inc.size < tail_window:
        return ImproperIntegral(value, IntegralStatus.UNDETERMINED)
    tail = inc[-tail_window:]
    mag = np.abs(tail)
    if np.all(mag < tail_tol):
        return ImproperIntegral(value, IntegralStatus.CONVERGED)
    same_sign = np.all(tail > 0) or np.all(tail < 0)
    if same_sign and np.all(mag >= tail_tol) and np.all(np.diff(mag) >= 0):
        return ImproperIntegral(value, IntegralStatus.DIVERGED)
    return ImproperIntegral(value, IntegralStatus.UNDETERMINED)
