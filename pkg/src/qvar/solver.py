"""Admissible prefixes, Euler-Lagrange shooting, direct optimization, diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qvar.errors import (
    DegenerateLagrangianError,
    DomainTooShortError,
    EvalDomainError,
    LineSearchStallError,
    NoBracketError,
    ValidationError,
)
from qvar.expr import ExprAst, differentiate, evaluate
from qvar.lattice import LatticeFn, QLattice, dq_k
from qvar.variational import (
    TransversalitySequence,
    el_residual,
    el_scale,
    functional_truncated,
    transversality_sequence,
)

__all__ = [
    "Tolerances",
    "ProblemSpec",
    "TrajectoryDiagnostics",
    "OptimizeResult",
    "seed_prefix",
    "default_sample_indices",
    "shoot_forward",
    "stencil_matrices",
    "optimize_truncated",
    "diagnose",
]

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
_MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class Tolerances:
    root_tol: float = 1e-10
    grad_tol: float = 1e-8
    gap_tol: float = 1e-8
    tail_tol: float = 1e-9

    def __post_init__(self) -> None:
        for name in ("root_tol", "grad_tol", "gap_tol", "tail_tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"tolerance {name} must be finite and positive, got {v!r}")


@dataclass(frozen=True)
class ProblemSpec:
    lattice: QLattice
    r: int
    lagrangian: ExprAst
    alphas: tuple[float, ...]
    k_hi: int
    sample_indices: tuple[int, ...] | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)
    lagrangian_text: str | None = None

    def __post_init__(self) -> None:
        r = self.r
        if r < 1:
            raise ValidationError(f"order must be >= 1, got {r}")
        if self.lagrangian.r != r:
            raise ValidationError(f"Lagrangian has order {self.lagrangian.r}, problem has {r}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if len(self.alphas) != r:
            raise ValidationError(f"need {r} initial conditions, got {len(self.alphas)}")
        if not all(math.isfinite(a) for a in self.alphas):
            raise ValidationError("initial conditions must be finite")
        N = self.lattice.N
        if self.k_hi < 1 or self.k_hi + r > N:
            raise ValidationError(f"k_hi must satisfy 1 <= k_hi and k_hi + r <= {N}, got {self.k_hi}")
        if self.sample_indices is not None:
            idx = tuple(int(i) for i in self.sample_indices)
            if not idx:
                raise ValidationError("sample_indices must not be empty")
            if any(b <= a for a, b in zip(idx, idx[1:])):
                raise ValidationError("sample_indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] + 2 * r - 1 > N:
                raise ValidationError(
                    f"sample_indices must lie in 0..{N - 2 * r + 1} for order {r} on this lattice"
                )
            object.__setattr__(self, "sample_indices", idx)


def seed_prefix(alphas: Sequence[float], lattice: QLattice, r: int) -> np.ndarray:
    """First ``r`` trajectory values meeting ``D_q^j[x](t_0) = alphas[j]``.

    ``D_q^j[x](t_0)`` reads ``x(t_0) .. x(t_j)`` and the coefficient on
    ``x(t_j)`` is never zero, so the values are solved one at a time.
    """
    if len(alphas) != r:
        raise ValueError(f"need {r} initial conditions, got {len(alphas)}")
    if lattice.n_points < r:
        raise DomainTooShortError(f"lattice has {lattice.n_points} points, need {r}")
    x = np.zeros(r)
    for j in range(r):
        base = dq_k(LatticeFn(lattice, 0, x[: j + 1]), j).values[0]
        # coefficient of x(t_j), taken from the unit vector rather than as a
        # difference of two evaluations, which cancels badly when |base| is large
        unit = np.zeros(j + 1)
        unit[j] = 1.0
        lead = dq_k(LatticeFn(lattice, 0, unit), j).values[0]
        x[j] = (alphas[j] - base) / lead
    return x


def default_sample_indices(r: int, last: int) -> tuple[int, ...]:
    """Indices ``r .. last - 2r + 1``: every ``T'`` where all ``r`` conditions fit."""
    return tuple(range(r, last - 2 * r + 2))


# -- shooting ----------------------------------------------------------------


def _residual_at(L: ExprAst, lattice: QLattice, k: int, window: list[float]) -> tuple[float, float]:
    w = LatticeFn(lattice, k, np.asarray(window, dtype=float))
    return el_residual(L, w).values[0], el_scale(L, w).values[0]


def shoot_forward(
    L: ExprAst, prefix: Sequence[float], spec: ProblemSpec, n_points: int | None = None
) -> LatticeFn:
    """Extend a ``2r``-value prefix by solving the Euler-Lagrange recurrence.

    Step ``k`` chooses ``x(t_{k+2r})`` so that the residual at ``t_k``
    vanishes to ``root_tol`` relative to its term magnitudes. The root is
    bracketed around a secant guess, then refined by Illinois-type regula
    falsi. Returns values on ``0 .. n_points - 1`` (the whole lattice by default).
    """
    r = L.r
    lattice = spec.lattice
    tol = spec.tolerances.root_tol
    if len(prefix) != 2 * r:
        raise ValueError(f"shooting needs a prefix of {2 * r} values, got {len(prefix)}")
    n_total = lattice.n_points if n_points is None else n_points
    if n_total < 2 * r + 1 or n_total > lattice.n_points:
        raise DomainTooShortError(f"cannot shoot over {n_total} points with order {r}")
    values = [float(v) for v in prefix]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("prefix values must be finite")
    q = lattice.q

    for k in range(n_total - 2 * r):
        base = values[k:]

        def g(v: float) -> tuple[float, float]:
            return _residual_at(L, lattice, k, base + [v])

        v0 = values[-1] + q * (values[-1] - values[-2])
        g0, s0 = g(v0)
        h = abs(v0) + 1.0
        # an explosive recurrence can put the root many orders beyond v0, so a
        # flat response is retried with wider probes before calling it singular
        for _ in range(_MAX_DOUBLINGS):
            g1, s1 = g(v0 + h)
            if abs(g1 - g0) > 1e-12 * max(s0, s1):
                break
            if not math.isfinite(v0 + 1024.0 * h):
                break
            h *= 1024.0
        if abs(g1 - g0) <= 1e-12 * max(s0, s1):
            raise DegenerateLagrangianError(
                f"residual at t_{k} does not depend on x(t_{k + 2 * r}); "
                "the Lagrangian is singular in its top derivative"
            )
        if abs(g0) <= tol * s0:
            values.append(v0)
            continue
        vc = v0 - g0 * h / (g1 - g0)
        gc, sc = g(vc)
        if abs(gc) <= tol * sc:
            values.append(vc)
            continue
        values.append(_bracket_and_refine(g, vc, gc, sc, h, tol, k))
        if not math.isfinite(values[-1]):
            raise NoBracketError(f"shooting diverged at step {k}")
    log.debug("shot %d steps", n_total - 2 * r)
    return LatticeFn(lattice, 0, np.asarray(values))


def _bracket_and_refine(g, vc, gc, sc, width0, tol, k) -> float:
    lo = hi = None
    for j in range(_MAX_DOUBLINGS + 1):
        w = width0 * 2.0**j
        if not (math.isfinite(vc + w) and math.isfinite(vc - w)):
            break
        for cand in (vc + w, vc - w):
            gv, sv = g(cand)
            if abs(gv) <= tol * sv:
                return cand
            if math.copysign(1.0, gv) != math.copysign(1.0, gc):
                lo, glo, hi, ghi = vc, gc, cand, gv
                break
        if lo is not None:
            break
    if lo is None:
        raise NoBracketError(f"no sign change for the residual at t_{k} within {_MAX_DOUBLINGS} doublings")

    a, ga, b, gb = lo, glo, hi, ghi
    best, gbest = (a, ga) if abs(ga) < abs(gb) else (b, gb)
    for _ in range(400):
        c = b - gb * (b - a) / (gb - ga)
        if not (min(a, b) <= c <= max(a, b)):
            c = 0.5 * (a + b)
        gc_, sc_ = g(c)
        if abs(gc_) < abs(gbest):
            best, gbest = c, gc_
        if abs(gc_) <= tol * sc_:
            return c
        if gc_ * gb < 0:
            a, ga = b, gb
        else:
            ga *= 0.5
        b, gb = c, gc_
        if abs(b - a) <= 4 * _EPS * max(abs(a), abs(b)):
            break
    log.info("step %d: bracket collapsed with residual %.3e", k, gbest)
    return best


# -- direct optimization -----------------------------------------------------


def stencil_matrices(lattice: QLattice, n: int, r: int) -> list[np.ndarray]:
    """Linear maps from ``x(t_0..t_{n-1})`` to the ``u`` arguments.

    Entry ``i`` has shape ``(n - r, n)`` and sends ``x`` to
    ``D_q^i[x o sigma^(r-i)]`` on ``t_0 .. t_{n-r-1}``.
    """
    t = lattice.points
    out = []
    for i in range(r + 1):
        a = np.eye(n)[r - i :]
        for _ in range(i):
            m = a.shape[0]
            scale = 1.0 / ((lattice.q - 1.0) * t[: m - 1])
            a = (a[1:] - a[:-1]) * scale[:, None]
        out.append(a)
    return out


@dataclass(frozen=True)
class OptimizeResult:
    x: LatticeFn
    j: float
    iterations: int
    grad_max: float
    scale: float
    converged: bool

    def __iter__(self):
        return iter((self.x, self.j))


class _Objective:
    def __init__(self, L: ExprAst, lattice: QLattice, n: int) -> None:
        r = L.r
        self.L = L
        self.r = r
        self.mats = stencil_matrices(lattice, n, r)
        self.t = lattice.points[: n - r]
        self.w = (lattice.q - 1.0) * self.t
        self.grads = [differentiate(L, i + 2) for i in range(r + 1)]
        self.hess = [[differentiate(gi, j + 2) for j in range(r + 1)] for gi in self.grads]

    def args(self, x: np.ndarray) -> list[np.ndarray]:
        return [self.t] + [m @ x for m in self.mats]

    def _eval(self, expr: ExprAst, args) -> np.ndarray:
        return np.broadcast_to(np.asarray(evaluate(expr.root, args), dtype=float), self.t.shape)

    def value(self, x: np.ndarray) -> tuple[float, float]:
        """Objective and the magnitude its rounding error is proportional to.

        The stencil arguments carry an absolute error of about
        ``eps * (|M_i| @ |x|)``, which for small ``q - 1`` dwarfs the error of
        the final sum, so it is propagated through ``|dL/du_i|`` as well.
        """
        args = self.args(x)
        terms = self.w * self._eval(self.L, args)
        ax = np.abs(x)
        spread = sum(
            np.abs(self._eval(d, args)) * (np.abs(m) @ ax) for m, d in zip(self.mats, self.grads)
        )
        return math.fsum(terms), float(np.sum(np.abs(terms)) + np.sum(self.w * spread))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        args = self.args(x)
        return sum(m.T @ (self.w * self._eval(d, args)) for m, d in zip(self.mats, self.grads))

    def hessian(self, x: np.ndarray) -> np.ndarray:
        args = self.args(x)
        h = 0.0
        for i, mi in enumerate(self.mats):
            for j, mj in enumerate(self.mats):
                h = h + mi.T @ ((self.w * self._eval(self.hess[i][j], args))[:, None] * mj)
        return 0.5 * (h + h.T)


def _ascent_direction(obj: _Objective, x: np.ndarray, g: np.ndarray, free: slice, metric: str):
    if metric == "identity":
        return g
    p = -obj.hessian(x)[free, free]
    lam, vec = np.linalg.eigh(p)
    top = max(float(np.max(np.abs(lam))), np.finfo(float).tiny)
    lam = np.maximum(np.abs(lam), 1e-10 * top)
    return vec @ ((vec.T @ g) / lam)


def optimize_truncated(
    L: ExprAst,
    alphas: Sequence[float],
    spec: ProblemSpec,
    *,
    x0: Sequence[float] | None = None,
    max_iters: int = 10000,
    metric: str = "hessian",
) -> OptimizeResult:
    """Maximize the truncated functional over ``x(t_r) .. x(t_{k_hi-1+r})``.

    The first ``r`` values are pinned by :func:`seed_prefix`. Each iteration
    takes an ascent step along the exact gradient, measured in the metric
    given by the clipped negative Hessian (``metric="hessian"``) or the
    Euclidean one (``metric="identity"``), accepted by Armijo backtracking
    (constant 1e-4, shrink 0.5). Stops once the gradient max-norm is at most
    ``grad_tol * max(1, |J|)``.
    """
    r = L.r
    if metric not in ("hessian", "identity"):
        raise ValueError(f"unknown metric {metric!r}")
    k_hi = spec.k_hi
    if k_hi < r:
        raise ValidationError(f"optimization needs k_hi >= r, got k_hi={k_hi}, r={r}")
    lattice = spec.lattice
    n = k_hi + r
    prefix = seed_prefix(alphas, lattice, r)
    if x0 is None:
        x = np.concatenate([prefix, np.full(k_hi, prefix[-1])])
    else:
        x = np.asarray(x0, dtype=float).copy()
        if x.shape != (n,):
            raise ValueError(f"initial guess must have {n} values")
        x[:r] = prefix
    free = slice(r, n)
    obj = _Objective(L, lattice, n)
    grad_tol = spec.tolerances.grad_tol

    J, mag = obj.value(x)
    step = 1.0
    it = 0
    while True:
        g = obj.gradient(x)[free]
        gmax = float(np.max(np.abs(g)))
        scale = max(1.0, abs(J))
        if gmax <= grad_tol * scale:
            converged = True
            break
        if it >= max_iters:
            converged = False
            log.warning("optimizer stopped after %d iterations, |grad| = %.3e", it, gmax)
            break
        d = _ascent_direction(obj, x, g, free, metric)
        slope = float(g @ d)
        alpha = 1.0 if metric == "hessian" else min(1.0, 2.0 * step)
        slack = 8 * _EPS * mag
        while True:
            trial = x.copy()
            trial[free] += alpha * d
            try:
                J_new, mag_new = obj.value(trial)
            except EvalDomainError:
                J_new = -math.inf
            if J_new >= J + 1e-4 * alpha * slope - slack and J_new > -math.inf:
                break
            alpha *= 0.5
            if alpha < 1e-16:
                raise LineSearchStallError(
                    f"no ascent step at iteration {it} (|grad| = {gmax:.3e})"
                )
        x, J, mag, step = trial, J_new, mag_new, alpha
        it += 1

    log.info("optimizer: %d iterations, J = %.17g, |grad| = %.3e", it, J, gmax)
    return OptimizeResult(LatticeFn(lattice, 0, x), J, it, gmax, scale, converged)


# -- diagnostics -------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryDiagnostics:
    el: LatticeFn | None
    el_scale: LatticeFn | None
    el_max_abs: float
    transversality: tuple[TransversalitySequence, ...]
    j_value: float
    convergence_flags: dict[str, bool]

    @property
    def r(self) -> int:
        return len(self.transversality)


def diagnose(L: ExprAst, x: LatticeFn, spec: ProblemSpec) -> TrajectoryDiagnostics:
    """Residuals, transversality sequences and objective value of ``x``.

    Flags are window-relative: ``el`` holds when every residual is within
    ``root_tol`` of its term magnitude, ``tv_k`` when the tail infimum of
    the ``k``-th sequence at the last sampled index is within ``gap_tol``
    of zero relative to the sequence magnitude.
    """
    r = L.r
    if x.offset != 0:
        raise DomainTooShortError("diagnostics need a trajectory starting at t_0")
    if len(x) < 2 * r + 1:
        raise DomainTooShortError(f"diagnostics need at least {2 * r + 1} values, got {len(x)}")
    tol = spec.tolerances
    el = el_residual(L, x)
    scale = el_scale(L, x)
    el_max = float(np.max(np.abs(el.values)))
    flags = {"el": bool(np.all(np.abs(el.values) <= tol.root_tol * scale.values))}

    idx = spec.sample_indices
    if idx is None:
        idx = default_sample_indices(r, x.last)
    seqs = tuple(transversality_sequence(L, x, k, idx) for k in range(1, r + 1))
    for s in seqs:
        if s.terms.size:
            ref = 1.0 + float(np.max(np.abs(s.terms)))
            flags[f"tv_{s.k}"] = abs(s.liminf_estimate) <= tol.gap_tol * ref
        else:
            flags[f"tv_{s.k}"] = False

    j_value = functional_truncated(L, x, spec.k_hi)
    return TrajectoryDiagnostics(el, scale, el_max, seqs, j_value, flags)
