"""Problem files (JSON in) and trajectory reports (CSV out).

Problem file schema; every key outside it is rejected::

    {
      "lattice": {"a": 1, "q": 2, "n_points": 12},
      "order": 1,
      "lagrangian": "-(u2^2)",
      "initial_conditions": [1],
      "horizon": {"k_hi": 4, "sample_indices": [1, 2, 3]},     # sample_indices optional
      "tolerances": {"root_tol": 1e-10, "grad_tol": 1e-8,       # all optional
                     "gap_tol": 1e-8, "tail_tol": 1e-9}
    }

Trajectory CSV header: ``k,t,x,el_residual,tv_1,...,tv_r``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any

import numpy as np

from qvar.errors import InputError, ParseError, ValidationError
from qvar.expr import parse_expression
from qvar.lattice import LatticeFn, QLattice
from qvar.solver import ProblemSpec, Tolerances, TrajectoryDiagnostics

__all__ = [
    "load_problem",
    "dump_problem",
    "emit_trajectory_csv",
    "read_trajectory_csv",
    "format_number",
]

_TOP = {"lattice", "order", "lagrangian", "initial_conditions", "horizon", "tolerances"}
_REQUIRED = {"lattice", "order", "lagrangian", "initial_conditions", "horizon"}
_LATTICE = {"a", "q", "n_points"}
_HORIZON = {"k_hi", "sample_indices"}
_TOLS = {"root_tol", "grad_tol", "gap_tol", "tail_tol"}


def _reject_constant(name: str):
    raise ValidationError(f"non-finite number {name} in problem file")


def _check_keys(obj: Any, allowed: set[str], required: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where} must be an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValidationError(f"unknown field(s) in {where}: {', '.join(unknown)}")
    missing = sorted(required - set(obj))
    if missing:
        raise ValidationError(f"missing field(s) in {where}: {', '.join(missing)}")
    return obj


def _real(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"{where} must be a finite number, got {v!r}")
    return float(v)


def _int(v: Any, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{where} must be an integer, got {v!r}")
    return v


def load_problem(text: str) -> ProblemSpec:
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", exc.pos) from None
    _check_keys(doc, _TOP, _REQUIRED, "problem")

    lat = _check_keys(doc["lattice"], _LATTICE, _LATTICE, "lattice")
    a = _real(lat["a"], "lattice.a")
    q = _real(lat["q"], "lattice.q")
    n_points = _int(lat["n_points"], "lattice.n_points")
    if n_points < 1:
        raise ValidationError("lattice.n_points must be >= 1")
    try:
        lattice = QLattice(a, q, n_points)
    except InputError as exc:
        raise ValidationError(str(exc)) from None

    r = _int(doc["order"], "order")
    if r < 1:
        raise ValidationError("order must be >= 1")
    text_l = doc["lagrangian"]
    if not isinstance(text_l, str):
        raise ValidationError("lagrangian must be a string")
    L = parse_expression(text_l, r)

    ics = doc["initial_conditions"]
    if not isinstance(ics, list):
        raise ValidationError("initial_conditions must be an array")
    alphas = tuple(_real(v, f"initial_conditions[{i}]") for i, v in enumerate(ics))

    hor = _check_keys(doc["horizon"], _HORIZON, {"k_hi"}, "horizon")
    k_hi = _int(hor["k_hi"], "horizon.k_hi")
    samples = hor.get("sample_indices")
    if samples is not None:
        if not isinstance(samples, list):
            raise ValidationError("horizon.sample_indices must be an array")
        samples = tuple(_int(v, "horizon.sample_indices") for v in samples)

    tols = _check_keys(doc.get("tolerances", {}), _TOLS, set(), "tolerances")
    tolerances = Tolerances(**{k: _real(v, f"tolerances.{k}") for k, v in tols.items()})

    return ProblemSpec(
        lattice=lattice,
        r=r,
        lagrangian=L,
        alphas=alphas,
        k_hi=k_hi,
        sample_indices=samples,
        tolerances=tolerances,
        lagrangian_text=text_l,
    )


def dump_problem(spec: ProblemSpec) -> str:
    """Serialize ``spec`` in the problem-file schema (defaults written out)."""
    tol = spec.tolerances
    horizon: dict[str, Any] = {"k_hi": spec.k_hi}
    if spec.sample_indices is not None:
        horizon["sample_indices"] = list(spec.sample_indices)
    doc = {
        "lattice": {"a": spec.lattice.a, "q": spec.lattice.q, "n_points": spec.lattice.n_points},
        "order": spec.r,
        "lagrangian": spec.lagrangian_text if spec.lagrangian_text is not None else str(spec.lagrangian),
        "initial_conditions": list(spec.alphas),
        "horizon": horizon,
        "tolerances": {
            "root_tol": tol.root_tol,
            "grad_tol": tol.grad_tol,
            "gap_tol": tol.gap_tol,
            "tail_tol": tol.tail_tol,
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def format_number(v: float) -> str:
    return f"{v:.17g}"


def emit_trajectory_csv(x: LatticeFn, diag: TrajectoryDiagnostics) -> str:
    r = diag.r
    el = {} if diag.el is None else dict(zip(diag.el.indices.tolist(), diag.el.values.tolist()))
    tv = [dict(zip(s.sample_indices, s.terms.tolist())) for s in diag.transversality]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "t", "x", "el_residual", *(f"tv_{k}" for k in range(1, r + 1))])
    for k, t, v in zip(x.indices.tolist(), x.points.tolist(), x.values.tolist()):
        row = [str(k), format_number(t), format_number(v)]
        row.append(format_number(el[k]) if k in el else "")
        row.extend(format_number(seq[k]) if k in seq else "" for seq in tv)
        w.writerow(row)
    return buf.getvalue()


def read_trajectory_csv(text: str, lattice: QLattice) -> LatticeFn:
    """Read the ``k`` and ``x`` columns back into a lattice function."""
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or "k" not in rows[0] or "x" not in rows[0]:
        raise ValidationError("trajectory CSV needs k and x columns and at least one row")
    try:
        ks = [int(row["k"]) for row in rows]
        xs = [float(row["x"]) for row in rows]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad number in trajectory CSV: {exc}") from None
    if ks != list(range(ks[0], ks[0] + len(ks))):
        raise ValidationError("trajectory CSV rows must have consecutive k")
    if ks[0] < 0 or ks[-1] > lattice.N:
        raise ValidationError(f"trajectory indices {ks[0]}..{ks[-1]} exceed lattice 0..{lattice.N}")
    if not all(math.isfinite(v) for v in xs):
        raise ValidationError("trajectory values must be finite")
    return LatticeFn(lattice, ks[0], np.asarray(xs))
