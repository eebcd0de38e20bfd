"""Command line front end.

Exit codes: 0 success, 1 invalid input, 2 numerical failure. Set
``QVAR_LOG`` to ``error``, ``info`` or ``debug`` for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from qvar.errors import InputError, NumericalError
from qvar.identities import run_identity_suite
from qvar.io import emit_trajectory_csv, load_problem, read_trajectory_csv
from qvar.solver import diagnose, optimize_truncated, seed_prefix, shoot_forward

log = logging.getLogger("qvar")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

_EPILOG = """\
Lagrangians are written in t, u1, ..., u{r+1} for order r: u1 is x(q^r t),
u{i+1} is the i-th Jackson derivative of x o sigma^(r-i), so u{r+1} = D_q^r[x].
Operators + - * / ^ (right associative), unary minus, exp ln sin cos sqrt.
"""


def _configure_logging() -> None:
    level = os.environ.get("QVAR_LOG", "error").strip().upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.ERROR) if level in ("ERROR", "INFO", "DEBUG") else logging.ERROR,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, newline="")


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _parse_prefix(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"--prefix must be comma-separated numbers, got {text!r}") from None


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_identity_suite(trials=args.trials, seed=args.seed)
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        print(f"{status} {res.name}: {res.passed} passed, {res.failed} failed, worst {res.worst:.3e}")
    failed = sum(r.failed for r in results)
    print(f"total: {sum(r.passed for r in results)} passed, {failed} failed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def cmd_solve(args: argparse.Namespace) -> int:
    spec = load_problem(_read(args.problem))
    r = spec.r
    if args.prefix is not None:
        prefix = _parse_prefix(args.prefix)
        if len(prefix) != 2 * r:
            raise InputError(f"--prefix needs {2 * r} values for order {r}, got {len(prefix)}")
    else:
        # the r free shooting parameters default to vanishing higher derivatives at a
        prefix = list(seed_prefix(spec.alphas + (0.0,) * r, spec.lattice, 2 * r))
    x = shoot_forward(spec.lagrangian, prefix, spec)
    diag = diagnose(spec.lagrangian, x, spec)
    _write(emit_trajectory_csv(x, diag), args.out)
    log.info("solve: max |EL| = %.3e, J = %.17g", diag.el_max_abs, diag.j_value)
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    spec = load_problem(_read(args.problem))
    res = optimize_truncated(spec.lagrangian, spec.alphas, spec, max_iters=args.max_iters)
    diag = diagnose(spec.lagrangian, res.x, spec)
    _write(emit_trajectory_csv(res.x, diag), args.out)
    if not res.converged:
        log.error("optimizer did not converge: |grad| = %.3e after %d iterations", res.grad_max, res.iterations)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    spec = load_problem(_read(args.problem))
    x = read_trajectory_csv(_read(args.traj), spec.lattice)
    diag = diagnose(spec.lagrangian, x, spec)
    _write(emit_trajectory_csv(x, diag), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qvar",
        description="Higher-order q-variational problems on geometric lattices.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the randomized q-calculus identity checks")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("solve", help="shoot the Euler-Lagrange recurrence forward")
    p.add_argument("problem")
    p.add_argument("--prefix", help="2r comma-separated initial values x(t_0),...,x(t_{2r-1})")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("optimize", help="maximize the truncated functional directly")
    p.add_argument("problem")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--max-iters", type=int, default=10000)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("diagnose", help="residuals and transversality of a stored trajectory")
    p.add_argument("problem")
    p.add_argument("--traj", required=True, help="trajectory CSV with k and x columns")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
