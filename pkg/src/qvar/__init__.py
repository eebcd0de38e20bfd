"""Jackson q-calculus toolkit for higher-order infinite-horizon variational problems."""

from qvar.errors import *  # noqa: F401,F403
from qvar.expr import ExprAst, differentiate, eval_expression, parse_expression
from qvar.io import dump_problem, emit_trajectory_csv, load_problem, read_trajectory_csv
from qvar.lattice import (
    ImproperIntegral,
    IntegralStatus,
    LatticeFn,
    QLattice,
    dq_k,
    improper_q_integral,
    make_lattice,
    q_integral,
    shift_sigma,
)
from qvar.solver import (
    OptimizeResult,
    ProblemSpec,
    Tolerances,
    TrajectoryDiagnostics,
    diagnose,
    optimize_truncated,
    seed_prefix,
    shoot_forward,
)
from qvar.variational import (
    ArgVector,
    GapReport,
    TransversalitySequence,
    angle_args,
    el_residual,
    first_variation,
    functional_truncated,
    ibp_identity_sides,
    liminf_envelope,
    transversality_term,
    weak_maximality_gap,
)

__version__ = "0.1.0"
