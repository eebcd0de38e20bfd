import numpy as np
import pytest

from qvar.errors import (
    DegenerateLagrangianError,
    DomainTooShortError,
    NoBracketError,
    ValidationError,
)
from qvar.expr import parse_expression
from qvar.lattice import LatticeFn, dq_k, make_lattice
from qvar.solver import (
    ProblemSpec,
    Tolerances,
    default_sample_indices,
    diagnose,
    optimize_truncated,
    seed_prefix,
    shoot_forward,
    stencil_matrices,
)
from qvar.variational import angle_arrays, el_residual, functional_truncated

from conftest import RATIOS, concave_lagrangian, lagrangian_family

NEG_SQ1 = parse_expression("-(u2^2)", 1)


def spec_for(L, lat, alphas, k_hi, **kw):
    return ProblemSpec(lat, L.r, L, tuple(alphas), k_hi, **kw)


# -- ProblemSpec --------------------------------------------------------------


def test_problem_spec_validation(lat2):
    with pytest.raises(ValidationError):
        spec_for(NEG_SQ1, lat2, (1, 2), 4)
    with pytest.raises(ValidationError):
        spec_for(NEG_SQ1, lat2, (1,), 11)
    with pytest.raises(ValidationError):
        spec_for(NEG_SQ1, lat2, (1,), 0)
    with pytest.raises(ValidationError):
        spec_for(NEG_SQ1, lat2, (1,), 4, sample_indices=(3, 2))
    with pytest.raises(ValidationError):
        spec_for(NEG_SQ1, lat2, (1,), 4, sample_indices=(11,))
    with pytest.raises(ValidationError):
        ProblemSpec(lat2, 2, NEG_SQ1, (1, 2), 4)
    with pytest.raises(ValidationError):
        Tolerances(root_tol=0)
    assert spec_for(NEG_SQ1, lat2, (1,), 10, sample_indices=[10]).sample_indices == (10,)


# -- seed_prefix --------------------------------------------------------------


def test_seed_prefix_examples(lat2):
    assert seed_prefix([2.5], lat2, 1).tolist() == [2.5]
    assert seed_prefix([1, 3], lat2, 2).tolist() == [1.0, 4.0]
    assert seed_prefix([0, 0, 0], lat2, 3).tolist() == [0.0, 0.0, 0.0]


def test_seed_prefix_reproduces_derivatives(rng):
    for q in RATIOS:
        for r in range(1, 6):
            lat = make_lattice(float(rng.uniform(0.3, 3)), q, 8)
            alphas = rng.normal(size=r) * 10
            xv = seed_prefix(alphas, lat, r)
            x = LatticeFn(lat, 0, xv)
            for j in range(r):
                got = dq_k(x, j).values[0]
                assert abs(got - alphas[j]) <= 1e-12 * max(1.0, np.max(np.abs(alphas)))


def test_seed_prefix_errors(lat2):
    with pytest.raises(ValueError):
        seed_prefix([1, 2], lat2, 3)
    with pytest.raises(DomainTooShortError):
        seed_prefix([0, 0, 0], make_lattice(1, 2, 2), 3)


def test_default_sample_indices():
    assert default_sample_indices(1, 11) == tuple(range(1, 11))
    assert default_sample_indices(2, 11) == tuple(range(2, 9))


# -- shoot_forward ------------------------------------------------------------


def test_shoot_constant(lat2):
    x = shoot_forward(NEG_SQ1, [1, 1], spec_for(NEG_SQ1, lat2, (1,), 4))
    assert x.offset == 0 and len(x) == 12
    np.testing.assert_array_equal(x.values, 1.0)


def test_shoot_affine(lat2):
    x = shoot_forward(NEG_SQ1, [0, 1], spec_for(NEG_SQ1, lat2, (0,), 4))
    np.testing.assert_allclose(x.values, lat2.points - 1, rtol=1e-12)
    assert x.values[:4].tolist() == [0.0, 1.0, 3.0, 7.0]


def test_shoot_degenerate(lat2):
    L = parse_expression("u2", 1)
    with pytest.raises(DegenerateLagrangianError):
        shoot_forward(L, [0, 1], spec_for(L, lat2, (0,), 4))
    L = parse_expression("sin(u1) + 3*u2 - t*u2", 1)
    with pytest.raises(DegenerateLagrangianError):
        shoot_forward(L, [0, 1], spec_for(L, lat2, (0,), 4))


def test_shoot_no_bracket(lat2):
    # d_3 L lies in (-1, 1), so its q-derivative at t_0 cannot reach d_2 L = 10
    L = parse_expression("sqrt(1 + u2^2) + 10*t*u1", 1)
    with pytest.raises(NoBracketError):
        shoot_forward(L, [0, 0], spec_for(L, lat2, (0,), 4))


def test_shoot_prefix_checks(lat2):
    spec = spec_for(NEG_SQ1, lat2, (1,), 4)
    with pytest.raises(ValueError):
        shoot_forward(NEG_SQ1, [1, 1, 1], spec)
    with pytest.raises(ValueError):
        shoot_forward(NEG_SQ1, [1, float("nan")], spec)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_shooting_consistency(r, rng):
    """Shot trajectories satisfy the residual test at every solved index."""
    for q in RATIOS:
        lat = make_lattice(1, q, 2 * r + 8)
        for _ in range(5):
            L = parse_expression(concave_lagrangian(rng, r), r)
            spec = spec_for(L, lat, (0.0,) * r, r + 1)
            prefix = rng.uniform(-0.5, 0.5, 2 * r)
            x = shoot_forward(L, prefix, spec)
            diag = diagnose(L, x, spec)
            assert diag.convergence_flags["el"], str(L)
        assert np.all(np.abs(diag.el.values) <= spec.tolerances.root_tol * diag.el_scale.values)


def test_shoot_partial_length(lat2):
    x = shoot_forward(NEG_SQ1, [1, 1], spec_for(NEG_SQ1, lat2, (1,), 4), n_points=5)
    assert len(x) == 5


# -- stencil matrices ---------------------------------------------------------


@pytest.mark.parametrize("r", [1, 2, 3, 4])
def test_stencil_matrices_match_angle_arrays(r, rng):
    lat = make_lattice(0.8, 1.5, 15)
    xv = rng.normal(size=15)
    mats = stencil_matrices(lat, 15, r)
    us = angle_arrays(LatticeFn(lat, 0, xv), r)[1:]
    assert len(mats) == r + 1
    for m, u in zip(mats, us):
        assert m.shape == (15 - r, 15)
        np.testing.assert_allclose(m @ xv, u, rtol=1e-12, atol=1e-12 * np.max(np.abs(u)))


# -- optimize_truncated -------------------------------------------------------


def test_optimize_constant(lat2):
    res = optimize_truncated(NEG_SQ1, (1,), spec_for(NEG_SQ1, lat2, (1,), 4))
    assert res.converged
    np.testing.assert_allclose(res.x.values, 1.0, atol=1e-12)
    assert abs(res.j) <= 1e-20
    x, j = res
    assert x is res.x and j == res.j


def test_optimize_zero(lat2):
    x, j = optimize_truncated(NEG_SQ1, (0,), spec_for(NEG_SQ1, lat2, (0,), 3))
    assert np.all(x.values == 0) and j == 0


def test_optimize_pointwise_target(lat2):
    L = parse_expression("-(u1 - 2*t)^2", 1)
    res = optimize_truncated(L, (1,), spec_for(L, lat2, (1,), 4))
    assert res.converged
    np.testing.assert_allclose(res.x.values, lat2.points[:5], rtol=1e-9)
    assert abs(res.j) <= 1e-12


def test_optimize_identity_metric(lat2):
    res = optimize_truncated(NEG_SQ1, (1,), spec_for(NEG_SQ1, lat2, (1,), 4), x0=[0, 3, -1, 2, 5], metric="identity")
    assert res.converged
    np.testing.assert_allclose(res.x.values, 1.0, atol=1e-6)


def test_optimize_argument_checks(lat2):
    spec = spec_for(NEG_SQ1, lat2, (1,), 4)
    with pytest.raises(ValueError):
        optimize_truncated(NEG_SQ1, (1,), spec, metric="newton")
    with pytest.raises(ValueError):
        optimize_truncated(NEG_SQ1, (1,), spec, x0=[1, 1])
    L2 = parse_expression("-(u3^2)", 2)
    with pytest.raises(ValidationError):
        optimize_truncated(L2, (0, 0), spec_for(L2, lat2, (0, 0), 1))


def test_optimize_reports_non_convergence(lat2):
    res = optimize_truncated(NEG_SQ1, (1,), spec_for(NEG_SQ1, lat2, (1,), 8), x0=[0] * 9, max_iters=0)
    assert not res.converged and res.iterations == 0


def test_optimizer_gradient_matches_el(rng):
    """Free-value gradient entries equal weighted EL residuals."""
    from qvar.solver import _Objective

    r, q, k_hi = 2, 1.5, 9
    lat = make_lattice(1, q, k_hi + r + 1)
    L = parse_expression(lagrangian_family(r)[2], r)
    x = rng.normal(size=k_hi + r)
    g = _Objective(L, lat, k_hi + r).gradient(x)
    el = el_residual(L, LatticeFn(lat, 0, x)).values
    for k in range(k_hi - r):
        assert g[k + r] == pytest.approx((q - 1) * lat.point(k) * el[k], rel=1e-9, abs=1e-12)


def oracle_gap(L, res, spec):
    """Largest EL residual over fully interior indices, in gradient units."""
    r, k_hi = L.r, spec.k_hi
    el = el_residual(L, res.x).values[: k_hi - r]
    w = (spec.lattice.q - 1) * spec.lattice.points[: k_hi - r]
    return float(np.max(np.abs(el) * w / max(1.0, abs(res.j))))


def test_oracle_equivalence(rng):
    for _ in range(15):
        r = int(rng.integers(1, 4))
        q = float(rng.choice(RATIOS))
        k_hi = int(rng.integers(r + 1, r + 9))
        lat = make_lattice(1.0, q, k_hi + r + 1)
        L = parse_expression(concave_lagrangian(rng, r), r)
        alphas = rng.uniform(-1, 1, r)
        spec = spec_for(L, lat, alphas, k_hi)
        res = optimize_truncated(L, alphas, spec)
        assert res.converged
        assert oracle_gap(L, res, spec) <= 100 * spec.tolerances.grad_tol


def test_scaling_sanity():
    lat = make_lattice(1, 2, 10)
    base = "-(u2 - 1)^2 - (u1 - t/2)^2 / t + sin(u1) / (4*t)"
    L = parse_expression(base, 1)
    ref = optimize_truncated(L, (0.5,), spec_for(L, lat, (0.5,), 7))
    for c in (0.01, 3.0, 250.0):
        Lc = parse_expression(f"{c!r} * ({base})", 1)
        res = optimize_truncated(Lc, (0.5,), spec_for(Lc, lat, (0.5,), 7))
        assert res.converged
        np.testing.assert_allclose(res.x.values, ref.x.values, rtol=1e-7, atol=1e-9)
        assert res.j == pytest.approx(c * ref.j, rel=1e-9)


# -- diagnose -----------------------------------------------------------------


def test_diagnose_constant_extremal(lat2):
    x = LatticeFn(lat2, 0, np.ones(12))
    d = diagnose(NEG_SQ1, x, spec_for(NEG_SQ1, lat2, (1,), 4))
    assert d.el_max_abs == 0 and d.j_value == 0
    assert d.r == 1
    assert np.all(d.transversality[0].envelope == 0)
    assert d.convergence_flags == {"el": True, "tv_1": True}


def test_diagnose_identity_is_flagged(lat2):
    d = diagnose(NEG_SQ1, lat2.sample(lambda t: t), spec_for(NEG_SQ1, lat2, (1,), 4))
    seq = d.transversality[0]
    assert d.el_max_abs == 0
    assert seq.terms.tolist() == [-2 * lat2.point(i) for i in seq.sample_indices]
    assert seq.envelope[0] == -2 * lat2.point(10)
    assert d.convergence_flags["el"] and not d.convergence_flags["tv_1"]
    assert d.j_value == pytest.approx(-(2.0**4 - 1))


def test_diagnose_short(lat2):
    L = parse_expression("-(u3^2)", 2)
    spec = spec_for(L, lat2, (0, 0), 4)
    with pytest.raises(DomainTooShortError):
        diagnose(L, LatticeFn(lat2, 0, np.ones(4)), spec)
    with pytest.raises(DomainTooShortError):
        diagnose(L, LatticeFn(lat2, 1, np.ones(8)), spec)


def test_diagnose_j_matches_functional(lat2, rng):
    L = parse_expression(lagrangian_family(1)[1], 1)
    x = LatticeFn(lat2, 0, rng.normal(size=12))
    spec = spec_for(L, lat2, (x.values[0],), 7, sample_indices=(2, 5, 9))
    d = diagnose(L, x, spec)
    assert d.j_value == functional_truncated(L, x, 7)
    assert d.transversality[0].sample_indices == (2, 5, 9)
