import pytest
from numpy import (
    arange,
    array,
    concatenate,
    diag,
    eye,
    isnan,
    linspace,
    log,
    outer,
    pi,
    sqrt,
    zeros,
)
from numpy.random import RandomState
from numpy.testing import assert_, assert_allclose, assert_equal
from scipy.optimize import minimize

from permsaddle import (
    NoConvergence,
    conditional_context,
    conditional_density,
    formal_density,
    group_design,
    ksample_model,
    lattice_density,
    solve_lattice,
    solve_saddlepoint,
    solve_saddlepoint_batch,
    standardize_scalar,
    twosample_model,
    whiten_multivariate,
)
from permsaddle._model import ScoreSet, TiltingModel
from permsaddle._saddlepoint import level
from permsaddle._types import ModelKind


@pytest.fixture
def table1_model():
    return ksample_model(standardize_scalar(arange(1, 21)), group_design([5] * 4))


@pytest.fixture
def mv_model():
    random = RandomState(0)
    raw = random.exponential(size=(24, 2))
    return twosample_model(whiten_multivariate(raw), group_design([10, 14]))


def _dual(model, x):
    def objective(tau):
        value = model.cgf(tau)
        return value.kappa - tau @ x, value.grad - x

    res = minimize(objective, zeros(model.dim), jac=True, method="BFGS",
                   options=dict(gtol=1e-12, maxiter=1000))
    return -res.fun


def _interior_targets(model, n, random):
    center = concatenate([model.p, zeros(model.d1)])
    labels = arange(len(model.design.sizes)).repeat(model.design.sizes)
    for _ in range(n):
        x = model.target(random.permutation(labels))
        yield center + 0.9 * random.rand() * (x - center)


def test_solve_at_center(table1_model, mv_model):
    for model in [table1_model, mv_model]:
        sp = solve_saddlepoint(model, concatenate([model.p, zeros(model.d1)]))
        assert_allclose(sp.tau_hat, zeros(model.dim), atol=1e-12)
        assert_(abs(sp.lam) <= 1e-12)


def test_solve_matches_dual():
    model = ksample_model(standardize_scalar([1, 2, 3, 4]), group_design([2, 2]))
    x = array([0.5, 0.2])
    sp = solve_saddlepoint(model, x)
    assert_allclose(sp.lam, _dual(model, x), atol=1e-6)
    assert_(sp.residual <= 1e-10)


def test_solve_infeasible():
    model = ksample_model(standardize_scalar([1, 2, 3, 4]), group_design([2, 2]))
    with pytest.raises(NoConvergence):
        solve_saddlepoint(model, array([0.5, 0.5]))
    with pytest.raises(NoConvergence):
        solve_saddlepoint(model, model.target([0, 0, 1, 1]))


def test_solve_random_targets():
    model = ksample_model(standardize_scalar(arange(1, 13)), group_design([4, 4, 4]))
    random = RandomState(1)
    for x in _interior_targets(model, 1000, random):
        sp = solve_saddlepoint(model, x)
        assert_(sp.residual <= 1e-10)
        assert_(abs(model.cgf(sp.tau_hat).grad - x).max() <= 1e-10)
        assert_(sp.lam >= -1e-12)


def test_solve_batch_matches_single(table1_model, mv_model):
    random = RandomState(4)
    for model in [table1_model, mv_model]:
        targets = array(list(_interior_targets(model, 40, random)))
        tau, lam, ok = solve_saddlepoint_batch(model, targets)
        assert_(ok.all())
        for i in range(40):
            sp = solve_saddlepoint(model, targets[i])
            assert_allclose(tau[i], sp.tau_hat, atol=1e-8)
            assert_allclose(lam[i], sp.lam, rtol=1e-10, atol=1e-13)


def test_solve_batch_flags_boundary():
    model = ksample_model(standardize_scalar([1, 2, 3, 4]), group_design([2, 2]))
    targets = array([[0.5, 0.2], [0.5, 0.5], model.target([0, 0, 1, 1]), [0.5, -0.1]])
    _, lam, ok = solve_saddlepoint_batch(model, targets)
    assert_equal(ok, [True, False, False, True])
    assert_allclose(lam[0], solve_saddlepoint(model, targets[0]).lam, atol=1e-13)
    assert_(isnan(lam[1]) and isnan(lam[2]))


def test_solve_warm_start(table1_model):
    random = RandomState(2)
    x = next(_interior_targets(table1_model, 1, random))
    cold = solve_saddlepoint(table1_model, x)
    warm = solve_saddlepoint(table1_model, x, start=cold.tau_hat * 0.9)
    assert_allclose(warm.lam, cold.lam, atol=1e-12)


def test_solve_deterministic(table1_model):
    x = next(_interior_targets(table1_model, 1, RandomState(3)))
    a = solve_saddlepoint(table1_model, x)
    b = solve_saddlepoint(table1_model, x)
    assert_equal(a.tau_hat, b.tau_hat)
    assert_equal(a.lam, b.lam)
    assert_equal(a.iterations, b.iterations)


def test_solve_lattice(table1_model, mv_model):
    sp0 = solve_lattice(table1_model, table1_model.p)
    assert_allclose(sp0.tau_hat, zeros(3), atol=1e-12)
    assert_allclose(sp0.lam, 0.0, atol=1e-12)
    P = diag([0.25] * 3) - outer([0.25] * 3, [0.25] * 3)
    assert_allclose(sp0.hess.entries, P, atol=1e-12)

    sp0 = solve_lattice(mv_model, mv_model.p)
    assert_allclose(sp0.hess.entries, [[10 / 24 * 14 / 24]], atol=1e-12)

    sp0 = solve_lattice(table1_model, array([0.2, 0.3, 0.1]))
    assert_allclose(table1_model.cgf_lattice(sp0.tau_hat).grad, [0.2, 0.3, 0.1], atol=1e-10)
    assert_(sp0.lam > 0)


def test_conditional_context(table1_model, mv_model):
    ctx = conditional_context(table1_model)
    P = diag([0.25] * 3) - outer([0.25] * 3, [0.25] * 3)
    assert_allclose(ctx.V0.entries, P, atol=1e-12)
    assert_allclose(ctx.sp0.tau_hat, zeros(3), atol=1e-12)
    assert_allclose(ctx.sp0.lam, 0.0, atol=1e-12)
    assert_allclose(ctx.V0_sqrt @ ctx.V0_sqrt, ctx.V0.entries, atol=1e-10)

    ctx = conditional_context(mv_model)
    assert_allclose(ctx.V0.entries, 10 / 24 * 14 / 24 * eye(2), atol=1e-12)
    assert_allclose(ctx.V0_sqrt, sqrt(10 / 24 * 14 / 24) * eye(2), atol=1e-12)


def test_conditional_context_schur_complement():
    raw = array([0.3, 1.7, 2.0, 4.2, 5.5, 0.1])
    model = TiltingModel(ModelKind.KSAMPLE, ScoreSet(raw[:, None], 6), group_design([2, 4]))
    H = model.cgf(zeros(2)).hess.entries
    assert_(abs(H[0, 1]) > 1e-3)
    ctx = conditional_context(model)
    assert_allclose(ctx.V0.entries, [[H[1, 1] - H[0, 1] ** 2 / H[0, 0]]], rtol=1e-12)


def test_conditional_density_at_center(table1_model, mv_model):
    for model in [table1_model, mv_model]:
        ctx = conditional_context(model)
        N = model.N
        expected = (
            ctx.logdet_V_tau0 / 2
            + model.d1 / 2 * log(N / (2 * pi))
            - model.cgf(zeros(model.dim)).hess.logdet() / 2
        )
        value = conditional_density(model, ctx, zeros(model.d1))
        assert_allclose(log(value), expected, rtol=1e-10)
        assert_(value > 0)


def _interior_mass(n, points):
    N = 2 * n
    model = ksample_model(standardize_scalar(arange(1, N + 1)), group_design([n, n]))
    ctx = conditional_context(model)
    a = model.scores.scores[:, 0]
    # r(x1|x0) grows without bound at the two support vertices; integrate up to half
    # a lattice spacing from each.
    half = (a[1] - a[0]) / N / 2
    grid = linspace(a[:n].sum() / N + half, a[n:].sum() / N - half, points)
    density = array([conditional_density(model, ctx, [x]) for x in grid])
    return ((density[1:] + density[:-1]) / 2 * (grid[1] - grid[0])).sum()


def test_conditional_density_mass():
    assert_allclose(_interior_mass(4, 4001), 1.0, rtol=0.2)
    assert_allclose(_interior_mass(20, 2001), 1.0, rtol=0.1)


def test_conditional_density_factorizes(mv_model):
    ctx = conditional_context(mv_model)
    x1 = array([0.05, -0.03])
    x = concatenate([mv_model.p, x1])
    ratio = formal_density(mv_model, x) / lattice_density(mv_model, mv_model.p)
    assert_allclose(conditional_density(mv_model, ctx, x1), ratio, rtol=1e-10)


def test_level_convex_and_monotone(table1_model):
    ctx = conditional_context(table1_model)
    random = RandomState(4)
    center = concatenate([table1_model.p, zeros(3)])
    targets = list(_interior_targets(table1_model, 40, random))
    for xa, xb in zip(targets[::2], targets[1::2]):
        la, _ = level(table1_model, ctx, xa[3:])
        lb, _ = level(table1_model, ctx, xb[3:])
        lm, _ = level(table1_model, ctx, (xa[3:] + xb[3:]) / 2)
        assert_(lm <= (la + lb) / 2 + 1e-10)
        assert_(min(la, lb, lm) >= -1e-12)

    for x in targets[:5]:
        v = x[3:] - center[3:]
        values = [level(table1_model, ctx, t * v)[0] for t in linspace(0, 1, 50)]
        assert_(abs(values[0]) <= 1e-12)
        assert_(all(b >= a - 1e-12 for a, b in zip(values, values[1:])))
        assert_(all(val > 0 for val in values[1:]))
