import pytest
from numpy import arange, array, concatenate, diag, exp, eye, log, outer, sqrt, zeros
from numpy.random import RandomState
from numpy.testing import assert_, assert_allclose, assert_equal
from scipy.linalg import block_diag

from permsaddle import (
    DegenerateScores,
    DomainError,
    OverflowGuard,
    SingularCovariance,
    group_design,
    ksample_model,
    standardize_scalar,
    twosample_model,
    whiten_multivariate,
)
from permsaddle._model import ScoreSet


@pytest.fixture
def table1_model():
    return ksample_model(standardize_scalar(arange(1, 21)), group_design([5] * 4))


@pytest.fixture
def mv_model():
    random = RandomState(0)
    raw = random.exponential(size=(30, 3))
    return twosample_model(whiten_multivariate(raw), group_design([12, 18]))


def test_group_design():
    design = group_design([2, 3, 5])
    assert_equal(design.N, 10)
    assert_allclose(design.p.sum(), 1.0, atol=1e-15)
    with pytest.raises(DomainError):
        group_design([3, 0])
    with pytest.raises(DomainError):
        group_design([3])


def test_standardize_scalar():
    s = standardize_scalar([1, 2, 3, 4])
    assert_allclose(s.scores[:, 0], array([-3, -1, 1, 3]) / sqrt(5))
    assert_equal(s.N, 4)

    a = s.scores[:, 0]
    assert_allclose(standardize_scalar(a).scores[:, 0], a, atol=1e-14)

    a = standardize_scalar(arange(1, 21)).scores[:, 0]
    assert_(abs(a.sum()) <= 1e-10)
    assert_allclose((a ** 2).sum(), 20, rtol=1e-10)


def test_standardize_scalar_degenerate():
    with pytest.raises(DegenerateScores):
        standardize_scalar([2.0, 2.0, 2.0])
    with pytest.raises(DomainError):
        standardize_scalar([1.0])


def test_whiten_multivariate():
    raw = array([[1.0, 0], [0, 1], [-1, 0], [0, -1]])
    assert_allclose(whiten_multivariate(raw).scores, sqrt(2) * raw, atol=1e-12)

    random = RandomState(1)
    raw = random.randn(25, 3) @ random.randn(3, 3) + 4
    a = whiten_multivariate(raw).scores
    assert_allclose(a.sum(0), zeros(3), atol=1e-10)
    assert_allclose(a.T @ a, 25 * eye(3), atol=1e-10)
    assert_allclose(whiten_multivariate(a).scores, a, atol=1e-10)


def test_whiten_multivariate_singular():
    random = RandomState(2)
    x = random.randn(10)
    with pytest.raises(SingularCovariance):
        whiten_multivariate(array([x, 2 * x]).T)
    with pytest.raises(DomainError):
        whiten_multivariate(random.randn(3, 3))


def test_cgf_at_zero(table1_model, mv_model):
    for model in [table1_model, mv_model]:
        value = model.cgf(zeros(model.dim))
        assert_allclose(value.kappa, 0.0, atol=1e-12)
        assert_allclose(value.grad, concatenate([model.p, zeros(model.d1)]), atol=1e-12)

    P = diag([0.25] * 3) - outer([0.25] * 3, [0.25] * 3)
    H = table1_model.cgf(zeros(6)).hess.entries
    assert_allclose(H, block_diag(P, P), atol=1e-12)

    pq = 12 / 30 * 18 / 30
    H = mv_model.cgf(zeros(4)).hess.entries
    assert_allclose(H, pq * eye(4), atol=1e-12)


def test_cgf_lattice(table1_model, mv_model):
    value = table1_model.cgf_lattice(zeros(3))
    assert_allclose(value.kappa, 0.0, atol=1e-15)
    assert_allclose(value.grad, [0.25] * 3)
    P = diag([0.25] * 3) - outer([0.25] * 3, [0.25] * 3)
    assert_allclose(value.hess.entries, P, atol=1e-15)

    value = mv_model.cgf_lattice(zeros(1))
    assert_allclose(value.hess.entries, [[12 / 30 * 18 / 30]])

    random = RandomState(3)
    for model in [table1_model, mv_model]:
        for _ in range(10):
            tau0 = random.randn(model.d0)
            joint = model.cgf(concatenate([tau0, zeros(model.d1)]))
            lattice = model.cgf_lattice(tau0)
            assert_allclose(joint.kappa, lattice.kappa, atol=1e-14)
            assert_allclose(joint.grad[: model.d0], lattice.grad, atol=1e-14)


def test_cgf_finite_differences(table1_model, mv_model):
    random = RandomState(4)
    h = 1e-5
    for model in [table1_model, mv_model]:
        D = model.dim
        for _ in range(20):
            tau = random.randn(D)
            tau *= random.rand() / sqrt(tau @ tau)
            value = model.cgf(tau)
            grad = zeros(D)
            hess = zeros((D, D))
            for i in range(D):
                e = zeros(D)
                e[i] = h
                plus, minus = model.cgf(tau + e), model.cgf(tau - e)
                grad[i] = (plus.kappa - minus.kappa) / (2 * h)
                hess[i] = (plus.grad - minus.grad) / (2 * h)
            assert_allclose(grad, value.grad, atol=1e-6)
            assert_allclose(hess, value.hess.entries, atol=1e-4)


def test_cgf_hessian_positive_definite_and_convex(table1_model, mv_model):
    random = RandomState(5)
    for model in [table1_model, mv_model]:
        for _ in range(20):
            tau = random.randn(model.dim)
            tau *= 5 * random.rand() / sqrt(tau @ tau)
            model.cgf(tau).hess.chol()

            ta, tb = random.randn(2, model.dim)
            mid = model.cgf((ta + tb) / 2).kappa
            assert_(mid <= (model.cgf(ta).kappa + model.cgf(tb).kappa) / 2 + 1e-12)


def test_cgf_relabeling():
    model = ksample_model(standardize_scalar(arange(1, 13)), group_design([3, 3, 3, 3]))
    random = RandomState(6)
    perm = array([2, 0, 1])
    for _ in range(10):
        tau = random.randn(6)
        swapped = concatenate([tau[:3][perm], tau[3:][perm]])
        assert_allclose(model.cgf(tau).kappa, model.cgf(swapped).kappa, atol=1e-14)


def test_cgf_overflow(table1_model):
    with pytest.raises(OverflowGuard):
        table1_model.cgf(array([800.0, 0, 0, 0, 0, 0]))
    with pytest.raises(OverflowGuard):
        table1_model.cgf_lattice(array([0.0, 1000.0, 0]))


def test_target():
    model = ksample_model(standardize_scalar([1, 2, 3, 4]), group_design([2, 2]))
    a = model.scores.scores[:, 0]
    x = model.target([1, 0, 1, 0])
    assert_allclose(x, [0.5, (a[1] + a[3]) / 4])
    with pytest.raises(DomainError):
        model.target([0, 0, 0, 1])


def test_model_kinds():
    scores = ScoreSet(scores=arange(12.0).reshape(6, 2), N=6)
    with pytest.raises(DomainError):
        ksample_model(scores, group_design([3, 3]))
    with pytest.raises(DomainError):
        twosample_model(standardize_scalar(arange(6)), group_design([2, 2, 2]))


def test_cgf_many(table1_model, mv_model):
    random = RandomState(7)
    for model in [table1_model, mv_model]:
        taus = random.randn(9, model.dim)
        taus[4] *= 1000
        kappa, grad, hess, finite = model.cgf_many(taus)
        assert_equal(finite, arange(9) != 4)
        for i in [0, 1, 2, 3, 5, 6, 7, 8]:
            value = model.cgf(taus[i])
            assert_allclose(kappa[i], value.kappa, rtol=1e-13)
            assert_allclose(grad[i], value.grad, atol=1e-13)
            assert_allclose(hess[i], value.hess.entries, atol=1e-13)

    a = table1_model.scores.scores[:, 0]
    tau = random.randn(6)
    direct = log(0.25 + 0.25 * exp(tau[:3] + outer(a, tau[3:])).sum(1)).mean()
    assert_allclose(table1_model.cgf_many(tau[None])[0][0], direct, rtol=1e-13)


def test_targets(mv_model):
    random = RandomState(8)
    labels = array([0] * 12 + [1] * 18)
    rows = array([random.permutation(labels) for _ in range(5)])
    x = mv_model.targets(rows)
    assert_equal(x.shape, (5, 4))
    for i in range(5):
        assert_allclose(x[i], mv_model.target(rows[i]), atol=1e-15)
        a = mv_model.scores.scores
        assert_allclose(x[i, 1:], a[rows[i] == 0].sum(0) / 30, atol=1e-14)
    with pytest.raises(DomainError):
        mv_model.targets(rows[:, ::-1] * 0)
