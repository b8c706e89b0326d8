"""
Finite-population exponential-tilting models
--------------------------------------------

Let 𝑎₁, …, 𝑎_N be standardized scores (rows of an N×𝓁 matrix) and let the design
split the population into groups of sizes 𝑛₁, …, 𝑛ₖ with proportions 𝑝ᵢ = 𝑛ᵢ/N.
Replace the random group assignment by independent labels 𝐈ₘ with P(𝐈ₘ = 𝐞ᵢ) = 𝑝ᵢ for
𝑖 < 𝑘 and P(𝐈ₘ = 𝟎) = 𝑝ₖ. With 𝐒 = (∑ₘ𝐈ₘ, ∑ₘ𝐈ₘ⊗𝑎ₘ), the average cumulant
generating function is

    κ(𝛕₀, 𝛕₁) = N⁻¹∑ₘ log(𝑝ₖ + ∑ᵢ 𝑝ᵢ exp(τ₀ᵢ + 𝛕₁ᵢᵀ𝑎ₘ)),

where 𝛕₀ has 𝑘−1 entries and 𝛕₁ has (𝑘−1)𝓁 entries ordered group by group.
The permutation law of the group sums is the law of 𝐒₁ given 𝐒₀ = N𝐩.

Two constructions are exposed:

    k-sample:               scalar scores (𝓁 = 1),  d₀ = d₁ = 𝑘−1
    two-sample multivariate: 𝑘 = 2,                 d₀ = 1, d₁ = 𝓁

and the last group is always the baseline.
"""
from collections import namedtuple

from numpy import (
    arange,
    asarray,
    broadcast_to,
    concatenate,
    diag,
    exp,
    isfinite,
    log,
    maximum,
    newaxis,
    outer,
    sqrt,
    where,
    zeros,
)
from numpy.linalg import eigvalsh
from scipy.special import logsumexp

from ._errors import DegenerateScores, DomainError, OverflowGuard, SingularCovariance
from ._math import SymMatrix, sym_inv_sqrt
from ._types import ModelKind

__all__ = [
    "CgfValue",
    "GroupDesign",
    "ScoreSet",
    "TiltingModel",
    "cgf",
    "cgf_lattice",
    "group_design",
    "ksample_model",
    "standardize_scalar",
    "twosample_model",
    "whiten_multivariate",
]


EXPONENT_LIMIT = 700.0

ScoreSet = namedtuple("ScoreSet", "scores N")
GroupDesign = namedtuple("GroupDesign", "sizes N p")
CgfValue = namedtuple("CgfValue", "kappa grad hess")


def group_design(sizes) -> GroupDesign:
    sizes = tuple(int(n) for n in sizes)
    if len(sizes) < 2:
        raise DomainError("a design needs at least two groups")
    if min(sizes) < 1:
        raise DomainError(f"group sizes must be positive, got {sizes}")
    N = sum(sizes)
    p = asarray(sizes, float) / N
    return GroupDesign(sizes=sizes, N=N, p=p)


def standardize_scalar(raw) -> ScoreSet:
    """
    Scalar scores 𝑎ₘ = (rawₘ − mean)⋅√(N / ∑(raw − mean)²).

    The result satisfies ∑𝑎ₘ = 0 and ∑𝑎ₘ² = N.

    Parameters
    ----------
    raw : array_like
        N values (ranks or raw observations), N ≥ 2.

    Returns
    -------
    ScoreSet
        Scores as an N×1 matrix.
    """
    raw = asarray(raw, float).ravel()
    N = raw.shape[0]
    if N < 2:
        raise DomainError("at least two observations are needed")
    if not isfinite(raw).all():
        raise DomainError("scores must be finite")

    centred = raw - raw.mean()
    ss = float((centred ** 2).sum())
    if ss <= 1e-12 * N * float(abs(raw).max()) ** 2:
        raise DegenerateScores("scores are constant")

    a = centred * sqrt(N / ss)
    return ScoreSet(scores=a[:, newaxis], N=N)


def whiten_multivariate(raw) -> ScoreSet:
    """
    Vector scores 𝑎ᵢ = 𝚆(rawᵢ − mean) with 𝚆 = √N⋅(∑(raw − mean)(raw − mean)ᵀ)^{-1/2}.

    The result satisfies ∑𝑎ᵢ = 𝟎 and ∑𝑎ᵢ𝑎ᵢᵀ = N𝙸.
    """
    raw = asarray(raw, float)
    if raw.ndim == 1:
        raw = raw[:, newaxis]
    N, l = raw.shape
    if N <= l:
        raise DomainError(f"need more observations ({N}) than dimensions ({l})")
    if not isfinite(raw).all():
        raise DomainError("observations must be finite")

    centred = raw - raw.mean(0)
    C = centred.T @ centred
    S = eigvalsh(C)
    if S.max() <= 0 or S.min() <= 1e-10 * S.max():
        raise SingularCovariance("pooled covariance matrix is singular")

    W = sqrt(N) * sym_inv_sqrt(C)
    return ScoreSet(scores=centred @ W, N=N)


class TiltingModel:
    """
    Finite-population tilting model with lattice dimension d₀ and continuous
    dimension d₁.

    The model is immutable after construction; ``cgf`` and ``cgf_lattice`` are pure.
    Tilts 𝛕 are vectors of length d₀ + d₁ ordered as (𝛕₀, 𝛕₁).
    """

    def __init__(self, kind: ModelKind, scores: ScoreSet, design: GroupDesign):
        a = asarray(scores.scores, float)
        if a.ndim == 1:
            a = a[:, newaxis]

        assert a.ndim == 2
        assert a.shape[0] == design.N == scores.N
        if kind is ModelKind.KSAMPLE and a.shape[1] != 1:
            raise DomainError("the k-sample model takes scalar scores")
        if kind is ModelKind.TWOSAMPLE_MV and len(design.sizes) != 2:
            raise DomainError("the two-sample model takes exactly two groups")

        self._kind = kind
        self._scores = scores
        self._design = design
        self._a = a
        self._logp = log(design.p)

        N, l = a.shape
        m = len(design.sizes) - 1
        D = m * (1 + l)
        # T[i, c] is the sufficient statistic of element i when it joins group c.
        T = zeros((N, m, D))
        for c in range(m):
            T[:, c, c] = 1.0
            T[:, c, m + c * l : m + (c + 1) * l] = a
        self._T = T
        self._Tflat = T.reshape(N * m, D)
        self._m = m
        self._l = l

    @property
    def kind(self):
        return self._kind

    @property
    def scores(self):
        return self._scores

    @property
    def design(self):
        return self._design

    @property
    def N(self):
        return self._design.N

    @property
    def p(self):
        """ Lattice-block mean κ₀′(𝟎) = (𝑝₁, …, 𝑝ₖ₋₁). """
        return self._design.p[: self._m]

    @property
    def d0(self):
        return self._m

    @property
    def d1(self):
        return self._m * self._l

    @property
    def dim(self):
        return self.d0 + self.d1

    def cgf(self, tau) -> CgfValue:
        tau = asarray(tau, float)
        assert tau.shape == (self.dim,)
        kappa, grad, hess, finite = self.cgf_many(tau[newaxis])
        if not finite[0]:
            raise OverflowGuard(f"tilt too large: exponent beyond {EXPONENT_LIMIT:g}")
        return CgfValue(kappa=float(kappa[0]), grad=grad[0], hess=SymMatrix(hess[0]))

    def cgf_many(self, taus):
        """
        κ, κ′ and κ″ at every row of an M×(d₀ + d₁) array of tilts.

        Returns
        -------
        kappa : ndarray
            M values κ(𝛕).
        grad : ndarray
            M×(d₀ + d₁) gradients.
        hess : ndarray
            M×(d₀ + d₁)×(d₀ + d₁) Hessians.
        finite : ndarray
            False for rows whose exponents exceed the overflow limit; their values
            are meaningless.
        """
        taus = asarray(taus, float)
        assert taus.ndim == 2 and taus.shape[1] == self.dim
        M, D = taus.shape
        N, m = self.N, self._m

        E = (taus @ self._Tflat.T).reshape(M, N, m)
        finite = abs(E).max(axis=(1, 2)) <= EXPONENT_LIMIT
        E = where(finite[:, newaxis, newaxis], E, 0.0)

        # The baseline group enters with logit log pₖ and no tilt.
        logits = E + self._logp[:m]
        top = maximum(logits.max(2), self._logp[m])
        ex = exp(logits - top[..., newaxis])
        total = ex.sum(2) + exp(self._logp[m] - top)
        w = ex / total[..., newaxis]
        kappa = (top + log(total)).mean(1)

        WT = w[..., newaxis] * self._T
        mv = WT.sum(2)
        grad = mv.mean(1)
        second = WT.reshape(M, N * m, D).transpose(0, 2, 1) @ self._Tflat / N
        hess = second - mv.transpose(0, 2, 1) @ mv / N
        hess = (hess + hess.transpose(0, 2, 1)) / 2
        return kappa, grad, hess, finite

    def cgf_lattice(self, tau0) -> CgfValue:
        """
        κ₀(𝛕₀) = log(𝑝ₖ + ∑ᵢ𝑝ᵢ exp(τ₀ᵢ)), which equals κ((𝛕₀, 𝟎)).
        """
        tau0 = asarray(tau0, float)
        assert tau0.shape == (self.d0,)
        if not abs(tau0).max() <= EXPONENT_LIMIT:
            raise OverflowGuard(f"tilt too large: exponent {abs(tau0).max():.4g}")

        m = self._m
        logits = concatenate([tau0 + self._logp[:m], self._logp[m:]])
        lse = logsumexp(logits)
        w = exp(logits[:m] - lse)
        return CgfValue(kappa=float(lse), grad=w, hess=SymMatrix(diag(w) - outer(w, w)))

    def target(self, assignment):
        """
        The mean vector (𝐱₀, 𝐱₁) of an assignment of elements to groups.

        𝐱₀ holds the group proportions and 𝐱₁ the group score sums divided by N,
        both over the first 𝑘−1 groups.

        Parameters
        ----------
        assignment : array_like
            Group index in 0..𝑘−1 for each population element.
        """
        g = asarray(assignment, int)
        assert g.shape == (self.N,)
        return self.targets(g[newaxis])[0]

    def targets(self, assignments):
        """ Mean vectors of the rows of a K×N array of assignments. """
        g = asarray(assignments, int)
        assert g.ndim == 2 and g.shape[1] == self.N
        K, m = g.shape[0], self._m

        onehot = (g[:, newaxis, :] == arange(m)[:, newaxis]).astype(float)
        counts = onehot.sum(2)
        if (counts != asarray(self._design.sizes[:m], float)).any():
            raise DomainError("assignment is not consistent with the design sizes")
        x1 = (onehot @ self._a).reshape(K, m * self._l)
        return concatenate([broadcast_to(self.p, (K, m)), x1 / self.N], axis=1)


def cgf(model: TiltingModel, tau) -> CgfValue:
    """ κ(𝛕), κ′(𝛕) and κ″(𝛕). """
    return model.cgf(tau)


def cgf_lattice(model: TiltingModel, tau0) -> CgfValue:
    """ κ₀(𝛕₀), κ₀′(𝛕₀) and κ₀″(𝛕₀) for the lattice block. """
    return model.cgf_lattice(tau0)


def ksample_model(scores: ScoreSet, design: GroupDesign) -> TiltingModel:
    return TiltingModel(ModelKind.KSAMPLE, scores, design)


def twosample_model(scores: ScoreSet, design: GroupDesign) -> TiltingModel:
    return TiltingModel(ModelKind.TWOSAMPLE_MV, scores, design)
