import logging
from collections import namedtuple

from numpy import asarray, diff, newaxis, sqrt, unique
from scipy.stats import rankdata
from tqdm import tqdm

from ._errors import DomainError
from ._model import (
    TiltingModel,
    group_design,
    ksample_model,
    standardize_scalar,
    twosample_model,
    whiten_multivariate,
)
from ._oracle import classical_statistic, classical_threshold, lambda_statistic, mc_tails
from ._saddlepoint import conditional_context
from ._tail import DEFAULT_M, tail_probability
from ._types import Statistic

__all__ = [
    "PermutationTest",
    "TestReport",
    "check_u_grid",
    "encode_groups",
    "ksample_test",
    "observed_statistic",
    "twosample_test",
]

logger = logging.getLogger(__name__)

TestReport = namedtuple(
    "TestReport",
    "kind design lambda_obs u_obs tail comparison mc mc_comparison metadata",
)


def encode_groups(groups):
    """
    Map arbitrary group labels to indices 0..𝑘−1 in sorted label order.

    The last label in sorted order is the baseline group.

    Returns
    -------
    labels : list
        Sorted distinct labels.
    assignment : ndarray
        Group index of each row.
    """
    labels, assignment = unique(asarray(groups), return_inverse=True)
    return labels.tolist(), assignment.ravel()


def check_u_grid(u_grid):
    u_grid = asarray(u_grid, float).ravel()
    if u_grid.shape[0] == 0:
        raise DomainError("the u grid is empty")
    if not (u_grid > 0).all():
        raise DomainError("u grid values must be positive")
    if not (diff(u_grid) > 0).all():
        raise DomainError("u grid must be strictly increasing")
    return u_grid


def observed_statistic(model: TiltingModel, assignment, ctx=None):
    """
    Observed Λ(𝐩, 𝐱₁) − Λ₀(𝐩) and 𝑢 = √(2λ) of a group assignment.

    Parameters
    ----------
    model : TiltingModel
        Tilting model.
    assignment : array_like
        Group index in 0..𝑘−1 of each population element.

    Returns
    -------
    lambda_obs : float
        Observed statistic, clipped at zero.
    u_obs : float
        Its signed-root scale √(2λ).

    Raises
    ------
    NoConvergence
        When the observed mean lies on the boundary of the mean domain, for instance
        when a group captures the extreme scores.
    """
    ctx = conditional_context(model) if ctx is None else ctx
    lam, _ = lambda_statistic(model, ctx, assignment)
    return lam, float(sqrt(2 * lam))


class PermutationTest:
    """
    Saddlepoint permutation test for a fixed tilting model.

    Two modes share one code path: the observed mode evaluates the tail at the
    observed statistic, and the grid mode tabulates P(Λ ≥ 𝑢²/2) over a 𝑢 grid.
    Every cell uses the same sphere directions and, when Monte Carlo replicates are
    requested, the same permutations.

    Parameters
    ----------
    model : TiltingModel
        Tilting model built from the standardized scores.
    comparator : Statistic
        Classical statistic reported alongside Λ.
    """

    def __init__(self, model: TiltingModel, comparator: Statistic):
        assert comparator is not Statistic.LAMBDA
        self._model = model
        self._comparator = comparator
        self._ctx = conditional_context(model)

    @property
    def model(self):
        return self._model

    @property
    def comparator(self):
        return self._comparator

    @property
    def context(self):
        return self._ctx

    def _metadata(self, mode, M, seed, mc_reps):
        m = self._model
        return dict(
            N=m.N, d0=m.d0, d1=m.d1, M=M, seed=seed, mc_reps=mc_reps, mode=mode
        )

    def _reports(self, levels, comparisons, mode, M, seed, mc_reps, n_jobs, verbose):
        m = self._model
        mc = [None] * len(levels)
        mc_cmp = [None] * len(levels)
        if mc_reps > 0:
            mc = mc_tails(m, Statistic.LAMBDA, levels, mc_reps, seed, n_jobs, verbose)
            mc_cmp = mc_tails(
                m, self._comparator, comparisons, mc_reps, seed, n_jobs, verbose
            )

        reports = []
        for i, lam in enumerate(tqdm(levels, disable=not verbose, desc="levels")):
            tail = tail_probability(m, self._ctx, lam, M, seed, n_jobs, verbose)
            reports.append(
                TestReport(
                    kind=m.kind,
                    design=m.design,
                    lambda_obs=float(lam),
                    u_obs=float(sqrt(2 * lam)),
                    tail=tail,
                    comparison=float(comparisons[i]),
                    mc=mc[i],
                    mc_comparison=mc_cmp[i],
                    metadata=self._metadata(mode, tail.M, seed, mc_reps),
                )
            )
        return reports

    def observed(self, assignment, M=DEFAULT_M, seed=0, mc_reps=0, n_jobs=1,
                 verbose=False) -> TestReport:
        """ Report for the observed group assignment. """
        lam, _ = observed_statistic(self._model, assignment, self._ctx)
        value = classical_statistic(
            self._comparator, self._model.scores, self._model.design, assignment
        )
        logger.info("observed lambda=%.6g, %s=%.6g", lam, self._comparator.name, value)
        return self._reports(
            [lam], [value], "observed", M, seed, mc_reps, n_jobs, verbose
        )[0]

    def scan(self, u_grid, M=DEFAULT_M, seed=0, mc_reps=0, n_jobs=1, verbose=False):
        """ One report per grid value 𝑢, at level λ = 𝑢²/2. """
        u_grid = check_u_grid(u_grid)
        design = self._model.design
        levels = [float(u * u / 2) for u in u_grid]
        comparisons = [classical_threshold(self._comparator, design, u) for u in u_grid]
        reports = self._reports(
            levels, comparisons, "grid", M, seed, mc_reps, n_jobs, verbose
        )
        return [r._replace(u_obs=float(u)) for r, u in zip(reports, u_grid)]


def ksample_test(groups, values, use_ranks=True, u_grid=None, M=DEFAULT_M, seed=0,
                 mc_reps=0, n_jobs=1, verbose=False):
    """
    k-sample permutation test of Λ.

    Parameters
    ----------
    groups : array_like
        Group label of each observation; labels are sorted and the last one is the
        baseline group.
    values : array_like
        Observation values.
    use_ranks : bool
        Replace the values by their (mid)ranks before standardizing. The comparator
        is the Kruskal–Wallis statistic for ranks and the between-group sum of
        squares otherwise.
    u_grid : array_like, optional
        Grid of 𝑢 values. When given, P(Λ ≥ 𝑢²/2) is tabulated over it instead of
        testing the observed statistic.
    M : int
        Number of sphere directions.
    seed : int
        Root seed of the sphere and permutation streams.
    mc_reps : int
        Number of permutation Monte Carlo replicates; zero skips them.
    n_jobs : int
        Number of joblib workers.

    Returns
    -------
    TestReport or list of TestReport
        A single report in observed mode; one report per 𝑢 in grid mode.
    """
    labels, assignment = encode_groups(groups)
    values = asarray(values, float).ravel()
    if values.shape[0] != assignment.shape[0]:
        raise DomainError("groups and values have different lengths")
    design = group_design([int((assignment == c).sum()) for c in range(len(labels))])

    raw = rankdata(values) if use_ranks else values
    model = ksample_model(standardize_scalar(raw), design)
    comparator = Statistic.KRUSKAL_WALLIS if use_ranks else Statistic.ANOVA_SS
    test = PermutationTest(model, comparator)

    if u_grid is None:
        return test.observed(assignment, M, seed, mc_reps, n_jobs, verbose)
    return test.scan(u_grid, M, seed, mc_reps, n_jobs, verbose)


def twosample_test(groups, vectors, u_grid=None, M=DEFAULT_M, seed=0, mc_reps=0,
                   n_jobs=1, verbose=False):
    """
    Two-sample multivariate permutation test of Λ.

    The combined sample is whitened, so that ∑𝑎ᵢ = 𝟎 and ∑𝑎ᵢ𝑎ᵢᵀ = N𝙸, and the first
    label in sorted order is sample 1. The comparator is the quadratic form x̄₁ᵀx̄₁.

    Parameters
    ----------
    groups : array_like
        Sample label of each row; exactly two distinct labels.
    vectors : array_like
        N×𝓁 matrix of observations.

    Other parameters are as in :func:`ksample_test`.
    """
    labels, assignment = encode_groups(groups)
    if len(labels) != 2:
        raise DomainError(f"two samples are needed, got {len(labels)} groups")
    vectors = asarray(vectors, float)
    if vectors.ndim == 1:
        vectors = vectors[:, newaxis]
    if vectors.shape[0] != assignment.shape[0]:
        raise DomainError("groups and vectors have different lengths")
    design = group_design([int((assignment == c).sum()) for c in range(2)])

    model = twosample_model(whiten_multivariate(vectors), design)
    test = PermutationTest(model, Statistic.QUADRATIC)

    if u_grid is None:
        return test.observed(assignment, M, seed, mc_reps, n_jobs, verbose)
    return test.scan(u_grid, M, seed, mc_reps, n_jobs, verbose)
