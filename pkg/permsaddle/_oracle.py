"""
Permutation oracles
-------------------

Ground-truth permutation distributions of Λ and of the classical comparison
statistics, by Monte Carlo over uniform random assignments or by exact enumeration
of every distinct assignment.

A permutation whose Λ cannot be solved lies on the boundary of the mean domain,
where Λ is maximal; it is recorded as +∞, counted as a tail event and tallied in
``boundary``.
"""
import logging
from collections import namedtuple
from itertools import islice
from math import comb

from joblib import Parallel, delayed
from numpy import (
    arange,
    asarray,
    concatenate,
    inf,
    isinf,
    maximum,
    repeat,
    sqrt,
    stack,
    where,
)
from tqdm import tqdm

from ._errors import DomainError, InvalidStatistic, TooLarge
from ._model import TiltingModel
from ._random import PERMUTATION, stream_rng
from ._saddlepoint import conditional_context, level, solve_saddlepoint_batch
from ._types import Statistic

__all__ = [
    "PermutationOutcome",
    "classical_statistic",
    "classical_threshold",
    "exact_distribution",
    "exact_tail",
    "lambda_statistic",
    "mc_tail",
    "mc_tails",
    "permutation_distribution",
]

logger = logging.getLogger(__name__)

CHUNK = 1024
EXACT_CAP = 10 ** 6
TIE_RTOL = 1e-10

PermutationOutcome = namedtuple(
    "PermutationOutcome",
    "tail_prob replicates se threshold statistic exact count total boundary",
)


def lambda_statistic(model: TiltingModel, ctx, assignment, start=None):
    """
    Λ(𝐩, 𝐱₁) − Λ₀(𝐩) of a group assignment, clipped at zero, and the solved tilt.

    Raises
    ------
    NoConvergence
        When the assignment's mean lies on the boundary of the mean domain.
    """
    x = model.target(assignment)
    value, sp = level(model, ctx, x[model.d0 :], start=start)
    return max(value, 0.0), sp.tau_hat


def _group_means(a, design, assignment):
    g = asarray(assignment, int)
    return asarray([a[g == c].mean(0) for c in range(len(design.sizes))])


def classical_statistic(kind: Statistic, scores, design, assignment):
    """
    Classical comparison statistic of a group assignment.

    Parameters
    ----------
    kind : Statistic
        ``KRUSKAL_WALLIS``: (N−1)∑𝑛ᵢ(R̄ᵢ − R̄)²/∑(R − R̄)², the Kruskal–Wallis statistic
        when the scores are (mid)ranks or any affine map of them.
        ``ANOVA_SS``: between-group sum of squares ∑𝑛ᵢ(x̄ᵢ − x̄)².
        ``QUADRATIC``: x̄₁ᵀx̄₁, the squared norm of the first group's mean of
        whitened two-sample scores.
    scores : ScoreSet or array_like
        Population scores, N values or an N×𝓁 matrix.
    design : GroupDesign
        Group sizes.
    assignment : array_like
        Group index in 0..𝑘−1 for each population element.

    Returns
    -------
    float
        Value of the statistic.
    """
    a = asarray(getattr(scores, "scores", scores), float)
    if a.ndim == 1:
        a = a[:, None]
    sizes = asarray(design.sizes, float)
    means = _group_means(a, design, assignment)

    if kind is Statistic.QUADRATIC:
        if len(design.sizes) != 2:
            raise InvalidStatistic("the quadratic form needs exactly two groups")
        return float(means[0] @ means[0])

    if kind in (Statistic.KRUSKAL_WALLIS, Statistic.ANOVA_SS):
        if a.shape[1] != 1:
            raise InvalidStatistic(f"{kind.name} needs scalar scores")
        grand = a.mean()
        between = float((sizes * (means[:, 0] - grand) ** 2).sum())
        if kind is Statistic.ANOVA_SS:
            return between
        total = float(((a[:, 0] - grand) ** 2).sum())
        return (design.N - 1) * between / total

    raise InvalidStatistic(f"{kind} is not a classical statistic")


def classical_threshold(kind: Statistic, design, u):
    """
    Threshold on a classical statistic's own scale matching the level Λ = 𝑢²/2.

    On standardized scores the between-group sum of squares is referred to N𝑢², the
    χ² argument of the same cell, and Kruskal–Wallis, which is (N−1)/N times it, to
    (N−1)𝑢². The quadratic form of whitened two-sample scores is referred to
    (𝑞/𝑝)𝑢².
    """
    if kind is Statistic.KRUSKAL_WALLIS:
        return (design.N - 1) * u * u
    if kind is Statistic.ANOVA_SS:
        return design.N * u * u
    if kind is Statistic.QUADRATIC:
        p, q = design.p[0], design.p[1]
        return q / p * u * u
    raise InvalidStatistic(f"{kind} is not a classical statistic")


def _evaluator(model: TiltingModel, statistic: Statistic):
    """
    Callable mapping a K×N array of assignments to K statistic values.
    """
    if statistic is Statistic.LAMBDA:
        ctx = conditional_context(model)

        def evaluate(assignments):
            _, lam, ok = solve_saddlepoint_batch(model, model.targets(assignments))
            return where(ok, maximum(lam - ctx.sp0.lam, 0.0), inf)

        return evaluate

    if statistic is Statistic.QUADRATIC and model.d0 != 1:
        raise InvalidStatistic("the quadratic form needs the two-sample model")

    def evaluate(assignments):
        return asarray(
            [
                classical_statistic(statistic, model.scores, model.design, g)
                for g in assignments
            ],
            float,
        )

    return evaluate


def _labels(design):
    return repeat(arange(len(design.sizes)), design.sizes)


def _run_chunk(evaluate, labels, seed, begin, end):
    assignments = stack(
        [
            stream_rng(seed, PERMUTATION, idx).permutation(labels)
            for idx in range(begin, end)
        ]
    )
    return evaluate(assignments)


def permutation_distribution(
    model: TiltingModel, statistic=Statistic.LAMBDA, R=10000, seed=0, n_jobs=1,
    verbose=False,
):
    """
    Statistic values over R uniform random permutations of the group labels.

    Replicate ℓ shuffles the labels with the generator of stream (seed, ℓ), so the
    result is bitwise identical for any number of workers. Replicates are processed
    in chunks of fixed size, and the saddlepoints of a chunk are solved together.

    Parameters
    ----------
    model : TiltingModel
        Tilting model providing the scores and the design.
    statistic : Statistic
        Statistic evaluated on each permutation.
    R : int
        Number of replicates.
    seed : int
        Root seed.
    n_jobs : int
        Number of joblib workers.
    verbose : bool
        Show a progress bar over chunks.

    Returns
    -------
    values : ndarray
        R statistic values; boundary permutations are +∞.
    """
    if R < 1:
        raise DomainError(f"number of replicates must be positive, got {R}")
    evaluate = _evaluator(model, statistic)
    labels = _labels(model.design)
    bounds = [(b, min(b + CHUNK, R)) for b in range(0, R, CHUNK)]

    logger.info("permutation Monte Carlo: %s, R=%d, seed=%d", statistic.name, R, seed)
    if n_jobs == 1:
        chunks = [
            _run_chunk(evaluate, labels, seed, b, e)
            for b, e in tqdm(bounds, disable=not verbose, desc="permutations")
        ]
    else:
        chunks = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_run_chunk)(evaluate, labels, seed, b, e) for b, e in bounds
        )
    values = concatenate(chunks)

    nboundary = int(isinf(values).sum())
    if nboundary > 0:
        logger.warning("%d of %d permutations fell on the boundary", nboundary, R)
    return values


def _tail_count(values, threshold):
    slack = TIE_RTOL * max(1.0, abs(threshold))
    return int((values >= threshold - slack).sum())


def mc_tails(
    model: TiltingModel, statistic, thresholds, R=10000, seed=0, n_jobs=1,
    verbose=False,
):
    """
    Monte Carlo tail frequencies at several thresholds from one set of replicates.
    """
    values = permutation_distribution(model, statistic, R, seed, n_jobs, verbose)
    nboundary = int(isinf(values).sum())
    outcomes = []
    for t in thresholds:
        count = _tail_count(values, t)
        phat = count / R
        outcomes.append(
            PermutationOutcome(
                tail_prob=phat,
                replicates=R,
                se=float(sqrt(phat * (1 - phat) / R)),
                threshold=float(t),
                statistic=statistic,
                exact=False,
                count=count,
                total=R,
                boundary=nboundary,
            )
        )
    return outcomes


def mc_tail(
    model: TiltingModel, statistic, threshold, R=10000, seed=0, n_jobs=1,
    verbose=False,
) -> PermutationOutcome:
    """
    Monte Carlo estimate of P(statistic ≥ threshold) under random permutation.

    Examples
    --------
    .. doctest::

        >>> from permsaddle import Statistic, group_design, ksample_model, mc_tail
        >>> from permsaddle import standardize_scalar
        >>> model = ksample_model(standardize_scalar(range(1, 7)), group_design([3, 3]))
        >>> mc_tail(model, Statistic.LAMBDA, 0.0, R=100).tail_prob
        1.0
    """
    return mc_tails(model, statistic, [threshold], R, seed, n_jobs, verbose)[0]


def _multiset_permutations(labels):
    """
    Distinct arrangements of a sorted label array in lexicographic order.
    """
    g = list(labels)
    n = len(g)
    while True:
        yield asarray(g)
        i = n - 2
        while i >= 0 and g[i] >= g[i + 1]:
            i -= 1
        if i < 0:
            return
        j = n - 1
        while g[j] <= g[i]:
            j -= 1
        g[i], g[j] = g[j], g[i]
        g[i + 1 :] = reversed(g[i + 1 :])


def _arrangement_count(sizes):
    total, remaining = 1, sum(sizes)
    for n in sizes:
        total *= comb(remaining, n)
        remaining -= n
    return total


def exact_distribution(model: TiltingModel, statistic=Statistic.LAMBDA, cap=EXACT_CAP):
    """
    Statistic values over every distinct group assignment, in lexicographic order.

    Raises
    ------
    TooLarge
        When the multinomial count N!/(𝑛₁!⋯𝑛ₖ!) exceeds ``cap``.
    """
    total = _arrangement_count(model.design.sizes)
    if total > cap:
        raise TooLarge(f"{total} arrangements exceed the enumeration cap {cap}")

    evaluate = _evaluator(model, statistic)
    arrangements = _multiset_permutations(_labels(model.design))
    chunks = []
    while True:
        block = list(islice(arrangements, CHUNK))
        if not block:
            break
        chunks.append(evaluate(stack(block)))
    values = concatenate(chunks)
    assert values.shape[0] == total
    return values


def exact_tail(
    model: TiltingModel, statistic, threshold, cap=EXACT_CAP
) -> PermutationOutcome:
    """ Exact permutation tail probability count/total by full enumeration. """
    values = exact_distribution(model, statistic, cap)
    total = values.shape[0]
    count = _tail_count(values, threshold)
    return PermutationOutcome(
        tail_prob=count / total,
        replicates=total,
        se=0.0,
        threshold=float(threshold),
        statistic=statistic,
        exact=True,
        count=count,
        total=total,
        boundary=int(isinf(values).sum()),
    )
