"""
Tail probabilities of the conditional likelihood-ratio-like statistic
---------------------------------------------------------------------

For λ > 0 let 𝑢 = √(2λ) and consider the level set Λ(𝐱₀, 𝐱₁) − Λ₀(𝐱₀) = λ. Each unit
direction 𝐬 ∈ S_{d₁} meets it at 𝐱₁ = 𝑟𝚅₀^{1/2}𝐬 for a unique radius 𝑟, and

    δ(𝑢, 𝐬) = Γ(d₁/2)|𝚅₀̂|^{1/2}|𝚅̂|^{-1/2}|𝚅₀|^{1/2}𝑟^{d₁−1}
              / (2π^{d₁/2}𝑢^{d₁−2}|𝐬ᵀ𝚅₀^{1/2}𝛕̂₁|),

    G(𝑢) = ∫_{S_{d₁}} δ(𝑢, 𝐬) d𝐬.

The two tail approximations are

    p_LR = Q̄_{d₁}(N𝑢²) + (c_N/N)𝑢^{d₁}exp(−N𝑢²/2)(G(𝑢) − 1)/𝑢²,
    p_BN = Q̄_{d₁}(N𝑢*²),   𝑢* = 𝑢 − log G(𝑢)/(N𝑢),

with c_N = N^{d₁/2}/(2^{d₁/2−1}Γ(d₁/2)). G is estimated by Monte Carlo over uniform
directions; for d₁ = 1 the sphere is {−1, +1} and the two-point sum is exact.
"""
import logging
from collections import namedtuple

from joblib import Parallel, delayed
from numpy import (
    arange,
    array,
    asarray,
    concatenate,
    empty,
    exp,
    flatnonzero,
    inf,
    isfinite,
    log,
    newaxis,
    pi,
    sign,
    sqrt,
    where,
    zeros,
)
from numpy.linalg import norm, slogdet
from scipy.optimize import brentq
from scipy.special import gammaln
from tqdm import tqdm

from ._errors import (
    DegenerateDirection,
    DomainError,
    LevelUnreachable,
    NoConvergence,
    NonpositiveG,
    OverflowGuard,
)
from ._math import SymMatrix, chi_sq_tail, positive_definite_rows, solve_rows
from ._random import SPHERE, stream_rng
from ._saddlepoint import (
    MAX_ITER,
    STEP_TOL,
    TOL,
    ConditionalContext,
    Saddlepoint,
    _damped_step,
    level,
)

__all__ = [
    "DirectionSolve",
    "TailResult",
    "bn_tail",
    "c_n",
    "delta",
    "estimate_G",
    "lr_tail",
    "radial_root",
    "sphere_direction",
    "sphere_surface",
    "tail_probability",
]

logger = logging.getLogger(__name__)

DEFAULT_M = 1000
LAMBDA_ZERO = 1e-14
MAX_EXPANSIONS = 64
MAX_REFINEMENTS = 64
DIRECTION_CHUNK = 1024
LEVEL_RTOL = 1e-10
LEVEL_ATOL = 1e-14

DirectionSolve = namedtuple("DirectionSolve", "s r sp delta")
TailResult = namedtuple(
    "TailResult", "u lam G G_se u_star p_lr p_bn p_chisq M seed clamped"
)


def sphere_surface(d):
    """ Surface measure of the unit sphere in ℝᵈ, 2π^{d/2}/Γ(d/2). """
    return float(exp(log(2) + d / 2 * log(pi) - gammaln(d / 2)))


def c_n(N, d1):
    """ c_N = N^{d₁/2} / (2^{d₁/2−1}Γ(d₁/2)). """
    return float(exp(d1 / 2 * log(N) - (d1 / 2 - 1) * log(2) - gammaln(d1 / 2)))


def sphere_direction(seed, index, d):
    """
    The ``index``-th uniform direction on S_d: a normalised standard normal vector
    drawn from the stream (seed, index).
    """
    z = stream_rng(seed, SPHERE, index).standard_normal(d)
    return z / norm(z)


def radial_root(model, ctx: ConditionalContext, s, lam, start=None) -> DirectionSolve:
    """
    Find 𝑟 > 0 with Λ(𝐱₀, 𝑟𝚅₀^{1/2}𝐬) − Λ₀(𝐱₀) = λ.

    The radius is bracketed by doubling from 1/N; when the inner saddlepoint fails
    before the level is crossed, the bracket is refined by bisection between the
    last feasible and the first infeasible radius. The root is then polished with
    Brent's method.

    Raises
    ------
    LevelUnreachable
        The direction leaves the feasible region below level λ.
    """
    if not lam > 0:
        raise DomainError(f"level must be positive, got {lam}")
    s = asarray(s, float)
    ray = ctx.V0_sqrt @ s
    warm = {"tau": start}
    solved = {}

    def g(r):
        if r not in solved:
            value, sp = level(model, ctx, r * ray, start=warm["tau"])
            warm["tau"] = sp.tau_hat
            solved[r] = (value - lam, sp)
        return solved[r]

    lo, hi, bad = 0.0, None, None
    r = 1.0 / model.N
    for _ in range(MAX_EXPANSIONS):
        try:
            gr, _ = g(r)
        except (NoConvergence, OverflowGuard):
            bad = r
            break
        if gr >= 0:
            hi = r
            break
        lo = r
        r *= 2

    if hi is None and bad is not None:
        logger.debug("bracket hit the boundary at r=%.4g, refining", bad)
        for _ in range(MAX_REFINEMENTS):
            mid = (lo + bad) / 2
            try:
                gm, _ = g(mid)
            except (NoConvergence, OverflowGuard):
                bad = mid
                continue
            if gm >= 0:
                hi = mid
                break
            lo = mid

    if hi is None:
        raise LevelUnreachable(
            f"level {lam:.6g} is not reached along direction {s.tolist()}", direction=s
        )

    root = brentq(lambda x: g(x)[0], lo, hi, xtol=1e-15, maxiter=200)
    gr, sp = g(root)
    u = sqrt(2 * lam)
    dsolve = DirectionSolve(s=s, r=float(root), sp=sp, delta=None)
    return dsolve._replace(delta=delta(ctx, dsolve, u))


def _log_delta(ctx, d, u, r, logdet_V, proj):
    return (
        gammaln(d / 2)
        + ctx.logdet_V_tau0 / 2
        - logdet_V / 2
        + ctx.logdet_V0 / 2
        + (d - 1) * log(r)
        - log(2)
        - d / 2 * log(pi)
        - (d - 2) * log(u)
        - log(abs(proj))
    )


def _check_projection(proj, s):
    if not abs(proj) > 1e-12:
        raise DegenerateDirection(
            f"vanishing radial derivative along direction {s.tolist()}", direction=s
        )


def delta(ctx: ConditionalContext, dsolve: DirectionSolve, u):
    """
    The sphere integrand δ(𝑢, 𝐬), evaluated in log space at the level-set point.

    Raises
    ------
    DegenerateDirection
        When |𝐬ᵀ𝚅₀^{1/2}𝛕̂₁| ≤ 1e-12.
    """
    d0 = ctx.sp0.tau_hat.shape[0]
    d = ctx.V0.dim
    s = dsolve.s
    tau1 = dsolve.sp.tau_hat[d0:]
    proj = float(s @ ctx.V0_sqrt @ tau1)
    _check_projection(proj, s)
    log_delta = _log_delta(ctx, d, u, dsolve.r, dsolve.sp.hess.logdet(), proj)
    return float(exp(log_delta))


def _level_set_batch(model, ctx: ConditionalContext, lam, rays):
    """
    Level-set points along several rays 𝚅₀^{1/2}𝐬 by one Newton iteration per ray.

    The unknowns are the tilt 𝛕 and the radius 𝑟, and the equations are

        κ′(𝛕) = 𝐱 = (𝐱₀, 𝑟𝚅₀^{1/2}𝐬),    𝛕ᵀ𝐱 − κ(𝛕) = Λ₀(𝐱₀) + λ.

    Each ray starts from the small-level expansion 𝑟 = 𝑢, 𝛕 = 𝛕₀ + 𝑢κ″(𝛕₀)⁻¹(𝟎, 𝚅₀^{1/2}𝐬)
    around 𝛕₀ = (𝛕̂₀, 𝟎).

    Returns
    -------
    z : ndarray
        K×(d₀ + d₁ + 1) solutions (𝛕, 𝑟).
    kappa, hess, f1 : ndarray
        κ(𝛕), κ″(𝛕) and κ′(𝛕) − 𝐱 at the solutions.
    iterations : ndarray
        Newton iterations per ray.
    ok : ndarray
        Rays whose iteration converged to a positive radius.
    """
    K = rays.shape[0]
    d0, dim = model.d0, model.dim
    B = zeros((K, dim))
    B[:, d0:] = rays
    level0 = ctx.sp0.lam + lam
    level_tol = max(LEVEL_RTOL * lam, LEVEL_ATOL)
    u = sqrt(2 * lam)

    base = concatenate([ctx.sp0.tau_hat, zeros(model.d1)])
    z = empty((K, dim + 1))
    z[:, :dim] = base + u * model.cgf(base).hess.solve(B.T).T
    z[:, dim] = u

    def evaluate(points, rows):
        tau, r = points[:, :dim], points[:, dim]
        kappa, grad, hess, finite = model.cgf_many(tau)
        x = r[:, newaxis] * B[rows]
        x[:, :d0] = ctx.x0
        f1 = grad - x
        f2 = (tau * x).sum(1) - kappa - level0
        return where(finite, (f1 * f1).sum(1) + f2 * f2, inf), (kappa, hess, f1, f2)

    rows = arange(K)
    merit, (kappa, hess, f1, f2) = evaluate(z, rows)
    ok = zeros(K, bool)
    iterations = zeros(K, int)
    active = rows[isfinite(merit)]
    for it in range(MAX_ITER + 1):
        if active.size == 0:
            break
        H, F1, r = hess[active], f1[active], z[active, dim]
        J = empty((active.size, dim + 1, dim + 1))
        J[:, :dim, :dim] = H
        J[:, :dim, dim] = -B[active]
        J[:, dim, :dim] = -F1
        J[:, dim, dim] = (z[active, :dim] * B[active]).sum(1)
        step = solve_rows(J, concatenate([F1, f2[active, newaxis]], axis=1))

        good = positive_definite_rows(H) & isfinite(step).all(1) & (r > 0)
        done = (
            good
            & (abs(F1).max(1) <= TOL)
            & (abs(f2[active]) <= level_tol)
            & (abs(step[:, :dim]).max(1) <= STEP_TOL)
        )
        ok[active[done]] = True
        iterations[active[done]] = it
        keep = good & ~done
        if it == MAX_ITER or not keep.any():
            break

        moving = active[keep]
        znew, mnew, (k, h, g1, g2), moved = _damped_step(
            evaluate, z[moving], step[keep], merit[moving], moving
        )
        active = moving[moved]
        z[active] = znew[moved]
        merit[active] = mnew[moved]
        kappa[active] = k[moved]
        hess[active] = h[moved]
        f1[active] = g1[moved]
        f2[active] = g2[moved]

    return z, kappa, hess, f1, iterations, ok


def _solve_directions(model, ctx: ConditionalContext, lam, S):
    """
    DirectionSolve for every row of S. Rays the joint Newton iteration cannot solve
    are handed to ``radial_root``.
    """
    d0, dim, d = model.d0, model.dim, model.d1
    u = sqrt(2 * lam)
    rays = S @ ctx.V0_sqrt
    z, kappa, hess, f1, iterations, ok = _level_set_batch(model, ctx, lam, rays)
    tau, r = z[:, :dim], z[:, dim]

    idx = flatnonzero(ok)
    proj = (tau[idx, d0:] * rays[idx]).sum(1)
    for j, i in enumerate(idx):
        _check_projection(proj[j], S[i])
    if idx.size > 0:
        _, logdet_V = slogdet(hess[idx])
        deltas = exp(_log_delta(ctx, d, u, r[idx], logdet_V, proj))

    solves = [None] * S.shape[0]
    for j, i in enumerate(idx):
        x = concatenate([ctx.x0, r[i] * rays[i]])
        sp = Saddlepoint(
            tau_hat=tau[i],
            lam=float(tau[i] @ x - kappa[i]),
            kappa=float(kappa[i]),
            hess=SymMatrix(hess[i]),
            target=x,
            iterations=int(iterations[i]),
            residual=float(abs(f1[i]).max()),
        )
        solves[i] = DirectionSolve(s=S[i], r=float(r[i]), sp=sp, delta=float(deltas[j]))

    fallback = flatnonzero(~ok)
    if fallback.size > 0:
        logger.debug("%d of %d directions solved by bracketing", fallback.size, len(S))
    for i in fallback:
        solves[i] = radial_root(model, ctx, S[i], lam)
    return solves


def estimate_G(model, ctx, lam, M=DEFAULT_M, seed=0, n_jobs=1, verbose=False):
    """
    Monte Carlo estimate of G(𝑢) = ∫δ(𝑢, 𝐬)d𝐬 over the unit sphere S_{d₁}.

    Directions are solved in chunks of DIRECTION_CHUNK by a joint Newton iteration on
    the tilt and the radius; a direction it does not settle goes through
    ``radial_root``.

    Parameters
    ----------
    model : TiltingModel
        Tilting model.
    ctx : ConditionalContext
        Conditioning quantities at 𝐱₀.
    lam : float
        Level λ > 0.
    M : int
        Number of uniform directions. Ignored when d₁ = 1.
    seed : int
        Seed of the direction streams; direction ℓ is drawn from (seed, ℓ).
    n_jobs : int
        Number of joblib workers over chunks of directions. The estimate does not
        depend on it.

    Returns
    -------
    G : float
        Estimate of G(𝑢).
    G_se : float
        Monte Carlo standard error (zero for d₁ = 1 or M = 1).
    solves : list of DirectionSolve
        Per-direction level-set solutions.
    """
    if M < 1:
        raise DomainError(f"number of sphere samples must be positive, got {M}")
    if not lam > 0:
        raise DomainError(f"level must be positive, got {lam}")

    d = model.d1
    if d == 1:
        directions = array([[1.0], [-1.0]])
    else:
        directions = array([sphere_direction(seed, i, d) for i in range(M)])

    n = directions.shape[0]
    bounds = [(b, min(b + DIRECTION_CHUNK, n)) for b in range(0, n, DIRECTION_CHUNK)]
    logger.info("estimating G at lambda=%.6g over %d directions", lam, n)
    if n_jobs == 1:
        chunks = [
            _solve_directions(model, ctx, lam, directions[b:e])
            for b, e in tqdm(bounds, disable=not verbose, desc="directions")
        ]
    else:
        chunks = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_solve_directions)(model, ctx, lam, directions[b:e])
            for b, e in bounds
        )
    solves = [ds for chunk in chunks for ds in chunk]

    deltas = array([ds.delta for ds in solves])
    if d == 1:
        return float(deltas.sum()), 0.0, solves

    surface = sphere_surface(d)
    G = surface * float(deltas.mean())
    G_se = surface * float(deltas.std(ddof=1)) / sqrt(M) if M > 1 else 0.0
    return G, float(G_se), solves


def _check_tail_args(N, d1, u, G):
    if N < 1 or d1 < 1:
        raise DomainError(f"invalid sizes N={N}, d1={d1}")
    if not u > 0:
        raise DomainError(f"u must be positive, got {u}")
    if not G > 0:
        raise NonpositiveG(f"G must be positive, got {G}; increase the sphere samples")


def _lr_tail_unclamped(N, d1, u, G):
    _check_tail_args(N, d1, u, G)
    q = chi_sq_tail(d1, N * u * u)
    if G == 1:
        return q
    log_term = (
        log(c_n(N, d1))
        - log(N)
        + (d1 - 2) * log(u)
        - N * u * u / 2
        + log(abs(G - 1))
    )
    return q + float(sign(G - 1) * exp(log_term))


def _u_star(N, u, G):
    return u - float(log(G)) / (N * u)


def lr_tail(N, d1, u, G):
    """
    Lugannani–Rice-type tail approximation, clamped to [0, 1].

    Examples
    --------
    .. doctest::

        >>> from permsaddle import chi_sq_tail, lr_tail
        >>> lr_tail(20, 3, 0.5, 1.0) == chi_sq_tail(3, 5.0)
        True
    """
    return min(max(_lr_tail_unclamped(N, d1, u, G), 0.0), 1.0)


def bn_tail(N, d1, u, G):
    """
    Barndorff-Nielsen-type tail approximation Q̄_{d₁}(N𝑢*²).

    A nonpositive adjusted root 𝑢* gives probability one.
    """
    _check_tail_args(N, d1, u, G)
    us = _u_star(N, u, G)
    if us <= 0:
        return 1.0
    return chi_sq_tail(d1, N * us * us)


def tail_probability(
    model, ctx, lam, M=DEFAULT_M, seed=0, n_jobs=1, verbose=False
) -> TailResult:
    """
    All three approximations to P(Λ − Λ₀ ≥ λ) at a single level.

    A level λ ≤ 1e-14 is treated as zero, giving probability one throughout.
    """
    N, d1 = model.N, model.d1
    if lam <= LAMBDA_ZERO:
        logger.info("level %.3g treated as zero", lam)
        return TailResult(
            u=0.0,
            lam=float(lam),
            G=1.0,
            G_se=0.0,
            u_star=0.0,
            p_lr=1.0,
            p_bn=1.0,
            p_chisq=1.0,
            M=0,
            seed=seed,
            clamped=False,
        )

    u = float(sqrt(2 * lam))
    G, G_se, solves = estimate_G(model, ctx, lam, M, seed, n_jobs, verbose)
    raw_lr = _lr_tail_unclamped(N, d1, u, G)
    us = _u_star(N, u, G)
    clamped = not (0.0 <= raw_lr <= 1.0) or us <= 0
    if clamped:
        logger.warning("tail probability clamped at u=%.4g (G=%.6g)", u, G)

    return TailResult(
        u=u,
        lam=float(lam),
        G=G,
        G_se=G_se,
        u_star=us,
        p_lr=lr_tail(N, d1, u, G),
        p_bn=bn_tail(N, d1, u, G),
        p_chisq=chi_sq_tail(d1, N * u * u),
        M=len(solves),
        seed=seed,
        clamped=clamped,
    )
