"""
Saddlepoint equations
---------------------

For a mean vector 𝐱 the saddlepoint 𝛕̂ solves κ′(𝛕̂) = 𝐱, and the likelihood-ratio-like
statistic is the convex dual

    Λ(𝐱) = 𝛕̂ᵀ𝐱 − κ(𝛕̂).

Conditioning on the lattice block 𝐱₀ replaces Λ by Λ(𝐱) − Λ₀(𝐱₀) and the formal
saddlepoint density by

    r(𝐱₁|𝐱₀) = |𝚅₀̂|^{1/2} exp(−N(Λ(𝐱) − Λ₀(𝐱₀))) / ((2π/N)^{d₁/2} |𝚅̂|^{1/2}),

with 𝚅̂ = κ″(𝛕̂) and 𝚅₀̂ = κ₀″(𝛕̂₀). All density arithmetic is done in log space.

Points outside the convex hull of the support are detected operationally: Newton's
method fails to reduce the residual, or the tilt overflows.
"""
import logging
from collections import namedtuple

from numpy import (
    arange,
    asarray,
    concatenate,
    empty,
    exp,
    inf,
    isfinite,
    log,
    nan,
    pi,
    where,
    zeros,
)

from ._errors import NoConvergence, NotPositiveDefinite, OverflowGuard
from ._math import SymMatrix, positive_definite_rows, solve_rows, sym_sqrt
from ._model import TiltingModel

__all__ = [
    "ConditionalContext",
    "Saddlepoint",
    "conditional_context",
    "conditional_density",
    "conditional_log_density",
    "formal_density",
    "lattice_density",
    "level",
    "solve_lattice",
    "solve_saddlepoint",
    "solve_saddlepoint_batch",
]

logger = logging.getLogger(__name__)

TOL = 1e-11
MAX_ITER = 200
MAX_HALVINGS = 60
STEP_TOL = 1e-6

Saddlepoint = namedtuple(
    "Saddlepoint", "tau_hat lam kappa hess target iterations residual"
)
ConditionalContext = namedtuple(
    "ConditionalContext", "x0 sp0 V0 V0_sqrt logdet_V_tau0 logdet_V0"
)


def _newton(evaluate, target, start, tol, max_iter):
    """
    Newton's method on 𝐟(𝛕) = κ′(𝛕) − 𝐱 with Jacobian κ″(𝛕).

    The step is halved until ‖𝐟‖ decreases. Convergence is declared when
    ‖𝐟‖_∞ ≤ tol and the Newton step itself is below STEP_TOL; on the boundary of
    the mean domain the residual vanishes while 𝛕 keeps drifting, so the second
    condition never holds there.
    """
    tau = zeros(target.shape[0])
    value = None
    if start is not None:
        try:
            tau = asarray(start, float).copy()
            value = evaluate(tau)
        except OverflowGuard:
            tau = zeros(target.shape[0])
    if value is None:
        value = evaluate(tau)

    f = value.grad - target
    for it in range(max_iter + 1):
        residual = float(abs(f).max())
        try:
            step = value.hess.solve(f)
        except NotPositiveDefinite as e:
            raise NoConvergence(f"singular tilted covariance at iteration {it}") from e
        if residual <= tol and float(abs(step).max()) <= STEP_TOL:
            return tau, value, it, residual
        if it == max_iter:
            break

        norm2 = float(f @ f)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = tau - t * step
            try:
                cv = evaluate(candidate)
            except OverflowGuard:
                t /= 2
                continue
            fc = cv.grad - target
            if float(fc @ fc) < norm2:
                break
            t /= 2
        else:
            raise NoConvergence(
                f"step halving failed at iteration {it} (residual {residual:.3g})"
            )
        tau, value, f = candidate, cv, fc

    raise NoConvergence(f"no convergence after {max_iter} iterations")


def solve_saddlepoint(
    model: TiltingModel, target, start=None, tol=TOL, max_iter=MAX_ITER
) -> Saddlepoint:
    """
    Solve κ′(𝛕̂) = 𝐱 and compute Λ(𝐱) = 𝛕̂ᵀ𝐱 − κ(𝛕̂).

    Parameters
    ----------
    model : TiltingModel
        Tilting model.
    target : array_like
        Mean vector (𝐱₀, 𝐱₁) of length d₀ + d₁.
    start : array_like, optional
        Warm start; defaults to 𝛕 = 𝟎.

    Returns
    -------
    Saddlepoint
        Solved tilt, Λ, κ(𝛕̂), κ″(𝛕̂), iteration count and final residual.

    Raises
    ------
    NoConvergence
        When the target lies on or outside the boundary of the mean domain.
    """
    target = asarray(target, float)
    assert target.shape == (model.dim,)
    tau, value, it, residual = _newton(model.cgf, target, start, tol, max_iter)
    logger.debug("saddlepoint solved in %d iterations, residual %.3g", it, residual)
    return Saddlepoint(
        tau_hat=tau,
        lam=float(tau @ target - value.kappa),
        kappa=value.kappa,
        hess=value.hess,
        target=target,
        iterations=it,
        residual=residual,
    )


def _damped_step(evaluate, z, step, merit0, rows):
    """
    Row-wise step halving for a stack of Newton iterations.

    Row 𝑖 moves to z[i] − 𝑡⋅step[i] for the largest 𝑡 = 2⁻ʲ, 𝑗 < MAX_HALVINGS, whose
    merit falls below merit0[i]. ``evaluate(points, rows)`` returns the merit of each
    point, nonfinite where it cannot be evaluated, and a tuple of per-row arrays.

    Returns
    -------
    z : ndarray
        Updated points; rows that did not move keep their old value.
    merit : ndarray
        Merits of the updated points.
    state : tuple of ndarray
        Per-row arrays from ``evaluate``; only meaningful where ``moved``.
    moved : ndarray
        Rows that found a descent step.
    """
    K = z.shape[0]
    z = z.copy()
    merit = merit0.copy()
    moved = zeros(K, bool)
    state = None
    pending = arange(K)
    t = 1.0
    for _ in range(MAX_HALVINGS):
        candidate = z[pending] - t * step[pending]
        cm, cstate = evaluate(candidate, rows[pending])
        if state is None:
            state = tuple(empty((K,) + s.shape[1:]) for s in cstate)
        accept = cm < merit0[pending]
        sel = pending[accept]
        z[sel] = candidate[accept]
        merit[sel] = cm[accept]
        for dst, src in zip(state, cstate):
            dst[sel] = src[accept]
        moved[sel] = True
        pending = pending[~accept]
        if pending.size == 0:
            break
        t /= 2
    return z, merit, state, moved


def solve_saddlepoint_batch(model: TiltingModel, targets, tol=TOL, max_iter=MAX_ITER):
    """
    Solve κ′(𝛕̂) = 𝐱 for every row of an M×(d₀ + d₁) array of targets.

    The rows run the same damped Newton iteration as ``solve_saddlepoint``, started
    from 𝛕 = 𝟎, with the cumulant generating function evaluated for all of them at
    once.

    Returns
    -------
    tau : ndarray
        M×(d₀ + d₁) solved tilts.
    lam : ndarray
        Λ of every row; NaN where the solve failed.
    ok : ndarray
        False for rows on or outside the boundary of the mean domain.
    """
    targets = asarray(targets, float)
    assert targets.ndim == 2 and targets.shape[1] == model.dim
    M = targets.shape[0]
    tau = zeros(targets.shape)
    kappa, grad, hess, _ = model.cgf_many(tau)
    ok = zeros(M, bool)

    def evaluate(candidate, rows):
        k, g, h, finite = model.cgf_many(candidate)
        fc = g - targets[rows]
        return where(finite, (fc * fc).sum(1), inf), (k, g, h)

    active = arange(M)
    for it in range(max_iter + 1):
        if active.size == 0:
            break
        f = grad[active] - targets[active]
        H = hess[active]
        step = solve_rows(H, f)
        good = positive_definite_rows(H) & isfinite(step).all(1)
        done = good & (abs(f).max(1) <= tol) & (abs(step).max(1) <= STEP_TOL)
        ok[active[done]] = True
        keep = good & ~done
        if it == max_iter or not keep.any():
            break

        rows = active[keep]
        merit0 = (f[keep] * f[keep]).sum(1)
        z, _, (k, g, h), moved = _damped_step(evaluate, tau[rows], step[keep], merit0, rows)
        active = rows[moved]
        tau[active] = z[moved]
        kappa[active] = k[moved]
        grad[active] = g[moved]
        hess[active] = h[moved]

    nfailed = M - int(ok.sum())
    if nfailed > 0:
        logger.debug("%d of %d batched saddlepoints did not converge", nfailed, M)
    lam = where(ok, (tau * targets).sum(1) - kappa, nan)
    return tau, lam, ok


def solve_lattice(
    model: TiltingModel, x0, start=None, tol=TOL, max_iter=MAX_ITER
) -> Saddlepoint:
    """ Solve κ₀′(𝛕̂₀) = 𝐱₀ and compute Λ₀(𝐱₀). """
    x0 = asarray(x0, float)
    assert x0.shape == (model.d0,)
    tau, value, it, residual = _newton(model.cgf_lattice, x0, start, tol, max_iter)
    return Saddlepoint(
        tau_hat=tau,
        lam=float(tau @ x0 - value.kappa),
        kappa=value.kappa,
        hess=value.hess,
        target=x0,
        iterations=it,
        residual=residual,
    )


def conditional_context(model: TiltingModel, x0=None) -> ConditionalContext:
    """
    Quantities shared by every conditional evaluation at a fixed lattice point 𝐱₀.

    𝚅₀ is defined by 𝚅₀⁻¹ = [κ″(𝟎)⁻¹]₁₁, the lower-right d₁×d₁ block; equivalently
    𝚅₀ is the Schur complement of the lattice block of κ″(𝟎).

    Parameters
    ----------
    model : TiltingModel
        Tilting model.
    x0 : array_like, optional
        Lattice point; defaults to the group proportions 𝐩.
    """
    x0 = model.p if x0 is None else asarray(x0, float)
    H = model.cgf(zeros(model.dim)).hess
    Hinv = H.inv()
    V0 = SymMatrix(SymMatrix(Hinv[model.d0 :, model.d0 :]).inv())
    sp0 = solve_lattice(model, x0)
    return ConditionalContext(
        x0=x0,
        sp0=sp0,
        V0=V0,
        V0_sqrt=sym_sqrt(V0),
        logdet_V_tau0=sp0.hess.logdet(),
        logdet_V0=V0.logdet(),
    )


def level(model: TiltingModel, ctx: ConditionalContext, x1, start=None):
    """
    Λ(𝐱₀, 𝐱₁) − Λ₀(𝐱₀) together with the joint saddlepoint.
    """
    x = concatenate([ctx.x0, asarray(x1, float)])
    sp = solve_saddlepoint(model, x, start=start)
    return sp.lam - ctx.sp0.lam, sp


def conditional_log_density(model: TiltingModel, ctx: ConditionalContext, x1):
    lam, sp = level(model, ctx, x1)
    N = model.N
    return (
        ctx.logdet_V_tau0 / 2
        - N * lam
        + model.d1 / 2 * log(N / (2 * pi))
        - sp.hess.logdet() / 2
    )


def conditional_density(model: TiltingModel, ctx: ConditionalContext, x1):
    """ The conditional formal saddlepoint density r(𝐱₁|𝐱₀). """
    return float(exp(conditional_log_density(model, ctx, x1)))


def lattice_density(model: TiltingModel, x0):
    """
    r₀(𝐱₀) = (2πN)^{-d₀/2} |𝚅₀̂|^{-1/2} exp(−NΛ₀(𝐱₀)), the approximation to
    P(𝐱̄₀ = 𝐱₀).
    """
    sp0 = solve_lattice(model, x0)
    N = model.N
    return float(
        exp(
            -model.d0 / 2 * log(2 * pi * N)
            - sp0.hess.logdet() / 2
            - N * sp0.lam
        )
    )


def formal_density(model: TiltingModel, x):
    """
    r(𝐱) = exp(−NΛ(𝐱)) (2πN)^{-d₀/2} (2π/N)^{-d₁/2} |𝚅̂|^{-1/2}.
    """
    sp = solve_saddlepoint(model, x)
    N = model.N
    return float(
        exp(
            -N * sp.lam
            - model.d0 / 2 * log(2 * pi * N)
            - model.d1 / 2 * log(2 * pi / N)
            - sp.hess.logdet() / 2
        )
    )
