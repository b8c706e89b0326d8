"""
Numerical kit
-------------

Special functions and small dense symmetric linear algebra used throughout the
package. Every matrix met here is a tilted covariance 𝚅 = κ″(𝛕) or one of its blocks,
so dimensions stay below a dozen and plain dense algorithms are used.

The positive-definiteness tolerance is relative: a Cholesky pivot 𝓁ᵢᵢ² must exceed
1e-12 × max diag(𝙰), and an eigenvalue must exceed 1e-12 × the largest one.
"""
from numpy import asarray, diagonal, eye, full, log, nan, newaxis, sqrt
from numpy.linalg import LinAlgError, cholesky as _np_cholesky, eigh, eigvalsh, solve
from numpy_sugar import ddot
from scipy.linalg import cho_solve
from scipy.special import gammaincc

from ._errors import DomainError, NotPositiveDefinite

__all__ = [
    "PD_RTOL",
    "SymMatrix",
    "chi_sq_tail",
    "cholesky",
    "logdet",
    "positive_definite_rows",
    "solve_rows",
    "sym_inv_sqrt",
    "sym_sqrt",
]

PD_RTOL = 1e-12


def chi_sq_tail(d, x):
    """
    Chi-squared survival function, Q̄_d(x) = P(χ²_d ≥ x).

    Evaluated as the regularized upper incomplete gamma function Γ(d/2, x/2)/Γ(d/2).

    Parameters
    ----------
    d : int
        Degrees of freedom, d ≥ 1.
    x : float
        Nonnegative argument.

    Returns
    -------
    float
        Tail probability.

    Examples
    --------
    .. doctest::

        >>> from permsaddle import chi_sq_tail
        >>> print(f"{chi_sq_tail(3, 5.0):.4f}")
        0.1718
    """
    if int(d) != d or d < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {d}")
    if not x >= 0:
        raise DomainError(f"chi-squared argument must be nonnegative, got {x}")
    return float(gammaincc(d / 2, x / 2))


class SymMatrix:
    """
    Represents a symmetric positive definite matrix 𝙰.

    The Cholesky factor 𝙻 (𝙰 = 𝙻𝙻ᵀ) is computed on first use and cached, so that
    repeated solves, inverses and log-determinants share one factorization.
    """

    def __init__(self, entries):
        A = asarray(entries, float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DomainError(f"expected a square matrix, got shape {A.shape}")
        self._A = (A + A.T) / 2
        self._L = None

    @property
    def dim(self):
        return self._A.shape[0]

    @property
    def entries(self):
        return self._A

    def chol(self):
        if self._L is None:
            self._L = cholesky(self._A)
        return self._L

    def logdet(self):
        """ log|𝙰| = 2∑ᵢlog 𝓁ᵢᵢ. """
        return 2 * float(log(diagonal(self.chol())).sum())

    def solve(self, v):
        """ Computes 𝙰⁻¹𝐯. """
        return cho_solve((self.chol(), True), asarray(v, float))

    def inv(self):
        Ai = self.solve(eye(self.dim))
        return (Ai + Ai.T) / 2

    def sqrt(self):
        return sym_sqrt(self._A)

    def block(self, start, stop=None):
        """ Diagonal block 𝙰[start:stop, start:stop]. """
        return SymMatrix(self._A[start:stop, start:stop])


def _entries(A):
    if isinstance(A, SymMatrix):
        return A.entries
    A = asarray(A, float)
    return (A + A.T) / 2


def cholesky(A):
    """
    Lower-triangular 𝙻 with 𝙰 = 𝙻𝙻ᵀ.

    Raises
    ------
    NotPositiveDefinite
        If a pivot falls below 1e-12 × max diag(𝙰).
    """
    A = _entries(A)
    scale = float(abs(diagonal(A)).max())
    try:
        L = _np_cholesky(A)
    except LinAlgError as e:
        raise NotPositiveDefinite(f"matrix is not positive definite: {e}") from e
    if scale == 0.0 or (diagonal(L) ** 2).min() <= PD_RTOL * scale:
        raise NotPositiveDefinite("Cholesky pivot below tolerance")
    return L


def logdet(A):
    """ log|𝙰| through the Cholesky factor. """
    if isinstance(A, SymMatrix):
        return A.logdet()
    return 2 * float(log(diagonal(cholesky(A))).sum())


def sym_sqrt(A):
    """
    Symmetric square root 𝙱 = 𝚀√𝚂𝚀ᵀ, where 𝙰 = 𝚀𝚂𝚀ᵀ is the eigen decomposition.

    Raises
    ------
    NotPositiveDefinite
        If an eigenvalue is at most 1e-12 × the largest one.
    """
    A = _entries(A)
    S, Q = eigh(A)
    if S.max() <= 0 or S.min() <= PD_RTOL * S.max():
        raise NotPositiveDefinite("eigenvalue below tolerance in symmetric square root")
    B = ddot(Q, sqrt(S)) @ Q.T
    return (B + B.T) / 2


def sym_inv_sqrt(A):
    """ Symmetric inverse square root 𝙰^{-1/2}. """
    A = _entries(A)
    S, Q = eigh(A)
    if S.max() <= 0 or S.min() <= PD_RTOL * S.max():
        raise NotPositiveDefinite("eigenvalue below tolerance in inverse square root")
    B = ddot(Q, 1 / sqrt(S)) @ Q.T
    return (B + B.T) / 2


def solve_rows(A, b):
    """
    Solves 𝙰ᵢ𝐱ᵢ = 𝐛ᵢ for a stack of square matrices.

    Rows whose matrix is singular get NaN solutions.
    """
    A = asarray(A, float)
    b = asarray(b, float)
    try:
        return solve(A, b[..., newaxis])[..., 0]
    except LinAlgError:
        pass
    x = full(b.shape, nan)
    for i in range(A.shape[0]):
        try:
            x[i] = solve(A[i], b[i])
        except LinAlgError:
            continue
    return x


def positive_definite_rows(A):
    """ Flags the matrices of a stack whose eigenvalues pass the PD tolerance. """
    S = eigvalsh(asarray(A, float))
    return (S[:, -1] > 0) & (S[:, 0] > PD_RTOL * S[:, -1])
