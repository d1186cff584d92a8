"""Dense linear-algebra and statistics kernels shared across the package.

Matrices are plain ``numpy`` arrays. :func:`as_mat` and :func:`as_sym` are the
validating constructors used at public boundaries: they reject non-finite
entries and, for symmetric matrices, average ``(M + M.T) / 2``.
"""

from __future__ import annotations

import math
from statistics import NormalDist
from typing import Sequence

import numpy as np

__all__ = [
    "as_mat",
    "as_sym",
    "hankel",
    "pinv",
    "rank",
    "consistency_projector",
    "kron",
    "gammainc_lower",
    "gammainc_upper",
    "chi2_cdf",
    "chi2_quantile",
    "min_eig",
    "max_eig",
    "is_psd",
    "sqrtm_psd",
    "spectral_norm",
    "stack_columns",
]


def as_mat(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite 2-D float array (vectors become columns)."""
    m = np.array(x, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(-1, 1)
    elif m.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: non-finite entries")
    return m


def as_sym(x, name: str = "symmetric matrix") -> np.ndarray:
    m = as_mat(x, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {m.shape}")
    return 0.5 * (m + m.T)


def hankel(signal, start: int, depth: int, width: int) -> np.ndarray:
    """Block Hankel matrix of a vector signal.

    ``signal`` is indexed by time along its first axis (shape ``(L,)`` for a
    scalar signal or ``(L, sigma)``). Block ``(r, c)`` of the result is
    ``signal[start + r + c]`` as a column, so the result has shape
    ``(sigma * depth, width)``. With ``depth == 1`` this is the row of
    columns ``[z_i, ..., z_{i+j-1}]``.
    """
    z = np.asarray(signal, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if start < 0 or depth < 1 or width < 1:
        raise ValueError("hankel: start must be >= 0, depth and width >= 1")
    need = start + depth + width - 1
    if need > z.shape[0]:
        raise ValueError(
            f"hankel: signal too short, need {need} samples, have {z.shape[0]}"
        )
    sigma = z.shape[1]
    out = np.empty((sigma * depth, width))
    for r in range(depth):
        out[r * sigma:(r + 1) * sigma, :] = z[start + r:start + r + width].T
    return out


def _cutoff(s: np.ndarray, shape: tuple[int, int], tol: float | None = None) -> float:
    # subnormal singular values are dropped too: their reciprocals overflow
    if s.size == 0:
        return 0.0
    rel = max(shape) * np.finfo(float).eps if tol is None else tol
    return max(rel * s[0], np.finfo(float).tiny)


def pinv(m, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values at or below ``tol * sigma_max`` are dropped. The default
    cutoff is ``max(rows, cols) * eps``.
    """
    a = as_mat(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cut = _cutoff(s, a.shape, tol)
    keep = s > cut
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def rank(m, tol: float | None = None) -> int:
    a = as_mat(m)
    s = np.linalg.svd(a, compute_uv=False)
    cut = _cutoff(s, a.shape, tol)
    return int(np.sum(s > cut))


def consistency_projector(s, tol: float | None = None) -> np.ndarray:
    """Orthogonal projector ``I - pinv(S) S`` onto the null space of ``S``.

    Built from the right singular vectors so the result is symmetric and
    idempotent to rounding.
    """
    a = as_mat(s, "S")
    _, sv, vt = np.linalg.svd(a, full_matrices=True)
    cut = _cutoff(sv, a.shape, tol)
    r = int(np.sum(sv > cut))
    null = vt[r:].T
    gamma = null @ null.T
    return 0.5 * (gamma + gamma.T)


def kron(a, b) -> np.ndarray:
    return np.kron(as_mat(a), as_mat(b))


# --- regularized incomplete gamma -------------------------------------------

_GAMMA_EPS = 1e-16
_GAMMA_MAXIT = 10_000


def _gser(a: float, x: float) -> float:
    # series for P(a, x), good for x < a + 1
    ap = a
    term = total = 1.0 / a
    for _ in range(_GAMMA_MAXIT):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gcf(a: float, x: float) -> float:
    # modified Lentz continued fraction for Q(a, x), good for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAXIT):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(a, x)``."""
    if a <= 0:
        raise ValueError("gammainc_lower: a must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gser(a, x)
    return 1.0 - _gcf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x) = 1 - P(a, x)``."""
    if a <= 0:
        raise ValueError("gammainc_upper: a must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gser(a, x)
    return _gcf(a, x)


def chi2_cdf(x: float, dof: int) -> float:
    return gammainc_lower(dof / 2.0, x / 2.0)


def chi2_quantile(dof: int, q: float) -> float:
    """Inverse CDF of the chi-square distribution.

    Newton iteration on the regularized incomplete gamma, safeguarded by a
    bisection bracket. For ``q > 1/2`` the upper tail is matched instead so
    that quantiles close to 1 keep full relative accuracy.
    """
    if dof < 1:
        raise ValueError("chi2_quantile: dof must be >= 1")
    if not 0.0 <= q < 1.0:
        raise ValueError(f"chi2_quantile: q must lie in [0, 1), got {q}")
    if q == 0.0:
        return 0.0
    a = dof / 2.0
    upper = q > 0.5
    target = 1.0 - q if upper else q

    def resid(y: float) -> float:
        # increasing in y in both branches
        if upper:
            return target - gammainc_upper(a, y)
        return gammainc_lower(a, y) - target

    def dens(y: float) -> float:
        return math.exp((a - 1.0) * math.log(y) - y - math.lgamma(a))

    # Wilson-Hilferty starting point, in units of y = x / 2
    z = NormalDist().inv_cdf(q)
    c = 2.0 / (9.0 * dof)
    y = max(0.5 * dof * (1.0 - c + z * math.sqrt(c)) ** 3, 1e-8)

    lo, hi = 0.0, max(y, 1.0)
    while resid(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
    for _ in range(500):
        f = resid(y)
        if f == 0.0:
            break
        if f < 0.0:
            lo = max(lo, y)
        else:
            hi = min(hi, y)
        d = dens(y)
        step = f / d if d > 0.0 else math.inf
        y_new = y - step
        if not lo < y_new < hi:
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= 4.0 * np.finfo(float).eps * y_new:
            y = y_new
            break
        y = y_new
    return 2.0 * y


# --- symmetric spectra -------------------------------------------------------

def min_eig(m) -> float:
    return float(np.linalg.eigvalsh(as_sym(m))[0])


def max_eig(m) -> float:
    return float(np.linalg.eigvalsh(as_sym(m))[-1])


def is_psd(m, tol: float = 1e-9) -> bool:
    w = np.linalg.eigvalsh(as_sym(m))
    return bool(w[0] >= -tol * (1.0 + np.max(np.abs(w))))


def sqrtm_psd(m, tol: float = 1e-9) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in ``[-tol * (1 + max|eig|), 0)`` are clipped to zero; anything
    more negative is rejected.
    """
    w, v = np.linalg.eigh(as_sym(m))
    if w.size and w[0] < -tol * (1.0 + np.max(np.abs(w))):
        raise ValueError(f"sqrtm_psd: matrix is indefinite (min eig {w[0]:.3e})")
    r = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (r + r.T)


def spectral_norm(m) -> float:
    a = as_mat(m)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def stack_columns(vectors: Sequence, dim: int) -> np.ndarray:
    """Stack a sequence of length-``dim`` vectors as columns of a matrix."""
    if len(vectors) == 0:
        return np.zeros((dim, 0))
    return np.column_stack([np.asarray(v, dtype=float).reshape(dim) for v in vectors])
