"""Dense linear algebra: SVD, truncated fractional matrix powers, complex
tridiagonal solves and symmetric tridiagonal eigendecomposition.

All routines work on 64-bit floats. Complex values are stored as numpy
complex128, i.e. adjacent (real, imaginary) pairs of 64-bit floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class LinalgError(RuntimeError):
    pass


@dataclass(frozen=True)
class SvdFactors:
    """Economy SVD triple M = U diag(sigma) V^T.

    u: (m, r) orthonormal columns, v: (n, r) orthonormal columns,
    sigma: (r,) descending, r = min(m, n).
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


@dataclass
class ComplexTridiagonal:
    """Tridiagonal matrix with complex bands.

    lower/upper have length n-1, diag length n. Entries are complex128
    (each a (real, imaginary) pair of 64-bit floats in memory).
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.complex128)
        self.diag = np.asarray(self.diag, dtype=np.complex128)
        self.upper = np.asarray(self.upper, dtype=np.complex128)
        n = self.diag.shape[-1]
        if self.lower.shape[-1] != n - 1 or self.upper.shape[-1] != n - 1:
            raise ValueError("band lengths must be n-1 for diag length n")

    @property
    def size(self) -> int:
        return self.diag.shape[-1]

    def dense(self) -> np.ndarray:
        n = self.size
        t = np.zeros((n, n), dtype=np.complex128)
        t[np.arange(n), np.arange(n)] = self.diag
        t[np.arange(1, n), np.arange(n - 1)] = self.lower
        t[np.arange(n - 1), np.arange(1, n)] = self.upper
        return t


def svd(m: np.ndarray) -> SvdFactors:
    """Economy SVD with singular values sorted descending.

    Uses LAPACK (divide and conquer); deterministic for a fixed input on a
    fixed platform. Raises LinalgError (naming the dimensions) if the
    backend fails to converge.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise ValueError("svd expects a 2-D matrix with min(rows, cols) >= 1")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd input contains non-finite entries")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise LinalgError(f"SVD did not converge for {m.shape[0]}x{m.shape[1]} matrix") from exc
    return SvdFactors(u=u, sigma=s, v=vt.T)


def _power_spectrum(sigma: np.ndarray, kappa: float, tau: float) -> np.ndarray:
    """sigma_i -> sigma_i**kappa, with sigma_i < tau (and exact zeros) dropped.

    The truncation threshold is absolute and applied before exponentiation.
    Zero singular values are always treated as truncated so negative kappa
    never produces infinities.
    """
    keep = (sigma >= tau) & (sigma > 0.0)
    out = np.zeros_like(sigma)
    out[keep] = sigma[keep] ** kappa
    return out


def frac_power(m: np.ndarray, kappa: float, tau: float = 0.0) -> np.ndarray:
    """Truncated fractional matrix power V diag(sigma**kappa) U^T.

    Maps the input's output space back to its input space, so the result
    has shape (cols, rows). kappa=1 gives the transpose, kappa=-1 the
    truncated pseudoinverse.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    f = svd(m)
    vals = _power_spectrum(f.sigma, kappa, tau)
    return (f.v * vals) @ f.u.T


def beta_scaled_power(m: np.ndarray, beta: float, kappa: float, tau: float = 0.0) -> np.ndarray:
    """sigma_max**beta * frac_power(m, kappa, tau)."""
    f = svd(m)
    sigma_max = f.sigma[0]
    if beta == 0.0:
        prefactor = 1.0
    elif sigma_max <= 0.0:
        raise LinalgError("beta prefactor undefined: largest singular value is zero")
    else:
        prefactor = sigma_max ** beta
    vals = _power_spectrum(f.sigma, kappa, tau)
    return prefactor * ((f.v * vals) @ f.u.T)


_PIVOT_REL_TOL = 1e-14


def thomas_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                 rhs: np.ndarray) -> np.ndarray:
    """Thomas elimination for (batched) complex tridiagonal systems.

    Band arrays have shape (..., n-1) / (..., n) and rhs (..., n); leading
    dimensions broadcast together. No pivoting: a pivot whose magnitude
    falls below 1e-14 times the band magnitude raises LinalgError.
    """
    lower = np.asarray(lower, dtype=np.complex128)
    diag = np.asarray(diag, dtype=np.complex128)
    upper = np.asarray(upper, dtype=np.complex128)
    rhs = np.asarray(rhs, dtype=np.complex128)
    n = diag.shape[-1]
    if rhs.shape[-1] != n:
        raise ValueError("rhs length must equal system size")
    shape = np.broadcast_shapes(lower.shape[:-1], diag.shape[:-1],
                                upper.shape[:-1], rhs.shape[:-1])
    band_scale = max(np.max(np.abs(diag)), np.max(np.abs(lower), initial=0.0),
                     np.max(np.abs(upper), initial=0.0), 1e-300)
    tol = _PIVOT_REL_TOL * band_scale

    cp = np.zeros(shape + (n - 1,), dtype=np.complex128) if n > 1 else None
    dp = np.zeros(shape + (n,), dtype=np.complex128)
    piv = np.broadcast_to(diag[..., 0], shape).copy()
    if np.any(np.abs(piv) < tol):
        raise LinalgError("tridiagonal solve: zero or near-zero pivot at row 0")
    dp[..., 0] = rhs[..., 0] / piv
    for i in range(1, n):
        cp[..., i - 1] = upper[..., i - 1] / piv
        piv = diag[..., i] - lower[..., i - 1] * cp[..., i - 1]
        if np.any(np.abs(piv) < tol):
            raise LinalgError(f"tridiagonal solve: zero or near-zero pivot at row {i}")
        dp[..., i] = (rhs[..., i] - lower[..., i - 1] * dp[..., i - 1]) / piv

    x = np.empty_like(dp)
    x[..., n - 1] = dp[..., n - 1]
    for i in range(n - 2, -1, -1):
        x[..., i] = dp[..., i] - cp[..., i] * x[..., i + 1]
    return x


def solve_tridiagonal_complex(t: ComplexTridiagonal, rhs: np.ndarray) -> np.ndarray:
    """Solve T x = rhs for a complex tridiagonal T (Thomas elimination)."""
    rhs = np.asarray(rhs, dtype=np.complex128)
    if rhs.shape[-1] != t.size:
        raise ValueError("rhs length must equal t.size")
    return thomas_solve(t.lower, t.diag, t.upper, rhs)


def tridiagonal_matvec(t: ComplexTridiagonal, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    y = t.diag * x
    y[..., 1:] += t.lower * x[..., :-1]
    y[..., :-1] += t.upper * x[..., 1:]
    return y


def eigh_sym_tridiagonal(diag: np.ndarray, off: np.ndarray):
    """Eigendecomposition of a real symmetric tridiagonal matrix.

    Returns (values ascending, vectors) with vectors[:, i] the orthonormal
    eigenvector for values[i].
    """
    diag = np.asarray(diag, dtype=np.float64)
    off = np.asarray(off, dtype=np.float64)
    if off.shape[0] != diag.shape[0] - 1:
        raise ValueError("off-diagonal length must be len(diag) - 1")
    try:
        values, vectors = scipy.linalg.eigh_tridiagonal(diag, off)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise LinalgError(f"tridiagonal eigensolver failed for n={diag.shape[0]}") from exc
    return values, vectors
