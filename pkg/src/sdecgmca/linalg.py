"""
Dense linear algebra for the small matrices met in the solver.

All routines accept stacks of matrices (leading batch axes) and work on
them simultaneously; matrices are at most a few tens of rows.
"""

import numpy as np

from .errors import ContractError, SingularMatrixError

_MAX_SWEEPS = 100


def sym_eig(m, tol=1e-14):
    """Eigen-decomposition of real symmetric matrices by cyclic Jacobi.

    Parameters
    ----------
    m : array_like, shape (..., n, n)
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm falls below
        ``tol * ||m||_F``.

    Returns
    -------
    w : ndarray, shape (..., n)
        Eigenvalues in descending order.
    v : ndarray, shape (..., n, n)
        Orthonormal eigenvectors stored as columns, ``m @ v = v * w``.
    """
    a = np.array(m, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ContractError(f"expected square matrices, got shape {a.shape}")
    norm = np.sqrt(np.sum(a * a, axis=(-2, -1)))
    asym = np.sqrt(np.sum((a - np.swapaxes(a, -1, -2)) ** 2, axis=(-2, -1)))
    if np.any(asym > 1e-10 * np.maximum(norm, np.finfo(float).tiny)):
        raise ContractError("matrix is not symmetric")
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    n = a.shape[-1]
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    offdiag = ~np.eye(n, dtype=bool)

    for _ in range(_MAX_SWEEPS):
        off = np.sqrt(np.sum(a[..., offdiag] ** 2, axis=-1))
        if np.all(off <= tol * norm):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                if not np.any(apq):
                    continue
                nz = apq != 0
                # |theta| may overflow for tiny apq; the rotation is then 0
                with np.errstate(over="ignore"):
                    theta = np.where(nz, (a[..., q, q] - a[..., p, p])
                                     / (2.0 * np.where(nz, apq, 1.0)), 0.0)
                t = np.where(nz, np.sign(theta + (theta == 0))
                             / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_ = c[..., None]
                s_ = s[..., None]
                ap = a[..., :, p].copy()
                aq = a[..., :, q].copy()
                a[..., :, p] = c_ * ap - s_ * aq
                a[..., :, q] = s_ * ap + c_ * aq
                ap = a[..., p, :].copy()
                aq = a[..., q, :].copy()
                a[..., p, :] = c_ * ap - s_ * aq
                a[..., q, :] = s_ * ap + c_ * aq
                a[..., p, q] = 0.0
                a[..., q, p] = 0.0
                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c_ * vp - s_ * vq
                v[..., :, q] = s_ * vp + c_ * vq

    w = np.diagonal(a, axis1=-2, axis2=-1)
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return w, v


def cholesky(m):
    """Lower Cholesky factor of symmetric positive definite matrices."""
    a = np.asarray(m, dtype=float)
    n = a.shape[-1]
    low = np.zeros_like(a)
    for j in range(n):
        d = a[..., j, j] - np.sum(low[..., j, :j] ** 2, axis=-1)
        if np.any(~(d > 0)):
            raise SingularMatrixError(f"non-positive pivot at column {j}")
        low[..., j, j] = np.sqrt(d)
        if j + 1 < n:
            low[..., j + 1:, j] = (a[..., j + 1:, j]
                                   - np.einsum("...ik,...k->...i", low[..., j + 1:, :j],
                                               low[..., j, :j])) / low[..., j, j, None]
    return low


def cho_solve(low, rhs):
    """Solve ``L L^T x = rhs`` given the lower factor.

    ``rhs`` has shape (..., n) or (..., n, k); it may be complex.
    """
    vec = rhs.ndim == low.ndim - 1
    b = np.array(rhs[..., None] if vec else rhs,
                 dtype=np.result_type(rhs, float))
    n = low.shape[-1]
    for i in range(n):
        b[..., i, :] = (b[..., i, :] - np.einsum("...k,...kj->...j", low[..., i, :i],
                                                 b[..., :i, :])) / low[..., i, i, None]
    for i in range(n - 1, -1, -1):
        b[..., i, :] = (b[..., i, :] - np.einsum("...k,...kj->...j", low[..., i + 1:, i],
                                                 b[..., i + 1:, :])) / low[..., i, i, None]
    return b[..., 0] if vec else b


def solve_spd(m, rhs):
    """Solve symmetric positive definite systems via Cholesky.

    Raises SingularMatrixError if a pivot is not strictly positive.
    """
    return cho_solve(cholesky(m), np.asarray(rhs))


def svd_gram(m):
    """Right singular vectors and singular values from the Gram matrix.

    Returns ``(sigma, v)`` with sigma descending.
    """
    m = np.asarray(m, dtype=float)
    w, v = sym_eig(np.swapaxes(m, -1, -2) @ m)
    return np.sqrt(np.clip(w, 0.0, None)), v


def _gram_rcond(n):
    # Gram squaring limits resolution of tiny singular values to sqrt(eps)
    return np.sqrt(n * np.finfo(float).eps)


def pinv(m, rcond=None):
    """Moore-Penrose pseudo-inverse via the eigenvectors of ``m^T m``.

    Singular values below ``rcond * sigma_max`` are treated as zero; the
    default cut is sqrt(n * eps), the resolution of the Gram route.
    """
    m = np.asarray(m, dtype=float)
    sigma, v = svd_gram(m)
    rcond = _gram_rcond(m.shape[-1]) if rcond is None else rcond
    cut = rcond * sigma[..., :1]
    inv2 = np.where(sigma > cut, 1.0 / np.where(sigma > cut, sigma, 1.0) ** 2, 0.0)
    return (v * inv2[..., None, :]) @ np.swapaxes(v, -1, -2) @ np.swapaxes(m, -1, -2)


def cond(m):
    """Ratio of extreme singular values; +inf for rank-deficient input."""
    sigma, _ = svd_gram(m)
    smax, smin = sigma[..., 0], sigma[..., -1]
    deficient = smin <= smax * _gram_rcond(sigma.shape[-1])
    out = np.where(deficient, np.inf, smax / np.where(deficient, 1.0, smin))
    return float(out) if out.ndim == 0 else out
