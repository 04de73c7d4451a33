"""Dense linear algebra kernels built on the singular value decomposition.

Every rank decision in the package goes through :func:`rank_threshold`,
so a singular value equal to the threshold is treated as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFinite, SingularOperator

DEFAULT_RTOL = 1e-6


@dataclass(frozen=True)
class SvdResult:
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    @property
    def sigma_max(self) -> float:
        return float(self.singular_values[0]) if self.singular_values.size else 0.0

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1]) if self.singular_values.size else 0.0


def as_matrix(op) -> np.ndarray:
    a = np.atleast_2d(np.asarray(op, dtype=float))
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("operator contains NaN or Inf")
    return a


def svd_analysis(op, full: bool = True) -> SvdResult:
    """Singular value decomposition with finiteness checks.

    With ``full=True`` both singular frames are square, which is what the
    kernel and cokernel extraction below rely on.
    """
    a = as_matrix(op)
    try:
        u, s, vt = scipy.linalg.svd(a, full_matrices=full, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        u, s, vt = scipy.linalg.svd(a, full_matrices=full, lapack_driver="gesvd")
    return SvdResult(s, u, vt.T)


def rank_threshold(
    sigma: np.ndarray, rtol: float = DEFAULT_RTOL, scale: Optional[float] = None
) -> float:
    """``rtol`` times the larger of ``sigma_max`` and an external ``scale``.

    A block of a larger operator (``D_uF`` inside ``DF``) should be ranked
    against the norm of the whole operator; ``scale`` carries that norm.
    """
    smax = float(sigma[0]) if sigma.size else 0.0
    if scale is not None:
        smax = max(smax, float(scale))
    return rtol * smax


def numerical_rank(op, rtol: float = DEFAULT_RTOL, scale: Optional[float] = None) -> int:
    res = svd_analysis(op, full=False)
    thr = rank_threshold(res.singular_values, rtol, scale)
    return int(np.sum(res.singular_values > thr))


def kernel_basis(op, rtol: float = DEFAULT_RTOL, scale: Optional[float] = None) -> np.ndarray:
    """Orthonormal kernel basis, returned as the columns of a matrix."""
    if not 0.0 < rtol < 1.0:
        raise ValueError("rtol must lie in (0, 1)")
    a = as_matrix(op)
    res = svd_analysis(a)
    r = int(np.sum(res.singular_values > rank_threshold(res.singular_values, rtol, scale)))
    return res.right_vectors[:, r:].copy()


def cokernel_basis(op, rtol: float = DEFAULT_RTOL, scale: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of the range."""
    if not 0.0 < rtol < 1.0:
        raise ValueError("rtol must lie in (0, 1)")
    a = as_matrix(op)
    res = svd_analysis(a)
    r = int(np.sum(res.singular_values > rank_threshold(res.singular_values, rtol, scale)))
    return res.left_vectors[:, r:].copy()


def _check_square_nonsingular(a: np.ndarray, rtol: float) -> SvdResult:
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"square operator required, got {a.shape}")
    res = svd_analysis(a, full=False)
    if res.singular_values.size == 0:
        raise SingularOperator("empty operator")
    if res.sigma_min <= rank_threshold(res.singular_values, rtol) or res.sigma_min == 0.0:
        raise SingularOperator(
            f"sigma_min={res.sigma_min:.3e} below threshold (sigma_max={res.sigma_max:.3e})"
        )
    return res


def solve(op, rhs, mode: str = "exact", rtol: float = 1e-12) -> np.ndarray:
    """Solve ``op @ x = rhs``.

    ``mode="exact"`` requires a square nonsingular operator and uses an LU
    factorization. ``mode="least_squares"`` returns the minimum-norm
    least-squares solution.
    """
    a = as_matrix(op)
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, operator has {a.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise NonFinite("rhs contains NaN or Inf")
    if mode == "exact":
        _check_square_nonsingular(a, rtol)
        return scipy.linalg.lu_solve(scipy.linalg.lu_factor(a), b)
    if mode == "least_squares":
        x, *_ = scipy.linalg.lstsq(a, b, cond=rtol, lapack_driver="gelsd")
        return x
    raise ValueError(f"unknown solve mode {mode!r}")


def inverse_norm(op, rtol: float = 1e-14) -> float:
    """Operator 2-norm of the inverse, i.e. ``1 / sigma_min``."""
    res = _check_square_nonsingular(as_matrix(op), rtol)
    return 1.0 / res.sigma_min


def sigma_min(op) -> float:
    return svd_analysis(op, full=False).sigma_min


def op_norm(op) -> float:
    a = as_matrix(op)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def product_norm(blocks) -> float:
    """Sum of the Euclidean norms of the blocks (the ``(1)`` product norm)."""
    return float(sum(np.linalg.norm(np.asarray(b, dtype=float)) for b in blocks))
