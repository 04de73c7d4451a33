"""Parameterized nonlinear problems ``F(lam, u)`` and their derivatives.

Jacobian columns are always ordered parameter block first, then state
block. When no analytic derivative is supplied, central finite
differences are used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, EvalFailure, NonFinite

EPS = np.finfo(float).eps
FD_STEP1 = EPS ** (1.0 / 3.0)
FD_STEP2 = EPS ** (1.0 / 4.0)

FFunc = Callable[[np.ndarray, np.ndarray], np.ndarray]
JacFunc = Callable[[np.ndarray, np.ndarray], np.ndarray]
D2Func = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
D2MatFunc = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PointLU:
    lam: np.ndarray
    u: np.ndarray

    def __post_init__(self) -> None:
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float)).copy()
        u = np.atleast_1d(np.asarray(self.u, dtype=float)).copy()
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(u))):
            raise NonFinite("point has non-finite entries")
        lam.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_flat(cls, vec, m: int) -> "PointLU":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:m], vec[m:])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.lam, self.u])


@dataclass(frozen=True)
class ProblemDef:
    """A map ``F: R^m x R^N -> R^N`` with optional analytic derivatives.

    ``DF(lam, u)`` must return the ``N x (m+N)`` Jacobian, ``DuF`` the
    ``N x N`` state block, and ``D2(lam, u, d1, d2)`` the second
    directional derivative with ``d1, d2`` in ``R^(m+N)``. The optional
    ``D2mat(lam, u, d1)`` returns the whole ``N x (m+N)`` matrix of
    ``d -> D2(lam, u, d1, d)``; large problems provide it to avoid one
    evaluation per column.
    """

    name: str
    m: int
    N: int
    F: FFunc
    DF: Optional[JacFunc] = None
    DuF: Optional[JacFunc] = None
    D2: Optional[D2Func] = None
    smoothness: int = 3
    meta: dict = field(default_factory=dict, compare=False)
    D2mat: Optional[D2MatFunc] = None

    def point(self, lam, u) -> PointLU:
        pt = PointLU(lam, u)
        self._check(pt)
        return pt

    def _check(self, pt: PointLU) -> None:
        if pt.lam.shape != (self.m,) or pt.u.shape != (self.N,):
            raise DimensionMismatch(
                f"{self.name}: expected lam in R^{self.m}, u in R^{self.N}, "
                f"got {pt.lam.shape} and {pt.u.shape}"
            )


def _finite(val, what: str, name: str) -> np.ndarray:
    arr = np.asarray(val, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise EvalFailure(f"{name}: {what} produced non-finite values")
    return arr


def eval_F(p: ProblemDef, pt: PointLU) -> np.ndarray:
    p._check(pt)
    out = _finite(p.F(pt.lam, pt.u), "F", p.name)
    out = np.atleast_1d(out)
    if out.shape != (p.N,):
        raise DimensionMismatch(f"{p.name}: F returned shape {out.shape}, expected ({p.N},)")
    return out


def _F_flat(p: ProblemDef, xi: np.ndarray) -> np.ndarray:
    return np.atleast_1d(np.asarray(p.F(xi[: p.m], xi[p.m :]), dtype=float))


def fd_jacobian(p: ProblemDef, pt: PointLU) -> np.ndarray:
    """Central-difference Jacobian of ``F`` with respect to ``(lam, u)``."""
    x0 = pt.flat()
    h = FD_STEP1 * (1.0 + np.max(np.abs(x0)))
    n = x0.size
    jac = np.empty((p.N, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        jac[:, j] = (_F_flat(p, x0 + e) - _F_flat(p, x0 - e)) / (2.0 * h)
    return _finite(jac, "FD Jacobian", p.name)


def jac_DF(p: ProblemDef, pt: PointLU) -> np.ndarray:
    p._check(pt)
    if p.DF is not None:
        jac = _finite(p.DF(pt.lam, pt.u), "DF", p.name)
        jac = np.atleast_2d(jac)
    else:
        jac = fd_jacobian(p, pt)
    if jac.shape != (p.N, p.m + p.N):
        raise DimensionMismatch(f"{p.name}: DF has shape {jac.shape}")
    return jac


def jac_DuF(p: ProblemDef, pt: PointLU) -> np.ndarray:
    p._check(pt)
    if p.DuF is not None:
        return np.atleast_2d(_finite(p.DuF(pt.lam, pt.u), "DuF", p.name))
    return jac_DF(p, pt)[:, p.m :]


def second_directional(p: ProblemDef, pt: PointLU, d1, d2) -> np.ndarray:
    """``D^2F(lam, u)(d1, d2)``, with ``d1`` and ``d2`` in ``R^(m+N)``."""
    p._check(pt)
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if p.D2 is not None:
        return np.atleast_1d(_finite(p.D2(pt.lam, pt.u, d1, d2), "D2F", p.name))
    return _fd_second(p, pt, d1, d2)


def _fd_second(p: ProblemDef, pt: PointLU, d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    # Second-order central differences of F along the pair (d1, d2):
    # [F(x+a+b) - F(x+a-b) - F(x-a+b) + F(x-a-b)] / (4 t^2).
    n1 = np.linalg.norm(d1)
    n2 = np.linalg.norm(d2)
    if n1 == 0.0 or n2 == 0.0:
        return np.zeros(p.N)
    x0 = pt.flat()
    t = FD_STEP2 * (1.0 + np.max(np.abs(x0)))
    a = t * d1 / n1
    b = t * d2 / n2
    val = (
        _F_flat(p, x0 + a + b)
        - _F_flat(p, x0 + a - b)
        - _F_flat(p, x0 - a + b)
        + _F_flat(p, x0 - a - b)
    ) / (4.0 * t * t)
    return _finite(val * n1 * n2, "FD second derivative", p.name)


def without_derivatives(p: ProblemDef) -> ProblemDef:
    """Copy of ``p`` that relies on finite differences only."""
    return ProblemDef(p.name + "[fd]", p.m, p.N, p.F, smoothness=p.smoothness, meta=p.meta)


@dataclass
class FdReport:
    max_rel_DF: float
    max_rel_DuF: float
    max_rel_D2: float
    points: int

    @property
    def worst(self) -> float:
        return max(self.max_rel_DF, self.max_rel_DuF, self.max_rel_D2)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    return float(np.max(np.abs(a - b))) / scale if a.size else 0.0


def fd_check(p: ProblemDef, pts, seed: int = 0) -> FdReport:
    """Compare analytic derivatives against finite differences at ``pts``.

    Missing analytic derivatives fall back to FD on both sides, which
    trivially yields zero discrepancy for that component.
    """
    fd = without_derivatives(p)
    rng = np.random.default_rng(seed)
    worst = [0.0, 0.0, 0.0]
    count = 0
    for pt in pts:
        count += 1
        worst[0] = max(worst[0], _rel(jac_DF(p, pt), jac_DF(fd, pt)))
        worst[1] = max(worst[1], _rel(jac_DuF(p, pt), jac_DuF(fd, pt)))
        d1 = rng.standard_normal(p.m + p.N)
        d2 = rng.standard_normal(p.m + p.N)
        d1 /= np.linalg.norm(d1)
        d2 /= np.linalg.norm(d2)
        worst[2] = max(
            worst[2], _rel(second_directional(p, pt, d1, d2), second_directional(fd, pt, d1, d2))
        )
    return FdReport(worst[0], worst[1], worst[2], count)
