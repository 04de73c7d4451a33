"""Scalar normal forms and a linear testbed with closed-form derivatives."""

from __future__ import annotations

import numpy as np

from ..problem_api import ProblemDef


def _scalar(name, f, f_lam, f_u, d2, meta=None) -> ProblemDef:
    def F(lam, u):
        return np.array([f(lam[0], u[0])])

    def DF(lam, u):
        return np.array([[f_lam(lam[0], u[0]), f_u(lam[0], u[0])]])

    def DuF(lam, u):
        return np.array([[f_u(lam[0], u[0])]])

    def D2(lam, u, d1, d2_):
        return np.array([d2(lam[0], u[0], d1[0], d1[1], d2_[0], d2_[1])])

    return ProblemDef(name, 1, 1, F, DF, DuF, D2, meta=meta or {})


def pitchfork() -> ProblemDef:
    """``F = lam*u - u^3``."""
    return _scalar(
        "pitchfork",
        lambda l, u: l * u - u**3,
        lambda l, u: u,
        lambda l, u: l - 3.0 * u**2,
        lambda l, u, m1, w1, m2, w2: m1 * w2 + m2 * w1 - 6.0 * u * w1 * w2,
    )


def transcritical() -> ProblemDef:
    """``F = lam*u - u^2``."""
    return _scalar(
        "transcritical",
        lambda l, u: l * u - u**2,
        lambda l, u: u,
        lambda l, u: l - 2.0 * u,
        lambda l, u, m1, w1, m2, w2: m1 * w2 + m2 * w1 - 2.0 * w1 * w2,
    )


def perturbed_pitchfork(eps: float) -> ProblemDef:
    """``F = lam*u - u^3 - eps``; the crossing at the origin splits for eps != 0."""
    eps = float(eps)
    return _scalar(
        "perturbed_pitchfork",
        lambda l, u: l * u - u**3 - eps,
        lambda l, u: u,
        lambda l, u: l - 3.0 * u**2,
        lambda l, u, m1, w1, m2, w2: m1 * w2 + m2 * w1 - 6.0 * u * w1 * w2,
        meta={"eps": eps},
    )


def linear(diag=(0.0, 2.0)) -> ProblemDef:
    """``F(lam, u) = K u`` with ``K = diag(diag)``; constant Jacobian.

    With the default ``K = diag(0, 2)`` every point ``(lam, 0)`` is of
    type ``(1, 1)`` and all second derivatives vanish.
    """
    K = np.diag(np.asarray(diag, dtype=float))
    N = K.shape[0]

    def F(lam, u):
        return K @ u

    def DF(lam, u):
        return np.hstack([np.zeros((N, 1)), K])

    def DuF(lam, u):
        return K.copy()

    def D2(lam, u, d1, d2):
        return np.zeros(N)

    return ProblemDef("linear", 1, N, F, DF, DuF, D2, meta={"diag": tuple(float(d) for d in diag)})
