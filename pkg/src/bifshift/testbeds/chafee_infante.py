"""Finite-difference Chafee-Infante problem on (0, pi) with Dirichlet ends.

``F(lam, u) = Lap_h u + lam * (u - u^3)``, where ``Lap_h`` is the usual
three-point Laplacian on ``Ng`` interior nodes with ``h = pi / (Ng + 1)``.
The trivial branch ``u = 0`` loses stability at the eigenvalues
``mu_k = (4 / h^2) sin^2(k h / 2)`` of ``-Lap_h``.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadParams
from ..problem_api import ProblemDef


def grid_step(Ng: int) -> float:
    return np.pi / (Ng + 1)


def laplacian(Ng: int) -> np.ndarray:
    h = grid_step(Ng)
    L = (np.diag(-2.0 * np.ones(Ng)) + np.diag(np.ones(Ng - 1), 1) + np.diag(np.ones(Ng - 1), -1))
    return L / h**2


def tridiag_eigen_oracle(Ng: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenpairs of ``-Lap_h``, eigenvalues ascending.

    Eigenvectors are the normalized discrete sine modes, stored as columns.
    """
    if Ng < 2:
        raise BadParams("Ng must be at least 2")
    h = grid_step(Ng)
    k = np.arange(1, Ng + 1)
    vals = (4.0 / h**2) * np.sin(k * h / 2.0) ** 2
    j = np.arange(1, Ng + 1)
    vecs = np.sin(np.outer(j, k) * h) * np.sqrt(2.0 / (Ng + 1))
    return vals, vecs


def bump_index(Ng: int) -> int:
    return Ng // 2


def chafee_infante(Ng: int, eps: float = 0.0, asym: bool = False) -> ProblemDef:
    if not isinstance(Ng, (int, np.integer)) or Ng < 2:
        raise BadParams(f"Ng must be an integer >= 2, got {Ng!r}")
    Ng = int(Ng)
    L = laplacian(Ng)
    forcing = np.zeros(Ng)
    if asym:
        forcing[bump_index(Ng)] = float(eps)

    def F(lam, u):
        return L @ u + lam[0] * (u - u**3) + forcing

    def DF(lam, u):
        return np.column_stack([u - u**3, L + lam[0] * np.diag(1.0 - 3.0 * u**2)])

    def DuF(lam, u):
        return L + lam[0] * np.diag(1.0 - 3.0 * u**2)

    def D2(lam, u, d1, d2):
        m1, w1 = d1[0], d1[1:]
        m2, w2 = d2[0], d2[1:]
        c = 1.0 - 3.0 * u**2
        return m1 * c * w2 + m2 * c * w1 - 6.0 * lam[0] * u * w1 * w2

    def D2mat(lam, u, d1):
        m1, w1 = d1[0], d1[1:]
        c = 1.0 - 3.0 * u**2
        return np.column_stack([c * w1, np.diag(m1 * c - 6.0 * lam[0] * u * w1)])

    name = "chafee_infante_asym" if asym else "chafee_infante"
    meta = {"Ng": Ng, "eps": float(eps) if asym else 0.0}
    return ProblemDef(name, 1, Ng, F, DF, DuF, D2, meta=meta, D2mat=D2mat)
