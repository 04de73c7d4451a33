"""Classification of solutions by type ``(n, q)`` and extended-system checks.

``classify`` reads the type off singular values. ``build_extended_solution``
and ``verify_extended`` go through the extended system instead, so the
two routes can be compared against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import operator_core as oc
from .errors import SingularOperator, SolutionResidualTooLarge
from .extended_system import (
    ExtState,
    Frames,
    Phi_G_matrix,
    Phi_H_matrix,
    choose_frames,
    eval_S,
    frames_from_parts,
    jac_S,
    state_at,
)
from .problem_api import PointLU, ProblemDef, eval_F, jac_DF, jac_DuF

TOL_ZERO = 1e-7
TOL_RANK = 1e-8


def default_tol_res(p: ProblemDef, pt: PointLU) -> float:
    """``1e-8 * (1 + scale)`` with the Jacobian 2-norm as the scale of ``F``."""
    return 1e-8 * (1.0 + oc.op_norm(jac_DF(p, pt)))


@dataclass
class ClassifyReport:
    n: int
    q: int
    sigma_DF: list
    sigma_DuF: list
    kernel_DF: np.ndarray
    kernel_DuF: np.ndarray
    cokernel_DF: np.ndarray
    cokernel_DuF: np.ndarray
    rtol_used: float
    fredholm_index_note: str
    residual: float
    rank_ambiguity: list = field(default_factory=list)

    @property
    def kind(self) -> str:
        if self.n == 0:
            return "regular"
        return "bifurcation" if self.q >= 1 else "fold"

    @property
    def is_bifurcation(self) -> bool:
        return self.n >= 1 and self.q >= 1

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "q": self.q,
            "kind": self.kind,
            "sigma_DF": [float(s) for s in self.sigma_DF],
            "sigma_DuF": [float(s) for s in self.sigma_DuF],
            "rtol_used": self.rtol_used,
            "residual": self.residual,
            "fredholm_index_note": self.fredholm_index_note,
            "rank_ambiguity": list(self.rank_ambiguity),
        }


@dataclass
class VerifyReport:
    residual_S: float
    sigma_min_DS: float
    zero_components_max: float
    passes: bool
    implied_type: tuple
    tol_res: float
    tol_rank: float
    tol_zero: float

    def to_dict(self) -> dict:
        return {
            "residual_S": self.residual_S,
            "sigma_min_DS": self.sigma_min_DS,
            "zero_components_max": self.zero_components_max,
            "passes": self.passes,
            "implied_type": list(self.implied_type),
            "tol_res": self.tol_res,
            "tol_rank": self.tol_rank,
            "tol_zero": self.tol_zero,
        }


def classify(
    p: ProblemDef, pt: PointLU, rtol: float = oc.DEFAULT_RTOL, tol_res: Optional[float] = None
) -> ClassifyReport:
    """Type ``(n, q)`` of the solution ``pt`` from thresholded singular values."""
    res = float(np.linalg.norm(eval_F(p, pt)))
    tol = default_tol_res(p, pt) if tol_res is None else tol_res
    if res > tol:
        raise SolutionResidualTooLarge(f"||F(pt)|| = {res:.3e} exceeds {tol:.3e}")
    DF = jac_DF(p, pt)
    DuF = jac_DuF(p, pt)
    sF = oc.svd_analysis(DF)
    su = oc.svd_analysis(DuF)
    cokF = oc.cokernel_basis(DF, rtol)
    coku = oc.cokernel_basis(DuF, rtol, sF.sigma_max)
    keru = oc.kernel_basis(DuF, rtol, sF.sigma_max)
    kerF = oc.kernel_basis(DF, rtol)
    notes = []
    for label, sig in (("DF", sF.singular_values), ("DuF", su.singular_values)):
        thr = oc.rank_threshold(sig, rtol, sF.sigma_max)
        notes += [
            f"{label}: sigma={s:.3e} near threshold {thr:.3e}"
            for s in sig
            if thr > 0 and thr / 10 < s < 10 * thr
        ]
    return ClassifyReport(
        n=keru.shape[1],
        q=cokF.shape[1],
        sigma_DF=list(sF.singular_values),
        sigma_DuF=list(su.singular_values),
        kernel_DF=kerF,
        kernel_DuF=keru,
        cokernel_DF=cokF,
        cokernel_DuF=coku,
        rtol_used=rtol,
        fredholm_index_note=(
            f"D_uF is {p.N}x{p.N}, so dim Ker - codim Range = "
            f"{keru.shape[1] - coku.shape[1]} (index zero in finite dimension)"
        ),
        residual=res,
        rank_ambiguity=notes,
    )


def build_extended_solution(p: ProblemDef, frames: Frames, pt: PointLU) -> ExtState:
    """Extended state ``s0`` at ``pt`` with ``f = 0`` and block solves for ``y_i, z_k``."""
    return state_at(p, frames, pt)


def verify_extended(
    p: ProblemDef,
    frames: Frames,
    s0: ExtState,
    tol_res: Optional[float] = None,
    tol_rank: float = TOL_RANK,
    tol_zero: float = TOL_ZERO,
) -> VerifyReport:
    """Check ``S(s0) = 0``, nonsingularity of ``DS(s0)`` and vanishing slack components."""
    pt = s0.point
    tol = default_tol_res(p, pt) if tol_res is None else tol_res
    r = float(np.linalg.norm(eval_S(p, frames, s0)))
    smin = oc.sigma_min(jac_S(p, frames, s0))
    z = s0.zero_components_max()
    ok = bool(r <= tol and smin > tol_rank and z <= tol_zero)
    return VerifyReport(r, smin, z, ok, (frames.n, frames.q), tol, tol_rank, tol_zero)


def kernel_from_extended(s0: ExtState) -> tuple[np.ndarray, np.ndarray]:
    """Kernel bases read off the blocks: columns ``(mu_i, w_i)`` and ``v_k``."""
    return s0.mu_w.T.copy(), s0.v.T.copy()


# ---------------------------------------------------------------------------
# frame re-choice


def random_admissible_frames(
    p: ProblemDef,
    pt: PointLU,
    rng: np.random.Generator,
    rtol: float = oc.DEFAULT_RTOL,
    max_tries: int = 50,
) -> Frames:
    """Random frames of the same type as the canonical ones at ``pt``.

    Frame vectors are random recombinations of the cokernel plus a random
    range component; borderings and target bases are dense random matrices.
    Draws whose bordered operators are poorly conditioned are rejected.
    """
    base = choose_frames(p, pt, rtol)
    q, n, m, N = base.q, base.n, base.m, base.N
    DF = jac_DF(p, pt)
    DuF = jac_DuF(p, pt)
    for _ in range(max_tries):
        A = base.a_bars @ _rand_invertible(rng, q) + 0.3 * DF @ rng.standard_normal((m + N, q))
        Bb = base.b_bars @ _rand_invertible(rng, n) + 0.3 * DuF @ rng.standard_normal((N, n))
        B = base.B + 0.5 * rng.standard_normal(base.B.shape)
        Bbar = base.Bbar + 0.5 * rng.standard_normal(base.Bbar.shape)
        fr = frames_from_parts(
            p, pt, A, Bb, B, Bbar, _rand_invertible(rng, q + m), _rand_invertible(rng, n)
        )
        try:
            cg = np.linalg.cond(Phi_G_matrix(p, fr, pt))
            ch = np.linalg.cond(Phi_H_matrix(p, fr, pt)) if n else 1.0
        except np.linalg.LinAlgError:
            continue
        if cg < 1e6 and ch < 1e6:
            return fr
    raise SingularOperator("no admissible random frames found")


def _rand_invertible(rng: np.random.Generator, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((0, 0))
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return Q @ np.diag(rng.uniform(0.5, 2.0, size=k))


# ---------------------------------------------------------------------------
# equivalent maps


@dataclass
class SpotcheckReport:
    base_type: tuple
    types: list
    all_match: bool
    seed: int
    trials: int

    def to_dict(self) -> dict:
        return {
            "base_type": list(self.base_type),
            "types": [list(t) for t in self.types],
            "all_match": self.all_match,
            "seed": self.seed,
            "trials": self.trials,
        }


def transformed_problem(p: ProblemDef, Lam, A, C) -> tuple[ProblemDef, callable]:
    """``F o phi^-1`` for ``phi(lam, u) = (Lam lam, A u + C lam)``.

    Returns the new problem and the forward map ``phi`` on points.
    """
    m, N = p.m, p.N
    Lam = np.asarray(Lam, dtype=float).reshape(m, m)
    A = np.asarray(A, dtype=float).reshape(N, N)
    C = np.asarray(C, dtype=float).reshape(N, m)
    J = np.block([[Lam, np.zeros((m, N))], [C, A]])
    Jinv = np.linalg.inv(J)

    def back(lam, u):
        xi = Jinv @ np.concatenate([lam, u])
        return xi[:m], xi[m:]

    def F(lam, u):
        return p.F(*back(lam, u))

    def DF(lam, u):
        l0, u0 = back(lam, u)
        return jac_DF(p, PointLU(l0, u0)) @ Jinv

    def D2(lam, u, d1, d2):
        from .problem_api import second_directional

        l0, u0 = back(lam, u)
        return second_directional(p, PointLU(l0, u0), Jinv @ d1, Jinv @ d2)

    def DuF(lam, u):
        return DF(lam, u)[:, m:]

    def forward(pt: PointLU) -> PointLU:
        xi = J @ pt.flat()
        return PointLU(xi[:m], xi[m:])

    q = ProblemDef(p.name + "[equiv]", m, N, F, DF, DuF, D2, p.smoothness, dict(p.meta))
    return q, forward


def equivalence_spotcheck(
    p: ProblemDef, pt: PointLU, seed: int = 0, trials: int = 10, rtol: float = oc.DEFAULT_RTOL
) -> SpotcheckReport:
    """Classify ``F o phi^-1`` at ``phi(pt)`` for random invertible linear ``phi``."""
    base = classify(p, pt, rtol)
    rng = np.random.default_rng(seed)
    types = []
    for _ in range(trials):
        Lam = _rand_invertible(rng, p.m)
        A = _rand_invertible(rng, p.N)
        C = rng.standard_normal((p.N, p.m))
        tp, fwd = transformed_problem(p, Lam, A, C)
        rep = classify(tp, fwd(pt), rtol, tol_res=max(default_tol_res(tp, fwd(pt)), 10 * base.residual))
        types.append((rep.n, rep.q))
    ok = all(t == (base.n, base.q) for t in types)
    return SpotcheckReport((base.n, base.q), types, ok, seed, trials)
