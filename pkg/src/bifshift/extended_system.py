"""Auxiliary maps G, H, Psi, the bordered operators and the extended system S.

Layout conventions
------------------
``x = (f, lam, u)`` lives in ``R^(q+m+N)``; ``z = (e, v)`` lives in
``R^(n+N)``. The extended unknown is ``s = (x, y_1..y_{q+m}, z_1..z_n)``
with every ``y_i`` shaped like ``x``. ``S(s)`` is stacked in the same
order, so ``DS`` is square.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import operator_core as oc
from .errors import DegenerateAnchor, DimensionMismatch, NonFinite
from .problem_api import (
    FD_STEP1,
    PointLU,
    ProblemDef,
    eval_F,
    jac_DF,
    jac_DuF,
    second_directional,
)


@dataclass(frozen=True, eq=False)
class Frames:
    """Cokernel frames and borderings anchored at one point.

    ``a_bars`` is ``N x q`` and ``b_bars`` is ``N x n`` (frame vectors as
    columns). ``B`` and ``Bbar`` act on ``x`` and ``z`` respectively.
    ``basis_qm`` and ``basis_n`` hold the target vectors as columns.
    """

    m: int
    N: int
    q: int
    n: int
    a_bars: np.ndarray
    b_bars: np.ndarray
    B: np.ndarray
    Bbar: np.ndarray
    theta0: np.ndarray
    basis_qm: np.ndarray
    basis_n: np.ndarray
    anchor: Optional[PointLU] = None
    rank_ambiguity: tuple = ()
    B_N: Optional[Callable[[np.ndarray], np.ndarray]] = None
    B_N_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def dim_x(self) -> int:
        return self.q + self.m + self.N

    @property
    def dim_z(self) -> int:
        return self.n + self.N

    @property
    def dim(self) -> int:
        return self.dim_x + (self.q + self.m) * self.dim_x + self.n * self.dim_z

    def with_theta0(self, theta0) -> "Frames":
        return _replace(self, theta0=np.asarray(theta0, dtype=float).copy())

    def with_bases(self, basis_qm=None, basis_n=None) -> "Frames":
        kw = {}
        if basis_qm is not None:
            kw["basis_qm"] = np.asarray(basis_qm, dtype=float)
        if basis_n is not None:
            kw["basis_n"] = np.asarray(basis_n, dtype=float)
        return _replace(self, **kw)

    def frame_vectors(self) -> list[np.ndarray]:
        return [self.a_bars[:, i] for i in range(self.q)] + [
            self.b_bars[:, k] for k in range(self.n)
        ]

    @property
    def a_hat(self) -> float:
        vecs = self.frame_vectors()
        return max((float(np.linalg.norm(v)) for v in vecs), default=0.0)


def _replace(fr: Frames, **kw) -> Frames:
    from dataclasses import replace

    return replace(fr, **kw)


@dataclass(eq=False)
class ExtState:
    """The extended unknown ``s``; ``Y`` rows are ``y_i``, ``Z`` rows are ``z_k``."""

    q: int
    m: int
    N: int
    n: int
    x: np.ndarray
    Y: np.ndarray
    Z: np.ndarray

    @property
    def f(self) -> np.ndarray:
        return self.x[: self.q]

    @property
    def lam(self) -> np.ndarray:
        return self.x[self.q : self.q + self.m]

    @property
    def u(self) -> np.ndarray:
        return self.x[self.q + self.m :]

    @property
    def point(self) -> PointLU:
        return PointLU(self.lam, self.u)

    @property
    def g(self) -> np.ndarray:
        """``(q+m) x q`` array of the ``g_i`` components."""
        return self.Y[:, : self.q]

    @property
    def mu_w(self) -> np.ndarray:
        return self.Y[:, self.q :]

    @property
    def e(self) -> np.ndarray:
        return self.Z[:, : self.n]

    @property
    def v(self) -> np.ndarray:
        return self.Z[:, self.n :]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.x, self.Y.ravel(), self.Z.ravel()])

    @classmethod
    def unflatten(cls, vec, q: int, m: int, N: int, n: int) -> "ExtState":
        vec = np.asarray(vec, dtype=float)
        dx = q + m + N
        dz = n + N
        total = dx + (q + m) * dx + n * dz
        if vec.shape != (total,):
            raise DimensionMismatch(f"extended state needs {total} entries, got {vec.shape}")
        x = vec[:dx].copy()
        Y = vec[dx : dx + (q + m) * dx].reshape(q + m, dx).copy()
        Z = vec[dx + (q + m) * dx :].reshape(n, dz).copy()
        return cls(q, m, N, n, x, Y, Z)

    @classmethod
    def like(cls, frames: Frames, vec) -> "ExtState":
        return cls.unflatten(vec, frames.q, frames.m, frames.N, frames.n)

    def zero_components_max(self) -> float:
        parts = [np.abs(self.f), np.abs(self.g).ravel(), np.abs(self.e).ravel()]
        vals = np.concatenate(parts) if parts else np.zeros(0)
        return float(np.max(vals)) if vals.size else 0.0


def x_of(frames: Frames, pt: PointLU, f=None) -> np.ndarray:
    f = np.zeros(frames.q) if f is None else np.asarray(f, dtype=float)
    return np.concatenate([f, pt.lam, pt.u])


def _split_x(frames: Frames, x) -> tuple[np.ndarray, PointLU]:
    x = np.asarray(x, dtype=float)
    if x.shape != (frames.dim_x,):
        raise DimensionMismatch(f"x must have {frames.dim_x} entries, got {x.shape}")
    q, m = frames.q, frames.m
    return x[:q], PointLU(x[q : q + m], x[q + m :])


# ---------------------------------------------------------------------------
# matrices of the linear pieces


def DG_matrix(p: ProblemDef, frames: Frames, pt: PointLU) -> np.ndarray:
    """Matrix of ``DG(x)`` acting on ``y = (g, mu, w)``; independent of ``f``."""
    return np.hstack([-frames.a_bars, jac_DF(p, pt)])


def H_matrix(p: ProblemDef, frames: Frames, pt: PointLU) -> np.ndarray:
    """Matrix of ``z -> H(lam, u, z)``."""
    return np.hstack([-frames.b_bars, jac_DuF(p, pt)])


def Phi_G_matrix(p: ProblemDef, frames: Frames, pt: PointLU) -> np.ndarray:
    return np.vstack([frames.B, DG_matrix(p, frames, pt)])


def Phi_H_matrix(p: ProblemDef, frames: Frames, pt: PointLU) -> np.ndarray:
    return np.vstack([frames.Bbar, H_matrix(p, frames, pt)])


def d2_matrix(p: ProblemDef, pt: PointLU, d1) -> np.ndarray:
    """Matrix of ``d -> D^2F(lam, u)(d1, d)`` on ``R^(m+N)``."""
    d1 = np.asarray(d1, dtype=float)
    k = p.m + p.N
    if not np.any(d1):
        return np.zeros((p.N, k))
    if p.D2mat is not None:
        out = np.atleast_2d(np.asarray(p.D2mat(pt.lam, pt.u, d1), dtype=float))
        if out.shape != (p.N, k):
            raise DimensionMismatch(f"{p.name}: D2mat has shape {out.shape}")
        if not np.all(np.isfinite(out)):
            raise NonFinite(f"{p.name}: D2mat produced non-finite values")
        return out
    if p.D2 is None and p.DF is not None:
        # Directional derivative of the analytic Jacobian along d1.
        nd = np.linalg.norm(d1)
        x0 = pt.flat()
        t = FD_STEP1 * (1.0 + np.max(np.abs(x0)))
        dd = t * d1 / nd
        plus = PointLU.from_flat(x0 + dd, p.m)
        minus = PointLU.from_flat(x0 - dd, p.m)
        return (jac_DF(p, plus) - jac_DF(p, minus)) * (nd / (2.0 * t))
    cols = [second_directional(p, pt, d1, np.eye(k)[:, j]) for j in range(k)]
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# frame selection


def _ambiguous(sigma: np.ndarray, rtol: float, label: str, scale=None) -> list[str]:
    thr = oc.rank_threshold(sigma, rtol, scale)
    out = []
    if thr > 0.0:
        for j, s in enumerate(sigma):
            if thr / 10.0 < s < 10.0 * thr:
                out.append(f"{label}: sigma[{j}]={s:.3e} within factor 10 of threshold {thr:.3e}")
    return out


def choose_frames(
    p: ProblemDef,
    anchor: PointLU,
    rtol: float = oc.DEFAULT_RTOL,
    type_hint: Optional[tuple[int, int]] = None,
    require_n: bool = True,
) -> Frames:
    """Pick cokernel frames and orthonormal borderings at ``anchor``.

    Without ``type_hint`` the type ``(n, q)`` comes from thresholded SVD
    rank decisions. With ``type_hint=(n, q)`` the frames use the ``q``
    (resp. ``n``) smallest singular directions regardless of their size,
    which lets recovery start from a regular anchor near a singular point.
    """
    DF = jac_DF(p, anchor)
    DuF = jac_DuF(p, anchor)
    svd_F = oc.svd_analysis(DF)
    svd_u = oc.svd_analysis(DuF)
    notes = _ambiguous(svd_F.singular_values, rtol, "DF") + _ambiguous(
        svd_u.singular_values, rtol, "DuF", svd_F.sigma_max
    )
    if type_hint is None:
        q = oc.cokernel_basis(DF, rtol).shape[1]
        n = oc.kernel_basis(DuF, rtol, svd_F.sigma_max).shape[1]
    else:
        n, q = int(type_hint[0]), int(type_hint[1])
        if not (0 <= q <= p.N and 0 <= n <= p.N):
            raise DimensionMismatch(f"type hint {type_hint} incompatible with N={p.N}")
    if require_n and n == 0:
        raise DegenerateAnchor(
            f"{p.name}: D_uF is nonsingular at the anchor (sigma_min="
            f"{svd_u.sigma_min:.3e}), no kernel to border"
        )
    m, N = p.m, p.N
    a_bars = svd_F.left_vectors[:, N - q :] if q else np.zeros((N, 0))
    b_bars = svd_u.left_vectors[:, N - n :] if n else np.zeros((N, 0))
    skel = Frames(
        m, N, q, n, a_bars, b_bars,
        B=np.zeros((q + m, q + m + N)),
        Bbar=np.zeros((n, n + N)),
        theta0=np.zeros(q + m),
        basis_qm=np.eye(q + m),
        basis_n=np.eye(n),
        anchor=anchor,
        rank_ambiguity=tuple(notes),
    )
    dG = oc.svd_analysis(DG_matrix(p, skel, anchor))
    B = dG.right_vectors[:, -(q + m) :].T.copy()
    if n:
        dH = oc.svd_analysis(H_matrix(p, skel, anchor))
        Bbar = dH.right_vectors[:, -n:].T.copy()
    else:
        Bbar = np.zeros((0, N))
    theta0 = B @ x_of(skel, anchor)
    return _replace(skel, B=B, Bbar=Bbar, theta0=theta0)


def frames_from_parts(
    p: ProblemDef, anchor: PointLU, a_bars, b_bars, B, Bbar, basis_qm=None, basis_n=None
) -> Frames:
    """Assemble frames from user-supplied pieces (used for re-choice tests)."""
    a_bars = np.asarray(a_bars, dtype=float).reshape(p.N, -1)
    b_bars = np.asarray(b_bars, dtype=float).reshape(p.N, -1)
    q, n = a_bars.shape[1], b_bars.shape[1]
    B = np.asarray(B, dtype=float)
    fr = Frames(
        p.m, p.N, q, n, a_bars, b_bars, B, np.asarray(Bbar, dtype=float),
        theta0=np.zeros(q + p.m),
        basis_qm=np.eye(q + p.m) if basis_qm is None else np.asarray(basis_qm, dtype=float),
        basis_n=np.eye(n) if basis_n is None else np.asarray(basis_n, dtype=float),
        anchor=anchor,
    )
    return fr.with_theta0(B @ x_of(fr, anchor))


def intersection_sigmas(p: ProblemDef, frames: Frames, pt: PointLU) -> tuple[float, float]:
    """``sigma_min`` of ``[B; DG]`` and ``[Bbar; H]`` at ``pt``."""
    sg = oc.sigma_min(Phi_G_matrix(p, frames, pt))
    sh = oc.sigma_min(Phi_H_matrix(p, frames, pt)) if frames.n else np.inf
    return sg, float(sh)


# ---------------------------------------------------------------------------
# maps


def eval_G(p: ProblemDef, frames: Frames, x) -> np.ndarray:
    f, pt = _split_x(frames, x)
    return eval_F(p, pt) - frames.a_bars @ f


def eval_H(p: ProblemDef, frames: Frames, pt: PointLU, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return H_matrix(p, frames, pt) @ z


def _border(frames: Frames, x: np.ndarray) -> np.ndarray:
    if frames.B_N is not None:
        return np.asarray(frames.B_N(x), dtype=float)
    return frames.B @ x


def eval_Psi(p: ProblemDef, frames: Frames, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([_border(frames, x) - frames.theta0, eval_G(p, frames, x)])


def eval_Phi(p: ProblemDef, frames: Frames, x, phi: ExtState) -> np.ndarray:
    """``Phi(x, phi')``: bordered operators applied blockwise; linear in ``phi'``."""
    _, pt = _split_x(frames, x)
    PG = Phi_G_matrix(p, frames, pt)
    parts = [PG @ phi.x]
    parts += [PG @ phi.Y[i] for i in range(frames.q + frames.m)]
    if frames.n:
        PH = Phi_H_matrix(p, frames, pt)
        parts += [PH @ phi.Z[k] for k in range(frames.n)]
    return np.concatenate(parts)


def eval_S(p: ProblemDef, frames: Frames, s: ExtState) -> np.ndarray:
    pt = s.point
    DG = DG_matrix(p, frames, pt)
    parts = [eval_Psi(p, frames, s.x)]
    for i in range(frames.q + frames.m):
        parts.append(frames.B @ s.Y[i] - frames.basis_qm[:, i])
        parts.append(DG @ s.Y[i])
    if frames.n:
        Hm = H_matrix(p, frames, pt)
        for k in range(frames.n):
            parts.append(frames.Bbar @ s.Z[k] - frames.basis_n[:, k])
            parts.append(Hm @ s.Z[k])
    return np.concatenate(parts)


def jac_S(p: ProblemDef, frames: Frames, s: ExtState) -> np.ndarray:
    """Block Jacobian ``DS(s)``; the coupling blocks use second derivatives."""
    q, m, N, n = frames.q, frames.m, frames.N, frames.n
    dx, dz = frames.dim_x, frames.dim_z
    pt = s.point
    total = frames.dim
    J = np.zeros((total, total))
    DG = DG_matrix(p, frames, pt)
    Bx = frames.B_N_jac(s.x) if frames.B_N_jac is not None else frames.B
    J[: q + m, :dx] = Bx
    J[q + m : dx, :dx] = DG
    row = dx
    col = dx
    for i in range(q + m):
        J[row : row + q + m, col : col + dx] = frames.B
        r2 = row + q + m
        J[r2 : r2 + N, q:dx] = d2_matrix(p, pt, s.Y[i, q:])
        J[r2 : r2 + N, col : col + dx] = DG
        row += dx
        col += dx
    if n:
        Hm = H_matrix(p, frames, pt)
        for k in range(n):
            J[row : row + n, col : col + dz] = frames.Bbar
            r2 = row + n
            dv = np.concatenate([np.zeros(m), s.Z[k, n:]])
            J[r2 : r2 + N, q:dx] = d2_matrix(p, pt, dv)
            J[r2 : r2 + N, col : col + dz] = Hm
            row += dz
            col += dz
    return J


def fd_jac_S(p: ProblemDef, frames: Frames, s: ExtState) -> np.ndarray:
    """Central-difference Jacobian of ``eval_S``; used as a test oracle."""
    v0 = s.flatten()
    h = FD_STEP1 * (1.0 + np.max(np.abs(v0)))
    cols = []
    for j in range(v0.size):
        e = np.zeros(v0.size)
        e[j] = h
        plus = eval_S(p, frames, ExtState.like(frames, v0 + e))
        minus = eval_S(p, frames, ExtState.like(frames, v0 - e))
        cols.append((plus - minus) / (2.0 * h))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# block solves shared by classification and recovery


def anchored(frames: Frames, pt: PointLU) -> Frames:
    """Frames with ``theta0 = B(0, lam, u)`` at ``pt``."""
    return frames.with_theta0(frames.B @ x_of(frames, pt))


def solve_kernel_blocks(
    p: ProblemDef, frames: Frames, pt: PointLU
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``Phi_G(x, y_i) = (delta_i, 0)`` and ``Phi_H(x, z_k) = (delta_k, 0)``.

    Returns ``Y`` (rows ``y_i``) and ``Z`` (rows ``z_k``). Both bordered
    matrices must be nonsingular, otherwise ``SingularOperator`` is raised.
    """
    q, m, N, n = frames.q, frames.m, frames.N, frames.n
    rhs_G = np.vstack([frames.basis_qm, np.zeros((N, q + m))])
    Y = oc.solve(Phi_G_matrix(p, frames, pt), rhs_G).T
    if n:
        rhs_H = np.vstack([frames.basis_n, np.zeros((N, n))])
        Z = oc.solve(Phi_H_matrix(p, frames, pt), rhs_H).T
    else:
        Z = np.zeros((0, N))
    return Y, Z


def state_at(p: ProblemDef, frames: Frames, pt: PointLU, f=None) -> ExtState:
    """Extended state whose kernel blocks solve the bordered systems at ``pt``."""
    Y, Z = solve_kernel_blocks(p, frames, pt)
    return ExtState(frames.q, frames.m, frames.N, frames.n, x_of(frames, pt, f), Y, Z)
