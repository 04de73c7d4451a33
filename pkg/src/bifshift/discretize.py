"""Approximate problems on coarse spaces and the transfer of bordered isomorphisms.

A ``ProjectionPair`` carries a restriction ``P`` (fine to coarse) and an
embedding ``E`` (coarse to fine) with ``P E = I``. The coarse spaces are
identified with ``range(E)`` and inherit the fine norms. Those norms are
given by weight factors: ``||u||_W = ||R_W u||`` and ``||f||_Z = ||R_Z f||``.
The default weights are identities. ``norm="energy"`` selects discrete
``H^1_0`` and ``H^-1`` norms built from the Dirichlet Laplacian, and these
keep differential operators bounded as the grid is refined.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from . import operator_core as oc
from .certify import error_bound
from .classify_verify import classify
from .errors import BadParams, InadmissibleProjection, SingularOperator
from .extended_system import (
    ExtState,
    Frames,
    DG_matrix,
    H_matrix,
    Phi_G_matrix,
    Phi_H_matrix,
    anchored,
    eval_S,
    frames_from_parts,
    state_at,
)
from .problem_api import PointLU, ProblemDef, eval_F, jac_DF, jac_DuF, second_directional
from .recovery import RecoveryOptions, recover, shifted_problem
from .testbeds.chafee_infante import laplacian, tridiag_eigen_oracle

log = logging.getLogger(__name__)

KINDS = ("truncation", "injection", "interpolation", "identity")
CSV_COLUMNS = (
    "h_label",
    "C_est",
    "eta1",
    "eta2",
    "eta3",
    "eta4",
    "qG",
    "qH",
    "delta_h",
    "rho_norm",
    "lambda0h",
    "gap",
    "bound",
    "type_n",
    "type_q",
)


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    P_W: np.ndarray
    P_Z: np.ndarray
    E_W: np.ndarray
    C_est: float
    h_label: float
    kind: str = "custom"
    R_W: Optional[np.ndarray] = None
    R_Z: Optional[np.ndarray] = None

    @property
    def fine_N(self) -> int:
        return self.E_W.shape[0]

    @property
    def coarse_N(self) -> int:
        return self.E_W.shape[1]

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        N = self.fine_N
        RW = np.eye(N) if self.R_W is None else self.R_W
        RZ = np.eye(N) if self.R_Z is None else self.R_Z
        return RW, RZ

    def coarse_weights(self) -> tuple[np.ndarray, np.ndarray]:
        RW, RZ = self.weights()
        E = self.E_W
        return _sym_sqrt(E.T @ RW.T @ RW @ E), _sym_sqrt(E.T @ RZ.T @ RZ @ E)


def _sym_sqrt(G: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def energy_weights(N: int) -> tuple[np.ndarray, np.ndarray]:
    """``(R_W, R_Z) = ((-Lap)^(1/2), (-Lap)^(-1/2))`` for the Dirichlet Laplacian."""
    w, V = np.linalg.eigh(-laplacian(N))
    return (V * np.sqrt(w)) @ V.T, (V / np.sqrt(w)) @ V.T


def default_frame(N: int) -> np.ndarray:
    """The lowest discrete sine mode, as a single column."""
    _, vecs = tridiag_eigen_oracle(N)
    return vecs[:, :1]


def frame_constant(P: np.ndarray, E: np.ndarray, frame: np.ndarray, R_Z: Optional[np.ndarray] = None) -> float:
    """Smallest ``C`` with ``||a - E P a||_Z <= C ||a||_Z`` on the span of ``frame``."""
    A = np.asarray(frame, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    RZ = np.eye(A.shape[0]) if R_Z is None else R_Z
    Q, _ = np.linalg.qr(RZ @ A)
    resid = RZ @ (A - E @ (P @ A))
    # express the residual map on the orthonormal basis Q of R_Z * span(A)
    coef = np.linalg.lstsq(RZ @ A, Q, rcond=None)[0]
    return float(oc.op_norm(resid @ coef))


def projection_from_matrices(
    P,
    E,
    frame,
    h_label: float,
    kind: str = "custom",
    R_W=None,
    R_Z=None,
) -> ProjectionPair:
    P = oc.as_matrix(P)
    E = oc.as_matrix(E)
    if P.shape != (E.shape[1], E.shape[0]):
        raise BadParams(f"P has shape {P.shape}, E has shape {E.shape}")
    C = frame_constant(P, E, frame, R_Z)
    if not C < 1.0:
        raise InadmissibleProjection(f"frame constant C = {C:.4g} is not below 1")
    return ProjectionPair(P, P, E, C, float(h_label), kind, R_W, R_Z)


def _hat_interp(x_from: np.ndarray, x_to: np.ndarray) -> np.ndarray:
    """Piecewise linear interpolation matrix with zero Dirichlet ends on (0, pi)."""
    xs = np.concatenate([[0.0], x_from, [np.pi]])
    M = np.zeros((x_to.size, x_from.size))
    for j in range(x_from.size):
        vals = np.zeros(xs.size)
        vals[j + 1] = 1.0
        M[:, j] = np.interp(x_to, xs, vals)
    return M


def _nodes(N: int) -> np.ndarray:
    return np.arange(1, N + 1) * np.pi / (N + 1)


def build_projection(
    fine_N: int,
    coarse_N: int,
    kind: str = "truncation",
    frame=None,
    norm: str = "l2",
) -> ProjectionPair:
    """Projection pair between Dirichlet grids on (0, pi).

    ``truncation`` keeps the lowest ``coarse_N`` sine modes, ``injection``
    samples nested nodes and embeds by linear interpolation, and
    ``interpolation`` embeds by linear interpolation and restricts by
    least squares. All satisfy ``P E = I``.
    """
    if coarse_N > fine_N or coarse_N < 2:
        raise BadParams("need 2 <= coarse_N <= fine_N")
    if kind not in KINDS:
        raise BadParams(f"unknown projection kind {kind!r}")
    if norm not in ("l2", "energy"):
        raise BadParams(f"unknown norm {norm!r}")
    if kind == "identity" and coarse_N != fine_N:
        raise BadParams("identity pair needs coarse_N == fine_N")
    xf, xc = _nodes(fine_N), _nodes(coarse_N)
    if kind == "identity":
        P = np.eye(fine_N)
        E = np.eye(fine_N)
    elif kind == "truncation":
        _, Qf = tridiag_eigen_oracle(fine_N)
        _, Qc = tridiag_eigen_oracle(coarse_N)
        # scale so that sampled functions keep their nodal values
        s = np.sqrt((fine_N + 1) / (coarse_N + 1))
        E = s * Qf[:, :coarse_N] @ Qc.T
        P = Qc @ Qf[:, :coarse_N].T / s
    elif kind == "injection":
        if (fine_N + 1) % (coarse_N + 1):
            raise BadParams("injection needs nested grids: (fine_N+1) divisible by (coarse_N+1)")
        step = (fine_N + 1) // (coarse_N + 1)
        P = np.zeros((coarse_N, fine_N))
        P[np.arange(coarse_N), step * np.arange(1, coarse_N + 1) - 1] = 1.0
        E = _hat_interp(xc, xf)
    else:
        E = _hat_interp(xc, xf)
        P = np.linalg.solve(E.T @ E, E.T)
    R_W = R_Z = None
    if norm == "energy":
        R_W, R_Z = energy_weights(fine_N)
    frame = default_frame(fine_N) if frame is None else frame
    return projection_from_matrices(P, E, frame, np.pi / (coarse_N + 1), kind, R_W, R_Z)


# ---------------------------------------------------------------------------
# approximate problems and frames


def approx_problem(p: ProblemDef, pair: ProjectionPair) -> ProblemDef:
    """``F_h(lam, u_h) = P F(lam, E u_h)`` with chain-rule derivatives."""
    P, E = pair.P_Z, pair.E_W
    m = p.m
    Ex = scipy.linalg.block_diag(np.eye(m), E)

    def F(lam, u):
        return P @ eval_F(p, PointLU(lam, E @ u))

    def DF(lam, u):
        return P @ jac_DF(p, PointLU(lam, E @ u)) @ Ex

    def DuF(lam, u):
        return P @ jac_DuF(p, PointLU(lam, E @ u)) @ E

    def D2(lam, u, d1, d2):
        return P @ second_directional(p, PointLU(lam, E @ u), Ex @ d1, Ex @ d2)

    meta = dict(p.meta)
    meta["coarse_N"] = pair.coarse_N
    return ProblemDef(p.name + "-h", m, pair.coarse_N, F, DF, DuF, D2, p.smoothness, meta)


def _x_embed(frames: Frames, E: np.ndarray) -> np.ndarray:
    return scipy.linalg.block_diag(np.eye(frames.q + frames.m), E)


def _z_embed(frames: Frames, E: np.ndarray) -> np.ndarray:
    return scipy.linalg.block_diag(np.eye(frames.n), E)


def _aligned_kernel_rows(M: np.ndarray, dim: int, target: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the ``dim`` smallest right singular directions of ``M``,
    rotated to be closest to ``target`` (orthogonal Procrustes)."""
    K = oc.svd_analysis(M).right_vectors[:, -dim:].T
    U, _, Vt = np.linalg.svd(target @ K.T)
    return (U @ Vt) @ K


def projected_state(frames: Frames, s0: ExtState, pair: ProjectionPair) -> ExtState:
    """Exact extended state with every ``W`` component mapped by ``P_W``."""
    q, m, n = frames.q, frames.m, frames.n
    P = pair.P_W
    x = np.concatenate([s0.x[: q + m], P @ s0.x[q + m :]])
    Y = np.array([np.concatenate([y[: q + m], P @ y[q + m :]]) for y in s0.Y])
    Z = np.array([np.concatenate([z[:n], P @ z[n:]]) for z in s0.Z]) if n else np.zeros((0, n + pair.coarse_N))
    return ExtState(q, m, pair.coarse_N, n, x, Y, Z)


def embedded_state(frames: Frames, s: ExtState, pair: ProjectionPair) -> ExtState:
    q, m, n = frames.q, frames.m, frames.n
    E = pair.E_W
    x = np.concatenate([s.x[: q + m], E @ s.x[q + m :]])
    Y = np.array([np.concatenate([y[: q + m], E @ y[q + m :]]) for y in s.Y])
    Z = np.array([np.concatenate([z[:n], E @ z[n:]]) for z in s.Z]) if n else np.zeros((0, n + pair.fine_N))
    return ExtState(q, m, pair.fine_N, n, x, Y, Z)


def approx_frames(
    p_h: ProblemDef,
    pair: ProjectionPair,
    frames: Frames,
    s0: ExtState,
    b_mode: str = "rederived",
) -> tuple[Frames, ExtState]:
    """Frames for ``F_h`` and the projected anchor state ``s~_0h``.

    Frame vectors are projected (``a_ih = P_Z a_i``). With
    ``b_mode="rederived"`` the border rows span the near-kernel of the
    approximate bordered Jacobians, rotated toward the restricted exact
    rows; ``"restricted"`` uses the exact rows composed with ``E``. The
    border targets are set so that the projected state meets them.
    """
    if b_mode not in ("rederived", "restricted"):
        raise BadParams(f"unknown b_mode {b_mode!r}")
    E = pair.E_W
    st = projected_state(frames, s0, pair)
    anchor_h = st.point
    a_h = pair.P_Z @ frames.a_bars
    b_h = pair.P_Z @ frames.b_bars
    B_restr = frames.B @ _x_embed(frames, E)
    Bbar_restr = frames.Bbar @ _z_embed(frames, E) if frames.n else np.zeros((0, pair.coarse_N))
    if b_mode == "restricted":
        B_h, Bbar_h = B_restr, Bbar_restr
    else:
        tmp = frames_from_parts(
            p_h, anchor_h, a_h, b_h, B_restr, Bbar_restr, np.eye(frames.q + frames.m), np.eye(frames.n)
        )
        B_h = _aligned_kernel_rows(DG_matrix(p_h, tmp, anchor_h), frames.q + frames.m, B_restr)
        Bbar_h = (
            _aligned_kernel_rows(H_matrix(p_h, tmp, anchor_h), frames.n, Bbar_restr)
            if frames.n
            else Bbar_restr
        )
    basis_qm = B_h @ st.Y.T
    basis_n = Bbar_h @ st.Z.T if frames.n else np.zeros((0, 0))
    fr = frames_from_parts(p_h, anchor_h, a_h, b_h, B_h, Bbar_h, basis_qm, basis_n)
    return fr, st


# ---------------------------------------------------------------------------
# transfer constants


@dataclass
class TransferReport:
    eta1: float
    eta2: float
    eta3: float
    eta4: float
    C: float
    J_norm: float
    q_G1: float
    q_G2: float
    q_G: float
    q_H1: float
    q_H2: float
    q_H: float
    inv_norm_exact_G: float
    inv_norm_bound_G: float
    inv_norm_actual_G: float
    inv_norm_exact_H: float
    inv_norm_bound_H: float
    inv_norm_actual_H: float

    @property
    def admissible(self) -> bool:
        return self.q_G < 1.0 and self.q_H < 1.0

    @property
    def sound_G(self) -> Optional[bool]:
        if not self.q_G < 1.0:
            return None
        return bool(np.isfinite(self.inv_norm_actual_G) and self.inv_norm_actual_G <= self.inv_norm_bound_G + 1e-9)

    @property
    def sound_H(self) -> Optional[bool]:
        if not self.q_H < 1.0:
            return None
        return bool(np.isfinite(self.inv_norm_actual_H) and self.inv_norm_actual_H <= self.inv_norm_bound_H + 1e-9)

    def to_dict(self) -> dict:
        d = {k: float(v) for k, v in self.__dict__.items()}
        d["admissible"] = self.admissible
        d["sound_G"] = self.sound_G
        d["sound_H"] = self.sound_H
        return d


def _weighted_inv_norm(M: np.ndarray, out_w: np.ndarray, in_w: np.ndarray) -> float:
    A = out_w @ M @ np.linalg.inv(in_w)
    s = oc.svd_analysis(A).sigma_min
    return float(np.inf) if s == 0.0 else float(1.0 / s)


def eta_estimates(
    p: ProblemDef,
    p_h: ProblemDef,
    pair: ProjectionPair,
    frames: Frames,
    exact_pt: PointLU,
    frames_h: Frames,
    anchor_h: PointLU,
) -> tuple[float, float, float, float]:
    """Tightest ``eta_1..eta_4`` for the displayed inequalities, in the pair's norms."""
    E, P = pair.E_W, pair.P_Z
    RWh, RZh = pair.coarse_weights()
    qm, n, m = frames.q + frames.m, frames.n, frames.m
    Xw = scipy.linalg.block_diag(np.eye(qm), RWh)
    eta1 = oc.op_norm((frames.B @ _x_embed(frames, E) - frames_h.B) @ np.linalg.inv(Xw))
    Lw = scipy.linalg.block_diag(np.eye(m), RWh)
    D2diff = P @ jac_DF(p, exact_pt) @ scipy.linalg.block_diag(np.eye(m), E) - jac_DF(p_h, anchor_h)
    eta2 = oc.op_norm(RZh @ D2diff @ np.linalg.inv(Lw))
    if n:
        Dw = scipy.linalg.block_diag(np.eye(n), RWh)
        eta3 = oc.op_norm((frames.Bbar @ _z_embed(frames, E) - frames_h.Bbar) @ np.linalg.inv(Dw))
    else:
        eta3 = 0.0
    Ddiff = P @ jac_DuF(p, exact_pt) @ E - jac_DuF(p_h, anchor_h)
    eta4 = oc.op_norm(RZh @ Ddiff @ np.linalg.inv(RWh))
    return float(eta1), float(eta2), float(eta3), float(eta4)


def transfer_check(
    p: ProblemDef,
    p_h: ProblemDef,
    pair: ProjectionPair,
    frames: Frames,
    exact_pt: PointLU,
    frames_h: Frames,
    anchor_h: PointLU,
) -> TransferReport:
    """Transfer constants ``q_G, q_H`` and the inverse-norm bounds they imply.

    The isomorphism between ``W`` and ``Z`` is the identity on the shared
    coordinates; its norm is measured in the pair's weights.
    """
    eta1, eta2, eta3, eta4 = eta_estimates(p, p_h, pair, frames, exact_pt, frames_h, anchor_h)
    RW, RZ = pair.weights()
    RWh, RZh = pair.coarse_weights()
    qm, n, m = frames.q + frames.m, frames.n, frames.m
    C = pair.C_est
    J = oc.op_norm(RZ @ np.linalg.inv(RW))
    DFn = oc.op_norm(RZ @ jac_DF(p, exact_pt) @ np.linalg.inv(scipy.linalg.block_diag(np.eye(m), RW)))
    DuFn = oc.op_norm(RZ @ jac_DuF(p, exact_pt) @ np.linalg.inv(RW))
    a_sum = float(sum(np.linalg.norm(RZ @ frames.a_bars[:, i]) for i in range(frames.q)))
    b_sum = float(sum(np.linalg.norm(RZ @ frames.b_bars[:, k]) for k in range(n)))

    inv_G = _weighted_inv_norm(
        Phi_G_matrix(p, frames, exact_pt),
        scipy.linalg.block_diag(np.eye(qm), RZ),
        scipy.linalg.block_diag(np.eye(qm), RW),
    )
    qG1 = C * (DFn + a_sum + J)
    qG2 = eta1 + eta2 + C * J
    qG = (qG1 + qG2) * inv_G
    act_G = _weighted_inv_norm(
        Phi_G_matrix(p_h, frames_h, anchor_h),
        scipy.linalg.block_diag(np.eye(qm), RZh),
        scipy.linalg.block_diag(np.eye(qm), RWh),
    )
    if n:
        inv_H = _weighted_inv_norm(
            Phi_H_matrix(p, frames, exact_pt),
            scipy.linalg.block_diag(np.eye(n), RZ),
            scipy.linalg.block_diag(np.eye(n), RW),
        )
        act_H = _weighted_inv_norm(
            Phi_H_matrix(p_h, frames_h, anchor_h),
            scipy.linalg.block_diag(np.eye(n), RZh),
            scipy.linalg.block_diag(np.eye(n), RWh),
        )
    else:
        inv_H = act_H = 0.0
    qH1 = C * (DuFn + b_sum + J)
    qH2 = eta3 + eta4 + C * J
    qH = (qH1 + qH2) * inv_H

    def bound(q, inv):
        return inv / (1.0 - q) if q < 1.0 else float("inf")

    return TransferReport(
        eta1=eta1,
        eta2=eta2,
        eta3=eta3,
        eta4=eta4,
        C=float(C),
        J_norm=float(J),
        q_G1=float(qG1),
        q_G2=float(qG2),
        q_G=float(qG),
        q_H1=float(qH1),
        q_H2=float(qH2),
        q_H=float(qH),
        inv_norm_exact_G=inv_G,
        inv_norm_bound_G=float(bound(qG, inv_G)),
        inv_norm_actual_G=act_G,
        inv_norm_exact_H=inv_H,
        inv_norm_bound_H=float(bound(qH, inv_H)),
        inv_norm_actual_H=act_H,
    )


# ---------------------------------------------------------------------------
# h-study


@dataclass(frozen=True)
class StudyOptions:
    b_mode: str = "rederived"
    recovery: RecoveryOptions = field(default_factory=RecoveryOptions)
    samples: int = 32
    seed: int = 0


def _strictly_decreasing(vals: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


def h_study(
    p: ProblemDef,
    pairs: Sequence[ProjectionPair],
    frames: Frames,
    exact_pt: PointLU,
    opts: Optional[StudyOptions] = None,
    approx: Optional[Callable[[ProjectionPair], ProblemDef]] = None,
) -> dict:
    """Run the transfer check and a recovery on ``F_h`` for each pair.

    ``pairs`` must be ordered by decreasing ``h_label``. ``approx`` maps a
    pair to the approximate problem; the default is ``approx_problem``.
    Rows report the gap ``||(lam0, u0) - (lam0h, E u0h)||`` next to the
    a-posteriori bound made of the projection error of the exact state
    plus the coarse error bound at the projected anchor.
    """
    opts = opts or StudyOptions()
    labels = [pr.h_label for pr in pairs]
    if any(b > a for a, b in zip(labels, labels[1:])):
        raise BadParams("pairs must be ordered by decreasing h")
    approx = approx or (lambda pr: approx_problem(p, pr))
    s0 = state_at(p, frames, exact_pt)
    rows = []
    for pair in pairs:
        p_h = approx(pair)
        fr_h, st = approx_frames(p_h, pair, frames, s0, opts.b_mode)
        anchor_h = st.point
        rep = transfer_check(p, p_h, pair, frames, exact_pt, fr_h, anchor_h)
        delta_h = float(np.linalg.norm(eval_S(p_h, anchored(fr_h, anchor_h), st)))
        row = {
            "h_label": pair.h_label,
            "coarse_N": pair.coarse_N,
            "C_est": pair.C_est,
            "eta1": rep.eta1,
            "eta2": rep.eta2,
            "eta3": rep.eta3,
            "eta4": rep.eta4,
            "qG": rep.q_G,
            "qH": rep.q_H,
            "delta_h": delta_h,
            "transfer": rep.to_dict(),
        }
        try:
            res = recover(p_h, fr_h, anchor_h, opts.recovery)
            shifted = shifted_problem(p_h, res.rho)
            cl = classify(shifted, res.point)
            E = pair.E_W
            gap = float(
                np.linalg.norm(
                    np.concatenate([exact_pt.lam - res.point.lam, exact_pt.u - E @ res.point.u])
                )
            )
            proj_err = float(np.linalg.norm(s0.flatten() - embedded_state(frames, st, pair).flatten()))
            try:
                est = error_bound(shifted, res.frames, res.ext_state, st, samples=opts.samples, seed=opts.seed)
                bound = proj_err + max(1.0, oc.op_norm(E)) * est
            except Exception as exc:  # condition violated or singular: no bound
                log.info("no coarse error bound for N_h=%d: %s", pair.coarse_N, exc)
                bound = float("inf")
            row.update(
                rho_norm=res.rho_norm,
                lambda0h=float(res.point.lam[0]),
                gap=gap,
                bound=float(bound),
                type_n=cl.n,
                type_q=cl.q,
                converged=res.converged,
            )
        except Exception as exc:
            log.warning("recovery failed for N_h=%d: %s", pair.coarse_N, exc)
            row.update(
                rho_norm=float("nan"),
                lambda0h=float("nan"),
                gap=float("nan"),
                bound=float("nan"),
                type_n=-1,
                type_q=-1,
                converged=False,
                error=f"{type(exc).__name__}: {exc}",
            )
        rows.append(row)
    flags = {
        "eta2_decreasing": _strictly_decreasing([r["eta2"] for r in rows]),
        "eta4_decreasing": _strictly_decreasing([r["eta4"] for r in rows]),
        "delta_decreasing": _strictly_decreasing([r["delta_h"] for r in rows]),
    }
    return {"rows": rows, "flags": flags}


def write_study_csv(study: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in study["rows"]:
            w.writerow([repr(float(r[c])) if c not in ("type_n", "type_q") else int(r[c]) for c in CSV_COLUMNS])


def chafee_infante_study(
    fine_N: int = 64,
    coarse: Sequence[int] = (16, 24, 32, 48),
    kind: str = "truncation",
    norm: str = "energy",
    opts: Optional[StudyOptions] = None,
) -> dict:
    """h-study for Chafee-Infante with the coarse finite-difference problems as ``F_h``."""
    from .extended_system import choose_frames
    from .testbeds.chafee_infante import chafee_infante

    p = chafee_infante(fine_N)
    vals, _ = tridiag_eigen_oracle(fine_N)
    pt = PointLU([vals[0]], np.zeros(fine_N))
    frames = choose_frames(p, pt)
    pairs = [build_projection(fine_N, c, kind, norm=norm) for c in sorted(coarse)]
    return h_study(p, pairs, frames, pt, opts, approx=lambda pr: chafee_infante(pr.coarse_N))
