"""Locating a singular point of the shifted family ``F - rho`` and tracing branches.

``recover`` runs damped Gauss-Newton on the slack components ``g_i, e_k``
of the kernel-block solves. These vanish exactly where ``DF`` and
``D_uF`` have the deficiencies encoded in the frames. Since a constant
shift leaves both derivatives alone, ``rho = F(lam*, u*)`` then turns the
located point into a bifurcation point of ``F - rho``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import operator_core as oc
from .classify_verify import VerifyReport, build_extended_solution, kernel_from_extended, verify_extended
from .errors import (
    ContinuationStall,
    DivergedOutsideTrustRegion,
    NoConvergence,
    SingularOperator,
)
from .extended_system import (
    ExtState,
    Frames,
    Phi_G_matrix,
    Phi_H_matrix,
    anchored,
    choose_frames,
    d2_matrix,
    solve_kernel_blocks,
    state_at,
)
from .problem_api import FD_STEP1, PointLU, ProblemDef, eval_F, jac_DF, second_directional

log = logging.getLogger(__name__)

__all__ = [
    "RecoveryOptions",
    "RecoveryResult",
    "solve_kernel_blocks",
    "singular_residual",
    "shifted_problem",
    "functional_problem",
    "recover",
    "recover_functional",
    "trace_branches",
    "branch_gap",
]


@dataclass(frozen=True)
class RecoveryOptions:
    max_iter: int = 50
    step_tol: float = 1e-12
    residual_tol: float = 1e-10
    damping: str = "line_search"
    alpha: float = 1e-3
    gauge: str = "anchor_distance"
    refresh_cond: float = 1e8
    max_halvings: int = 20

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0) or self.alpha == 0.5:
            raise ValueError("alpha must lie in (0, 1) and differ from 1/2")
        if self.damping not in ("none", "line_search"):
            raise ValueError(f"unknown damping {self.damping!r}")
        if self.max_iter < 1 or self.step_tol <= 0 or self.residual_tol <= 0:
            raise ValueError("iteration limits and tolerances must be positive")


@dataclass(eq=False)
class RecoveryResult:
    point: PointLU
    rho: np.ndarray
    theta0_shifted: np.ndarray
    ext_state: ExtState
    frames: Frames
    kernel_DF: np.ndarray
    kernel_DuF: np.ndarray
    iterations: int
    residual_history: list
    converged: bool
    within_ball: Optional[bool]
    verify: VerifyReport
    shift_mode: str = "constant"
    mu_w_prime: Optional[np.ndarray] = None
    refreshes: int = 0

    @property
    def rho_norm(self) -> float:
        return float(np.linalg.norm(self.rho))

    def to_dict(self) -> dict:
        out = {
            "lambda0": [float(v) for v in self.point.lam],
            "u0": [float(v) for v in self.point.u],
            "rho": [float(v) for v in self.rho],
            "rho_norm": self.rho_norm,
            "theta0_shifted": [float(v) for v in self.theta0_shifted],
            "iterations": self.iterations,
            "residual_history": [float(r) for r in self.residual_history],
            "converged": self.converged,
            "within_ball": self.within_ball,
            "verify": self.verify.to_dict(),
            "shift_mode": self.shift_mode,
            "frame_refreshes": self.refreshes,
            "type": [self.frames.n, self.frames.q],
        }
        if self.mu_w_prime is not None:
            out["mu_w_prime"] = [float(v) for v in self.mu_w_prime]
        return out


# ---------------------------------------------------------------------------
# residuals


def singular_residual(p: ProblemDef, frames: Frames, pt: PointLU) -> np.ndarray:
    """All ``g_i`` followed by all ``e_k`` from the kernel-block solves at ``pt``."""
    Y, Z = solve_kernel_blocks(p, frames, pt)
    return np.concatenate([Y[:, : frames.q].ravel(), Z[:, : frames.n].ravel()])


def shifted_problem(p: ProblemDef, rho) -> ProblemDef:
    """``F - rho`` with the derivatives of ``F``."""
    rho = np.asarray(rho, dtype=float).copy()

    def F(lam, u):
        return np.asarray(p.F(lam, u), dtype=float) - rho

    return ProblemDef(
        p.name + "-rho", p.m, p.N, F, p.DF, p.DuF, p.D2, p.smoothness, dict(p.meta), p.D2mat
    )


def functional_problem(p: ProblemDef, mw) -> ProblemDef:
    """``F(lam, u) - DF(lam, u)(mu', w')`` for fixed ``(mu', w')``."""
    mw = np.asarray(mw, dtype=float).copy()

    def F(lam, u):
        pt = PointLU(lam, u)
        return eval_F(p, pt) - jac_DF(p, pt) @ mw

    def DF(lam, u):
        pt = PointLU(lam, u)
        return jac_DF(p, pt) - d2_matrix(p, pt, mw)

    return ProblemDef(p.name + "-functional", p.m, p.N, F, DF, None, None, p.smoothness, dict(p.meta))


def _fd_jacobian(fun, xi: np.ndarray) -> np.ndarray:
    h = FD_STEP1 * (1.0 + np.max(np.abs(xi)))
    cols = []
    for j in range(xi.size):
        e = np.zeros(xi.size)
        e[j] = h
        cols.append((fun(xi + e) - fun(xi - e)) / (2.0 * h))
    return np.column_stack(cols)


def _conditioned(p: ProblemDef, frames: Frames, pt: PointLU) -> float:
    c = np.linalg.cond(Phi_G_matrix(p, frames, pt))
    if frames.n:
        c = max(c, np.linalg.cond(Phi_H_matrix(p, frames, pt)))
    return float(c)


def _guarded(fun):
    # a singular bordered operator counts as an infinitely bad trial point,
    # which sends the line search back toward the last good iterate
    size = {}

    def wrapped(xi):
        try:
            out = fun(xi)
        except SingularOperator:
            return np.full(size.get("n", 1), np.inf)
        size["n"] = out.size
        return out

    return wrapped


def _gauss_newton(fun, xi0, opts: RecoveryOptions, radius: float, on_iterate=None):
    """Damped Gauss-Newton with minimum-norm steps.

    Returns ``(xi, history, iterations)``; raises on divergence or when the
    iteration budget runs out.
    """
    fun = _guarded(fun)
    xi = np.asarray(xi0, dtype=float).copy()
    r = fun(xi)
    hist = [float(np.linalg.norm(r))]
    for it in range(1, opts.max_iter + 1):
        if hist[-1] <= opts.residual_tol:
            return xi, hist, it - 1
        J = _fd_jacobian(fun, xi)
        if not np.all(np.isfinite(J)):
            raise NoConvergence("residual is not differentiable at the current iterate")
        step = oc.solve(J, -r, mode="least_squares", rtol=1e-8)
        t = 1.0
        new = xi + step
        r_new = fun(new)
        if opts.damping == "line_search":
            k = 0
            while np.linalg.norm(r_new) > hist[-1] and k < opts.max_halvings:
                t *= 0.5
                new = xi + t * step
                r_new = fun(new)
                k += 1
        if np.linalg.norm(new - xi0) > radius:
            raise DivergedOutsideTrustRegion(
                f"iterate left the trust region of radius {radius:.3g} around the anchor"
            )
        xi, r = new, r_new
        hist.append(float(np.linalg.norm(r)))
        if on_iterate is not None:
            on_iterate(xi)
        if np.linalg.norm(t * step) <= opts.step_tol * (1.0 + np.linalg.norm(xi)):
            if hist[-1] <= max(opts.residual_tol, 1e3 * opts.step_tol):
                return xi, hist, it
    if hist[-1] <= opts.residual_tol:
        return xi, hist, opts.max_iter
    raise NoConvergence(
        f"Gauss-Newton did not converge in {opts.max_iter} iterations "
        f"(residual {hist[-1]:.3e})"
    )


def _ball_check(p, frames, anchor, s0: ExtState, a_star: Optional[float]) -> Optional[bool]:
    if a_star is None:
        return None
    try:
        s_tilde = state_at(p, frames, anchor)
    except SingularOperator:
        return False
    return bool(np.linalg.norm(s0.flatten() - s_tilde.flatten()) <= a_star)


# ---------------------------------------------------------------------------
# constant shift


def recover(
    p: ProblemDef,
    frames: Frames,
    anchor: PointLU,
    opts: Optional[RecoveryOptions] = None,
    a_star: Optional[float] = None,
) -> RecoveryResult:
    """Constant-shift recovery: find ``(lam*, u*)`` and ``rho = F(lam*, u*)``.

    ``a_star`` (from a certificate) enables the ``within_ball`` check.
    """
    opts = opts or RecoveryOptions()
    m = p.m
    type_hint = (frames.n, frames.q)
    state = {"frames": frames, "refreshes": 0}

    def fun(xi):
        return singular_residual(p, state["frames"], PointLU.from_flat(xi, m))

    def refresh(xi):
        pt = PointLU.from_flat(xi, m)
        if _conditioned(p, state["frames"], pt) > opts.refresh_cond:
            state["frames"] = choose_frames(p, pt, type_hint=type_hint)
            state["refreshes"] += 1
            log.info("frames refreshed at iterate %s", xi)

    radius = 10.0 * (1.0 + np.linalg.norm(anchor.flat()))
    xi, hist, iters = _gauss_newton(fun, anchor.flat(), opts, radius, refresh)
    pt = PointLU.from_flat(xi, m)
    rho = eval_F(p, pt)
    shifted = shifted_problem(p, rho)
    fr = anchored(state["frames"], pt)
    s0 = build_extended_solution(shifted, fr, pt)
    rep = verify_extended(shifted, fr, s0)
    kerF, keru = kernel_from_extended(s0)
    return RecoveryResult(
        point=pt,
        rho=rho,
        theta0_shifted=fr.theta0.copy(),
        ext_state=s0,
        frames=fr,
        kernel_DF=kerF,
        kernel_DuF=keru,
        iterations=iters,
        residual_history=hist,
        converged=bool(rep.passes),
        within_ball=_ball_check(p, frames, anchor, s0, a_star),
        verify=rep,
        refreshes=state["refreshes"],
    )


def recover_functional(
    p: ProblemDef,
    frames: Frames,
    anchor: PointLU,
    opts: Optional[RecoveryOptions] = None,
) -> RecoveryResult:
    """Shift of the form ``rho(lam, u) = DF(lam, u)(mu', w')``.

    The unknowns are ``(lam, u, mu', w')``; the residual stacks
    ``F - DF (mu', w')`` with the singular residual of the modified map.
    Minimum-norm steps starting from ``(mu', w') = 0`` pick the gauge.
    """
    opts = opts or RecoveryOptions()
    m, k = p.m, p.m + p.N

    def fun(zeta):
        pt = PointLU.from_flat(zeta[:k], m)
        mw = zeta[k:]
        pf = functional_problem(p, mw)
        return np.concatenate([eval_F(pf, pt), singular_residual(pf, frames, pt)])

    zeta0 = np.concatenate([anchor.flat(), np.zeros(k)])
    radius = 10.0 * (1.0 + np.linalg.norm(anchor.flat()))
    zeta, hist, iters = _gauss_newton(fun, zeta0, opts, radius)
    pt = PointLU.from_flat(zeta[:k], m)
    mw = zeta[k:]
    pf = functional_problem(p, mw)
    fr = anchored(frames, pt)
    s0 = build_extended_solution(pf, fr, pt)
    rep = verify_extended(pf, fr, s0)
    kerF, keru = kernel_from_extended(s0)
    return RecoveryResult(
        point=pt,
        rho=jac_DF(p, pt) @ mw,
        theta0_shifted=fr.theta0.copy(),
        ext_state=s0,
        frames=fr,
        kernel_DF=kerF,
        kernel_DuF=keru,
        iterations=iters,
        residual_history=hist,
        converged=bool(rep.passes and hist[-1] <= opts.residual_tol),
        within_ball=None,
        verify=rep,
        shift_mode="functional",
        mu_w_prime=mw.copy(),
    )


# ---------------------------------------------------------------------------
# branch tracing


def branch_tangents(
    p: ProblemDef, pt: PointLU, kernel: Optional[np.ndarray] = None, rtol: float = oc.DEFAULT_RTOL
) -> list[np.ndarray]:
    """Tangent directions of the branches crossing at ``pt``.

    Directions are the real null directions of the quadratic form
    ``c -> psi^T D^2F(K c, K c)`` on the kernel ``K`` of ``DF``, where
    ``psi`` spans the cokernel. If the form has no isolated real null
    directions, the kernel basis itself is returned.
    """
    DF = jac_DF(p, pt)
    res = oc.svd_analysis(DF)
    if kernel is None:
        kernel = oc.kernel_basis(DF, rtol)
    K, _ = np.linalg.qr(kernel)
    psi = res.left_vectors[:, -1]
    dim = K.shape[1]
    if dim != 2:
        return [K[:, j] for j in range(dim)]
    M = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            M[i, j] = psi @ second_directional(p, pt, K[:, i], K[:, j])
    scale = np.max(np.abs(M))
    a, b, c = M[0, 0], 2.0 * M[0, 1], M[1, 1]
    disc = b * b - 4.0 * a * c
    if scale == 0.0 or disc <= 1e-12 * scale * scale:
        return [K[:, 0], K[:, 1]]
    # roots of a t^2 + b t + c = 0 in t = c1/c2, plus c2 = 0 when a = 0
    dirs = []
    if abs(a) <= 1e-12 * scale:
        dirs.append(np.array([1.0, 0.0]))
        dirs.append(np.array([-c, b]))
    else:
        sq = np.sqrt(disc)
        for t in ((-b + sq) / (2 * a), (-b - sq) / (2 * a)):
            dirs.append(np.array([t, 1.0]))
    out = []
    for d in dirs:
        v = K @ d
        out.append(v / np.linalg.norm(v))
    return out


def _corrector(p_s: ProblemDef, x_prev, x_pred, t, ds, tol, max_iter=15):
    m = p_s.m
    x = x_pred.copy()
    for _ in range(max_iter):
        pt = PointLU.from_flat(x, m)
        Fx = eval_F(p_s, pt)
        res = np.concatenate([Fx, [t @ (x - x_prev) - ds]])
        if np.linalg.norm(res) <= tol:
            return x
        J = np.vstack([jac_DF(p_s, pt), t[None, :]])
        try:
            dx = oc.solve(J, -res, rtol=1e-14)
        except SingularOperator:
            return None
        x = x + dx
        if not np.all(np.isfinite(x)):
            return None
        if np.linalg.norm(dx) <= 1e-13 * (1.0 + np.linalg.norm(x)):
            pt = PointLU.from_flat(x, m)
            if np.linalg.norm(eval_F(p_s, pt)) <= 10 * tol:
                return x
    return None


def _tangent_at(p_s: ProblemDef, x, t_old) -> np.ndarray:
    DF = jac_DF(p_s, PointLU.from_flat(x, p_s.m))
    t = oc.svd_analysis(DF).right_vectors[:, -1]
    return t if t @ t_old >= 0 else -t


def trace_branches(
    p: ProblemDef,
    rho,
    point: PointLU,
    steps: int = 20,
    ds: float = 0.05,
    kernel: Optional[np.ndarray] = None,
    tol: Optional[float] = None,
) -> list[dict]:
    """Pseudo-arclength continuation of ``F - rho = 0`` from ``point``.

    Every tangent is followed in both orientations and each orientation
    contributes exactly ``steps`` rows. The start point is the first row
    of each orientation when it solves ``F - rho = 0``; otherwise all rows
    come from the corrector.
    """
    if steps < 1 or ds <= 0:
        raise ValueError("steps must be >= 1 and ds > 0")
    p_s = shifted_problem(p, rho)
    scale = 1.0 + oc.op_norm(jac_DF(p_s, point))
    tol = 1e-10 * scale if tol is None else tol
    x0 = point.flat()
    start_ok = np.linalg.norm(eval_F(p_s, point)) <= 1e-8 * scale
    tangents = branch_tangents(p_s, point, kernel)
    rows: list[dict] = []
    for line, t0 in enumerate(tangents):
        for sign in (1, -1):
            t = sign * t0
            x_prev = x0
            s = 0.0
            pts = []
            if start_ok:
                pts.append((0.0, x0))
            h = ds
            fails = 0
            while len(pts) < steps:
                x_new = _corrector(p_s, x_prev, x_prev + h * t, t, h, tol)
                if x_new is None:
                    fails += 1
                    if fails >= 3:
                        raise ContinuationStall(
                            f"corrector failed 3 times in a row on branch {line}, sign {sign}"
                        )
                    h *= 0.5
                    continue
                fails = 0
                s += h
                t = _tangent_at(p_s, x_new, t)
                x_prev = x_new
                pts.append((s, x_new))
                h = ds
            for idx, (sv, xv) in enumerate(pts):
                lam = xv[: p.m]
                u = xv[p.m :]
                rows.append(
                    {
                        "branch": line,
                        "direction": sign,
                        "index": idx,
                        "s": float(sv),
                        "lambda": float(lam[0]),
                        "unorm": float(np.linalg.norm(u)),
                        "u": [float(c) for c in u],
                    }
                )
    return rows


def _seg_dist(p1, p2, q1, q2) -> float:
    """Minimum distance between segments ``[p1, p2]`` and ``[q1, q2]`` in R^d."""
    d1 = p2 - p1
    d2 = q2 - q1
    r = p1 - q1
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a <= 1e-300 and e <= 1e-300:
        return float(np.linalg.norm(r))
    if a <= 1e-300:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= 1e-300:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            den = a * e - b * b
            s = np.clip((b * f - c * e) / den, 0.0, 1.0) if den > 1e-300 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(p1 + s * d1 - (q1 + t * d2)))


def _polylines(rows: list[dict]) -> dict:
    lines: dict = {}
    for r in rows:
        key = (r["branch"], r["direction"])
        lines.setdefault(key, []).append(np.concatenate([[r["lambda"]], r["u"]]))
    return {k: np.array(v) for k, v in lines.items()}


def branch_gap(rows: list[dict]) -> float:
    """Smallest distance between traced polylines that follow different tangents."""
    lines = _polylines(rows)
    keys = sorted(lines)
    best = np.inf
    for i, ka in enumerate(keys):
        for kb in keys[i + 1 :]:
            if ka[0] == kb[0]:
                continue
            A, B = lines[ka], lines[kb]
            if len(A) == 1 or len(B) == 1:
                for a in A:
                    for b in B:
                        best = min(best, float(np.linalg.norm(a - b)))
                continue
            for j in range(len(A) - 1):
                for k in range(len(B) - 1):
                    best = min(best, _seg_dist(A[j], A[j + 1], B[k], B[k + 1]))
    return float(best)
