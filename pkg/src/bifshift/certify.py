"""Quantitative certificate around an anchor state.

All constants are floating-point estimates. ``gamma`` is exact up to
rounding; the Lipschitz moduli are sampled suprema with a recorded seed.
The regularity modulus ``kappa`` is replaced by its upper bound ``gamma``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from . import operator_core as oc
from .errors import ConditionViolated
from .extended_system import ExtState, Frames, Phi_G_matrix, Phi_H_matrix, eval_S, jac_S, state_at
from .problem_api import FD_STEP1, PointLU, ProblemDef, jac_DF

DEFAULT_SAMPLES = 64
RADII_MODES = ("h_uniform", "general")


@dataclass(frozen=True)
class Certificate:
    gamma: float
    kappa: float
    L_eps: float
    L_S_eps: float
    epsilon: float
    alpha: float
    a_hat: float
    M: float
    c: float
    tau: float
    a_star: float
    b_star: float
    delta: float
    cond_contraction: bool
    cond_gamma: bool
    cond_delta: bool
    rho_bound_1: float
    rho_bound_2: float
    sample_count: int
    seed: int
    radii_mode: str = "h_uniform"
    kappa_is_upper_bound: bool = True

    @property
    def certified(self) -> bool:
        return self.cond_contraction and self.cond_gamma and self.cond_delta

    def to_dict(self) -> dict:
        d = asdict(self)
        d["certified"] = self.certified
        d["M_note"] = "M = 1.01 * (||DS(anchor)|| + ||Phi(anchor)||)"
        return d


def unit_ball_samples(dim: int, samples: int, seed: int) -> np.ndarray:
    """``samples`` points uniform in the unit ball of R^dim, one per row.

    The rows depend only on ``(dim, seed)`` and the row index, so scaling
    them by a radius gives nested sample sets across radii.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((samples, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.random(samples) ** (1.0 / dim)
    return g * r[:, None]


def gamma_of(p: ProblemDef, frames: Frames, s_anchor: ExtState) -> float:
    """``||DS(s)^-1||``."""
    return oc.inverse_norm(jac_S(p, frames, s_anchor))


def kappa_of(gamma: float) -> float:
    """Upper bound for the regularity modulus; equal to ``gamma`` here."""
    return float(gamma)


def _phi_block(p: ProblemDef, frames: Frames, pt: PointLU) -> np.ndarray:
    """The linear map ``phi' -> Phi(x, phi')`` as a block-diagonal matrix."""
    PG = Phi_G_matrix(p, frames, pt)
    blocks = [PG] * (1 + frames.q + frames.m)
    if frames.n:
        blocks += [Phi_H_matrix(p, frames, pt)] * frames.n
    return scipy.linalg.block_diag(*blocks)


def _moved(frames: Frames, s: ExtState, d: np.ndarray) -> ExtState:
    return ExtState.like(frames, s.flatten() + d)


def _refine(p, frames, s_anchor, J0, v, radius, iters):
    """Ascent for ``||DS(s_anchor + v) - J0||`` on the sphere of the given radius.

    With ``(y, x)`` the top singular pair of the difference, the gradient of
    ``y^T DS(s) x`` in ``s`` is ``(d_x DS)^T y``, which two Jacobian
    evaluations give by central differences.
    """
    base = s_anchor.flatten()

    def value(w):
        return oc.op_norm(jac_S(p, frames, ExtState.like(frames, base + w)) - J0)

    best = value(v)
    for _ in range(iters):
        Jv = jac_S(p, frames, ExtState.like(frames, base + v))
        U, _, Vt = np.linalg.svd(Jv - J0)
        y, x = U[:, 0], Vt[0]
        t = FD_STEP1 * (1.0 + np.max(np.abs(base + v)))
        Jp = jac_S(p, frames, ExtState.like(frames, base + v + t * x))
        Jm = jac_S(p, frames, ExtState.like(frames, base + v - t * x))
        g = ((Jp - Jm) / (2.0 * t)).T @ y
        gn = np.linalg.norm(g)
        if gn == 0.0:
            break
        w = radius * g / gn
        val = value(w)
        if val <= best * (1.0 + 1e-12):
            break
        v, best = w, val
    return v


def lipschitz_pair(
    p: ProblemDef,
    frames: Frames,
    s_anchor: ExtState,
    radius: float,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    refine: int = 20,
) -> tuple[float, float]:
    """Sampled ``(L_S(radius), L(radius))``.

    ``L_S`` is the largest ``||DS(s_anchor) - DS(s)||``. ``L`` uses the
    difference of the map ``(s, phi') -> DS(s) s/2 - Phi(x, phi')/2 + ...``
    at ``phi' = 0``, namely the block row
    ``[ (DS(s_anchor) - DS(s))/2 , -(Phi(x_anchor) - Phi(x))/2 ]``.
    Both are evaluated on the same points: seeded uniform samples of the
    ball plus, when ``refine > 0``, the end point of an ascent started at
    the best sample.
    """
    if radius <= 0 or samples < 1:
        raise ValueError("radius must be positive and samples >= 1")
    J0 = jac_S(p, frames, s_anchor)
    P0 = _phi_block(p, frames, s_anchor.point)
    W = unit_ball_samples(J0.shape[0], samples, seed) * radius
    vals = []
    for d in W:
        vals.append(oc.op_norm(J0 - jac_S(p, frames, _moved(frames, s_anchor, d))))
    points = list(W)
    if refine > 0:
        points.append(_refine(p, frames, s_anchor, J0, W[int(np.argmax(vals))], radius, refine))
    LS = 0.0
    L = 0.0
    for d in points:
        s = _moved(frames, s_anchor, d)
        dJ = J0 - jac_S(p, frames, s)
        dP = P0 - _phi_block(p, frames, s.point)
        LS = max(LS, oc.op_norm(dJ))
        L = max(L, oc.op_norm(np.hstack([0.5 * dJ, -0.5 * dP])))
    return float(LS), float(L)


def lipschitz_LS(
    p: ProblemDef,
    frames: Frames,
    s_anchor: ExtState,
    radius: float,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    refine: int = 20,
) -> float:
    return lipschitz_pair(p, frames, s_anchor, radius, samples, seed, refine)[0]


def lipschitz_F(
    p: ProblemDef, anchor: PointLU, radius: float, samples: int = DEFAULT_SAMPLES, seed: int = 0
) -> float:
    """Sampled ``sup ||DF(anchor) - DF(x)||`` over the ``(lam, u)`` ball."""
    J0 = jac_DF(p, anchor)
    x0 = anchor.flat()
    out = 0.0
    for d in unit_ball_samples(x0.size, samples, seed) * radius:
        out = max(out, oc.op_norm(J0 - jac_DF(p, PointLU.from_flat(x0 + d, p.m))))
    return float(out)


def radii(kappa: float, L: float, M: float, epsilon: float, mode: str = "h_uniform"):
    """Return ``(tau, a_star, b_star, c)``.

    Raises ``ConditionViolated`` unless ``2 kappa L < 1``.
    """
    if mode not in RADII_MODES:
        raise ValueError(f"radii mode must be one of {RADII_MODES}")
    if not 2.0 * kappa * L < 1.0:
        raise ConditionViolated(f"2*kappa*L = {2 * kappa * L:.4g} is not below 1")
    c = 1.0 / kappa - L
    if mode == "h_uniform":
        tau = 0.99 * (1.0 + 2.0 * kappa * M) / (2.0 + 2.0 * kappa * M) * epsilon
        a_U = tau / (1.0 + 2.0 * kappa * M)
        b_V = tau / (2.0 * kappa)
        a_star = min(a_U, kappa * b_V)
    else:
        tau = 0.99 * (L + M) / (L + M + c) * epsilon
        a_U = c * tau / (L + M)
        b_V = c * tau
        a_star = min(a_U, b_V / c)
    return tau, a_star, c * a_star, c


def frame_norm_max(frames: Frames) -> float:
    """``a_hat``: the largest frame vector norm."""
    vecs = [frames.a_bars[:, i] for i in range(frames.q)]
    vecs += [frames.b_bars[:, k] for k in range(frames.n)]
    return float(max((np.linalg.norm(v) for v in vecs), default=0.0))


def certificate(
    p: ProblemDef,
    frames: Frames,
    anchor: PointLU,
    epsilon: float = 0.1,
    alpha: float = 1e-3,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    radii_mode: str = "h_uniform",
) -> Certificate:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    s0 = state_at(p, frames, anchor)
    J0 = jac_S(p, frames, s0)
    gamma = gamma_of(p, frames, s0)
    kappa = kappa_of(gamma)
    L_S, L = lipschitz_pair(p, frames, s0, epsilon, samples, seed)
    a_hat = frame_norm_max(frames)
    M = 1.01 * (oc.op_norm(J0) + oc.op_norm(_phi_block(p, frames, anchor)))
    delta = float(np.linalg.norm(eval_S(p, frames, s0)))
    cond_contraction = bool(2 * kappa * L + 2 * kappa * alpha * a_hat < 1.0)
    cond_gamma = bool(2 * gamma * L < 1.0)
    try:
        tau, a_star, b_star, c = radii(kappa, L, M, epsilon, radii_mode)
    except ConditionViolated:
        tau = a_star = b_star = 0.0
        c = 1.0 / kappa - L
    cond_delta = bool(a_star > 0 and delta < 0.5 * c * a_star)
    rho1 = a_star / (2.0 * gamma) + delta
    if a_star > 0:
        LF = lipschitz_F(p, anchor, a_star, samples, seed)
        rho2 = (oc.op_norm(jac_DF(p, anchor)) + LF) * a_star
    else:
        rho2 = 0.0
    return Certificate(
        gamma=float(gamma),
        kappa=float(kappa),
        L_eps=L,
        L_S_eps=L_S,
        epsilon=float(epsilon),
        alpha=float(alpha),
        a_hat=a_hat,
        M=float(M),
        c=float(c),
        tau=float(tau),
        a_star=float(a_star),
        b_star=float(b_star),
        delta=delta,
        cond_contraction=cond_contraction,
        cond_gamma=cond_gamma,
        cond_delta=cond_delta,
        rho_bound_1=float(rho1),
        rho_bound_2=float(rho2),
        sample_count=int(samples),
        seed=int(seed),
        radii_mode=radii_mode,
    )


def error_bound(
    p: ProblemDef,
    frames: Frames,
    center: ExtState,
    r: ExtState,
    radius: Optional[float] = None,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> float:
    """``gamma / (1 - gamma L_S(a)) * ||S(r)||`` for a trial state ``r``.

    ``p`` and ``frames`` define the system whose solution ``center`` is;
    ``gamma`` is taken there and ``L_S`` is sampled over the ball of
    radius ``a`` (default ``||r - center||``) around it.
    """
    a = radius if radius is not None else float(np.linalg.norm(r.flatten() - center.flatten()))
    res = float(np.linalg.norm(eval_S(p, frames, r)))
    gamma = gamma_of(p, frames, center)
    if a == 0.0:
        return gamma * res
    LS = lipschitz_LS(p, frames, center, a, samples, seed)
    if not gamma * LS < 1.0:
        raise ConditionViolated(f"gamma*L_S = {gamma * LS:.4g} is not below 1")
    return gamma / (1.0 - gamma * LS) * res
