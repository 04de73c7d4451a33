"""Staggered (MAC) grid Stokes solver and the augmented Navier-Stokes map.

Grid: unit square, ``res x res`` cells of size ``h = 1/res``. The
x-velocity lives on vertical faces ``(i h, (j + 1/2) h)``, ``i = 1..res-1``;
the y-velocity on horizontal faces ``((i + 1/2) h, j h)``, ``j = 1..res-1``;
pressure at cell centres. No-slip walls: normal components are dropped
from the unknowns, tangential ones use ghost reflection.

The Stokes operator ``T_S`` maps a face forcing ``f`` to the solution
``(u, p)`` of ``-Lap u + grad p = f, div u = 0`` with zero-mean pressure.
The augmented map is ``F(lam; p, u, q) = (p - q/lam, u + T_u g, q + T_p g)``
with ``g = lam * ((u . grad) u - f)``; its zeros are Navier-Stokes states
with viscosity ``1/lam`` and ``q = lam * p``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from ..errors import BadParams, EvalFailure, SingularOperator
from ..problem_api import ProblemDef


# ---------------------------------------------------------------------------
# one-dimensional building blocks


def _second_diff_dirichlet(k: int, h: float) -> sp.csr_matrix:
    """Nodes strictly inside the interval, zero values at both ends."""
    return sp.diags([np.ones(k - 1), -2.0 * np.ones(k), np.ones(k - 1)], [-1, 0, 1]) / h**2


def _second_diff_ghost(k: int, h: float) -> sp.csr_matrix:
    """Cell centres with a reflected ghost value at each wall."""
    main = -2.0 * np.ones(k)
    main[0] = main[-1] = -3.0
    return sp.diags([np.ones(k - 1), main, np.ones(k - 1)], [-1, 0, 1]) / h**2


def _central_dirichlet(k: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(k - 1), np.ones(k - 1)], [-1, 1]) / (2.0 * h)


def _central_ghost(k: int, h: float) -> sp.csr_matrix:
    main = np.zeros(k)
    main[0] = 1.0
    main[-1] = -1.0
    return sp.diags([-np.ones(k - 1), main, np.ones(k - 1)], [-1, 0, 1]) / (2.0 * h)


def _centre_to_node(k: int) -> sp.csr_matrix:
    """Average of neighbouring cell centres at the ``k - 1`` interior nodes."""
    return sp.diags([0.5 * np.ones(k - 1), 0.5 * np.ones(k - 1)], [0, 1], shape=(k - 1, k))


def _node_to_centre(k: int) -> sp.csr_matrix:
    """Average of the two bounding nodes (wall nodes carry zero)."""
    return sp.diags([0.5 * np.ones(k - 1), 0.5 * np.ones(k - 1)], [-1, 0], shape=(k, k - 1))


def _difference(k: int, h: float) -> sp.csr_matrix:
    """Centre-to-node difference, shape ``(k-1, k)``."""
    return sp.diags([-np.ones(k - 1), np.ones(k - 1)], [0, 1], shape=(k - 1, k)) / h


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class MacGrid:
    res: int
    lap: sp.csr_matrix
    grad: sp.csr_matrix
    advect_pairs: tuple
    solver: Callable[[np.ndarray], np.ndarray]
    # Stacked form of the advection pairs: the Jacobian at ``vel`` is
    # ``sum_rows @ diag(coef @ vel) @ stacked``, see ``advection_jac``.
    jac_stack: tuple = ()

    @property
    def h(self) -> float:
        return 1.0 / self.res

    @property
    def n_u(self) -> int:
        return (self.res - 1) * self.res

    @property
    def n_vel(self) -> int:
        return 2 * self.n_u

    @property
    def n_p(self) -> int:
        return self.res * self.res

    def u_coords(self):
        h = self.h
        x = np.arange(1, self.res) * h
        y = (np.arange(self.res) + 0.5) * h
        return np.meshgrid(x, y, indexing="ij")

    def v_coords(self):
        h = self.h
        x = (np.arange(self.res) + 0.5) * h
        y = np.arange(1, self.res) * h
        return np.meshgrid(x, y, indexing="ij")

    def p_coords(self):
        c = (np.arange(self.res) + 0.5) * self.h
        return np.meshgrid(c, c, indexing="ij")

    def sample_velocity(self, field: Callable) -> np.ndarray:
        """Sample ``field(x, y) -> (fx, fy)`` at the face locations."""
        xu, yu = self.u_coords()
        xv, yv = self.v_coords()
        fu = np.asarray(field(xu, yu)[0], dtype=float)
        fv = np.asarray(field(xv, yv)[1], dtype=float)
        return np.concatenate([fu.ravel(), fv.ravel()])

    def sample_pressure(self, field: Callable) -> np.ndarray:
        x, y = self.p_coords()
        return np.asarray(field(x, y), dtype=float).ravel()

    def divergence(self, vel: np.ndarray) -> np.ndarray:
        return -(self.grad.T @ vel)

    def advection(self, vel: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_vel)
        for P, Q in self.advect_pairs:
            out += (P @ vel) * (Q @ vel)
        return out

    def advection_jac(self, vel: np.ndarray) -> sp.csr_matrix:
        """``sum diag(P vel) Q + diag(Q vel) P`` over the advection pairs."""
        stacked, coef, sum_rows, row_of = self.jac_stack
        scaled = stacked.copy()
        scaled.data = stacked.data * (coef @ vel)[row_of]
        return (sum_rows @ scaled).tocsr()

    def advection_second(self, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_vel)
        for P, Q in self.advect_pairs:
            out += (P @ w1) * (Q @ w2) + (P @ w2) * (Q @ w1)
        return out

    def stokes(self, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rhs = np.asarray(rhs, dtype=float)
        full = np.concatenate([rhs, np.zeros(self.n_p + 1)])
        sol = self.solver(full)
        return sol[: self.n_vel], sol[self.n_vel : self.n_vel + self.n_p]


def _embed(block: sp.csr_matrix, which: str, n_u: int) -> sp.csr_matrix:
    """Place a component operator into the rows/cols of the full velocity."""
    z = sp.csr_matrix((n_u, n_u))
    if which == "uu":
        return sp.bmat([[block, z], [z, z]]).tocsr()
    if which == "uv":
        return sp.bmat([[z, block], [z, z]]).tocsr()
    if which == "vu":
        return sp.bmat([[z, z], [block, z]]).tocsr()
    return sp.bmat([[z, z], [z, block]]).tocsr()


@lru_cache(maxsize=16)
def mac_grid(res: int) -> MacGrid:
    """Assemble and factor the Stokes system for ``res``; cached per resolution."""
    if not isinstance(res, (int, np.integer)) or res < 4:
        raise BadParams(f"res must be an integer >= 4, got {res!r}")
    n = int(res)
    h = 1.0 / n
    In, Im = sp.identity(n), sp.identity(n - 1)
    lap_u = sp.kron(_second_diff_dirichlet(n - 1, h), In) + sp.kron(Im, _second_diff_ghost(n, h))
    lap_v = sp.kron(_second_diff_ghost(n, h), Im) + sp.kron(In, _second_diff_dirichlet(n - 1, h))
    lap = sp.block_diag([lap_u, lap_v]).tocsr()
    gx = sp.kron(_difference(n, h), In)
    gy = sp.kron(In, _difference(n, h))
    grad = sp.vstack([gx, gy]).tocsr()

    n_u = (n - 1) * n
    # (u . grad) u, written as a sum of products of linear maps.
    dudx = sp.kron(_central_dirichlet(n - 1, h), In)
    dudy = sp.kron(Im, _central_ghost(n, h))
    dvdx = sp.kron(_central_ghost(n, h), Im)
    dvdy = sp.kron(In, _central_dirichlet(n - 1, h))
    vbar = sp.kron(_centre_to_node(n), _node_to_centre(n))
    ubar = sp.kron(_node_to_centre(n), _centre_to_node(n))
    eye_u = sp.identity(n_u, format="csr")
    pairs = (
        (_embed(eye_u, "uu", n_u), _embed(dudx, "uu", n_u)),
        (_embed(vbar, "uv", n_u), _embed(dudy, "uu", n_u)),
        (_embed(ubar, "vu", n_u), _embed(dvdx, "vv", n_u)),
        (_embed(eye_u, "vv", n_u), _embed(dvdy, "vv", n_u)),
    )

    n_p = n * n
    mean_row = sp.csr_matrix(np.full((1, n_p), h * h))
    K = sp.bmat(
        [
            [-lap, grad, None],
            [grad.T, None, mean_row.T],
            [None, mean_row, None],
        ],
        format="csc",
    )
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:  # pragma: no cover - only for degenerate grids
        raise SingularOperator(f"Stokes system singular at res={res}") from exc
    stacked = sp.vstack([m for P, Q in pairs for m in (Q, P)]).tocsr()
    coef = sp.vstack([m for P, Q in pairs for m in (P, Q)]).tocsr()
    sum_rows = sp.hstack([sp.identity(2 * n_u)] * (2 * len(pairs))).tocsr()
    row_of = np.repeat(np.arange(stacked.shape[0]), np.diff(stacked.indptr))
    return MacGrid(n, lap, grad, pairs, lu.solve, (stacked, coef, sum_rows, row_of))


# ---------------------------------------------------------------------------
# public operations


def _as_forcing(grid: MacGrid, f) -> np.ndarray:
    if f is None:
        return np.zeros(grid.n_vel)
    if callable(f):
        return grid.sample_velocity(f)
    arr = np.asarray(f, dtype=float)
    if arr.shape != (grid.n_vel,):
        raise BadParams(f"forcing must have {grid.n_vel} entries, got {arr.shape}")
    return arr


def ns_stokes_solve(res: int, f=None) -> tuple[np.ndarray, np.ndarray]:
    """Discrete Stokes solution ``(velocity, pressure)`` for face forcing ``f``.

    ``f`` may be a callable ``(x, y) -> (fx, fy)`` or a face vector.
    """
    grid = mac_grid(res)
    return grid.stokes(_as_forcing(grid, f))


def manufactured(kind: str = "velocity"):
    """Closed-form Stokes pair from the stream function sin^2(pi x) sin^2(pi y)."""
    pi = np.pi

    def vel(x, y):
        return (
            pi * np.sin(pi * x) ** 2 * np.sin(2 * pi * y),
            -pi * np.sin(2 * pi * x) * np.sin(pi * y) ** 2,
        )

    def pres(x, y):
        return np.cos(pi * x) * np.cos(pi * y)

    def force(x, y):
        fx = -2 * pi**3 * np.sin(2 * pi * y) * (2 * np.cos(2 * pi * x) - 1) - pi * np.sin(
            pi * x
        ) * np.cos(pi * y)
        fy = 2 * pi**3 * np.sin(2 * pi * x) * (2 * np.cos(2 * pi * y) - 1) - pi * np.cos(
            pi * x
        ) * np.sin(pi * y)
        return fx, fy

    return {"velocity": vel, "pressure": pres, "force": force}[kind]


def smooth_forcing(x, y):
    """A smooth body force used by the transfer study."""
    return (
        np.sin(np.pi * x) * np.cos(np.pi * y) + 0.5 * np.cos(2 * np.pi * y),
        np.sin(np.pi * y) * np.cos(np.pi * x) - 0.5 * np.sin(2 * np.pi * x),
    )


def manufactured_error(res: int) -> float:
    """Max face error of the discrete Stokes solution against the closed form."""
    grid = mac_grid(res)
    vel, _ = grid.stokes(grid.sample_velocity(manufactured("force")))
    exact = grid.sample_velocity(manufactured("velocity"))
    return float(np.max(np.abs(vel - exact)))


# --- augmented map ----------------------------------------------------------


def ns_layout(res: int) -> tuple[int, int, int]:
    grid = mac_grid(res)
    return grid.n_p, grid.n_vel, grid.n_p


def _split_state(grid: MacGrid, state: np.ndarray):
    n_p, n_v = grid.n_p, grid.n_vel
    return state[:n_p], state[n_p : n_p + n_v], state[n_p + n_v :]


def ns_F_eval(res: int, lam: float, state, f=None) -> np.ndarray:
    """Evaluate the augmented map at ``state = (p, u, q)``."""
    lam = float(np.asarray(lam).ravel()[0])
    if not lam > 0.0:
        raise EvalFailure(f"lambda must be positive (lambda = 1/nu), got {lam}")
    grid = mac_grid(res)
    state = np.asarray(state, dtype=float)
    p, u, q = _split_state(grid, state)
    g = lam * (grid.advection(u) - _as_forcing(grid, f))
    tu, tp = grid.stokes(g)
    return np.concatenate([p - q / lam, u + tu, q + tp])


def _stokes_columns(grid: MacGrid, M) -> tuple[np.ndarray, np.ndarray]:
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    k = M.shape[1]
    full = np.vstack([M, np.zeros((grid.n_p + 1, k))])
    sol = grid.solver(full)
    return sol[: grid.n_vel], sol[grid.n_vel : grid.n_vel + grid.n_p]


def ns_problem(res: int, forcing=None) -> ProblemDef:
    """The augmented map as a :class:`ProblemDef` with ``m = 1``."""
    grid = mac_grid(res)
    fvec = _as_forcing(grid, forcing)
    n_p, n_v = grid.n_p, grid.n_vel
    N = 2 * n_p + n_v

    def F(lam, state):
        return ns_F_eval(res, lam[0], state, fvec)

    def DF(lam, state):
        lam0 = float(lam[0])
        if not lam0 > 0.0:
            raise EvalFailure("lambda must be positive")
        p, u, q = _split_state(grid, state)
        J = np.zeros((N, N + 1))
        base = grid.advection(u) - fvec
        tu, tp = grid.stokes(base)
        J[:n_p, 0] = q / lam0**2
        J[n_p : n_p + n_v, 0] = tu
        J[n_p + n_v :, 0] = tp
        J[:n_p, 1 : 1 + n_p] = np.eye(n_p)
        J[:n_p, 1 + n_p + n_v :] = -np.eye(n_p) / lam0
        cu, cp = _stokes_columns(grid, lam0 * grid.advection_jac(u))
        J[n_p : n_p + n_v, 1 + n_p : 1 + n_p + n_v] = np.eye(n_v) + cu
        J[n_p + n_v :, 1 + n_p : 1 + n_p + n_v] = cp
        J[n_p + n_v :, 1 + n_p + n_v :] = np.eye(n_p)
        return J

    def D2(lam, state, d1, d2):
        lam0 = float(lam[0])
        p, u, q = _split_state(grid, state)
        m1, m2 = d1[0], d2[0]
        _, w1, dq1 = _split_state(grid, d1[1:])
        _, w2, dq2 = _split_state(grid, d2[1:])
        first = -2.0 * m1 * m2 * q / lam0**3 + (m1 * dq2 + m2 * dq1) / lam0**2
        Ju = grid.advection_jac(u)
        g = m1 * (Ju @ w2) + m2 * (Ju @ w1) + lam0 * grid.advection_second(w1, w2)
        tu, tp = grid.stokes(g)
        return np.concatenate([first, tu, tp])

    def D2mat(lam, state, d1):
        # Columns of d -> D2(lam, state, d1, d), with one multi-column Stokes solve.
        lam0 = float(lam[0])
        p, u, q = _split_state(grid, state)
        m1 = d1[0]
        _, w1, dq1 = _split_state(grid, d1[1:])
        out = np.zeros((N, N + 1))
        out[:n_p, 0] = -2.0 * m1 * q / lam0**3 + dq1 / lam0**2
        out[:n_p, 1 + n_p + n_v :] = (m1 / lam0**2) * np.eye(n_p)
        Ju = grid.advection_jac(u)
        rhs = sp.hstack([sp.csr_matrix((Ju @ w1)[:, None]), m1 * Ju + lam0 * grid.advection_jac(w1)])
        cu, cp = _stokes_columns(grid, rhs)
        out[n_p : n_p + n_v, 0] = cu[:, 0]
        out[n_p + n_v :, 0] = cp[:, 0]
        out[n_p : n_p + n_v, 1 + n_p : 1 + n_p + n_v] = cu[:, 1:]
        out[n_p + n_v :, 1 + n_p : 1 + n_p + n_v] = cp[:, 1:]
        return out

    return ProblemDef(
        "ns_lite", 1, N, F, DF, None, D2,
        meta={"res": int(res), "n_p": n_p, "n_vel": n_v}, D2mat=D2mat,
    )


def ns_steady_state(res: int, lam: float, forcing=None, tol: float = 1e-13, max_iter: int = 30) -> np.ndarray:
    """Newton solve of the augmented map in ``(p, u, q)`` at fixed ``lam``.

    Starts from the rest state; raises ``SingularOperator`` when the
    iteration does not settle.
    """
    prob = ns_problem(res, forcing)
    grid = mac_grid(res)
    state = np.zeros(2 * grid.n_p + grid.n_vel)
    lam_v = np.array([float(lam)])
    for _ in range(max_iter):
        r = prob.F(lam_v, state)
        if np.linalg.norm(r) <= tol * (1.0 + np.linalg.norm(state)):
            return state
        J = prob.DF(lam_v, state)[:, 1:]
        state = state - np.linalg.solve(J, r)
    r = prob.F(lam_v, state)
    if np.linalg.norm(r) <= 1e3 * tol * (1.0 + np.linalg.norm(state)):
        return state
    raise SingularOperator(f"Newton did not settle (residual {np.linalg.norm(r):.3e})")


# --- grid transfer ----------------------------------------------------------


def _component_grid(res: int, comp: str):
    """Axes including wall points, for interpolation of one field."""
    n = res
    h = 1.0 / n
    nodes = np.arange(0, n + 1) * h
    centres_w = np.concatenate([[0.0], (np.arange(n) + 0.5) * h, [1.0]])
    if comp == "u":
        return nodes, centres_w
    if comp == "v":
        return centres_w, nodes
    return (np.arange(n) + 0.5) * h, (np.arange(n) + 0.5) * h


def _interior_axes(res: int, comp: str):
    h = 1.0 / res
    nodes = np.arange(1, res) * h
    centres = (np.arange(res) + 0.5) * h
    return (nodes, centres) if comp == "u" else (centres, nodes)


def transfer_fields(
    res_from: int,
    res_to: int,
    vel: np.ndarray,
    pres: Optional[np.ndarray] = None,
    walls: bool = True,
):
    """Bilinear transfer of a face velocity (and cell pressure) between grids.

    With ``walls=True`` the velocity is taken to vanish on the boundary
    (true for Stokes solutions); otherwise values near the walls are
    extrapolated from the interior, which suits body forces.
    """
    if res_from == res_to:
        return vel.copy(), None if pres is None else pres.copy()
    n = res_from
    n_u = (n - 1) * n
    u = vel[:n_u].reshape(n - 1, n)
    v = vel[n_u:].reshape(n, n - 1)
    target = mac_grid(res_to)
    out = []
    for comp, arr, coords in (("u", u, target.u_coords()), ("v", v, target.v_coords())):
        if walls:
            ax, ay = _component_grid(n, comp)
            interp = RegularGridInterpolator((ax, ay), np.pad(arr, ((1, 1), (1, 1))))
        else:
            ax, ay = _interior_axes(n, comp)
            interp = RegularGridInterpolator(
                (ax, ay), arr, bounds_error=False, fill_value=None
            )
        pts = np.column_stack([coords[0].ravel(), coords[1].ravel()])
        out.append(interp(pts))
    new_vel = np.concatenate(out)
    new_p = None
    if pres is not None:
        ax, ay = _component_grid(n, "p")
        interp = RegularGridInterpolator(
            (ax, ay), pres.reshape(n, n), bounds_error=False, fill_value=None
        )
        x, y = target.p_coords()
        new_p = interp(np.column_stack([x.ravel(), y.ravel()]))
    return new_vel, new_p


def _l2(res: int, vec: np.ndarray) -> float:
    return float(np.linalg.norm(vec)) / res


def stokes_gap(res_fine: int, res_h: int, f: Callable = smooth_forcing) -> float:
    """``||(T_S - T_S,h) f||`` measured on the fine grid (velocity and pressure)."""
    fine = mac_grid(res_fine)
    coarse = mac_grid(res_h)
    uf, pf = fine.stokes(fine.sample_velocity(f))
    uc, pc = coarse.stokes(coarse.sample_velocity(f))
    ui, pi = transfer_fields(res_h, res_fine, uc, pc)
    return _l2(res_fine, uf - ui) + _l2(res_fine, pf - pi)


def _test_directions():
    """Smooth divergence-free fields used to probe the operator differences."""
    pi = np.pi

    def mode(k):
        # stream function sin^2(k pi x) sin^2(pi y)
        def fld(x, y):
            return (
                pi * np.sin(k * pi * x) ** 2 * np.sin(2 * pi * y),
                -k * pi * np.sin(2 * k * pi * x) * np.sin(pi * y) ** 2,
            )

        return fld

    return [manufactured("velocity"), mode(2), smooth_forcing]


def ns_transfer_study(res_fine: int, res_list, lam0: float = 1.0) -> list[dict]:
    """Per-resolution estimates of the eta_2 / eta_4 summands.

    The base state is the closed-form velocity sampled on each grid; each
    summand is the largest normalized difference over a fixed family of
    smooth probe directions.
    """
    fine = mac_grid(res_fine)
    base = manufactured("velocity")
    u0f = fine.sample_velocity(base)
    rows = []
    for res_h in res_list:
        coarse = mac_grid(res_h)
        u0h = coarse.sample_velocity(base)
        proj = gap = shift = 0.0
        for w in _test_directions():
            wf = fine.sample_velocity(w)
            wh = coarse.sample_velocity(w)
            nw = _l2(res_fine, wf)
            g = lam0 * (fine.advection_jac(u0f) @ wf)
            tu, tp = fine.stokes(g)
            # projection error of the exact Stokes image
            tu_h, tp_h = transfer_fields(res_fine, res_h, tu, tp)
            tu_b, tp_b = transfer_fields(res_h, res_fine, tu_h, tp_h)
            proj = max(proj, (_l2(res_fine, tu - tu_b) + _l2(res_fine, tp - tp_b)) / nw)
            # Stokes operator gap on the same data
            g_h, _ = transfer_fields(res_fine, res_h, g, walls=False)
            su, sp_ = coarse.stokes(g_h)
            su_b, sp_b = transfer_fields(res_h, res_fine, su, sp_)
            gap = max(gap, (_l2(res_fine, tu - su_b) + _l2(res_fine, tp - sp_b)) / nw)
            # shift of the linearization point inside the coarse operator
            gh_exact = lam0 * (coarse.advection_jac(u0h) @ wh)
            du, dp = coarse.stokes(g_h - gh_exact)
            shift = max(shift, (_l2(res_h, du) + _l2(res_h, dp)) / nw)
        # parameter column: d/dlam of lam * ((u.grad)u - f) is the bracket itself
        gl = fine.advection(u0f) - fine.sample_velocity(smooth_forcing)
        lu, lp = fine.stokes(gl)
        gl_h = coarse.advection(u0h) - coarse.sample_velocity(smooth_forcing)
        cu, cp = coarse.stokes(gl_h)
        cu_b, cp_b = transfer_fields(res_h, res_fine, cu, cp)
        lam_term = _l2(res_fine, lu - cu_b) + _l2(res_fine, lp - cp_b)
        eta4 = proj + gap + shift
        rows.append(
            {
                "res_h": int(res_h),
                "projection": proj,
                "stokes_gap": gap,
                "nonlinear_shift": shift,
                "eta4": eta4,
                "eta2": eta4 + lam_term,
            }
        )
    for key in ("eta4", "eta2"):
        for a, b in zip(rows, rows[1:]):
            b[key + "_decreasing"] = b[key] < a[key]
        if rows:
            rows[0][key + "_decreasing"] = True
    return rows
