from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifshift.errors import BadParams, UnknownName
from bifshift.problem_api import PointLU, eval_F
from bifshift.testbeds import (
    NAMES,
    laplacian,
    manufactured,
    manufactured_error,
    mac_grid,
    ns_F_eval,
    ns_steady_state,
    registry,
    stokes_gap,
    tridiag_eigen_oracle,
)

# Eigenvalues of -Lap_h computed independently with numpy.linalg.eigvalsh
# on the dense matrix, then frozen.
LAMBDA1 = {
    16: 0.9971573310090049,
    32: 0.9992449783229232,
    64: 0.9998053484035332,
}
LAMBDA_MAX = {
    16: 116.13013095953349,
    32: 440.35583096770046,
    64: 1711.3281982071046,
}


def test_ng2_eigenvalues_have_closed_form():
    vals, _ = tridiag_eigen_oracle(2)
    assert vals[0] == pytest.approx(9.0 / np.pi**2, rel=1e-13)
    assert vals[1] == pytest.approx(27.0 / np.pi**2, rel=1e-13)


@pytest.mark.parametrize("Ng", [16, 32, 64])
def test_oracle_matches_frozen_eigenvalues(Ng):
    vals, vecs = tridiag_eigen_oracle(Ng)
    assert vals[0] == pytest.approx(LAMBDA1[Ng], abs=1e-10)
    assert vals[-1] == pytest.approx(LAMBDA_MAX[Ng], rel=1e-12)
    L = laplacian(Ng)
    assert np.allclose(-L @ vecs, vecs * vals, atol=1e-8 * vals[-1])
    assert np.allclose(vecs.T @ vecs, np.eye(Ng), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 40))
def test_oracle_eigenvalues_increase_and_stay_below_pi_ratio(Ng):
    vals, _ = tridiag_eigen_oracle(Ng)
    assert np.all(np.diff(vals) > 0)
    # Discrete eigenvalues sit below the continuous ones k^2.
    k = np.arange(1, Ng + 1)
    assert np.all(vals < k**2)


def test_registry_names_and_errors():
    assert set(NAMES) == {
        "pitchfork", "transcritical", "perturbed_pitchfork", "chafee_infante",
        "chafee_infante_asym", "ns_lite", "linear",
    }
    with pytest.raises(UnknownName):
        registry("nope")
    with pytest.raises(BadParams):
        registry("chafee_infante", {"Ng": 1})
    with pytest.raises(BadParams):
        registry("chafee_infante", {"Ng": 2.5})
    with pytest.raises(BadParams):
        registry("ns_lite", {"forcing": "wind"})


@pytest.mark.parametrize("name", ["pitchfork", "transcritical", "linear", "chafee_infante"])
def test_known_points_are_solutions(name):
    e = registry(name)
    assert np.linalg.norm(eval_F(e.problem, e.known_truth.point)) < 1e-12
    assert e.known_truth.type_nq == (1, 1)


def test_registry_is_deterministic():
    a = registry("chafee_infante_asym", {"Ng": 8, "eps": 1e-3}).problem
    b = registry("chafee_infante_asym", {"Ng": 8, "eps": 1e-3}).problem
    pt = PointLU([0.7], np.linspace(-1, 1, 8))
    assert np.array_equal(eval_F(a, pt), eval_F(b, pt))


def test_asym_forcing_is_single_bump():
    e = registry("chafee_infante_asym", {"Ng": 8, "eps": 0.25})
    out = eval_F(e.problem, PointLU([1.0], np.zeros(8)))
    assert np.count_nonzero(out) == 1 and out.sum() == pytest.approx(0.25)


def test_manufactured_stokes_error_decreases():
    errs = [manufactured_error(r) for r in (8, 12, 16)]
    assert errs[0] > errs[1] > errs[2]


def test_stokes_gap_decreases():
    gaps = [stokes_gap(24, r) for r in (6, 8, 12)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_ns_steady_state_is_divergence_free():
    res, lam = 8, 1.0
    force = manufactured("force")
    state = ns_steady_state(res, lam, force)
    g = mac_grid(res)
    p, vel, q = state[: g.n_p], state[g.n_p : g.n_p + g.n_vel], state[g.n_p + g.n_vel :]
    assert np.max(np.abs(g.divergence(vel))) < 1e-10
    assert np.max(np.abs(p - q / lam)) < 1e-12
    assert np.linalg.norm(ns_F_eval(res, lam, state, force)) < 1e-10
    e = registry("ns_lite", {"res": res})
    assert np.linalg.norm(eval_F(e.problem, PointLU([lam], state))) < 1e-10


@pytest.mark.parametrize("name,params", [("chafee_infante_asym", {"Ng": 6, "eps": 0.1}), ("ns_lite", {"res": 4})])
def test_matrix_second_derivative_matches_directional_one(name, params):
    p = registry(name, params).problem
    rng = np.random.default_rng(9)
    lam = 1.3 if name == "ns_lite" else 0.7
    pt = PointLU([lam], 0.3 * rng.standard_normal(p.N))
    d1 = rng.standard_normal(p.N + 1)
    full = p.D2mat(pt.lam, pt.u, d1)
    cols = np.column_stack([p.D2(pt.lam, pt.u, d1, e) for e in np.eye(p.N + 1)])
    assert np.allclose(full, cols, atol=1e-12 * (1 + np.max(np.abs(cols))))
