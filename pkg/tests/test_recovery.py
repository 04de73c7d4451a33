from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifshift.classify_verify import classify
from bifshift.extended_system import choose_frames
from bifshift.problem_api import PointLU, eval_F
from bifshift.recovery import (
    RecoveryOptions,
    branch_gap,
    branch_tangents,
    recover,
    recover_functional,
    shifted_problem,
    singular_residual,
    trace_branches,
)
from bifshift.testbeds import perturbed_pitchfork, pitchfork, registry, transcritical


def _frames(p, anchor):
    return choose_frames(p, anchor, type_hint=(1, 1))


def test_options_validation():
    with pytest.raises(ValueError):
        RecoveryOptions(alpha=0.5)
    with pytest.raises(ValueError):
        RecoveryOptions(alpha=1.5)
    with pytest.raises(ValueError):
        RecoveryOptions(damping="trust")
    with pytest.raises(ValueError):
        RecoveryOptions(max_iter=0)


def test_singular_residual_vanishes_at_known_point():
    p = pitchfork()
    pt = PointLU([0.0], [0.0])
    r = singular_residual(p, choose_frames(p, pt), pt)
    # (q + m) * q slack entries from Y plus n * n from Z
    assert r.shape == (3,)
    assert np.max(np.abs(r)) < 1e-15


@pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-4])
def test_perturbed_pitchfork_shift_is_minus_eps(eps):
    p = perturbed_pitchfork(eps)
    anchor = PointLU([0.05], [0.05])
    res = recover(p, _frames(p, anchor), anchor)
    assert res.converged
    assert abs(res.rho[0] + eps) <= 1e-8
    assert np.linalg.norm(res.point.flat()) <= 1e-8
    assert res.to_dict()["type"] == [1, 1]


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
def test_recovery_from_nearby_anchors_lands_on_origin(lam, u):
    p = perturbed_pitchfork(1e-3)
    anchor = PointLU([lam], [u])
    res = recover(p, _frames(p, anchor), anchor)
    assert np.linalg.norm(res.point.flat()) <= 1e-8
    assert abs(res.rho[0] + 1e-3) <= 1e-8


def test_shifted_problem_restores_bifurcation():
    e = registry("chafee_infante_asym", {"Ng": 16, "eps": 1e-3})
    p = e.problem
    anchor = e.known_truth.point
    res = recover(p, _frames(p, anchor), anchor)
    assert res.converged
    rep = classify(shifted_problem(p, res.rho), res.point)
    assert (rep.n, rep.q) == (1, 1)
    assert res.rho_norm == pytest.approx(1e-3, rel=1e-6)


def test_functional_shift_obeys_closed_form_relations():
    # For F = lam u - u^3 - eps the functional shift DF (mu', w') vanishes
    # together with the singular residual exactly when w' = u,
    # mu' = lam + 3u^2 and -u^3 - lam u = eps.
    eps = 1e-3
    p = perturbed_pitchfork(eps)
    anchor = PointLU([0.05], [0.05])
    res = recover_functional(p, _frames(p, anchor), anchor)
    assert res.converged and res.shift_mode == "functional"
    lam, u = res.point.lam[0], res.point.u[0]
    mu_p, w_p = res.mu_w_prime
    assert w_p == pytest.approx(u, abs=1e-9)
    assert mu_p == pytest.approx(lam + 3 * u * u, abs=1e-9)
    assert -(u**3) - lam * u == pytest.approx(eps, abs=1e-9)
    assert np.linalg.norm(eval_F(p, res.point) - res.rho) < 1e-9


def test_tangents_of_normal_forms():
    pt = PointLU([0.0], [0.0])
    tp = branch_tangents(pitchfork(), pt)
    axes = sorted(np.argmax(np.abs(t)) for t in tp)
    assert axes == [0, 1]
    tt = branch_tangents(transcritical(), pt)
    # F = lam u - u^2: branches u = 0 and u = lam
    dirs = sorted(abs(t[1] / t[0]) if abs(t[0]) > 1e-12 else np.inf for t in tt)
    assert dirs[0] == pytest.approx(0.0, abs=1e-12)
    assert dirs[1] == pytest.approx(1.0, abs=1e-12)


def test_trace_rows_and_gap_for_pitchfork():
    p = pitchfork()
    rows = trace_branches(p, np.zeros(1), PointLU([0.0], [0.0]), steps=5, ds=0.05)
    assert len(rows) == 2 * 2 * 5
    assert set(r["direction"] for r in rows) == {-1, 1}
    for r in rows:
        assert abs(r["lambda"] * r["u"][0] - r["u"][0] ** 3) < 1e-9
    assert branch_gap(rows) == pytest.approx(0.0, abs=1e-12)


def test_shift_closes_the_gap_on_chafee_infante():
    e = registry("chafee_infante_asym", {"Ng": 16, "eps": 1e-3})
    p = e.problem
    anchor = e.known_truth.point
    res = recover(p, _frames(p, anchor), anchor)
    shifted = trace_branches(p, res.rho, res.point, steps=8, ds=0.05)
    unshifted = trace_branches(p, np.zeros(p.N), res.point, steps=8, ds=0.05)
    assert branch_gap(shifted) <= 1e-6
    assert branch_gap(unshifted) > 1e-4
