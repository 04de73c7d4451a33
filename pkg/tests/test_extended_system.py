from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifshift.errors import DegenerateAnchor, DimensionMismatch
from bifshift.extended_system import (
    ExtState,
    anchored,
    choose_frames,
    eval_S,
    fd_jac_S,
    intersection_sigmas,
    jac_S,
    state_at,
)
from bifshift.problem_api import PointLU
from bifshift.testbeds import chafee_infante, pitchfork, registry, transcritical


def test_state_flatten_round_trip():
    fr = choose_frames(pitchfork(), PointLU([0.0], [0.0]))
    s = state_at(pitchfork(), fr, PointLU([0.0], [0.0]))
    vec = s.flatten()
    assert vec.size == fr.dim
    back = ExtState.like(fr, vec)
    assert np.array_equal(back.flatten(), vec)


def test_dimension_count_for_type_one_one():
    # x = (f, lam, u) in R^(q+m+N), Y rows in R^(q+m+N) for q+m of them,
    # Z rows in R^(n+N) for n of them.
    fr = choose_frames(pitchfork(), PointLU([0.0], [0.0]))
    assert (fr.n, fr.q) == (1, 1)
    assert fr.dim_x == 3 and fr.dim_z == 2
    assert fr.dim == 3 + 2 * 3 + 2


def test_pitchfork_state_is_a_zero_of_S():
    p = pitchfork()
    pt = PointLU([0.0], [0.0])
    fr = choose_frames(p, pt)
    s = state_at(p, fr, pt)
    assert np.linalg.norm(eval_S(p, fr, s)) < 1e-14
    assert s.zero_components_max() < 1e-14
    # Kernel of DF at the origin is all of R^2, so (mu, w) spans it.
    assert np.linalg.matrix_rank(s.mu_w) == 2


def test_regular_anchor_without_hint_is_rejected():
    p = pitchfork()
    with pytest.raises(DegenerateAnchor):
        choose_frames(p, PointLU([1.0], [0.0]))
    fr = choose_frames(p, PointLU([1.0], [0.0]), type_hint=(1, 1))
    assert (fr.n, fr.q) == (1, 1)


def test_type_hint_out_of_range():
    with pytest.raises(DimensionMismatch):
        choose_frames(pitchfork(), PointLU([0.0], [0.0]), type_hint=(2, 1))


@pytest.mark.parametrize("name", ["pitchfork", "transcritical", "linear", "chafee_infante"])
def test_analytic_jacobian_of_S_matches_fd(name):
    e = registry(name, {"Ng": 6} if name == "chafee_infante" else None)
    p, pt = e.problem, e.known_truth.point
    fr = choose_frames(p, pt)
    rng = np.random.default_rng(5)
    s = ExtState.like(fr, state_at(p, fr, pt).flatten() + 0.05 * rng.standard_normal(fr.dim))
    J = jac_S(p, fr, s)
    assert J.shape == (fr.dim, fr.dim)
    assert np.max(np.abs(J - fd_jac_S(p, fr, s))) < 1e-6 * (1 + np.max(np.abs(J)))


def test_intersection_sigmas_positive_at_bifurcation():
    p = chafee_infante(8)
    e = registry("chafee_infante", {"Ng": 8})
    fr = choose_frames(p, e.known_truth.point)
    sg, sh = intersection_sigmas(p, fr, e.known_truth.point)
    assert sg > 1e-3 and sh > 1e-3


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_anchored_frames_put_border_row_at_zero(lam, u):
    p = transcritical()
    fr = choose_frames(p, PointLU([0.0], [0.0]))
    pt = PointLU([lam], [u])
    fr2 = anchored(fr, pt)
    s = state_at(p, fr2, pt)
    # The border rows of S vanish at the anchoring point; the F row need not.
    r = eval_S(p, fr2, s)
    assert np.isfinite(r).all()
    assert np.allclose(fr2.B @ s.x, fr2.theta0, atol=1e-12)
