from __future__ import annotations

import csv
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifshift.discretize import (
    CSV_COLUMNS,
    StudyOptions,
    approx_problem,
    build_projection,
    chafee_infante_study,
    default_frame,
    energy_weights,
    eta_estimates,
    frame_constant,
    projection_from_matrices,
    write_study_csv,
)
from bifshift.errors import BadParams, InadmissibleProjection
from bifshift.extended_system import choose_frames
from bifshift.problem_api import PointLU, eval_F
from bifshift.testbeds import chafee_infante, laplacian, tridiag_eigen_oracle


@pytest.mark.parametrize(
    "kind,fine,coarse",
    [("truncation", 32, 16), ("injection", 31, 15), ("interpolation", 32, 16), ("identity", 16, 16)],
)
def test_restriction_inverts_embedding(kind, fine, coarse):
    pair = build_projection(fine, coarse, kind)
    assert pair.fine_N == fine and pair.coarse_N == coarse
    assert np.allclose(pair.P_W @ pair.E_W, np.eye(coarse), atol=1e-12)
    assert pair.h_label == pytest.approx(np.pi / (coarse + 1))


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 40), st.integers(2, 40))
def test_truncation_pair_is_left_inverse_for_any_sizes(fine, coarse):
    if coarse > fine:
        fine, coarse = coarse, fine
    pair = build_projection(fine, coarse, "truncation")
    assert np.allclose(pair.P_W @ pair.E_W, np.eye(coarse), atol=1e-10)
    assert pair.C_est < 1.0


def test_injection_requires_nested_grids():
    with pytest.raises(BadParams):
        build_projection(64, 32, "injection")


def test_unknown_kind_rejected():
    with pytest.raises(BadParams):
        build_projection(16, 8, "spline")


def test_truncation_preserves_values_of_low_modes():
    # The lowest sine mode sampled on the coarse grid embeds to the same
    # mode sampled on the fine grid.
    fine, coarse = 31, 15
    pair = build_projection(fine, coarse, "truncation")
    xf = np.pi * np.arange(1, fine + 1) / (fine + 1)
    xc = np.pi * np.arange(1, coarse + 1) / (coarse + 1)
    assert np.allclose(pair.E_W @ np.sin(xc), np.sin(xf), atol=1e-12)
    assert np.allclose(pair.P_W @ np.sin(xf), np.sin(xc), atol=1e-12)


def test_frame_constant_by_hand():
    # E P annihilates the second coordinate; a frame along (1, 1) loses half
    # of itself, so C = 1/sqrt(2).
    P = np.array([[1.0, 0.0]])
    E = np.array([[1.0], [0.0]])
    assert frame_constant(P, E, np.array([1.0, 1.0])) == pytest.approx(1 / np.sqrt(2), rel=1e-12)
    with pytest.raises(InadmissibleProjection):
        projection_from_matrices(P, E, np.array([0.0, 1.0]), h_label=1.0)


def test_energy_weights_are_inverse_square_roots():
    RW, RZ = energy_weights(12)
    assert np.allclose(RW @ RZ, np.eye(12), atol=1e-10)
    assert np.allclose(RW @ RW, -laplacian(12), atol=1e-9)


def test_default_frame_is_unit_sine_mode():
    f = default_frame(10)
    _, vecs = tridiag_eigen_oracle(10)
    assert np.allclose(f[:, 0], vecs[:, 0])


def test_galerkin_problem_is_projected_map():
    p = chafee_infante(16)
    pair = build_projection(16, 8, "interpolation")
    ph = approx_problem(p, pair)
    uh = np.linspace(-0.5, 0.5, 8)
    pt = PointLU([1.2], uh)
    expect = pair.P_Z @ eval_F(p, PointLU([1.2], pair.E_W @ uh))
    assert np.allclose(eval_F(ph, pt), expect, atol=1e-12)


def test_small_chafee_infante_study(tmp_path):
    study = chafee_infante_study(fine_N=32, coarse=(8, 12, 16), opts=StudyOptions(samples=8))
    rows = study["rows"]
    assert [r["coarse_N"] for r in rows] == [8, 12, 16]
    assert study["flags"]["eta2_decreasing"]
    assert study["flags"]["eta4_decreasing"]
    assert study["flags"]["delta_decreasing"]
    lam_fine = tridiag_eigen_oracle(32)[0][0]
    for r in rows:
        assert (r["type_n"], r["type_q"]) == (1, 1)
        lam_h = tridiag_eigen_oracle(r["coarse_N"])[0][0]
        assert r["lambda0h"] == pytest.approx(lam_h, abs=1e-9)
        assert r["gap"] == pytest.approx(abs(lam_h - lam_fine), abs=1e-6)
        assert r["gap"] <= r["bound"]
    out = tmp_path / "study.csv"
    write_study_csv(study, out)
    with open(out, newline="") as fh:
        got = list(csv.reader(fh))
    assert tuple(got[0]) == CSV_COLUMNS
    assert len(got) == 1 + len(rows)


@pytest.mark.parametrize("t", [1e-3, 0.25])
def test_rank_one_border_bump_gives_eta1_equal_to_its_size(t):
    N = 12
    p = chafee_infante(N)
    lam1 = tridiag_eigen_oracle(N)[0][0]
    pt = PointLU([lam1], np.zeros(N))
    frames = choose_frames(p, pt)
    pair = build_projection(N, N, "identity")
    rng = np.random.default_rng(4)
    a = rng.standard_normal(frames.B.shape[0])
    b = rng.standard_normal(frames.B.shape[1])
    bump = t * np.outer(a / np.linalg.norm(a), b / np.linalg.norm(b))
    frames_h = dataclasses.replace(frames, B=frames.B + bump)
    eta1, eta2, eta3, eta4 = eta_estimates(p, p, pair, frames, pt, frames_h, pt)
    assert eta1 == pytest.approx(t, rel=1e-12)
    assert max(eta2, eta3, eta4) < 1e-12
