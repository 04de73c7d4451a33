"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion k: PASS|FAIL`` line (also collected
into the terminal summary) and then asserts, so a failure shows both the
line and the pytest traceback.
"""

from __future__ import annotations

import subprocess
import sys
import time

import numpy as np

from bifshift.certify import certificate, error_bound
from bifshift.classify_verify import (
    build_extended_solution,
    classify,
    random_admissible_frames,
    verify_extended,
)
from bifshift.discretize import chafee_infante_study
from bifshift.errors import ConditionViolated
from bifshift.extended_system import ExtState, choose_frames
from bifshift.problem_api import PointLU, eval_F
from bifshift.recovery import branch_gap, recover, shifted_problem, trace_branches
from bifshift.testbeds import (
    chafee_infante,
    mac_grid,
    manufactured,
    manufactured_error,
    ns_steady_state,
    ns_stokes_solve,
    pitchfork,
    registry,
    stokes_gap,
    transcritical,
    tridiag_eigen_oracle,
)

# First eigenvalue of -Lap_h from numpy.linalg.eigvalsh of the dense
# matrix, frozen; the closed-form oracle must agree to 1e-10.
LAMBDA1_EIGVALSH = {
    16: 0.9971573310090049,
    32: 0.9992449783229232,
    64: 0.9998053484035332,
}


def _judge(log, k, limit_s, fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failed criterion, reported like one
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    dt = time.perf_counter() - t0
    in_time = limit_s is None or dt < limit_s
    status = "PASS" if ok and in_time else "FAIL"
    limit = "no limit" if limit_s is None else f"limit {limit_s:g} s"
    line = f"criterion {k}: {status} [{dt:.2f} s, {limit}] {detail}"
    print(line)
    log.append(line)
    assert ok, detail
    assert in_time, f"took {dt:.2f} s, limit {limit_s} s"


# ---------------------------------------------------------------------------


def _criterion_1():
    cases = [
        (pitchfork(), PointLU([0.0], [0.0]), None),
        (transcritical(), PointLU([0.0], [0.0]), None),
    ]
    for Ng in (16, 32, 64):
        lam1 = tridiag_eigen_oracle(Ng)[0][0]
        if abs(lam1 - LAMBDA1_EIGVALSH[Ng]) > 1e-10:
            return False, f"oracle lambda1 for Ng={Ng} is off by {abs(lam1 - LAMBDA1_EIGVALSH[Ng]):.2e}"
        cases.append((chafee_infante(Ng), PointLU([lam1], np.zeros(Ng)), Ng))
    slowest = 0.0
    for p, pt, Ng in cases:
        t0 = time.perf_counter()
        rep = classify(p, pt)
        dt = time.perf_counter() - t0
        slowest = max(slowest, dt)
        if (rep.n, rep.q) != (1, 1):
            return False, f"{p.name} classified as {(rep.n, rep.q)}"
        if dt >= 1.0:
            return False, f"{p.name} took {dt:.2f} s"
    return True, f"{len(cases)} points typed (1,1); slowest classify {slowest:.3f} s (limit 1 s each)"


def test_criterion_1_classification_ground_truth(acceptance_log):
    _judge(acceptance_log, 1, None, _criterion_1)


def _bifurcation_points():
    out = []
    for name in ("pitchfork", "transcritical", "linear"):
        e = registry(name)
        out.append((name, e.problem, e.known_truth.point))
    e = registry("chafee_infante", {"Ng": 32})
    out.append(("chafee_infante", e.problem, e.known_truth.point))
    # Perturbed problems carry a bifurcation once their known shift is removed.
    e = registry("perturbed_pitchfork", {"eps": 1e-3})
    pt = e.known_truth.point
    out.append(("perturbed_pitchfork", shifted_problem(e.problem, eval_F(e.problem, pt)), pt))
    e = registry("chafee_infante_asym", {"Ng": 32, "eps": 1e-3})
    pt = e.known_truth.point
    out.append(("chafee_infante_asym", shifted_problem(e.problem, eval_F(e.problem, pt)), pt))
    return out


def _criterion_2():
    checked = 0
    worst = [0.0, np.inf, 0.0]
    rng = np.random.default_rng(2)
    for name, p, pt in _bifurcation_points():
        frame_sets = [choose_frames(p, pt)] + [random_admissible_frames(p, pt, rng) for _ in range(20)]
        for fr in frame_sets:
            s0 = build_extended_solution(p, fr, pt)
            rep = verify_extended(p, fr, s0)
            worst = [
                max(worst[0], rep.residual_S),
                min(worst[1], rep.sigma_min_DS),
                max(worst[2], rep.zero_components_max),
            ]
            ok = (
                rep.passes
                and rep.residual_S <= 1e-8
                and rep.sigma_min_DS > 1e-8
                and rep.zero_components_max <= 1e-7
            )
            if not ok:
                return False, f"{name}: {rep.to_dict()}"
            checked += 1
    return True, (
        f"{checked} (point, frame) pairs; max ||S|| {worst[0]:.1e}, "
        f"min sigma {worst[1]:.1e}, max zero part {worst[2]:.1e}"
    )


def test_criterion_2_round_trip_and_frame_invariance(acceptance_log):
    _judge(acceptance_log, 2, 10.0, _criterion_2)


def _criterion_3():
    parts = []
    for eps in (1e-2, 1e-3, 1e-4):
        e = registry("perturbed_pitchfork", {"eps": eps})
        anchor = PointLU([0.05], [0.05])
        res = recover(e.problem, choose_frames(e.problem, anchor, type_hint=(1, 1)), anchor)
        err_rho = abs(res.rho[0] + eps)
        err_pt = float(np.linalg.norm(res.point.flat()))
        if not (res.converged and err_rho <= 1e-8 and err_pt <= 1e-8):
            return False, f"eps={eps}: |rho+eps|={err_rho:.2e}, |pt|={err_pt:.2e}"
        parts.append(f"eps={eps:g} ok")
    e = registry("chafee_infante_asym", {"Ng": 32, "eps": 1e-3})
    p, anchor = e.problem, e.known_truth.point
    res = recover(p, choose_frames(p, anchor, type_hint=(1, 1)), anchor)
    if not res.converged:
        return False, "Chafee-Infante recovery did not verify"
    rep = classify(shifted_problem(p, res.rho), res.point)
    if (rep.n, rep.q) != (1, 1):
        return False, f"shifted Chafee-Infante typed {(rep.n, rep.q)}"
    gap_s = branch_gap(trace_branches(p, res.rho, res.point))
    gap_u = branch_gap(trace_branches(p, np.zeros(p.N), res.point))
    if not (gap_s <= 1e-6 and gap_u > 1e-4):
        return False, f"shifted gap {gap_s:.2e}, unshifted gap {gap_u:.2e}"
    parts.append(f"CI(32) shifted gap {gap_s:.1e}, unshifted gap {gap_u:.2e}")
    return True, "; ".join(parts)


def test_criterion_3_recovery_restores_crossing(acceptance_log):
    _judge(acceptance_log, 3, 30.0, _criterion_3)


def _certificate_cases():
    cases = []
    for name in ("pitchfork", "transcritical", "linear"):
        e = registry(name)
        cases.append((name, e.problem, choose_frames(e.problem, e.known_truth.point), e.known_truth.point))
    e = registry("chafee_infante", {"Ng": 32})
    cases.append(("chafee_infante", e.problem, choose_frames(e.problem, e.known_truth.point), e.known_truth.point))
    for name, params in (("perturbed_pitchfork", {"eps": 1e-3}), ("chafee_infante_asym", {"Ng": 32, "eps": 1e-3})):
        e = registry(name, params)
        pt = e.known_truth.point
        cases.append((name, e.problem, choose_frames(e.problem, pt, type_hint=(1, 1)), pt))
    # ns_lite has no known singular point; certify at a steady state with
    # frames forced to type (1, 1). The smallest admissible grid keeps the
    # 64-sample estimate inside the time budget.
    res, lam = 4, 1.0
    e = registry("ns_lite", {"res": res})
    pt = PointLU([lam], ns_steady_state(res, lam, manufactured("force")))
    cases.append(("ns_lite", e.problem, choose_frames(e.problem, pt, type_hint=(1, 1)), pt))
    return cases


def _hand_radii(kappa, L, M, eps, mode):
    c = 1.0 / kappa - L
    if mode == "h_uniform":
        tau = 0.99 * (1.0 + 2.0 * kappa * M) / (2.0 + 2.0 * kappa * M) * eps
        a = min(tau / (1.0 + 2.0 * kappa * M), kappa * tau / (2.0 * kappa))
    else:
        tau = 0.99 * (L + M) / (L + M + c) * eps
        a = min(c * tau / (L + M), c * tau / c)
    return tau, a, c


def _criterion_4():
    ratio = 0.0
    cases = _certificate_cases()
    for name, p, fr, pt in cases:
        cert = certificate(p, fr, pt, epsilon=0.05, samples=64, seed=7)
        if not cert.kappa <= cert.gamma:
            return False, f"{name}: kappa {cert.kappa} > gamma {cert.gamma}"
        if not 0.5 * cert.L_S_eps <= 1.05 * cert.L_eps:
            return False, f"{name}: L_S/2 = {0.5 * cert.L_S_eps:.4g} > 1.05 L = {1.05 * cert.L_eps:.4g}"
        if cert.b_star != cert.c * cert.a_star:
            return False, f"{name}: b* != c a*"
        if cert.L_eps > 0:
            ratio = max(ratio, 0.5 * cert.L_S_eps / cert.L_eps)
    e = registry("linear")
    fr = choose_frames(e.problem, e.known_truth.point)
    for mode in ("h_uniform", "general"):
        cert = certificate(e.problem, fr, e.known_truth.point, epsilon=0.05, seed=7, radii_mode=mode)
        tau, a, c = _hand_radii(cert.kappa, cert.L_eps, cert.M, cert.epsilon, mode)
        diffs = (abs(tau - cert.tau), abs(a - cert.a_star), abs(c - cert.c), abs(c * a - cert.b_star))
        if max(diffs) > 1e-12:
            return False, f"linear radii ({mode}) differ from hand arithmetic by {max(diffs):.2e}"
    return True, f"{len(cases)} registry problems; max (L_S/2)/L = {ratio:.4f}; linear radii match in both modes"


def test_criterion_4_certificate_inequalities(acceptance_log):
    _judge(acceptance_log, 4, 20.0, _criterion_4)


def _recovered_states():
    out = []
    for eps in (1e-2, 1e-3, 1e-4):
        e = registry("perturbed_pitchfork", {"eps": eps})
        anchor = PointLU([0.05], [0.05])
        out.append((f"pitchfork eps={eps:g}", e.problem, anchor))
    e = registry("chafee_infante_asym", {"Ng": 32, "eps": 1e-3})
    out.append(("CI(32)", e.problem, e.known_truth.point))
    for label, p, anchor in out:
        res = recover(p, choose_frames(p, anchor, type_hint=(1, 1)), anchor)
        yield label, shifted_problem(p, res.rho), res.frames, res.ext_state


def _criterion_5():
    rng = np.random.default_rng(7)
    used = violations = 0
    tightest = np.inf
    for label, ps, fr, s0 in _recovered_states():
        base = s0.flatten()
        for _ in range(50):
            d = rng.standard_normal(base.size)
            r = ExtState.like(fr, base + 10 ** rng.uniform(-6, -2) * d / np.linalg.norm(d))
            try:
                bound = error_bound(ps, fr, s0, r, samples=16, seed=7)
            except ConditionViolated:
                continue
            actual = float(np.linalg.norm(base - r.flatten()))
            used += 1
            tightest = min(tightest, bound / actual)
            if actual > bound:
                violations += 1
    ok = violations == 0 and used > 0
    return ok, f"{used} trial states with gamma*L_S < 1, {violations} violations, min bound/actual {tightest:.3f}"


def test_criterion_5_error_bound(acceptance_log):
    _judge(acceptance_log, 5, 30.0, _criterion_5)


def _criterion_6():
    fine = 64
    study = chafee_infante_study(fine_N=fine, coarse=(16, 24, 32, 48))
    lam_fine = tridiag_eigen_oracle(fine)[0][0]
    admissible = 0
    for row in study["rows"]:
        tr = row["transfer"]
        if tr["admissible"]:
            admissible += 1
            if not (tr["sound_G"] and tr["sound_H"]):
                return False, f"N_h={row['coarse_N']}: inverse norm exceeds its bound: {tr}"
        if not row.get("converged"):
            return False, f"N_h={row['coarse_N']}: recovery failed {row.get('error', '')}"
        if (row["type_n"], row["type_q"]) != (1, 1):
            return False, f"N_h={row['coarse_N']}: type {(row['type_n'], row['type_q'])}"
        oracle = abs(tridiag_eigen_oracle(row["coarse_N"])[0][0] - lam_fine)
        got = abs(row["lambda0h"] - lam_fine)
        if abs(got - oracle) > 1e-6:
            return False, f"N_h={row['coarse_N']}: |lam0h - lam0| = {got:.3e}, oracle {oracle:.3e}"
    flags = study["flags"]
    if not all(flags.values()):
        return False, f"monotonicity flags {flags}"
    if admissible == 0:
        return False, "no row has q_G < 1 and q_H < 1"
    return True, f"{admissible}/{len(study['rows'])} rows admissible and sound; eta2, eta4, delta_h decreasing"


def test_criterion_6_transfer_study(acceptance_log):
    _judge(acceptance_log, 6, 120.0, _criterion_6)


def _criterion_7():
    errs = [manufactured_error(r) for r in (8, 12, 16, 24)]
    if not all(b < a for a, b in zip(errs, errs[1:])):
        return False, f"manufactured errors not decreasing: {errs}"
    div = 0.0
    pq = 0.0
    for res in (8, 12):
        g = mac_grid(res)
        vel, _ = ns_stokes_solve(res, manufactured("force"))
        div = max(div, float(np.max(np.abs(g.divergence(vel)))))
        for lam in (0.5, 1.0, 2.0):
            st = ns_steady_state(res, lam, manufactured("force"))
            p, u, q = st[: g.n_p], st[g.n_p : g.n_p + g.n_vel], st[g.n_p + g.n_vel :]
            div = max(div, float(np.max(np.abs(g.divergence(u)))))
            pq = max(pq, float(np.max(np.abs(p - q / lam))))
    if div > 1e-10 or pq > 1e-12:
        return False, f"divergence {div:.2e}, p - q/lam {pq:.2e}"
    gaps = [stokes_gap(48, r) for r in (8, 12, 16, 24)]
    if not all(b < a for a, b in zip(gaps, gaps[1:])):
        return False, f"Stokes gap not decreasing: {gaps}"
    return True, (
        f"errors {', '.join(f'{x:.3f}' for x in errs)}; divergence {div:.1e}; "
        f"p - q/lam {pq:.1e}; gaps {', '.join(f'{x:.3f}' for x in gaps)}"
    )


def test_criterion_7_ns_lite_structure(acceptance_log):
    _judge(acceptance_log, 7, 120.0, _criterion_7)


CLI_RUNS = [
    ["list"],
    ["classify", "--problem", "pitchfork", "--point", "0,0"],
    ["recover", "--problem", "perturbed_pitchfork", "--eps", "1e-3", "--anchor", "0.05,0.05"],
    ["certify", "--problem", "pitchfork", "--anchor", "0,0", "--epsilon", "0.05", "--seed", "7"],
    ["certify", "--problem", "pitchfork", "--anchor", "0.5,0.5", "--type", "1,1"],
    ["trace", "--problem", "chafee_infante_asym", "--Ng", "32", "--eps", "1e-3",
     "--anchor", "known", "--type", "1,1", "--csv", "{dir}/trace.csv"],
    ["discretize", "--csv", "{dir}/study.csv"],
]


def _invoke(argv, tmp_path):
    argv = [a.format(dir=tmp_path) for a in argv] + ["--out", str(tmp_path / "report.json")]
    proc = subprocess.run(
        [sys.executable, "-m", "bifshift.cli", *argv], capture_output=True, check=False
    )
    files = {f.name: f.read_bytes() for f in sorted(tmp_path.iterdir())}
    return proc.returncode, proc.stdout, files


def _criterion_8(tmp_path):
    codes = []
    for i, argv in enumerate(CLI_RUNS):
        work = tmp_path / f"run{i}"
        work.mkdir()
        first = _invoke(argv, work)
        second = _invoke(argv, work)
        if first != second:
            return False, f"{argv[0]} output differs between invocations"
        if first[0] not in (0, 2):
            return False, f"{' '.join(argv)} exited {first[0]}"
        codes.append(first[0])
    return True, f"{len(CLI_RUNS)} commands byte-identical across two runs; exit codes {codes}"


def test_criterion_8_cli_determinism(acceptance_log, tmp_path):
    _judge(acceptance_log, 8, None, lambda: _criterion_8(tmp_path))
