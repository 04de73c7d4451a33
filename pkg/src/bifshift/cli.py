"""Command-line front end.

Every subcommand writes one JSON report (sorted keys, ``schema: 1``) that
embeds the resolved run configuration and the library version. Exit codes:
0 for success, 2 when the run completed but a certificate or transfer
check came out negative, 1 for errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import __version__
from .errors import BifshiftError, IoFailure

log = logging.getLogger("bifshift")

SCHEMA = 1
COMMANDS = ("list", "classify", "recover", "certify", "discretize", "trace")
TRACE_COLUMNS = ("branch", "direction", "index", "s", "lambda", "unorm")

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2


@dataclass
class RunConfig:
    command: str = ""
    problem: str = "pitchfork"
    params: dict = field(default_factory=dict)
    point: Optional[str] = None
    anchor: Optional[str] = None
    frames_at: Optional[str] = None
    type_hint: Optional[str] = None
    rtol: float = 1e-6
    residual_tol: float = 1e-10
    step_tol: float = 1e-12
    max_iter: int = 50
    alpha: float = 1e-3
    epsilon: float = 0.05
    samples: int = 64
    seed: int = 0
    radii_mode: str = "h_uniform"
    mode: str = "constant"
    unshifted: bool = False
    steps: int = 20
    ds: float = 0.05
    fine_N: int = 64
    coarse: str = "16,24,32,48"
    kind: str = "truncation"
    norm: str = "energy"
    b_mode: str = "rederived"
    out: Optional[str] = None
    csv: Optional[str] = None

    def validate(self) -> None:
        for name in ("rtol", "residual_tol", "step_tol", "epsilon", "ds"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.rtol < 1:
            raise ValueError("rtol must lie in (0, 1)")
        if self.samples < 1 or self.steps < 1 or self.max_iter < 1:
            raise ValueError("counts (samples/steps/max_iter) must be at least 1")


# ---------------------------------------------------------------------------
# configuration

_PARAM_KEYS = ("eps", "Ng", "res", "forcing")
_SECTION_KEYS = {"problem": ("problem", "name") + _PARAM_KEYS, "output": ("out", "json", "csv")}


def _coerce(name: str, raw: str):
    ftypes = {f.name: f.type for f in fields(RunConfig)}
    kind = ftypes.get(name, "str")
    if kind == "float":
        return float(raw)
    if kind == "int":
        return int(raw)
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw


def load_config(path: str) -> dict:
    """Flat ``key = value`` pairs grouped under section headers."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    out: dict = {"params": {}}
    names = {f.name for f in fields(RunConfig)}
    for section in cp.sections():
        for key, raw in cp.items(section):
            if key in _PARAM_KEYS:
                out["params"][key] = raw
            elif key == "name" and section == "problem":
                out["problem"] = raw
            elif key == "json":
                out["out"] = raw
            elif key in names:
                out[key] = _coerce(key, raw)
            else:
                raise ValueError(f"unknown config key [{section}] {key}")
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="key-value config file with section headers")
    sp.add_argument("--problem", help="registry problem name")
    sp.add_argument("--eps", help="perturbation size (perturbed_pitchfork, chafee_infante_asym)")
    sp.add_argument("--Ng", help="grid size for chafee_infante problems")
    sp.add_argument("--res", help="grid resolution for ns_lite")
    sp.add_argument("--forcing", help="ns_lite forcing: manufactured or zero")
    sp.add_argument("--rtol", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="JSON report path (default: standard output)")
    sp.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bifshift", description="Locate bifurcation points of parameterized maps and certify them.")
    ap.add_argument("--version", action="version", version=f"bifshift {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("list", help="list registry problems")
    _add_common(sp)

    sp = sub.add_parser("classify", help="classify a solution point")
    _add_common(sp)
    sp.add_argument("--point", help="lam,u1,...; 'known' for the registry point; lam alone means u = 0")

    for name, helptext in (("recover", "recover a shifted bifurcation point"), ("certify", "certificate at an anchor")):
        sp = sub.add_parser(name, help=helptext)
        _add_common(sp)
        sp.add_argument("--anchor", help="lam,u1,...; 'known' for the registry point")
        sp.add_argument("--type", dest="type_hint", help="n,q to force when the anchor is regular")
        sp.add_argument("--epsilon", type=float, help="ball radius for the certificate")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--samples", type=int)
        if name == "recover":
            sp.add_argument("--mode", choices=("constant", "functional"))
            sp.add_argument("--max-iter", dest="max_iter", type=int)
            sp.add_argument("--residual-tol", dest="residual_tol", type=float)
        else:
            sp.add_argument("--frames-at", dest="frames_at", help="point where frames are chosen (default: anchor)")
            sp.add_argument("--radii-mode", dest="radii_mode", choices=("h_uniform", "general"))

    sp = sub.add_parser("discretize", help="Chafee-Infante transfer study")
    _add_common(sp)
    sp.add_argument("--fine-N", dest="fine_N", type=int)
    sp.add_argument("--coarse", help="comma-separated coarse sizes")
    sp.add_argument("--kind", choices=("truncation", "injection", "interpolation"))
    sp.add_argument("--norm", choices=("l2", "energy"))
    sp.add_argument("--b-mode", dest="b_mode", choices=("rederived", "restricted"))
    sp.add_argument("--csv", help="study table path")

    sp = sub.add_parser("trace", help="trace branches through a recovered point")
    _add_common(sp)
    sp.add_argument("--anchor")
    sp.add_argument("--type", dest="type_hint")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--ds", type=float)
    sp.add_argument("--unshifted", action="store_true", default=None, help="trace F instead of F - rho")
    sp.add_argument("--csv", help="branch table path")
    return ap


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = RunConfig(command=ns.command)
    if ns.command == "discretize":
        # the transfer study is only defined for Chafee-Infante
        cfg.problem = "chafee_infante"
    merged: dict = {}
    if getattr(ns, "config", None):
        merged.update(load_config(ns.config))
    params = dict(merged.pop("params", {}))
    for key in _PARAM_KEYS:
        val = getattr(ns, key, None)
        if val is not None:
            params[key] = val
    names = {f.name for f in fields(RunConfig)} - {"command", "params"}
    for key in names:
        val = getattr(ns, key, None)
        if val is not None:
            merged[key] = val
    for key, val in merged.items():
        setattr(cfg, key, val)
    cfg.params = params
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _vec(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ValueError(f"cannot parse numbers from {text!r}") from exc


def _point(entry, text: Optional[str]):
    from .problem_api import PointLU

    p = entry.problem
    if text is None or text == "known":
        if entry.known_truth is None:
            raise ValueError(f"{entry.name} has no known point; pass one explicitly")
        return entry.known_truth.point
    v = _vec(text)
    if v.size == p.m:
        return PointLU(v, np.zeros(p.N))
    if v.size != p.m + p.N:
        raise ValueError(f"point needs {p.m} or {p.m + p.N} values, got {v.size}")
    return PointLU.from_flat(v, p.m)


def _type_hint(text: Optional[str]):
    if text is None:
        return None
    v = [int(t) for t in text.split(",")]
    if len(v) != 2:
        raise ValueError("type must be n,q")
    return (v[0], v[1])


def _frames(entry, pt, cfg: RunConfig):
    from .extended_system import choose_frames

    hint = _type_hint(cfg.type_hint)
    try:
        return choose_frames(entry.problem, pt, cfg.rtol, type_hint=hint)
    except BifshiftError:
        if hint is not None:
            raise
        # a regular anchor: fall back to the generic simple-bifurcation type
        return choose_frames(entry.problem, pt, cfg.rtol, type_hint=(1, 1))


def _entry(cfg: RunConfig):
    from .testbeds import registry

    return registry(cfg.problem, cfg.params)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def emit_report(cfg: RunConfig, result: dict, status: str) -> None:
    report = {
        "schema": SCHEMA,
        "version": __version__,
        "command": cfg.command,
        "status": status,
        "config": asdict(cfg),
        "result": result,
    }
    text = dumps_report(report)
    if cfg.out:
        try:
            with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {cfg.out}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _write_csv(path: str, header, rows) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_list(cfg: RunConfig):
    from .testbeds import NAMES, registry

    out = []
    for name in NAMES:
        e = registry(name)
        item = {"name": name, "m": e.problem.m, "N": e.problem.N, "params": e.params}
        if e.known_truth is not None:
            item["known_type"] = list(e.known_truth.type_nq)
        out.append(item)
    return {"problems": out}, "ok"


def cmd_classify(cfg: RunConfig):
    from .classify_verify import classify

    e = _entry(cfg)
    pt = _point(e, cfg.point)
    rep = classify(e.problem, pt, cfg.rtol)
    return rep.to_dict(), "ok"


def cmd_recover(cfg: RunConfig):
    from .certify import certificate
    from .recovery import RecoveryOptions, recover, recover_functional

    e = _entry(cfg)
    anchor = _point(e, cfg.anchor)
    fr = _frames(e, anchor, cfg)
    opts = RecoveryOptions(
        max_iter=cfg.max_iter, step_tol=cfg.step_tol, residual_tol=cfg.residual_tol, alpha=cfg.alpha
    )
    if cfg.mode == "functional":
        res = recover_functional(e.problem, fr, anchor, opts)
        out = res.to_dict()
    else:
        cert = certificate(e.problem, fr, anchor, cfg.epsilon, cfg.alpha, cfg.samples, cfg.seed, cfg.radii_mode)
        res = recover(e.problem, fr, anchor, opts, a_star=cert.a_star if cert.certified else None)
        out = res.to_dict()
        out["certificate"] = cert.to_dict()
    return out, "ok" if res.converged else "not_verified"


def cmd_certify(cfg: RunConfig):
    from .certify import certificate

    e = _entry(cfg)
    anchor = _point(e, cfg.anchor)
    fpt = _point(e, cfg.frames_at) if cfg.frames_at else anchor
    fr = _frames(e, fpt, cfg)
    cert = certificate(e.problem, fr, anchor, cfg.epsilon, cfg.alpha, cfg.samples, cfg.seed, cfg.radii_mode)
    return cert.to_dict(), "ok" if cert.certified else "certificate_negative"


def cmd_discretize(cfg: RunConfig):
    from .discretize import CSV_COLUMNS, StudyOptions, chafee_infante_study, write_study_csv

    if cfg.problem != "chafee_infante":
        raise ValueError("discretize supports --problem chafee_infante")
    coarse = [int(c) for c in cfg.coarse.split(",")]
    opts = StudyOptions(b_mode=cfg.b_mode, samples=cfg.samples, seed=cfg.seed)
    study = chafee_infante_study(cfg.fine_N, coarse, cfg.kind, cfg.norm, opts)
    if cfg.csv:
        try:
            write_study_csv(study, cfg.csv)
        except OSError as exc:
            raise IoFailure(f"cannot write {cfg.csv}: {exc}") from exc
    sound = all(
        r["transfer"][k] is not False for r in study["rows"] for k in ("sound_G", "sound_H")
    )
    any_admissible = any(r["transfer"]["admissible"] for r in study["rows"])
    study["columns"] = list(CSV_COLUMNS)
    return study, "ok" if sound and any_admissible else "certificate_negative"


def cmd_trace(cfg: RunConfig):
    from .recovery import RecoveryOptions, branch_gap, recover, trace_branches

    e = _entry(cfg)
    anchor = _point(e, cfg.anchor)
    fr = _frames(e, anchor, cfg)
    res = recover(e.problem, fr, anchor, RecoveryOptions(residual_tol=cfg.residual_tol))
    rho = np.zeros(e.problem.N) if cfg.unshifted else res.rho
    rows = trace_branches(e.problem, rho, res.point, cfg.steps, cfg.ds, kernel=res.kernel_DF)
    if cfg.csv:
        N = e.problem.N
        header = list(TRACE_COLUMNS) + [f"u{i}" for i in range(N)]
        body = [
            [r["branch"], r["direction"], r["index"], repr(r["s"]), repr(r["lambda"]), repr(r["unorm"])]
            + [repr(c) for c in r["u"]]
            for r in rows
        ]
        _write_csv(cfg.csv, header, body)
    out = {
        "recovered_point": {"lambda": res.point.lam, "u": res.point.u},
        "rho_norm": 0.0 if cfg.unshifted else res.rho_norm,
        "shifted": not cfg.unshifted,
        "rows": len(rows),
        "directions": len({(r["branch"], r["direction"]) for r in rows}),
        "gap": branch_gap(rows),
    }
    return out, "ok"


HANDLERS = {
    "list": cmd_list,
    "classify": cmd_classify,
    "recover": cmd_recover,
    "certify": cmd_certify,
    "discretize": cmd_discretize,
    "trace": cmd_trace,
}


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING)
    try:
        cfg = resolve_config(ns)
        result, status = HANDLERS[cfg.command](cfg)
        emit_report(cfg, result, status)
    except (BifshiftError, ValueError) as exc:
        print(f"bifshift: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if status == "ok" else EXIT_NEGATIVE


if __name__ == "__main__":
    sys.exit(main())
