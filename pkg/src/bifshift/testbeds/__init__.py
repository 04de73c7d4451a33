"""Registry of test problems with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..errors import BadParams, UnknownName
from ..problem_api import PointLU, ProblemDef
from .algebraic import linear, perturbed_pitchfork, pitchfork, transcritical
from .chafee_infante import bump_index, chafee_infante, laplacian, tridiag_eigen_oracle
from .ns_lite import (
    mac_grid,
    manufactured,
    manufactured_error,
    ns_F_eval,
    ns_problem,
    ns_steady_state,
    ns_stokes_solve,
    ns_transfer_study,
    stokes_gap,
)

NAMES = (
    "pitchfork",
    "transcritical",
    "perturbed_pitchfork",
    "chafee_infante",
    "chafee_infante_asym",
    "ns_lite",
    "linear",
)


@dataclass(frozen=True, eq=False)
class KnownTruth:
    point: PointLU
    type_nq: tuple[int, int]
    oracle: str


@dataclass(frozen=True, eq=False)
class RegistryEntry:
    name: str
    params: dict
    problem: ProblemDef
    known_truth: Optional[KnownTruth] = None
    extra: dict = field(default_factory=dict)


def _param(params: dict, key: str, default: Any, kind=float):
    val = params.get(key, default)
    try:
        out = kind(val)
    except (TypeError, ValueError) as exc:
        raise BadParams(f"parameter {key}={val!r} is not a valid {kind.__name__}") from exc
    if kind is int and out != float(val):
        raise BadParams(f"parameter {key}={val!r} must be an integer")
    return out


def registry(name: str, params: Optional[dict] = None) -> RegistryEntry:
    """Build a registry entry; identical parameters give identical evaluators."""
    params = dict(params or {})
    if name == "pitchfork":
        truth = KnownTruth(PointLU([0.0], [0.0]), (1, 1), "zero Jacobian at the origin")
        return RegistryEntry(name, params, pitchfork(), truth)
    if name == "transcritical":
        truth = KnownTruth(PointLU([0.0], [0.0]), (1, 1), "zero Jacobian at the origin")
        return RegistryEntry(name, params, transcritical(), truth)
    if name == "perturbed_pitchfork":
        eps = _param(params, "eps", 1e-3)
        params["eps"] = eps
        truth = KnownTruth(
            PointLU([0.0], [0.0]), (1, 1), "shift by -eps restores the pitchfork at the origin"
        )
        return RegistryEntry(name, params, perturbed_pitchfork(eps), truth)
    if name == "linear":
        truth = KnownTruth(PointLU([0.0], [0.0, 0.0]), (1, 1), "constant singular Jacobian")
        return RegistryEntry(name, params, linear(), truth)
    if name in ("chafee_infante", "chafee_infante_asym"):
        Ng = _param(params, "Ng", 32, int)
        if Ng < 2:
            raise BadParams("Ng must be at least 2")
        params["Ng"] = Ng
        vals, _ = tridiag_eigen_oracle(Ng)
        if name == "chafee_infante":
            prob = chafee_infante(Ng)
            truth = KnownTruth(
                PointLU([vals[0]], np.zeros(Ng)), (1, 1), "first eigenvalue of the FD Laplacian"
            )
        else:
            eps = _param(params, "eps", 1e-3)
            params["eps"] = eps
            prob = chafee_infante(Ng, eps, asym=True)
            truth = KnownTruth(
                PointLU([vals[0]], np.zeros(Ng)),
                (1, 1),
                "unforced problem's first bifurcation; forcing detaches the branches",
            )
        return RegistryEntry(name, params, prob, truth, {"eigenvalues": vals})
    if name == "ns_lite":
        res = _param(params, "res", 8, int)
        if res < 4:
            raise BadParams("res must be at least 4")
        params["res"] = res
        forcing = params.get("forcing", "manufactured")
        if forcing == "manufactured":
            f = manufactured("force")
        elif forcing == "zero":
            f = None
        else:
            raise BadParams(f"unknown forcing {forcing!r}")
        params["forcing"] = forcing
        return RegistryEntry(name, params, ns_problem(res, f), None)
    raise UnknownName(f"unknown problem {name!r}; choose from {', '.join(NAMES)}")


__all__ = [
    "NAMES",
    "KnownTruth",
    "RegistryEntry",
    "registry",
    "pitchfork",
    "transcritical",
    "perturbed_pitchfork",
    "linear",
    "chafee_infante",
    "laplacian",
    "bump_index",
    "tridiag_eigen_oracle",
    "mac_grid",
    "manufactured",
    "manufactured_error",
    "ns_F_eval",
    "ns_problem",
    "ns_steady_state",
    "ns_stokes_solve",
    "ns_transfer_study",
    "stokes_gap",
]
