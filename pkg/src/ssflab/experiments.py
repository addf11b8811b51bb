"""Experiment manifests: the standard barrier experiment and JSON manifest resolution.

A manifest is one JSON document; every key is optional and falls back to the
standard experiment (barrier potential with lambda* = 1, w = 2, s = 3/4, 50 barriers,
Robin h = -1, gap bump of height 0.2 in the first gap).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .ode import DIRICHLET
from .potentials import (BarrierSpec, PiecewisePotential, build_vnw_potential, make_perturbation,
                         potential_from_steps)

STANDARD_BACKGROUND = {"lambda_star": 1.0, "w": 2.0, "s": 0.75, "n_barriers": 50}
STANDARD_PERTURBATION = {"kind": "gap_bump", "gap": 1, "width": 1.0, "height": 0.2}
DETOUR_PERTURBATION = {"kind": "gap_bump", "gap": 2, "width": 1.0, "height": 0.1}

DEFAULTS = {
    "potential": STANDARD_BACKGROUND,
    "perturbation": STANDARD_PERTURBATION,
    "boundary": None,                  # None: take boundary_h of the barrier spec
    "energies": {"start": 0.99, "stop": 1.02, "num": 7},
    "r_grid": {"start": 0.0, "stop": 1.0, "num": 201},
    "r": 1.0,
    "theta_points": 32,
    "y_points": 48,
    "nodes": 12,
    "tolerances": {"integer": 1e-2, "identity": 1e-2, "birman_krein": 1e-3},
    "out": "out",
}


def standard_background(n_barriers: int = 50) -> tuple[BarrierSpec, PiecewisePotential, float]:
    """(spec, W, h) of the standard experiment."""
    spec, W = build_vnw_potential(1.0, 2.0, 0.75, n_barriers)
    return spec, W, spec.boundary_h


def gap_center(spec: BarrierSpec, gap: int) -> float:
    """Midpoint of gap number ``gap`` (1-based) between barriers gap and gap + 1."""
    gaps = spec.gaps()
    if not 1 <= gap <= len(gaps):
        raise ParameterError(f"gap index {gap} outside 1..{len(gaps)}")
    b, a = gaps[gap - 1]
    return 0.5 * (a + b)


def standard_perturbation(spec: BarrierSpec, gap: int = 1, height: float = 0.2,
                          width: float = 1.0) -> PiecewisePotential:
    return make_perturbation("gap_bump", center=gap_center(spec, gap), width=width, height=height)


def _grid(value, name: str) -> np.ndarray:
    if isinstance(value, dict):
        try:
            arr = np.linspace(float(value["start"]), float(value["stop"]), int(value["num"]))
        except KeyError as exc:
            raise ParameterError(f"{name} needs start, stop and num") from exc
    elif isinstance(value, (int, float)):
        arr = np.array([float(value)])
    else:
        arr = np.asarray(value, dtype=float)
    if arr.size == 0:
        raise ParameterError(f"{name} grid is empty")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} grid has non-finite entries")
    return arr


def _read_json(ref: str, base: Path) -> dict:
    path = Path(ref)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ParameterError(f"referenced file {path} does not exist")
    return json.loads(path.read_text())


def _potential(desc: dict, base: Path) -> tuple[BarrierSpec | None, PiecewisePotential]:
    if "file" in desc:
        data = _read_json(desc["file"], base)
        if "barriers" in data:
            spec = BarrierSpec.from_dict(data)
            return spec, build_vnw_potential(spec.lambda_star, spec.w, spec.s, len(spec.barriers))[1]
        return None, PiecewisePotential.from_dict(data)
    if "lambda_star" in desc:
        return build_vnw_potential(float(desc["lambda_star"]), float(desc["w"]), float(desc["s"]),
                                   int(desc.get("n_barriers", 50)))
    if "steps" in desc:
        return None, potential_from_steps(desc["steps"])
    if "breakpoints" in desc:
        return None, PiecewisePotential.from_dict(desc)
    if desc.get("kind") == "zero":
        return None, PiecewisePotential.zero()
    raise ParameterError(f"cannot interpret potential description {desc!r}")


def _perturbation(desc: dict, spec: BarrierSpec | None, base: Path) -> PiecewisePotential:
    kind = desc.get("kind")
    if kind == "zero":
        return PiecewisePotential.zero()
    if kind == "gap_bump":
        params = {k: v for k, v in desc.items() if k not in ("kind", "gap")}
        if "center" not in params:
            if spec is None:
                raise ParameterError("gap_bump by gap index needs a barrier potential")
            params["center"] = gap_center(spec, int(desc.get("gap", 1)))
        return make_perturbation("gap_bump", **params)
    if kind == "barrier_scale":
        if spec is None:
            raise ParameterError("barrier_scale needs a barrier potential")
        return make_perturbation("barrier_scale", spec=spec, factor=desc["factor"],
                                 n_barriers=desc.get("n_barriers", 5))
    if kind == "well":
        return make_perturbation("well", start=desc["start"], end=desc["end"], depth=desc["depth"])
    return _potential(desc, base)[1]


def _boundary(value, spec: BarrierSpec | None) -> float:
    if value is None:
        return spec.boundary_h if spec is not None else DIRICHLET
    if isinstance(value, str):
        if value.lower() == "dirichlet":
            return DIRICHLET
        value = float(value)
    h = float(value)
    if math.isnan(h):
        raise ParameterError("boundary coefficient is NaN")
    return h


@dataclass
class Experiment:
    """A fully resolved manifest."""

    manifest: dict
    spec: BarrierSpec | None
    W: PiecewisePotential
    V: PiecewisePotential
    h: float
    energies: np.ndarray
    r_grid: np.ndarray
    r: float
    theta_points: int
    y_points: int
    nodes: int
    tolerances: dict
    out: Path
    digest: str = field(default="")


def merge(manifest: dict | None, overrides: dict | None = None) -> dict:
    """DEFAULTS < manifest < overrides (None-valued overrides are ignored)."""
    out = json.loads(json.dumps(DEFAULTS))
    for src in (manifest or {}, overrides or {}):
        for k, v in src.items():
            if v is None:
                continue
            if k not in DEFAULTS:
                raise ParameterError(f"unknown manifest key {k!r}")
            out[k] = v
    return out


def manifest_digest(manifest: dict) -> str:
    """Hash of everything that affects numbers; the output directory is excluded."""
    payload = {k: v for k, v in manifest.items() if k != "out"}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def resolve(manifest: dict | None = None, overrides: dict | None = None,
            base: Path | str = ".", with_perturbation: bool = True) -> Experiment:
    m = merge(manifest, overrides)
    base = Path(base)
    spec, W = _potential(m["potential"], base)
    V = _perturbation(m["perturbation"], spec, base) if with_perturbation else PiecewisePotential.zero()
    h = _boundary(m["boundary"], spec)
    energies = np.sort(_grid(m["energies"], "energies"))
    if np.any(energies <= 0):
        raise ParameterError("energies must be positive (a.c. spectrum is (0, inf))")
    r_grid = _grid(m["r_grid"], "r_grid")
    r = float(m["r"])
    tol = {k: float(v) for k, v in m["tolerances"].items()}
    if any(not v > 0 for v in tol.values()):
        raise ParameterError("tolerances must be positive")
    for key in ("theta_points", "y_points", "nodes"):
        if int(m[key]) < 1:
            raise ParameterError(f"{key} must be a positive integer")
    return Experiment(m, spec, W, V, h, energies, r_grid, r, int(m["theta_points"]),
                      int(m["y_points"]), int(m["nodes"]), tol, Path(m["out"]), manifest_digest(m))


def load_manifest(path: str | Path | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path(".")
    p = Path(path)
    if not p.exists():
        raise ParameterError(f"manifest {p} does not exist")
    return json.loads(p.read_text()), p.parent
