"""Resonance set gamma_lam = {r in [0, 1] : 1 + r J T_0(lam + i0) is singular}.

Two detectors are compared:

* the smallest singular value of 1 + r J T_0(lam + i0) (Fredholm criterion);
* a shooting residual: the sine of the angle between the boundary-condition solution
  of H_r psi = lam psi and the solution decaying into the last barrier continued to
  infinity. For the barrier construction this is exactly the square-integrability
  condition of the infinite chain.

With finitely many barriers both detectors see exponentially narrow quasi-bound
states rather than exact zeros, so detections are relative to the off-resonance
plateau of the singular value.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .birman_schwinger import (DEFAULT_NODES, SandwichedResolvent, assemble_T, build_grid,
                               min_singular_value)
from .errors import DegenerateDetectionError, ParameterError
from .ode import DIRICHLET, transfer_product
from .potentials import PiecewisePotential

DETECT_REL = 1e-3
CERTIFY_MARGIN = 1e-2
REFINE_TOL = 1e-8
MERGE_DIST = 1e-4
MATCH_TOL = 1e-4
DEGENERATE_WIDTH = 1e-3
BOUNDARY_SHOOTING = 1e-8


@dataclass(frozen=True)
class ResonancePoint:
    lam: float
    r0: float
    sigma_min: float
    shooting_residual: float
    certified: bool
    shooting_r0: float | None = None
    multiplicity: int = 1
    boundary: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScanResult:
    lam: float
    points: list[ResonancePoint]
    r_grid: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    plateau: float
    min_sigma: float
    shooting_roots: list[float]

    @property
    def certified_empty(self) -> bool:
        return not self.points and not self.shooting_roots and self.min_sigma > CERTIFY_MARGIN

    @property
    def r0s(self) -> list[float]:
        return [p.r0 for p in self.points]

    @property
    def interior(self) -> list[ResonancePoint]:
        return [p for p in self.points if not p.boundary]

    @property
    def unmatched_shooting_roots(self) -> list[float]:
        """Shooting zeros with no singular-value detection within MATCH_TOL."""
        return [x for x in self.shooting_roots
                if not any(abs(x - p.r0) < MATCH_TOL for p in self.points)]


def min_singular(lam: float, r: float, T0: SandwichedResolvent) -> float:
    """Smallest singular value of 1 + r J T_0(lam + i0)."""
    if abs(T0.z - lam) > 1e-12 * max(1.0, abs(lam)):
        raise ParameterError(f"T0 was assembled at z={T0.z}, not at lam={lam}")
    return min_singular_value(T0, r)


def _coupled(W: PiecewisePotential, V: PiecewisePotential, r: float) -> PiecewisePotential:
    return W if r == 0 else W + V.scaled(r)


def signed_shooting_residual(W, V, h: float, lam: float, r: float) -> float:
    """Signed version of ``shooting_residual``; changes sign at every zero.

    The reference solution at the end of the support is (1, -kappa) with
    kappa = sqrt(v_last - lam) when the last nonzero segment has height v_last > lam,
    i.e. the solution that keeps decaying if that segment is continued. Otherwise the
    outgoing solution (1, i k) is used and the residual is the (never vanishing)
    modulus of the normalised Jost function.
    """
    if lam <= 0:
        raise ParameterError("shooting needs lam > 0")
    H = _coupled(W, V, r)
    x_end = H.support_end
    start = np.array([0.0, 1.0]) if math.isinf(h) else np.array([1.0, h])
    M, _, _ = transfer_product(H, complex(lam), 0.0, x_end)
    v = M @ start
    segs = H.nonzero_segments()
    v_last = segs[-1][2] if segs else 0.0
    if v_last > lam:
        kappa = math.sqrt(v_last - lam)
        v = v.real
        return float((v[1] + kappa * v[0]) / (np.linalg.norm(v) * math.hypot(1.0, kappa)))
    k = math.sqrt(lam)
    return float(abs(v[1] - 1j * k * v[0]) / (np.linalg.norm(v) * math.hypot(1.0, k)))


def shooting_residual(W, V, h: float, lam: float, r: float) -> float:
    """Normalised Wronskian mismatch in [0, 1]; 0 iff H_r psi = lam psi has a decaying solution."""
    return abs(signed_shooting_residual(W, V, h, lam, r))


def shooting_roots(W, V, h: float, lam: float, r_grid) -> list[float]:
    """Zeros in r of the signed shooting residual, bracketed on ``r_grid``."""
    rs = np.asarray(r_grid, dtype=float)
    vals = np.array([signed_shooting_residual(W, V, h, lam, r) for r in rs])
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]:
        if vals[i] == 0.0:
            roots.append(float(rs[i]))
            continue
        if vals[i + 1] == 0.0:
            continue
        roots.append(float(optimize.brentq(
            lambda r: signed_shooting_residual(W, V, h, lam, r), rs[i], rs[i + 1], xtol=1e-13)))
    return roots


def _refine_minimum(fn, lo: float, hi: float) -> tuple[float, float]:
    res = optimize.minimize_scalar(fn, bounds=(lo, hi), method="bounded",
                                   options={"xatol": REFINE_TOL})
    r = float(res.x)
    # the bounded search never evaluates the bracket ends; keep them if lower
    best = min(((fn(lo), lo), (fn(hi), hi), (float(res.fun), r)))
    return best[1], best[0]


def _threshold_width(fn, r0: float, thr: float, lo: float, hi: float) -> tuple[float, float]:
    """Interval around r0 on which fn < thr, clipped to [lo, hi]."""
    left, right = lo, hi
    if fn(lo) >= thr:
        left = optimize.brentq(lambda r: fn(r) - thr, lo, r0, xtol=1e-12)
    if fn(hi) >= thr:
        right = optimize.brentq(lambda r: fn(r) - thr, r0, hi, xtol=1e-12)
    return left, right


def scan_gamma(lam: float, W: PiecewisePotential, V: PiecewisePotential, h: float = DIRICHLET,
               r_grid=None, n_nodes: int = DEFAULT_NODES, T0: SandwichedResolvent | None = None,
               r_range: tuple[float, float] = (0.0, 1.0)) -> ScanResult:
    """Locate gamma_lam on ``r_range`` and cross-check every detection by shooting."""
    if lam <= 0:
        raise ParameterError("scan_gamma needs lam > 0")
    lo, hi = r_range
    rs = np.linspace(lo, hi, 201) if r_grid is None else np.asarray(r_grid, dtype=float)
    if V.is_zero:
        return ScanResult(lam, [], rs, np.ones_like(rs), 1.0, 1.0, [])
    if T0 is None:
        T0 = assemble_T(W, V, h, build_grid(V, n_nodes, background=W), lam)

    def sigma(r):
        return min_singular_value(T0, r)

    s = np.array([sigma(r) for r in rs])
    plateau = float(np.median(s))
    thr = DETECT_REL * plateau

    # local minima, endpoints included; each refined inside its bracketing cell
    cands = []
    for i in range(len(rs)):
        left = s[i - 1] if i > 0 else np.inf
        right = s[i + 1] if i + 1 < len(rs) else np.inf
        if s[i] <= left and s[i] <= right:
            a, b = rs[max(i - 1, 0)], rs[min(i + 1, len(rs) - 1)]
            cands.append(_refine_minimum(sigma, a, b))
    min_sigma = float(min([s.min()] + [c[1] for c in cands]))

    hits = sorted((r, sm) for r, sm in cands if sm < thr)
    sroots = shooting_roots(W, V, h, lam, rs)
    points: list[ResonancePoint] = []
    for r0, sm in hits:
        left, right = _threshold_width(sigma, r0, thr, lo, hi)
        if right - left > DEGENERATE_WIDTH:
            raise DegenerateDetectionError(
                f"1 + rJT0 stays near-singular on [{left:.6g}, {right:.6g}] at lam={lam}; "
                "refine the r-grid or move lam off a persistent eigenvalue",
                lam, (left, right))
        if points and r0 - points[-1].r0 < MERGE_DIST:
            p = points[-1]
            keep = (r0, sm) if sm < p.sigma_min else (p.r0, p.sigma_min)
            points[-1] = ResonancePoint(lam, keep[0], keep[1], p.shooting_residual, p.certified,
                                        p.shooting_r0, p.multiplicity + 1)
            continue
        near = [x for x in sroots if abs(x - r0) < 10 * DEGENERATE_WIDTH]
        r_sh = min(near, key=lambda x: abs(x - r0)) if near else None
        certified = r_sh is not None and abs(r_sh - r0) < MATCH_TOL
        points.append(ResonancePoint(lam, float(r0), float(sm),
                                     shooting_residual(W, V, h, lam, r0), bool(certified),
                                     r_sh, 1))
    # 1 + 0 JT0 is the identity, so an eigenvalue of H_0 itself (r0 = 0) is invisible to
    # the singular value; it shows up as a vanishing shooting residual at the endpoint.
    for end in (lo, hi):
        if end == 0.0 and not any(abs(p.r0 - end) < MERGE_DIST for p in points):
            res = shooting_residual(W, V, h, lam, end)
            if res < BOUNDARY_SHOOTING:
                points.append(ResonancePoint(lam, float(end), float(sigma(end)), res, False,
                                             float(end), 1, True))
                if not any(abs(x - end) < MATCH_TOL for x in sroots):
                    sroots.append(float(end))
    points.sort(key=lambda p: p.r0)
    sroots.sort()
    return ScanResult(lam, points, rs, s, plateau, min_sigma, sroots)


def sigma_heatmap(lams, rs, W: PiecewisePotential, V: PiecewisePotential, h: float = DIRICHLET,
                  n_nodes: int = DEFAULT_NODES) -> np.ndarray:
    """sigma_min of 1 + rJT0(lam + i0) on the product grid, shape (len(lams), len(rs))."""
    lams = np.asarray(lams, dtype=float)
    rs = np.asarray(rs, dtype=float)
    out = np.empty((len(lams), len(rs)))
    if V.is_zero:
        out.fill(1.0)
        return out
    grid = build_grid(V, n_nodes, background=W)
    for i, lam in enumerate(lams):
        T0 = assemble_T(W, V, h, grid, lam)
        out[i] = [min_singular_value(T0, r) for r in rs]
    return out
