"""Eigenphase flow of S(z, r) and the invariants built from it.

Two paths are used.

y-path
    S(lam + iy, 1) for y running from y_max down to 0. Its lifted endpoint phases
    give xi = -(1/2pi) sum_j theta_j and Pushnitski's mu(theta).
r-path
    S(lam + i0, r) for r running from 0 to 1. Its lifted endpoint phases give
    xi^(a) and mu^(a). Resonance couplings r0 (where 1 + rJT_0(lam + i0) is singular)
    are excised: the branches on the two sides of [r0 - eps, r0 + eps] are connected by
    the nearest phase mod 2pi, which is what analytic continuation through a real pole
    does. With finitely many barriers the pole is a narrow quasi-bound state and the
    unexcised branch would wind once around the circle inside the window.

The singular part xi^(s) = xi - xi^(a) is then an integer, equal to -mu^(s).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .birman_schwinger import (DEFAULT_NODES, QuadratureGrid, SandwichedResolvent, assemble_T,
                               build_grid, perturbation_determinant, s_matrix, sqrt_psd)
from .errors import InconsistencyError, ParameterError, TrackingError
from .ode import DIRICHLET, ssf_counting_oracle
from .potentials import PiecewisePotential
from .resonance import ScanResult, scan_gamma

TWO_PI = 2.0 * math.pi
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MAX_DEPTH = 24
AMBIGUITY = 0.1
MIN_MOVE = 1e-3
TV_TOL = 1e-6
Y_MIN = 1e-6
EPS_BASE = 1e-2
EPS_LEVELS = 9


def _wrap(a):
    return (np.asarray(a) + math.pi) % TWO_PI - math.pi


def _eigs(sample) -> np.ndarray:
    ev = getattr(sample, "eigenvalues", sample)
    return np.asarray(ev, dtype=complex)


@dataclass
class PhaseBranches:
    """Continuous eigenphase branches; ``phases[k, j]`` is branch j at ``params[k]``."""

    params: np.ndarray
    phases: np.ndarray
    depths: np.ndarray
    kind: str = "y"
    window_increments: list = field(default_factory=list)

    @property
    def endpoints(self) -> np.ndarray:
        return self.phases[-1]

    @property
    def net_change(self) -> np.ndarray:
        return self.phases[-1] - self.phases[0]

    @property
    def total_variation(self) -> np.ndarray:
        return np.abs(np.diff(self.phases, axis=0)).sum(axis=0)

    def nontrivial(self, tol: float = TV_TOL) -> np.ndarray:
        return self.endpoints[self.total_variation > tol]

    @property
    def max_increment(self) -> float:
        if len(self.params) < 2:
            return 0.0
        return float(np.abs(np.diff(self.phases, axis=0)).max())

    def phase_sum(self) -> float:
        return float(self.endpoints.sum())


def _match(theta: np.ndarray, ev: np.ndarray, ambiguity: float, min_move: float):
    """Assign new eigenvalues to branches; returns (new theta, max |inc|, ambiguous)."""
    ang = np.angle(ev)
    D = np.abs(_wrap(ang[None, :] - theta[:, None]))
    rows, cols = linear_sum_assignment(D)
    order = np.empty_like(cols)
    order[rows] = cols
    inc = _wrap(ang[order] - theta)
    ambiguous = False
    if len(theta) > 1:
        d1 = np.abs(inc)
        Dm = D.copy()
        Dm[np.arange(len(theta)), order] = np.inf
        j2 = np.argmin(Dm, axis=1)
        d2 = Dm[np.arange(len(theta)), j2]
        sep = np.abs(_wrap(ang[j2] - ang[order]))
        ambiguous = bool(np.any((d2 - d1 < ambiguity) & (d1 > min_move) & (sep > min_move)))
    return theta + inc, float(np.max(np.abs(inc))) if len(inc) else 0.0, ambiguous


def _midpoint(a: float, b: float, geometric: bool) -> float:
    if geometric and a > 0 and b > 0:
        return math.sqrt(a * b)
    return 0.5 * (a + b)


def track_branches(sampler: Callable, grid: Sequence[float], initial: np.ndarray | None = None,
                   geometric: bool = False, max_depth: int = MAX_DEPTH,
                   ambiguity: float = AMBIGUITY, min_move: float = MIN_MOVE,
                   kind: str = "y") -> PhaseBranches:
    """Follow the eigenphases of ``sampler(t)`` continuously along ``grid``.

    ``sampler`` returns a ScatteringMatrixSample or an array of unimodular eigenvalues.
    Branches start at the principal angles of the first sample (or ``initial``). An
    interval is bisected while some increment is >= pi/2 or the assignment is
    ambiguous: a branch that moved by more than ``min_move`` has a second candidate
    within ``ambiguity`` rad of its best one.
    """
    grid = [float(t) for t in grid]
    if not grid:
        raise ParameterError("empty parameter grid")
    cache: dict[float, np.ndarray] = {}

    def ev(t):
        if t not in cache:
            cache[t] = _eigs(sampler(t))
        return cache[t]

    theta = np.angle(ev(grid[0])) if initial is None else np.asarray(initial, dtype=float)
    params, phases, depths = [grid[0]], [theta], [0]

    def step(t0, t1, th, depth):
        new, big, amb = _match(th, ev(t1), ambiguity, min_move)
        if big >= math.pi / 2 or amb:
            if depth >= max_depth:
                raise TrackingError(
                    f"eigenphase tracking did not resolve [{t0!r}, {t1!r}] after {max_depth} bisections",
                    (t0, t1))
            tm = _midpoint(t0, t1, geometric)
            th = step(t0, tm, th, depth + 1)
            return step(tm, t1, th, depth + 1)
        params.append(t1)
        phases.append(new)
        depths.append(depth)
        return new

    for t0, t1 in zip(grid[:-1], grid[1:]):
        theta = step(t0, t1, theta, 0)
    return PhaseBranches(np.array(params), np.array(phases), np.array(depths), kind)


def y_grid(lam: float, n_points: int = 48, y_min: float = Y_MIN) -> np.ndarray:
    """Geometric grid from 10^3 (1 + |lam|) down to y_min, followed by y = 0."""
    y_max = 1e3 * (1.0 + abs(lam))
    return np.append(np.geomspace(y_max, y_min, n_points), 0.0)


class ResolventCache:
    """T_0(lam + iy) and (Im T_0)^{1/2} on one grid, memoised per y.

    The background is W; the perturbation V only fixes the grid. S(z, r) for any r is
    formed from the cached pair, so y-paths at several couplings share assemblies.
    """

    def __init__(self, W: PiecewisePotential, V: PiecewisePotential, h: float, lam: float,
                 n_nodes: int = DEFAULT_NODES, grid: QuadratureGrid | None = None):
        if lam <= 0:
            raise ParameterError("energies must be positive")
        self.W, self.V, self.h, self.lam = W, V, h, float(lam)
        self.grid = build_grid(V, n_nodes, background=W) if grid is None else grid
        self._T: dict[float, SandwichedResolvent] = {}
        self._Bh: dict[float, np.ndarray] = {}

    def T(self, y: float) -> SandwichedResolvent:
        y = float(y)
        if y not in self._T:
            z = complex(self.lam, y) if y > 0 else self.lam
            self._T[y] = assemble_T(self.W, self.V, self.h, self.grid, z)
        return self._T[y]

    def Bh(self, y: float) -> np.ndarray:
        y = float(y)
        if y not in self._Bh:
            self._Bh[y] = sqrt_psd(self.T(y).B)
        return self._Bh[y]

    def sample(self, y: float, r: float):
        return s_matrix(self.T(y), r, Bh=self.Bh(y))

    def log_det(self, y: float, r: float) -> tuple[float, float]:
        return perturbation_determinant(self.T(y), r, log=True)


def y_path_branches(cache: ResolventCache, r: float = 1.0, n_points: int = 48) -> PhaseBranches:
    """Branches of S(lam + iy, r) from y_max to y = 0."""
    return track_branches(lambda y: cache.sample(y, r), y_grid(cache.lam, n_points),
                          geometric=True, kind="y")


def _lift(values: Sequence[float]) -> np.ndarray:
    return np.concatenate([[values[0]], values[0] + np.cumsum(_wrap(np.diff(values)))])


def xi_from_determinant(cache: ResolventCache, params: Sequence[float], r: float = 1.0) -> tuple[float, float]:
    """(1/pi) arg D(lam + iy) continued from y_max to 0 over ``params``.

    Returns (xi, largest arg increment); increments must stay below pi/2 for the lift
    to be meaningful, which the branch-tracking grid guarantees in practice.
    """
    args = [cache.log_det(y, r)[1] for y in params]
    lifted = _lift(np.array(args))
    inc = float(np.abs(np.diff(lifted)).max()) if len(lifted) > 1 else 0.0
    return float(lifted[-1] / math.pi), inc


def xi_from_y_path(lam: float, branches: PhaseBranches) -> float:
    """xi = -(1/2pi) sum_j theta_j(lam + i0, 1)."""
    return -float(branches.endpoints.sum()) / TWO_PI


def theta_grid(n: int = 32) -> np.ndarray:
    """n points on [0, 2pi) shifted by a golden-ratio fraction of the spacing."""
    return TWO_PI * (np.arange(n) + GOLDEN) / n


@dataclass
class MuInvariant:
    theta: np.ndarray
    values: np.ndarray
    flavor: str
    endpoints: np.ndarray = field(repr=False)

    def __call__(self, theta) -> np.ndarray:
        return _mu_values(np.atleast_1d(theta), self.endpoints)

    def integral(self) -> float:
        """Exact int_0^{2pi} mu dtheta of the piecewise-constant function (= sum_j theta_j)."""
        return float(np.sum(self.endpoints))

    def riemann(self) -> float:
        """Riemann sum on the theta-grid; off by up to 2pi/n per branch."""
        return float(np.mean(self.values) * TWO_PI)


def _mu_values(theta: np.ndarray, endpoints: np.ndarray) -> np.ndarray:
    if endpoints.size == 0:
        return np.zeros(theta.shape, dtype=np.int64)
    fl = np.floor((theta[:, None] - endpoints[None, :]) / TWO_PI)
    return (-fl.sum(axis=1)).astype(np.int64)


def mu_invariant(lam: float, branches: PhaseBranches, theta=None, flavor: str = "full") -> MuInvariant:
    """mu(theta) = -sum_j floor((theta - theta_j)/2pi) over branches that actually moved."""
    th = theta_grid() if theta is None else np.asarray(theta, dtype=float)
    ends = branches.nontrivial()
    return MuInvariant(th, _mu_values(th, ends), flavor, ends)


def mu_ac(lam: float, branches: PhaseBranches, theta=None) -> MuInvariant:
    """mu^(a) from the r-path branches at y = 0."""
    return mu_invariant(lam, branches, theta, flavor="ac")


# --------------------------------------------------------------------- r-path


def track_r_path(sampler: Callable, resonances: Sequence[float] = (), eps: float = EPS_BASE,
                 r_end: float = 1.0, n_initial: int = 32) -> PhaseBranches:
    """Branches of sampler(r) from 0 to r_end, excising [r0 - eps, r0 + eps] at each r0.

    The two sides of a window are joined by nearest-phase assignment without any
    refinement; the joining increments are stored in ``window_increments``.
    """
    windows = []
    for r0 in sorted(resonances):
        a, b = max(0.0, r0 - eps), min(r_end, r0 + eps)
        if windows and a <= windows[-1][1]:
            windows[-1] = (windows[-1][0], b)
        else:
            windows.append((a, b))
    pieces = []
    start = 0.0
    for a, b in windows:
        pieces.append((start, a))
        start = b
    pieces.append((start, r_end))

    params, phases, depths, incs = [], [], [], []
    theta = None
    for i, (a, b) in enumerate(pieces):
        if i > 0:
            prev = theta
            theta, _, _ = _match(prev, _eigs(sampler(a)), AMBIGUITY, MIN_MOVE)
            incs.append(float(np.max(np.abs(theta - prev))))
            params.append(a)
            phases.append(theta)
            depths.append(-1)
        if b > a:
            n = max(2, int(math.ceil(n_initial * (b - a) / max(r_end, 1e-300))) + 1)
            br = track_branches(sampler, np.linspace(a, b, n), initial=theta, kind="r")
            skip = 1 if params else 0
            params.extend(br.params[skip:])
            phases.extend(br.phases[skip:])
            depths.extend(br.depths[skip:])
            theta = br.phases[-1]
        elif theta is None:
            theta = np.angle(_eigs(sampler(a)))
            params.append(a)
            phases.append(theta)
            depths.append(0)
    return PhaseBranches(np.array(params), np.array(phases), np.array(depths), "r", incs)


@dataclass
class PathSegment:
    background: PiecewisePotential
    perturbation: PiecewisePotential
    branches: PhaseBranches | None
    scan: ScanResult | None
    eps: float

    @property
    def phase_sum(self) -> float:
        return 0.0 if self.branches is None else self.branches.phase_sum()


@dataclass
class XiAcResult:
    value: float
    segments: list[PathSegment]

    @property
    def endpoints(self) -> np.ndarray:
        parts = [s.branches.nontrivial() for s in self.segments if s.branches is not None]
        return np.concatenate(parts) if parts else np.zeros(0)


def _segment(lam, P0, P1, h, n_nodes, eps, resonances=None) -> PathSegment:
    U = P1 - P0
    if U.is_zero:
        return PathSegment(P0, U, None, None, eps)
    T0 = assemble_T(P0, U, h, build_grid(U, n_nodes, background=P0), lam)
    scan = scan_gamma(lam, P0, U, h, T0=T0)
    r0s = [p.r0 for p in scan.points] if resonances is None else list(resonances)
    Bh = sqrt_psd(T0.B)
    br = track_r_path(lambda r: s_matrix(T0, r, Bh=Bh), r0s, eps)
    return PathSegment(P0, U, br, scan, eps)


def xi_ac(lam: float, path: Sequence[PiecewisePotential], h: float = DIRICHLET,
          n_nodes: int = DEFAULT_NODES, eps: float = EPS_BASE) -> XiAcResult:
    """-(1/2pi) sum of r-continuous on-shell eigenphases accumulated along a piecewise-linear path.

    ``path`` lists the vertices H_0 = W, ..., H_1 as potentials; the scattering phases
    of consecutive segments add because on-shell S matrices of one channel multiply.
    """
    if len(path) < 2:
        return XiAcResult(0.0, [])
    segs = [_segment(lam, P0, P1, h, n_nodes, eps) for P0, P1 in zip(path[:-1], path[1:])]
    total = sum(s.phase_sum for s in segs)
    return XiAcResult(-total / TWO_PI, segs)


# ---------------------------------------------------------- two-sided limits


@dataclass
class ResonanceJump:
    r0: float
    eps: float
    jump: float            # sum of y-limit phases at r0 + eps minus at r0 - eps
    m: int                 # jump / 2pi rounded
    deviation: float       # jump - 2 pi m
    r_increment: float     # wrapped on-shell phase change across the window
    sequence: list = field(default_factory=list)  # (eps, jump) for every level

    @property
    def jump_over_2pi(self) -> float:
        return self.jump / TWO_PI


def two_sided_jump(cache: ResolventCache, r0: float, eps_base: float = EPS_BASE,
                   levels: int = EPS_LEVELS, n_points: int = 48,
                   agree: float = 1e-2 * TWO_PI) -> ResonanceJump:
    """y-limit eigenphase sums at r0 +- eps for eps = eps_base 2^-k, k < levels.

    jump(eps) = 2pi m + drift O(eps) + resonance tail O(width/eps). Levels are computed
    from the widest window down until two consecutive ones agree within ``agree``;
    of that pair the one closer to a multiple of 2pi is reported.
    """
    seq = []
    prev = None
    for k in range(levels):
        eps = eps_base * 2.0 ** (-k)
        lo, hi = r0 - eps, r0 + eps
        if lo < 0 or hi > 1:
            continue
        jump = (y_path_branches(cache, hi, n_points).phase_sum()
                - y_path_branches(cache, lo, n_points).phase_sum())
        seq.append((eps, jump))
        if prev is not None and abs(jump - prev[1]) < agree:
            cands = [prev, (eps, jump)]
            eps, jump = min(cands, key=lambda c: abs(c[1] - TWO_PI * round(c[1] / TWO_PI)))
            m = int(round(jump / TWO_PI))
            a = cache.sample(0.0, r0 - eps).eigenvalues
            b = cache.sample(0.0, r0 + eps).eigenvalues
            r_inc = float(abs(_wrap(np.angle(np.prod(b)) - np.angle(np.prod(a)))))
            return ResonanceJump(r0, eps, jump, m, jump - TWO_PI * m, r_inc, seq)
        prev = (eps, jump)
    if not seq:
        raise ParameterError(
            f"resonance at r0={r0} is closer than {eps_base * 2.0 ** (1 - levels):.3g} to an endpoint")
    raise InconsistencyError(f"two-sided limits at r0={r0} never reached a plateau",
                             {"sequence": seq})


# ------------------------------------------------------------------ breakdown


@dataclass
class SsfBreakdown:
    lam: float
    xi: float
    xi_det: float
    xi_ac: float
    xi_s: float
    mu_s: int
    mu_s_jumps: int
    residual_integer: float
    residual_identity: float
    residual_mu: float
    residual_mu_ac: float
    oracle_xi: float
    oracle_residual: float
    resonances: list
    jumps: list
    mu_diff_constant: bool
    resonant: bool
    notes: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    mu_values: list = field(default_factory=list)
    mu_ac_values: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jumps"] = [{k: v for k, v in asdict(j).items() if k != "sequence"} for j in self.jumps]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def xi_breakdown(lam: float, W: PiecewisePotential, V: PiecewisePotential, h: float = DIRICHLET,
                 n_nodes: int = DEFAULT_NODES, theta=None, with_oracle: bool = True,
                 with_jumps: bool = True, n_y: int = 48) -> SsfBreakdown:
    """All SSF quantities at one energy for the straight path W -> W + V."""
    th = theta_grid() if theta is None else np.asarray(theta, dtype=float)
    if V.is_zero:
        zeros = [0] * len(th)
        return SsfBreakdown(lam, 0.0, 0.0, 0.0, 0.0, 0, 0, 0.0, 0.0, 0.0, 0.0,
                            0.0, 0.0, [], [], True, False, [], th.tolist(), zeros, zeros)
    notes = []
    cache = ResolventCache(W, V, h, lam, n_nodes)
    T0 = cache.T(0.0)
    scan = scan_gamma(lam, W, V, h, T0=T0)
    interior = [p for p in scan.points if not p.boundary]
    resonant = bool(scan.unmatched_shooting_roots) or any(p.boundary for p in scan.points)
    if resonant:
        notes.append("resonance at an endpoint or undetected shooting zero")

    yb = y_path_branches(cache, 1.0, n_y)
    xi = xi_from_y_path(lam, yb)
    xi_det, det_inc = xi_from_determinant(cache, yb.params, 1.0)
    if det_inc >= math.pi / 2:
        notes.append("determinant argument lift had an increment >= pi/2")
    mu = mu_invariant(lam, yb, th)

    jumps = []
    eps = EPS_BASE
    if with_jumps:
        for p in interior:
            try:
                jumps.append(two_sided_jump(cache, p.r0))
            except (ParameterError, InconsistencyError) as exc:
                notes.append(f"two-sided limit at r0={p.r0:.6g}: {exc}")
                resonant = True
        if jumps:
            eps = min(j.eps for j in jumps)
    Bh = cache.Bh(0.0)
    rb = track_r_path(lambda r: s_matrix(T0, r, Bh=Bh), [p.r0 for p in interior], eps)
    xa = -rb.phase_sum() / TWO_PI
    mua = mu_ac(lam, rb, th)

    diff = mu.values - mua.values
    constant = bool(np.all(diff == diff[0]))
    mu_s = int(diff[0])
    mu_s_jumps = int(sum(j.m for j in jumps))
    xi_s = xi - xa
    if with_jumps and not resonant and mu_s != mu_s_jumps:
        raise InconsistencyError(
            f"mu_s from mu - mu_a ({mu_s}) differs from the jump sum ({mu_s_jumps}) at lam={lam}",
            {"lam": lam, "mu_s": mu_s, "mu_s_jumps": mu_s_jumps,
             "jumps": [(j.r0, j.jump) for j in jumps]})

    oracle_xi = float("nan")
    oracle_res = float("nan")
    if with_oracle:
        o = ssf_counting_oracle(W, V, h, lam)
        oracle_xi = o.xi
        oracle_res = abs(xi - o.xi)

    return SsfBreakdown(
        lam=float(lam), xi=xi, xi_det=xi_det, xi_ac=xa, xi_s=xi_s, mu_s=mu_s,
        mu_s_jumps=mu_s_jumps,
        residual_integer=abs(xi_s - round(xi_s)),
        residual_identity=abs(xi_s + mu_s),
        residual_mu=abs(xi_det + mu.integral() / TWO_PI),
        residual_mu_ac=abs(xa + mua.integral() / TWO_PI),
        oracle_xi=oracle_xi, oracle_residual=oracle_res,
        resonances=[p.r0 for p in scan.points], jumps=jumps,
        mu_diff_constant=constant, resonant=resonant, notes=notes, theta=th.tolist(),
        mu_values=[int(v) for v in mu.values], mu_ac_values=[int(v) for v in mua.values])
