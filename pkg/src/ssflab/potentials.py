"""Step potentials on the half-line and the barrier construction with an embedded eigenvalue.

Units are dimensionless with hbar = 2m = 1, so the operator is -d^2/dx^2 + W(x)
and a free particle of energy lam has wavenumber sqrt(lam).

The barrier potential W places barriers of height w on [a_n, b_n], n = 1..N, with
widths n**-s and gaps of exactly one free wavelength 2*pi/sqrt(lam_star).  Together
with the Robin condition psi'(0) = -sqrt(w - lam_star) psi(0) the solution at
lam_star enters every barrier as a pure decaying exponential and crosses every gap
with unchanged log-derivative, so its amplitude only ever decreases.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .errors import ParameterError


@dataclass(frozen=True)
class PiecewisePotential:
    """Finitely many constant segments followed by an identically zero tail.

    ``values[i]`` is the height on ``[breakpoints[i], breakpoints[i+1])``.  The
    potential is 0 left of ``breakpoints[0]`` and from ``support_end`` on.
    """

    breakpoints: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    support_end: float = 0.0

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        if not bp:
            if vals:
                raise ParameterError("values given without breakpoints")
            object.__setattr__(self, "support_end", float(self.support_end))
            return
        if len(vals) != len(bp) - 1:
            raise ParameterError("need exactly one value per segment (len(values) == len(breakpoints) - 1)")
        if not all(math.isfinite(b) for b in bp) or not all(math.isfinite(v) for v in vals):
            raise ParameterError("breakpoints and heights must be finite")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ParameterError("breakpoints must be strictly increasing")
        if bp[0] < 0:
            raise ParameterError("potential lives on the half-line x >= 0")
        object.__setattr__(self, "support_end", bp[-1])

    @classmethod
    def zero(cls) -> "PiecewisePotential":
        return cls()

    @classmethod
    def step(cls, start: float, end: float, height: float) -> "PiecewisePotential":
        return cls((start, end), (height,))

    @property
    def is_zero(self) -> bool:
        return not any(v != 0.0 for v in self.values)

    @property
    def support_start(self) -> float:
        """Left end of the first segment carrying a nonzero height (0 for the zero potential)."""
        for x, v in zip(self.breakpoints, self.values):
            if v != 0.0:
                return x
        return 0.0

    def __call__(self, x):
        return evaluate_potential(self, x)

    def __add__(self, other: "PiecewisePotential") -> "PiecewisePotential":
        if not isinstance(other, PiecewisePotential):
            return NotImplemented
        if not self.breakpoints:
            return other
        if not other.breakpoints:
            return self
        bp = np.union1d(np.asarray(self.breakpoints), np.asarray(other.breakpoints))
        mids = 0.5 * (bp[:-1] + bp[1:])
        vals = evaluate_potential(self, mids) + evaluate_potential(other, mids)
        return PiecewisePotential(tuple(bp), tuple(vals))

    def __sub__(self, other: "PiecewisePotential") -> "PiecewisePotential":
        return self + other.scaled(-1.0)

    def scaled(self, factor: float) -> "PiecewisePotential":
        return PiecewisePotential(self.breakpoints, tuple(factor * v for v in self.values))

    def segments(self) -> list[tuple[float, float, float]]:
        """(start, end, height) for every stored segment, zero-height ones included."""
        return [(a, b, v) for a, b, v in zip(self.breakpoints, self.breakpoints[1:], self.values)]

    def nonzero_segments(self) -> list[tuple[float, float, float]]:
        return [s for s in self.segments() if s[2] != 0.0]

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "breakpoints": list(self.breakpoints),
            "values": list(self.values),
            "support_end": self.support_end,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PiecewisePotential":
        pot = cls(tuple(data["breakpoints"]), tuple(data["values"]))
        if "support_end" in data and float(data["support_end"]) != pot.support_end:
            raise ParameterError("support_end disagrees with the last breakpoint")
        return pot

    def to_json(self) -> str:
        # repr of a Python float round-trips exactly, so json keeps every bit
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PiecewisePotential":
        return cls.from_dict(json.loads(text))


def evaluate_potential(P: PiecewisePotential, x):
    """Exact segment lookup; scalar in, float out; array in, array out."""
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0):
        raise ParameterError("evaluate_potential needs x >= 0")
    out = np.zeros_like(xs)
    if P.breakpoints:
        bp = np.asarray(P.breakpoints)
        idx = np.searchsorted(bp, xs, side="right") - 1
        inside = (idx >= 0) & (idx < len(P.values))
        vals = np.asarray(P.values)
        out[inside] = vals[idx[inside]]
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class BarrierSpec:
    """Layout of the tuned barrier potential (barrier indexing starts at n = 1)."""

    lambda_star: float
    w: float
    s: float
    barriers: tuple[tuple[float, float], ...]
    boundary_h: float

    @property
    def kappa(self) -> float:
        return math.sqrt(self.w - self.lambda_star)

    @property
    def wavelength(self) -> float:
        return 2.0 * math.pi / math.sqrt(self.lambda_star)

    def gaps(self) -> list[tuple[float, float]]:
        return [(b, a) for (_, b), (a, _) in zip(self.barriers, self.barriers[1:])]

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "w": self.w,
            "s": self.s,
            "barriers": [list(ab) for ab in self.barriers],
            "boundary_h": self.boundary_h,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BarrierSpec":
        return cls(
            float(data["lambda_star"]),
            float(data["w"]),
            float(data["s"]),
            tuple((float(a), float(b)) for a, b in data["barriers"]),
            float(data["boundary_h"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BarrierSpec":
        return cls.from_dict(json.loads(text))


def build_vnw_potential(lambda_star: float, w: float, s: float, n_barriers: int) -> tuple[BarrierSpec, PiecewisePotential]:
    """Barrier potential whose Robin problem has lambda_star as an (embedded) eigenvalue.

    >>> spec, W = build_vnw_potential(1.0, 2.0, 0.75, 3)
    >>> spec.boundary_h
    -1.0
    >>> W(0.5)
    2.0
    """
    if not (0 < lambda_star < w):
        raise ParameterError(f"need 0 < lambda_star < w, got lambda_star={lambda_star}, w={w}")
    if not s > 0.5:
        raise ParameterError(f"width exponent must satisfy s > 1/2 for a short-range potential, got s={s}")
    if n_barriers < 0 or int(n_barriers) != n_barriers:
        raise ParameterError("n_barriers must be a non-negative integer")
    gap = 2.0 * math.pi / math.sqrt(lambda_star)
    kappa = math.sqrt(w - lambda_star)
    barriers = []
    a = 0.0
    for n in range(1, int(n_barriers) + 1):
        b = a + n ** (-s)
        barriers.append((a, b))
        a = b + gap
    spec = BarrierSpec(float(lambda_star), float(w), float(s), tuple(barriers), -kappa)
    if not barriers:
        return spec, PiecewisePotential.zero()
    bp = [x for ab in barriers for x in ab]
    # heights alternate w (barrier), 0 (gap), w, ...
    vals = [float(w) if i % 2 == 0 else 0.0 for i in range(len(bp) - 1)]
    return spec, PiecewisePotential(tuple(bp), tuple(vals))


def make_perturbation(kind: str, **params) -> PiecewisePotential:
    """Compactly supported step perturbations V.

    kinds:
      ``gap_bump``: ``center``, ``width``, ``height``
      ``well``: ``start``, ``end``, ``depth`` (the height is ``depth``, normally negative)
      ``barrier_scale``: ``spec`` (BarrierSpec), ``factor``, ``n_barriers`` (default 5)
    """
    if kind == "gap_bump":
        c, width, height = float(params["center"]), float(params["width"]), float(params["height"])
        if width <= 0 or height == 0:
            raise ParameterError("gap_bump needs positive width and nonzero height")
        if c - width / 2 < 0:
            raise ParameterError("gap_bump must lie in x >= 0")
        return PiecewisePotential.step(c - width / 2, c + width / 2, height)
    if kind == "well":
        start, end, depth = float(params["start"]), float(params["end"]), float(params["depth"])
        if end <= start or depth == 0:
            raise ParameterError("well needs end > start and nonzero depth")
        return PiecewisePotential.step(start, end, depth)
    if kind == "barrier_scale":
        spec: BarrierSpec = params["spec"]
        factor = float(params["factor"])
        n = int(params.get("n_barriers", 5))
        chosen = spec.barriers[:n]
        if not chosen or factor == 0:
            raise ParameterError("barrier_scale produced an empty support")
        pot = PiecewisePotential.zero()
        for a, b in chosen:
            pot = pot + PiecewisePotential.step(a, b, factor * spec.w)
        return pot
    raise ParameterError(f"unknown perturbation kind {kind!r}")


def potential_from_steps(steps: Iterable[Sequence[float]]) -> PiecewisePotential:
    """Sum of (start, end, height) steps."""
    pot = PiecewisePotential.zero()
    for a, b, v in steps:
        pot = pot + PiecewisePotential.step(a, b, v)
    return pot


@dataclass
class ShootingReport:
    entry_logderiv_residuals: np.ndarray
    amplitude_ratios: np.ndarray
    decay_fit_exponent: float
    decay_fit_scale: float
    l2_tail_estimate: float
    partial_l2: np.ndarray = field(repr=False)
    entry_log_amplitudes: np.ndarray = field(repr=False)
    l2_divergent: bool = False

    def to_dict(self) -> dict:
        return {
            "entry_logderiv_residuals": self.entry_logderiv_residuals.tolist(),
            "amplitude_ratios": self.amplitude_ratios.tolist(),
            "decay_fit_exponent": self.decay_fit_exponent,
            "decay_fit_scale": self.decay_fit_scale,
            "l2_tail_estimate": self.l2_tail_estimate,
            "partial_l2": self.partial_l2.tolist(),
            "entry_log_amplitudes": self.entry_log_amplitudes.tolist(),
            "l2_divergent": self.l2_divergent,
        }


def _segment_l2(psi0: float, dpsi0: float, q2: float, length: float, n_nodes: int = 24) -> float:
    """Integral of psi^2 over one constant segment, psi started from (psi0, dpsi0)."""
    from .ode import transfer_matrix

    t, wts = np.polynomial.legendre.leggauss(n_nodes)
    total = 0.0
    # split long oscillatory segments so the rule stays exact to rounding
    pieces = max(1, int(math.ceil(length * math.sqrt(abs(q2)) / 4.0)))
    h = length / pieces
    state = np.array([psi0, dpsi0], dtype=complex)
    for _ in range(pieces):
        xs = 0.5 * h * (t + 1.0)
        vals = np.array([(transfer_matrix(0.0, x, q2) @ state)[0].real for x in xs])
        total += 0.5 * h * float(np.dot(wts, vals * vals))
        state = transfer_matrix(0.0, h, q2) @ state
    return total


def _real_transfer_ld(q2: float, length: float) -> np.ndarray:
    """Real transfer matrix in extended precision (the shooting check runs at real energy)."""
    q2 = np.longdouble(q2)
    ell = np.longdouble(length)
    if q2 > 0:
        q = np.sqrt(q2)
        c, s = np.cos(q * ell), np.sin(q * ell)
        return np.array([[c, s / q], [-q * s, c]])
    if q2 < 0:
        kap = np.sqrt(-q2)
        c, s = np.cosh(kap * ell), np.sinh(kap * ell)
        return np.array([[c, s / kap], [kap * s, c]])
    one = np.longdouble(1)
    return np.array([[one, ell], [0 * one, one]])


def _decay_fit(xs: np.ndarray, log_amp: np.ndarray) -> tuple[float, float]:
    """Fit log|psi| = C - c x**p; returns (p, c)."""

    def model(x, C, c, p):
        return C - c * np.power(x, p)

    p0 = (log_amp[0], 1.0, 0.5)
    try:
        popt, _ = curve_fit(
            model, xs, log_amp, p0=p0,
            bounds=([-np.inf, 1e-12, 1e-3], [np.inf, np.inf, 3.0]),
            maxfev=20000,
        )
    except RuntimeError:
        return 0.0, 0.0
    return float(popt[2]), float(popt[1])


def verify_embedded_eigenvalue(P: PiecewisePotential, spec: BarrierSpec) -> ShootingReport:
    """Shoot the Robin solution at lambda_star across the barrier layout.

    The solution is carried as a unit vector (psi, psi') plus an accumulated log-amplitude,
    so 50+ barriers never underflow.
    """
    lam = spec.lambda_star
    n = len(spec.barriers)
    if n == 0:
        return ShootingReport(
            entry_logderiv_residuals=np.zeros(0),
            amplitude_ratios=np.zeros(0),
            decay_fit_exponent=0.0,
            decay_fit_scale=0.0,
            l2_tail_estimate=math.inf,
            partial_l2=np.zeros(0),
            entry_log_amplitudes=np.zeros(0),
            l2_divergent=True,
        )

    state = np.array([1.0, spec.boundary_h], dtype=np.longdouble)
    log_scale = 0.0
    x = 0.0
    residuals = np.empty(n)
    ratios = np.empty(n)
    entry_log_amp = np.empty(n)
    partial = np.empty(n)
    l2 = 0.0

    def advance(state, log_scale, height, length, l2):
        q2 = lam - height
        l2 += math.exp(2 * log_scale) * _segment_l2(float(state[0]), float(state[1]), q2, length)
        new = _real_transfer_ld(q2, length) @ state
        nrm = np.hypot(new[0], new[1])
        return new / nrm, log_scale + float(np.log(nrm)), l2

    for i, (a, b) in enumerate(spec.barriers):
        if a > x:
            # free stretch (also any lead-in before the first barrier)
            heights = P(np.array([0.5 * (x + a)]))[0]
            state, log_scale, l2 = advance(state, log_scale, heights, a - x, l2)
        partial[i] = l2
        entry_log_amp[i] = log_scale + float(np.log(abs(state[0])))
        residuals[i] = float(abs(state[1] / state[0] + np.sqrt(np.longdouble(spec.w) - np.longdouble(lam))))
        height = P(np.array([0.5 * (a + b)]))[0]
        state, log_scale, l2 = advance(state, log_scale, height, b - a, l2)
        exit_log_amp = log_scale + float(np.log(abs(state[0])))
        ratios[i] = math.exp(exit_log_amp - entry_log_amp[i])
        x = b

    keep = slice(int(math.floor(0.25 * n)), n)
    xs = np.array([a for a, _ in spec.barriers])[keep]
    ys = entry_log_amp[keep]
    if len(xs) >= 4 and xs[0] > 0:
        p, c = _decay_fit(xs, ys)
    else:
        p, c = 0.0, 0.0
    increments = np.diff(partial)
    tail = increments[len(increments) // 2:]
    divergent = not (len(tail) >= 2 and np.all(np.diff(tail) < 0))
    return ShootingReport(
        entry_logderiv_residuals=residuals,
        amplitude_ratios=ratios,
        decay_fit_exponent=p,
        decay_fit_scale=c,
        l2_tail_estimate=l2,
        partial_l2=partial,
        entry_log_amplitudes=entry_log_amp,
        l2_divergent=divergent,
    )
