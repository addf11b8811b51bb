"""Exact solutions of -psi'' + V psi = z psi for step potentials.

Everything here is closed form per constant segment: 2x2 transfer matrices, the
regular (boundary-condition) solution, the Jost solution that equals e^{ikx} beyond
the support, the resolvent kernel built from the two, and Pruefer-angle eigenvalue
counting.  Amplitudes are carried as (unit vector, log-scale) pairs so that long
supports or large Im z never overflow.

The momentum is always taken on the physical sheet, Im k >= 0; on the real axis
with lam > 0 this is k = +sqrt(lam), i.e. the boundary value from the upper
half-plane (outgoing solution).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EigenvalueProximityError, UnsupportedEnergyError

# Robin coefficient meaning psi(0) = 0.
DIRICHLET = math.inf

SERIES_CUTOFF = 1e-4
WRONSKIAN_FLOOR = 1e-13


class ComplexEnergy(NamedTuple):
    lam: float
    y: float = 0.0

    @property
    def z(self) -> complex:
        return complex(self.lam, self.y)


def as_complex(z) -> complex:
    if isinstance(z, ComplexEnergy):
        return z.z
    return complex(z)


def momentum(z) -> complex:
    """sqrt(z) on the physical sheet, Im k >= 0 (k = +sqrt(lam) for real lam > 0)."""
    z = as_complex(z)
    k = cmath.sqrt(z)
    if k.imag < 0 or (k.imag == 0 and k.real < 0):
        k = -k
    return k


def _scaled_transfer(q2, length):
    """Transfer matrices over ``length`` at q^2 = z - V, returned as (M_hat, log_scale).

    Works on arrays: ``q2`` and ``length`` broadcast, output shape (..., 2, 2).
    The true matrix is M_hat * exp(log_scale).
    """
    q2 = np.asarray(q2, dtype=complex)
    length = np.asarray(length, dtype=float)
    q2, length = np.broadcast_arrays(q2, length)
    q = np.sqrt(q2)
    u = q * length
    small = np.abs(u) < SERIES_CUTOFF
    out = np.empty(q2.shape + (2, 2), dtype=complex)
    ls = np.zeros(q2.shape)

    if np.any(small):
        u2 = (q2 * length * length)[small]
        ell = length[small]
        c = 1 - u2 / 2 + u2 * u2 / 24
        sq = ell * (1 - u2 / 6 + u2 * u2 / 120)
        out[small, 0, 0] = c
        out[small, 0, 1] = sq
        out[small, 1, 0] = -q2[small] * sq
        out[small, 1, 1] = c
    big = ~small
    if np.any(big):
        ub = u[big]
        qb = q[big]
        b = np.abs(ub.imag)
        e1 = np.exp(1j * ub - b)
        e2 = np.exp(-1j * ub - b)
        c = 0.5 * (e1 + e2)
        s = (e1 - e2) / 2j
        out[big, 0, 0] = c
        out[big, 0, 1] = s / qb
        out[big, 1, 0] = -qb * s
        out[big, 1, 1] = c
        ls[big] = b
    return out, ls


def transfer_matrix(height: float, length: float, z) -> np.ndarray:
    """Map (psi, psi') at a segment start to the segment end (constant potential ``height``).

    >>> np.allclose(transfer_matrix(0.0, 0.0, 1.0), np.eye(2))
    True
    """
    if length < 0:
        raise ValueError("segment length must be >= 0")
    m, ls = _scaled_transfer(as_complex(z) - height, length)
    return m * math.exp(float(ls))


def _edges(P, x_end: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Interval edges from 0 to max(support_end, x_end) and the height on each interval."""
    pts = {0.0, float(P.support_end), float(x_end)}
    pts.update(b for b in P.breakpoints if b > 0)
    edges = np.array(sorted(p for p in pts if p >= 0))
    if len(edges) == 1:
        return edges, np.zeros(0)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return edges, np.asarray(P(mids), dtype=float)


def transfer_product(P, z, x0: float, x1: float) -> tuple[np.ndarray, float, float]:
    """Accumulated transfer matrix from x0 to x1 >= x0.

    The product is formed in extended precision; returns (M_hat, log_scale, det) where
    det is the determinant of the true matrix, evaluated before rounding to double.
    """
    z = as_complex(z)
    edges, heights = _edges(P, x1)
    lo = np.maximum(edges[:-1], x0)
    hi = np.minimum(edges[1:], x1)
    keep = hi > lo
    ms, lss = _scaled_transfer(z - heights[keep], (hi - lo)[keep])
    acc = np.eye(2, dtype=np.clongdouble)
    log_scale = float(np.sum(lss))
    for m in ms.astype(np.clongdouble):
        acc = m @ acc
        nrm = np.max(np.abs(acc))
        acc = acc / nrm
        log_scale += float(np.log(nrm))
    det_hat = acc[0, 0] * acc[1, 1] - acc[0, 1] * acc[1, 0]
    det = complex(det_hat * np.exp(np.longdouble(2 * log_scale)))
    return acc.astype(complex), log_scale, det


@dataclass(frozen=True)
class SolutionFrame:
    """(psi, psi') at ``position`` stored as value * exp(log_scale)."""

    position: float
    value: complex
    derivative: complex
    log_scale: float = 0.0

    @property
    def psi(self) -> complex:
        return self.value * math.exp(self.log_scale)

    @property
    def dpsi(self) -> complex:
        return self.derivative * math.exp(self.log_scale)

    @property
    def logderiv(self) -> complex:
        return self.derivative / self.value


def initial_frame(h: float) -> tuple[np.ndarray, float]:
    if math.isinf(h):
        return np.array([0.0, 1.0], dtype=complex), 0.0
    v = np.array([1.0, h], dtype=complex)
    n = float(np.linalg.norm(v))
    return v / n, math.log(n)


class Propagator:
    """Regular and Jost solutions of one operator at one energy, sampled anywhere.

    ``h`` is the Robin coefficient in psi'(0) = h psi(0) (``DIRICHLET`` for psi(0) = 0).
    """

    def __init__(self, P, z, h: float | None = None):
        self.P = P
        self.z = as_complex(z)
        self.k = momentum(self.z)
        self.h = h
        self.edges, self.heights = _edges(P)
        self.support_end = float(self.edges[-1])
        self._fwd = None
        self._bwd = None

    def _segment_transfers(self):
        m, ls = _scaled_transfer(self.z - self.heights, np.diff(self.edges))
        return m.tolist(), ls.tolist()

    # forward (regular) frames at every edge
    def _forward(self):
        if self._fwd is None:
            if self.h is None:
                raise ValueError("regular solution needs a boundary coefficient h")
            v, s = initial_frame(self.h)
            a, b = complex(v[0]), complex(v[1])
            vs = [(a, b)]
            ss = [s]
            ms, lss = self._segment_transfers()
            for (r0, r1), ls in zip(ms, lss):
                a, b = r0[0] * a + r0[1] * b, r1[0] * a + r1[1] * b
                n = math.hypot(abs(a), abs(b))
                a, b = a / n, b / n
                s = s + ls + math.log(n)
                vs.append((a, b))
                ss.append(s)
            self._fwd = (np.array(vs, dtype=complex), np.array(ss))
        return self._fwd

    def _backward(self):
        if self._bwd is None:
            if self.z.imag == 0 and self.z.real <= 0:
                raise UnsupportedEnergyError(
                    f"outgoing solution needs lam > 0 on the real axis, got z={self.z}")
            k = self.k
            X = self.support_end
            phase = cmath.exp(1j * k.real * X)
            a, b = phase, 1j * k * phase
            n = math.hypot(abs(a), abs(b))
            a, b = a / n, b / n
            s = -k.imag * X + math.log(n)
            nseg = len(self.heights)
            vs = [None] * (nseg + 1)
            ss = np.empty(nseg + 1)
            vs[nseg] = (a, b)
            ss[nseg] = s
            ms, lss = self._segment_transfers()
            for j in range(nseg - 1, -1, -1):
                (m00, m01), (m10, m11) = ms[j]
                # inverse of a unimodular matrix
                a, b = m11 * a - m01 * b, -m10 * a + m00 * b
                n = math.hypot(abs(a), abs(b))
                a, b = a / n, b / n
                s = s + lss[j] + math.log(n)
                vs[j] = (a, b)
                ss[j] = s
            self._bwd = (np.array(vs, dtype=complex).reshape(nseg + 1, 2), ss)
        return self._bwd

    def _locate(self, xs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.edges, xs, side="right") - 1
        return np.clip(idx, 0, len(self.edges) - 1)

    def regular(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Regular solution at points ``x``: (values (n, 2), log_scales (n,))."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        vs, ss = self._forward()
        idx = self._locate(xs)
        starts = self.edges[idx]
        heights = np.where(idx < len(self.heights), np.append(self.heights, 0.0)[idx], 0.0)
        m, ls = _scaled_transfer(self.z - heights, xs - starts)
        out = np.einsum("nij,nj->ni", m, vs[idx])
        nrm = np.linalg.norm(out, axis=1)
        return out / nrm[:, None], ss[idx] + ls + np.log(nrm)

    def jost(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Jost solution f (f = e^{ikx} beyond the support) at points ``x``."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        vs, ss = self._backward()
        out = np.empty((len(xs), 2), dtype=complex)
        logs = np.empty(len(xs))
        beyond = xs >= self.support_end
        if np.any(beyond):
            k = self.k
            xb = xs[beyond]
            ph = np.exp(1j * k.real * xb)
            v = np.stack([ph, 1j * k * ph], axis=1)
            n = np.linalg.norm(v, axis=1)
            out[beyond] = v / n[:, None]
            logs[beyond] = -k.imag * xb + np.log(n)
        inside = ~beyond
        if np.any(inside):
            xi = xs[inside]
            idx = np.searchsorted(self.edges, xi, side="right") - 1
            idx = np.clip(idx, 0, len(self.heights) - 1)
            ends = self.edges[idx + 1]
            m, ls = _scaled_transfer(self.z - self.heights[idx], ends - xi)
            minv = np.empty_like(m)
            minv[:, 0, 0] = m[:, 1, 1]
            minv[:, 0, 1] = -m[:, 0, 1]
            minv[:, 1, 0] = -m[:, 1, 0]
            minv[:, 1, 1] = m[:, 0, 0]
            v = np.einsum("nij,nj->ni", minv, vs[idx + 1])
            n = np.linalg.norm(v, axis=1)
            out[inside] = v / n[:, None]
            logs[inside] = ss[idx + 1] + ls + np.log(n)
        return out, logs

    def wronskian(self) -> tuple[complex, float]:
        """W(f, phi) = f phi' - f' phi as (mantissa, log_scale); also the Jost function F."""
        f, fs = self.jost(0.0)
        p, ps = self.regular(0.0)
        w = f[0, 0] * p[0, 1] - f[0, 1] * p[0, 0]
        return complex(w), float(fs[0] + ps[0])

    def jost_function(self) -> complex:
        w, s = self.wronskian()
        return w * math.exp(s)


def propagate(P, h: float, z, x_end: float) -> SolutionFrame:
    """Regular solution psi'(0) = h psi(0) (psi(0)=1; Dirichlet: psi(0)=0, psi'(0)=1) at x_end."""
    if x_end < 0:
        raise ValueError("x_end must be >= 0")
    v, s = Propagator(P, z, h).regular(x_end)
    return SolutionFrame(float(x_end), complex(v[0, 0]), complex(v[0, 1]), float(s[0]))


def jost_solution(P, z, x: float) -> SolutionFrame:
    """Solution equal to e^{ikx} for x >= support_end (outgoing when z is real)."""
    v, s = Propagator(P, z).jost(x)
    return SolutionFrame(float(x), complex(v[0, 0]), complex(v[0, 1]), float(s[0]))


def green_matrix(P, h: float, z, xs, ys, prop: Propagator | None = None) -> np.ndarray:
    """Resolvent kernel G(x, y; z) = phi(min) f(max) / W(f, phi) on the product grid xs x ys."""
    prop = prop or Propagator(P, z, h)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    wr, wrs = prop.wronskian()
    f0, f0s = prop.jost(0.0)
    p0, _ = prop.regular(0.0)
    if abs(wr) < WRONSKIAN_FLOOR * float(np.linalg.norm(f0[0])) * float(np.linalg.norm(p0[0])):
        raise EigenvalueProximityError(
            f"Wronskian vanishes at z={prop.z}: z is (numerically) an eigenvalue", prop.z, wr * math.exp(wrs))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    lo = np.minimum(X, Y).ravel()
    hi = np.maximum(X, Y).ravel()
    pv, ps = prop.regular(lo)
    fv, fs = prop.jost(hi)
    g = pv[:, 0] * fv[:, 0] / wr * np.exp(ps + fs - wrs)
    return g.reshape(X.shape)


def green_kernel(P, h: float, z, x: float, y_pos: float) -> complex:
    return complex(green_matrix(P, h, z, [x], [y_pos])[0, 0])


# ---------------------------------------------------------------------------
# Pruefer angles and eigenvalue counting (real energies)


def _zeros_in_segment(psi0: float, dpsi0: float, q2: float, length: float) -> int:
    """Number of zeros of psi in (0, length] for psi started at (psi0, dpsi0)."""
    if length <= 0:
        return 0
    if q2 > 0:
        q = math.sqrt(q2)
        if q * length > 1e-12:
            alpha = math.atan2(q * psi0, dpsi0)
            return int(math.floor((alpha + q * length) / math.pi) - math.floor(alpha / math.pi))
    elif q2 < 0:
        kappa = math.sqrt(-q2)
        if kappa * length > 1e-12:
            if dpsi0 == 0.0:
                return 0
            ratio = -kappa * psi0 / dpsi0
            return int(0.0 < ratio <= math.tanh(kappa * length))
    if dpsi0 == 0.0:
        return 0
    t0 = -psi0 / dpsi0
    return int(0.0 < t0 <= length)


def pruefer_angle(P, h: float, lam: float, L: float) -> float:
    """Continuous Pruefer angle theta(L), cot(theta) = psi'/psi, of the regular solution.

    theta increases by exactly pi at every zero of psi, so the number of zeros in (0, L)
    is floor(theta(L)/pi) whenever psi(L) != 0.
    """
    edges, heights = _edges(P, L)
    v, _ = initial_frame(h)
    state = v.real.copy()
    zeros = 0
    for a, b, ht in zip(edges[:-1], edges[1:], heights):
        if a >= L:
            break
        ell = min(b, L) - a
        q2 = lam - ht
        zeros += _zeros_in_segment(state[0], state[1], q2, ell)
        m, _ = _scaled_transfer(q2 + 0j, ell)
        state = (m @ state).real
        state = state / math.hypot(state[0], state[1])
    frac = math.atan2(state[0], state[1]) % math.pi
    return zeros * math.pi + frac


def pruefer_count(P, h: float, lam: float, L: float) -> tuple[int, float]:
    """Eigenvalues below lam of the problem on [0, L] with psi(L) = 0, and the Pruefer angle at L."""
    if L < P.support_end:
        raise ValueError("truncation length must cover the support")
    theta = pruefer_angle(P, h, lam, L)
    count = int(math.ceil(theta / math.pi)) - 1
    return max(count, 0), theta


def scattering_phase(P, h: float, lam: float, x_eval: float | None = None) -> float:
    """delta in (-pi, pi]: the regular solution is A sin(kx + delta), A > 0, beyond the support."""
    if lam <= 0:
        raise UnsupportedEnergyError("scattering phase needs lam > 0")
    k = math.sqrt(lam)
    x = P.support_end if x_eval is None else float(x_eval)
    if x < P.support_end:
        raise ValueError("evaluation point must lie beyond the support")
    fr = propagate(P, h, lam, x)
    theta = math.atan2(k * fr.value.real, fr.derivative.real)
    return _wrap(theta - k * x)


def _wrap(a: float) -> float:
    """Principal value in (-pi, pi]."""
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a == -math.pi else a


def continue_phase(fn, r_end: float, n_initial: int = 16, max_step: float = 0.5, max_depth: int = 24):
    """Lift a 2pi-periodic phase r -> fn(r) continuously from r = 0 (lift 0 there) to r_end.

    Returns (rs, lifted, flagged) where ``flagged`` lists intervals that still jumped by
    more than pi/2 at the refinement limit.
    """
    rs = [0.0]
    lifted = [0.0]
    base = fn(0.0)
    prev_raw = base
    flagged = []

    def walk(r0, r1, raw0, lift0, depth):
        raw1 = fn(r1)
        inc = _wrap(raw1 - raw0)
        if abs(inc) >= max_step and depth < max_depth:
            rm = 0.5 * (r0 + r1)
            raw_m, lift_m = walk(r0, rm, raw0, lift0, depth + 1)
            return walk(rm, r1, raw_m, lift_m, depth + 1)
        if abs(inc) >= math.pi / 2:
            flagged.append((r0, r1))
        rs.append(r1)
        lifted.append(lift0 + inc)
        return raw1, lift0 + inc

    grid = np.linspace(0.0, r_end, n_initial + 1)
    lift = 0.0
    for r0, r1 in zip(grid[:-1], grid[1:]):
        prev_raw, lift = walk(r0, r1, prev_raw, lift, 0)
    return np.array(rs), np.array(lifted), flagged


@dataclass
class PhaseShiftResult:
    value: float
    rs: np.ndarray
    lifted: np.ndarray
    resonance_flag: bool
    flagged_intervals: list


def relative_phase_shift(W, V, h: float, r: float, lam: float, x_eval: float | None = None,
                         max_step: float = 0.5, detail: bool = False):
    """delta(W + rV) - delta(W), continued in the coupling from 0 at r = 0."""
    if lam <= 0:
        raise UnsupportedEnergyError("phase shifts need lam > 0")
    if V.is_zero or r == 0:
        res = PhaseShiftResult(0.0, np.array([0.0]), np.array([0.0]), False, [])
        return res if detail else 0.0
    X = max(W.support_end, V.support_end) if x_eval is None else float(x_eval)
    d0 = scattering_phase(W, h, lam, X)

    def raw(rr):
        if rr == 0:
            return 0.0
        return scattering_phase(W + V.scaled(rr), h, lam, X) - d0

    rs, lifted, flagged = continue_phase(raw, r, max_step=max_step)
    res = PhaseShiftResult(float(lifted[-1]), rs, lifted, bool(flagged), flagged)
    return res if detail else res.value


@dataclass
class OracleResult:
    xi: float
    xi_counts: float
    std: float
    converged: bool
    L_grid: np.ndarray
    differences: np.ndarray


def default_L_grid(lam: float, start: float, n_points: int = 32, n_wavelengths: float = 8.0) -> np.ndarray:
    """Truncation lengths whose phases k*L mod pi are spread evenly over [0, pi).

    Consecutive lengths advance k*L by pi*(1/2 + 1/n_points) (up to the integer number of
    half-periods needed to span ``n_wavelengths``), which visits every residue of a uniform
    n_points grid once.
    """
    k = math.sqrt(lam)
    halfturns = 2.0 * n_wavelengths / n_points  # ~ pi-periods per step
    m = max(0, int(round(halfturns - 0.5 - 1.0 / n_points)))
    step_phase = math.pi * (m + 0.5 + 1.0 / n_points)
    return start + np.arange(n_points) * step_phase / k


def ssf_counting_oracle(W, V, h: float, lam: float, L_grid=None) -> OracleResult:
    """Spectral shift xi = N_0 - N_1 from eigenvalue counts of Dirichlet truncations.

    The counts are refined by the continuous Pruefer angle (floor(theta/pi) is the count),
    and averaged over truncation lengths spread evenly in phase, which removes the
    oscillating part of the angle difference.
    """
    if V.is_zero:
        L = np.zeros(0) if L_grid is None else np.asarray(L_grid, dtype=float)
        return OracleResult(0.0, 0.0, 0.0, True, L, np.zeros(len(L)))
    H1 = W + V
    X = max(W.support_end, V.support_end)
    if L_grid is None:
        L_grid = default_L_grid(lam, X + 2 * math.pi / math.sqrt(lam))
    L_grid = np.asarray(L_grid, dtype=float)
    diffs = []
    counts = []
    for L in L_grid:
        n0, t0 = pruefer_count(W, h, lam, L)
        n1, t1 = pruefer_count(H1, h, lam, L)
        diffs.append((t0 - t1) / math.pi)
        counts.append(n0 - n1)
    diffs = np.array(diffs)
    std = float(np.std(diffs))
    return OracleResult(float(np.mean(diffs)), float(np.mean(counts)), std, std <= 0.2, L_grid, diffs)
