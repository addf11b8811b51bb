"""Sandwiched resolvent T = G R_z G, the scattering matrix S(z, r) and det(1 + rJT).

G = |V|^{1/2} and J = sign V act on the support of V.  The support is cut into
panels on which both V and the background are constant; each panel carries the
L2-orthonormal Lagrange basis e_m = l_m / sqrt(q_m) attached to its Gauss-Legendre
nodes.  Two assemblies are available:

``galerkin`` (default)
    T[m, n] = <e_m, G R_z G e_n>, with the double integral split along the diagonal
    so the kink of phi(min) f(max) is integrated exactly.  Eigenphases of S and arg D
    converge spectrally in the number of nodes per panel; |D| needs the trace
    correction in ``perturbation_determinant``.
``nystrom``
    T[m, n] = sqrt(q_m) G(x_m) G0(x_m, x_n) G(x_n) sqrt(q_n).  Only second order, because
    the kernel has a derivative jump on the diagonal; kept as a cross-check.

Both give complex-symmetric matrices, so T(conj z) = T(z)^* and B = Im T is real symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import linalg

from .errors import DiscretizationError, EigenvalueProximityError, ParameterError, ResonancePointError
from .ode import WRONSKIAN_FLOOR, Propagator, as_complex, green_matrix, momentum
from .potentials import PiecewisePotential

DEFAULT_NODES = 12
CLAMP_REL = 1e-10
SINGULAR_FLOOR = 1e-13


@dataclass(frozen=True)
class QuadratureGrid:
    panels: tuple[tuple[float, float], ...]
    n_per_panel: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    J: np.ndarray = field(repr=False)
    panel_index: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def support_length(self) -> float:
        return float(sum(b - a for a, b in self.panels))


def _split_points(V: PiecewisePotential, background: PiecewisePotential | None):
    cuts = set(V.breakpoints)
    if background is not None:
        cuts.update(background.breakpoints)
    return sorted(cuts)


def build_grid(V: PiecewisePotential, n_per_segment: int = DEFAULT_NODES,
               background: PiecewisePotential | None = None,
               max_panel_length: float | None = 2.0) -> QuadratureGrid:
    """Composite Gauss-Legendre rule over the support of V.

    Panels are V's nonzero segments, cut further at the background's breakpoints and
    subdivided so no panel is longer than ``max_panel_length``.
    """
    if V.is_zero:
        raise ParameterError("V has empty support; S is identically 1 and needs no grid")
    if n_per_segment < 1:
        raise ParameterError("need at least one node per segment")
    cuts = _split_points(V, background)
    panels = []
    for a, b, v in V.nonzero_segments():
        inner = [c for c in cuts if a < c < b]
        pts = [a] + inner + [b]
        for lo, hi in zip(pts[:-1], pts[1:]):
            pieces = 1 if max_panel_length is None else max(1, math.ceil((hi - lo) / max_panel_length - 1e-12))
            edges = np.linspace(lo, hi, pieces + 1)
            edges[0], edges[-1] = lo, hi
            panels.extend(zip(edges[:-1], edges[1:]))
    t, w = _gauss(n_per_segment)
    nodes, weights, G, J, pidx = [], [], [], [], []
    for i, (a, b) in enumerate(panels):
        h = b - a
        nodes.append(a + 0.5 * h * (t + 1.0))
        weights.append(0.5 * h * w)
        v = V(0.5 * (a + b))
        G.append(np.full(n_per_segment, math.sqrt(abs(v))))
        J.append(np.full(n_per_segment, 1.0 if v > 0 else -1.0))
        pidx.append(np.full(n_per_segment, i))
    return QuadratureGrid(
        tuple((float(a), float(b)) for a, b in panels),
        int(n_per_segment),
        np.concatenate(nodes),
        np.concatenate(weights),
        np.concatenate(G),
        np.concatenate(J),
        np.concatenate(pidx),
    )


@lru_cache(maxsize=None)
def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = legendre.leggauss(n)
    t.flags.writeable = False
    w.flags.writeable = False
    return t, w


@lru_cache(maxsize=32)
def _panel_tables(n: int, M: int):
    """Gauss rules and Lagrange tables shared by every panel with n nodes and M fine points."""
    t, w = _gauss(n)
    tau, om = _gauss(M)
    L_fine = _lagrange_at(t, w, tau)  # (n, M)
    # inner points: for each outer tau_j, M points on [-1, tau_j]
    tau_in = -1.0 + (tau[:, None] + 1.0) * (tau[None, :] + 1.0) / 2.0  # (M outer, M inner)
    om_in = (tau[:, None] + 1.0) / 2.0 * om[None, :]
    L_in = _lagrange_at(t, w, tau_in)  # (n, M, M)
    for a in (L_fine, tau_in, om_in, L_in):
        a.flags.writeable = False
    return t, w, tau, om, L_fine, tau_in, om_in, L_in


def _lagrange_at(t_nodes: np.ndarray, w_nodes: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """l_m(tau) for the Gauss-Legendre nodes, shape (n, len(tau)).

    Uses l_m(t) = w_m sum_k (k + 1/2) P_k(t_m) P_k(t), exact for Gauss nodes.
    """
    n = len(t_nodes)
    Pn = legendre.legvander(t_nodes, n - 1)  # (n, n)
    Pt = legendre.legvander(np.ravel(tau), n - 1)  # (M, n)
    coef = w_nodes[:, None] * Pn * (np.arange(n) + 0.5)[None, :]
    return (coef @ Pt.T).reshape((n,) + np.shape(tau))


@dataclass
class SandwichedResolvent:
    z: complex
    T: np.ndarray
    J: np.ndarray
    grid: QuadratureGrid = field(repr=False)
    background_r: float = 0.0
    method: str = "galerkin"
    trace_exact: complex | None = None  # tr(JT) of the continuum operator

    @property
    def B(self) -> np.ndarray:
        """Im T = (T - T^*)/(2i), Hermitian (real symmetric for the symmetric assemblies)."""
        return (self.T - self.T.conj().T) / 2j


def _check_panels(grid: QuadratureGrid, H: PiecewisePotential):
    for a, b in grid.panels:
        if any(a < c < b for c in H.breakpoints):
            raise ParameterError("grid panels must not straddle background breakpoints; "
                                 "build the grid with background=...")


def _assemble_galerkin(prop: Propagator, grid: QuadratureGrid) -> np.ndarray:
    n = grid.n_per_panel
    wr, wrs = prop.wronskian()
    f0, _ = prop.jost(0.0)
    p0, _ = prop.regular(0.0)
    if abs(wr) < WRONSKIAN_FLOOR * float(np.linalg.norm(f0[0])) * float(np.linalg.norm(p0[0])):
        raise EigenvalueProximityError(f"Wronskian vanishes at z={prop.z}", prop.z, wr)

    hmax = max(b - a for a, b in grid.panels)
    qmax = max(abs(np.sqrt(prop.z - v)) for v in np.append(prop.heights, 0.0))
    M = max(n + 16, int(math.ceil(1.2 * qmax * hmax)) + 16)
    t, w, tau, om, L_fine, tau_in, om_in, L_in = _panel_tables(n, M)

    npan = len(grid.panels)
    Phi = np.empty((npan, n), dtype=complex)
    Fv = np.empty((npan, n), dtype=complex)
    A = np.empty((npan, n, n), dtype=complex)
    sphi = np.empty(npan)
    sf = np.empty(npan)
    for p, (a, b) in enumerate(grid.panels):
        h = b - a
        sq = np.sqrt(0.5 * h * w)
        E_fine = L_fine / sq[:, None]
        xs = a + 0.5 * h * (tau + 1.0)
        pv, ps = prop.regular(np.concatenate([[a], xs, (a + 0.5 * h * (tau_in + 1.0)).ravel()]))
        fv, fs = prop.jost(np.concatenate([[a], xs]))
        sphi[p] = ps[0]
        sf[p] = fs[0]
        phi_fine = pv[1:M + 1, 0] * np.exp(ps[1:M + 1] - ps[0])
        f_fine = fv[1:, 0] * np.exp(fs[1:] - fs[0])
        phi_in = (pv[M + 1:, 0] * np.exp(ps[M + 1:] - ps[0])).reshape(M, M)
        wq = 0.5 * h * om
        Phi[p] = E_fine @ (wq * phi_fine)
        Fv[p] = E_fine @ (wq * f_fine)
        E_in = L_in / sq[:, None, None]
        # I[m, j] = int_a^{y_j} e_m phi dx
        I = np.einsum("mjl,jl,jl->mj", E_in, phi_in, 0.5 * h * om_in)
        lower = np.einsum("mj,nj,j->mn", I, E_fine, wq * f_fine)
        A[p] = lower + lower.T

    N = grid.size
    T = np.empty((N, N), dtype=complex)
    for p in range(npan):
        sl_p = slice(p * n, (p + 1) * n)
        T[sl_p, sl_p] = A[p] * np.exp(sphi[p] + sf[p] - wrs) / wr
        for q in range(p + 1, npan):
            sl_q = slice(q * n, (q + 1) * n)
            left, right = (p, q) if grid.panels[p][0] < grid.panels[q][0] else (q, p)
            blk = np.outer(Phi[left], Fv[right]) * np.exp(sphi[left] + sf[right] - wrs) / wr
            if left == p:
                T[sl_p, sl_q] = blk
                T[sl_q, sl_p] = blk.T
            else:
                T[sl_q, sl_p] = blk
                T[sl_p, sl_q] = blk.T
    G = grid.G
    return G[:, None] * T * G[None, :]


def _kernel_trace(prop: Propagator, grid: QuadratureGrid) -> complex:
    """sum_m J_m q_m G_m^2 G(x_m, x_m): Gauss quadrature of a smooth diagonal, spectrally exact."""
    wr, wrs = prop.wronskian()
    pv, ps = prop.regular(grid.nodes)
    fv, fs = prop.jost(grid.nodes)
    diag = pv[:, 0] * fv[:, 0] * np.exp(ps + fs - wrs) / wr
    return complex(np.sum(grid.J * grid.weights * grid.G ** 2 * diag))


def _assemble_nystrom(prop: Propagator, grid: QuadratureGrid, h: float) -> np.ndarray:
    K = green_matrix(prop.P, h, prop.z, grid.nodes, grid.nodes, prop=prop)
    s = np.sqrt(grid.weights) * grid.G
    return s[:, None] * K * s[None, :]


def assemble_T(W: PiecewisePotential, V: PiecewisePotential, h: float, grid: QuadratureGrid, z,
               r: float = 0.0, method: str = "galerkin") -> SandwichedResolvent:
    """Matrix of G R_z(W + rV) G on ``grid`` (r = 0 gives T_0 with background W)."""
    z = as_complex(z)
    H = W if r == 0 else W + V.scaled(r)
    _check_panels(grid, H)
    prop = Propagator(H, z, h)
    if method == "galerkin":
        T = _assemble_galerkin(prop, grid)
    elif method == "nystrom":
        T = _assemble_nystrom(prop, grid, h)
    else:
        raise ParameterError(f"unknown assembly method {method!r}")
    return SandwichedResolvent(z, T, grid.J.copy(), grid, float(r), method, _kernel_trace(prop, grid))


@dataclass
class ScatteringMatrixSample:
    z: complex
    r: float
    S: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    sigma_min: float = 1.0

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.eigenvalues)

    def nontrivial(self, tol: float = 1e-8) -> np.ndarray:
        ev = self.eigenvalues
        return np.angle(ev[np.abs(ev - 1.0) > tol])

    @property
    def det(self) -> complex:
        return complex(np.prod(self.eigenvalues))


def sqrt_psd(B: np.ndarray, clamp_rel: float = CLAMP_REL) -> np.ndarray:
    """Hermitian square root of a PSD matrix; small negative eigenvalues are clamped to 0."""
    vals, vecs = np.linalg.eigh(B)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if vals.min() < -clamp_rel * scale:
        raise DiscretizationError(
            f"Im T has a negative eigenvalue {vals.min():.3e} (scale {scale:.3e}); refine the grid")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def min_singular_value(Tres: SandwichedResolvent, r: float) -> float:
    X = np.eye(len(Tres.J)) + r * Tres.J[:, None] * Tres.T
    return float(linalg.svdvals(X)[-1])


def s_matrix(Tres: SandwichedResolvent, r: float, Bh: np.ndarray | None = None) -> ScatteringMatrixSample:
    """S(z, r) = 1 - 2i r B^{1/2} J (1 + r T J)^{-1} B^{1/2}, B = Im T.

    ``Bh`` may pass a precomputed B^{1/2} when many couplings share one T.
    """
    N = len(Tres.J)
    eye = np.eye(N)
    if r == 0:
        return ScatteringMatrixSample(Tres.z, 0.0, eye.astype(complex), np.ones(N, dtype=complex), 1.0)
    J = Tres.J
    X = eye + r * Tres.T * J[None, :]
    smin = float(linalg.svdvals(X)[-1])
    if smin < SINGULAR_FLOOR:
        raise ResonancePointError(f"1 + rJT is singular at r={r}", r, smin)
    if Bh is None:
        Bh = sqrt_psd(Tres.B)
    Y = np.linalg.solve(X, Bh)
    S = eye - 2j * r * Bh @ (J[:, None] * Y)
    ev = np.linalg.eigvals(S)
    return ScatteringMatrixSample(Tres.z, float(r), S, ev, smin)


def onshell_eigenvalue(Tres: SandwichedResolvent, r: float) -> complex:
    """The single nontrivial eigenvalue of S(lam + i0, r).

    On the real axis Im T has rank one, so S - 1 has rank one and its only nonzero
    eigenvalue is its trace.
    """
    smp = s_matrix(Tres, r)
    return complex(1.0 + np.trace(smp.S - np.eye(len(Tres.J))))


def perturbation_determinant(Tres: SandwichedResolvent, r: float, log: bool = False,
                             trace_correction: bool = True):
    """det(1 + rJT) from an LU factorisation.

    A rank-n projection drops the small eigenvalues of the kinked kernel, whose sum
    decays only like 1/n. ``trace_correction`` restores it through the factor
    exp(r (tr JT - tr JT_n)) with the exact trace; the remaining error is second order
    in the dropped eigenvalues. On the real axis the dropped part is real, so arg D is
    unaffected either way.

    With ``log=True`` returns (log|D|, arg D in (-pi, pi]) accumulated from the pivots,
    which never over- or underflows.
    """
    N = len(Tres.J)
    if r == 0:
        return (0.0, 0.0) if log else 1.0 + 0j
    X = np.eye(N) + r * Tres.J[:, None] * Tres.T
    lu, piv = linalg.lu_factor(X, check_finite=False)
    d = np.diag(lu)
    logabs = float(np.sum(np.log(np.abs(d))))
    perm_sign = -1.0 if np.count_nonzero(piv != np.arange(N)) % 2 else 1.0
    arg = float(np.angle(perm_sign * np.prod(d / np.abs(d))))
    if trace_correction and Tres.trace_exact is not None:
        corr = r * (Tres.trace_exact - np.sum(Tres.J * np.diag(Tres.T)))
        logabs += float(corr.real)
        arg = float(np.angle(np.exp(1j * (arg + corr.imag))))
    if log:
        return logabs, arg
    return complex(math.exp(logabs) * complex(math.cos(arg), math.sin(arg)))


def self_convergence(W, V, h, z, r: float, n: int = DEFAULT_NODES, min_phase: float = 1e-4) -> float:
    """Largest change of an eigenphase of S(z, r) when the node count goes n -> 2n.

    Every eigenphase of the coarse matrix with |theta| > ``min_phase`` is compared with
    the nearest eigenvalue of the refined matrix on the unit circle. Smaller phases
    belong to the discretisation tail and have no partner.
    """
    samples = []
    for nn in (n, 2 * n):
        grid = build_grid(V, nn, background=W)
        samples.append(s_matrix(assemble_T(W, V, h, grid, z), r).eigenvalues)
    coarse, fine = samples
    coarse = coarse[np.abs(np.angle(coarse)) > min_phase]
    if coarse.size == 0:
        return 0.0
    d = np.abs(np.angle(coarse[:, None] / fine[None, :])).min(axis=1)
    return float(d.max())
