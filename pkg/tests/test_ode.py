from __future__ import annotations

import cmath
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ssflab.errors import UnsupportedEnergyError
from ssflab.ode import (DIRICHLET, ComplexEnergy, green_kernel, green_matrix, jost_solution,
                        momentum, propagate, pruefer_count, relative_phase_shift,
                        scattering_phase, ssf_counting_oracle, transfer_matrix, transfer_product)
from ssflab.potentials import PiecewisePotential, build_vnw_potential, make_perturbation

ZERO = PiecewisePotential.zero()


def test_momentum_branch():
    assert momentum(4.0) == 2.0
    assert momentum(complex(-1, 0)).imag > 0
    for z in (1 + 1j, -3 + 0.1j, 5 + 1e-9j):
        assert momentum(z).imag >= 0
    assert ComplexEnergy(2.0, 0.5).z == 2 + 0.5j


def test_transfer_free_closed_form():
    k, ell = 1.3, 0.7
    M = transfer_matrix(0.0, ell, k * k)
    ref = [[math.cos(k * ell), math.sin(k * ell) / k], [-k * math.sin(k * ell), math.cos(k * ell)]]
    assert np.allclose(M, ref, atol=1e-14)


def test_transfer_zero_length_is_identity():
    for h, z in ((3.0, 1.0), (0.0, 2 + 1j), (-1.0, 0.0)):
        assert np.allclose(transfer_matrix(h, 0.0, z), np.eye(2))


def test_transfer_barrier_against_closed_form_and_ode():
    M = transfer_matrix(2.0, 1.0, 1.0)
    ref = np.array([[math.cosh(1), math.sinh(1)], [math.sinh(1), math.cosh(1)]])
    assert np.max(np.abs(M - ref)) < 1e-12
    cols = []
    for y0 in ([1.0, 0.0], [0.0, 1.0]):
        sol = solve_ivp(lambda x, u: [u[1], (2.0 - 1.0) * u[0]], (0, 1), y0,
                        method="DOP853", rtol=1e-13, atol=1e-15)
        cols.append(sol.y[:, -1])
    assert np.max(np.abs(M - np.array(cols).T)) < 1e-10


def test_transfer_zero_momentum_limit():
    M = transfer_matrix(1.0, 2.5, 1.0)
    assert np.allclose(M, [[1, 2.5], [0, 1]], atol=1e-14)
    M = transfer_matrix(1.0, 2.5, 1.0 + 1e-12)
    assert np.allclose(M, [[1, 2.5], [0, 1]], atol=1e-10)


def test_propagate_free_dirichlet():
    fr = propagate(ZERO, DIRICHLET, 1.0, math.pi / 2)
    assert abs(fr.psi - 1.0) < 1e-14


def test_propagate_standard_logderivative_at_entries():
    spec, W = build_vnw_potential(1, 2, 0.75, 50)
    for a, _ in spec.barriers:
        fr = propagate(W, spec.boundary_h, 1.0, a)
        assert abs(fr.logderiv + 1.0) < 1e-8


def test_transfer_product_det_at_support_end():
    spec, W = build_vnw_potential(1, 2, 0.75, 50)
    _, _, det = transfer_product(W, 1.0, 0.0, W.support_end)
    assert abs(det - 1) < 1e-12


def test_transfer_det_every_segment_complex_energy():
    # at complex z the full product grows like exp(Im k x); its det is checked per factor
    spec, W = build_vnw_potential(1, 2, 0.75, 50)
    for z in (1.0 + 0.3j, 0.4 + 2j, 3.0 + 1e-6j):
        for a, b, v in W.segments():
            M = transfer_matrix(v, b - a, z)
            # a 2x2 det carries rounding of order eps |M|^2
            assert abs(np.linalg.det(M) - 1) < 1e-12 * max(1.0, np.abs(M).max() ** 2 / 100)


def test_jost_free():
    z = 1.5 + 0.2j
    k = momentum(z)
    for x in (0.0, 0.7, 3.0):
        f = jost_solution(ZERO, z, x)
        assert abs(f.psi - cmath.exp(1j * k * x)) < 1e-13
        assert abs(f.dpsi - 1j * k * cmath.exp(1j * k * x)) < 1e-13


def test_jost_rejects_nonpositive_real_energy():
    with pytest.raises(UnsupportedEnergyError):
        jost_solution(ZERO, -1.0, 0.0)


def test_wronskian_constant_in_x(small):
    _, W, h, V = small
    H = W + V
    for z in (1.0, 0.8 + 0.1j):
        vals = []
        for x in np.linspace(0, H.support_end + 1, 9):
            f = jost_solution(H, z, x)
            p = propagate(H, h, z, x)
            vals.append(f.psi * p.dpsi - f.dpsi * p.psi)
        vals = np.array(vals)
        assert np.max(np.abs(vals - vals[0])) < 1e-10 * max(1.0, abs(vals[0]))


def test_green_free_dirichlet_closed_form_and_ode_residual():
    z = 1.2 + 0.3j
    k = momentum(z)
    for x, y in ((0.3, 1.1), (1.7, 0.4), (0.9, 0.9)):
        ref = cmath.sin(k * min(x, y)) * cmath.exp(1j * k * max(x, y)) / k
        assert abs(green_kernel(ZERO, DIRICHLET, z, x, y) - ref) < 1e-12
    y0, d = 1.0, 1e-3
    for x in (0.4, 1.6):
        g = [green_kernel(ZERO, DIRICHLET, z, x + s * d, y0) for s in (-1, 0, 1)]
        resid = -(g[0] - 2 * g[1] + g[2]) / d ** 2 - z * g[1]
        assert abs(resid) < 1e-5
    # unit jump of the derivative at the source; Dirichlet at 0
    gp = (green_kernel(ZERO, DIRICHLET, z, y0 + d, y0) - green_kernel(ZERO, DIRICHLET, z, y0, y0)) / d
    gm = (green_kernel(ZERO, DIRICHLET, z, y0, y0) - green_kernel(ZERO, DIRICHLET, z, y0 - d, y0)) / d
    assert abs((gp - gm) + 1.0) < 1e-2
    assert abs(green_kernel(ZERO, DIRICHLET, z, 0.0, y0)) < 1e-15


def test_green_symmetry_and_conjugation(small):
    _, W, h, _ = small
    xs = np.linspace(0.1, 12.0, 7)
    for z in (1.0 + 0.5j, 0.7 + 2j):
        G = green_matrix(W, h, z, xs, xs)
        assert np.max(np.abs(G - G.T)) < 1e-10 * np.max(np.abs(G))
        Gc = green_matrix(W, h, np.conj(z), xs, xs)
        assert np.max(np.abs(Gc - np.conj(G))) < 1e-10 * np.max(np.abs(G))


def test_green_imaginary_part_rank_one(small):
    _, W, h, _ = small
    xs = np.linspace(0.05, W.support_end + 2, 40)
    G = green_matrix(W, h, 1.1, xs, xs)
    s = np.linalg.svd(G.imag, compute_uv=False)
    assert s[1] <= 1e-8 * s[0]


@pytest.mark.parametrize("lam, L", [(1.0, 10.0), (2.3, 7.7), (0.4, 31.0)])
def test_pruefer_free_count(lam, L):
    n, theta = pruefer_count(ZERO, DIRICHLET, lam, L)
    assert n == math.floor(math.sqrt(lam) * L / math.pi)
    assert math.floor(theta / math.pi) == n


def test_pruefer_monotone_and_positive_perturbation(small):
    _, W, h, V = small
    L = W.support_end + 20
    counts = [pruefer_count(W, h, lam, L)[0] for lam in np.linspace(0.1, 3, 40)]
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    for lam in (0.5, 1.0, 1.7):
        assert pruefer_count(W + V, h, lam, L)[0] <= pruefer_count(W, h, lam, L)[0]


def test_phase_shift_zero_coupling():
    V = make_perturbation("well", start=0, end=1, depth=-0.3)
    assert relative_phase_shift(ZERO, V, DIRICHLET, 0.0, 1.0) == 0.0


def test_phase_shift_square_well_closed_form():
    a, v, lam = 1.0, 0.3, 1.0
    V = make_perturbation("well", start=0, end=a, depth=-v)
    k = math.sqrt(lam)
    rs = np.linspace(0, 1, 201)
    raw = []
    for r in rs:
        kin = math.sqrt(lam + r * v)
        raw.append(math.atan2(k * math.sin(kin * a), kin * math.cos(kin * a)) - k * a)
    ref = np.unwrap(raw, period=math.pi)
    ref -= ref[0]
    got = relative_phase_shift(ZERO, V, DIRICHLET, 1.0, lam)
    assert abs(got - ref[-1]) < 1e-12


def test_phase_shift_deep_well_continuous_branch():
    a, v, lam = 2.0, 6.0, 0.5
    V = make_perturbation("well", start=0, end=a, depth=-v)
    k = math.sqrt(lam)
    raw = []
    for r in np.linspace(0, 1, 4001):
        kin = math.sqrt(lam + r * v)
        raw.append(math.atan2(k * math.sin(kin * a), kin * math.cos(kin * a)) - k * a)
    ref = np.unwrap(raw, period=math.pi)
    got = relative_phase_shift(ZERO, V, DIRICHLET, 1.0, lam)
    assert abs(got - (ref[-1] - ref[0])) < 1e-10
    assert got > math.pi  # the well binds states, so the branch winds


def test_phase_shift_positive_perturbation_small_coupling(standard):
    _, W, h, V = standard
    for lam in (0.5, 0.99, 1.3):
        assert relative_phase_shift(W, V, h, 1e-3, lam) <= 0


def test_phase_shift_evaluation_point_independent(small):
    _, W, h, V = small
    X = max(W.support_end, V.support_end)
    a = relative_phase_shift(W, V, h, 1.0, 0.9, x_eval=X)
    b = relative_phase_shift(W, V, h, 1.0, 0.9, x_eval=X + 7.3)
    assert abs(a - b) < 1e-9


def test_phase_shift_continuation_smooth(small):
    _, W, h, V = small
    res = relative_phase_shift(W, V, h, 1.0, 0.9, detail=True)
    assert not res.resonance_flag
    assert np.max(np.abs(np.diff(res.lifted))) < 0.5


def test_scattering_phase_free_dirichlet_is_zero():
    assert abs(scattering_phase(ZERO, DIRICHLET, 1.7, 3.0)) < 1e-14


def test_oracle_zero_perturbation(standard):
    _, W, h, _ = standard
    assert ssf_counting_oracle(W, ZERO, h, 1.0).xi == 0.0


def test_oracle_positive_perturbation_and_phase_consistency(standard):
    _, W, h, V = standard
    for lam in (0.7, 0.99, 1.02):
        o = ssf_counting_oracle(W, V, h, lam)
        assert o.converged
        assert o.xi >= -0.05
        dd = relative_phase_shift(W, V, h, 1.0, lam)
        x = o.xi + dd / math.pi
        assert abs(x - round(x)) < 1e-6
