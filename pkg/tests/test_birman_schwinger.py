from __future__ import annotations

import cmath
import dataclasses
import math

import numpy as np
import pytest

from ssflab.birman_schwinger import (assemble_T, build_grid, min_singular_value,
                                     onshell_eigenvalue, perturbation_determinant, s_matrix,
                                     self_convergence, sqrt_psd)
from ssflab.errors import DiscretizationError, ParameterError, ResonancePointError
from ssflab.ode import relative_phase_shift
from ssflab.potentials import PiecewisePotential, potential_from_steps


@pytest.fixture(scope="module")
def setup(standard):
    _, W, h, V = standard
    return W, V, h, build_grid(V, 12, background=W)


def test_grid_single_segment():
    g = build_grid(PiecewisePotential.step(0.0, 1.0, 0.5), 4)
    assert g.size == 4
    assert abs(g.weights.sum() - 1.0) < 1e-12
    assert np.all((g.nodes > 0) & (g.nodes < 1)) and np.all(g.weights > 0)


def test_grid_two_segments():
    V = potential_from_steps([(0.0, 1.0, 0.5), (2.0, 3.5, -0.2)])
    g = build_grid(V, 5)
    assert g.size == 10
    assert abs(g.weights.sum() - 2.5) < 1e-12
    assert set(g.J) == {1.0, -1.0}


def test_grid_empty_support_rejected():
    with pytest.raises(ParameterError):
        build_grid(PiecewisePotential.zero())


def test_T_symmetry(setup):
    W, V, h, g = setup
    for z in (1.0 + 0.4j, 0.8 + 3j):
        T = assemble_T(W, V, h, g, z).T
        Tc = assemble_T(W, V, h, g, np.conj(z)).T
        assert np.max(np.abs(Tc - T.conj().T)) < 1e-10


def test_T_high_energy_decay(setup):
    W, V, h, g = setup
    assert np.linalg.norm(assemble_T(W, V, h, g, 1.0 + 1e6j).T, 2) < 1e-4
    ys = np.geomspace(1, 1e4, 9)
    scaled = [y * np.linalg.norm(assemble_T(W, V, h, g, 1.0 + 1j * y).T, 2) for y in ys]
    assert max(scaled) < 10 * min(scaled)


def test_B_positive_rank_one(setup):
    W, V, h, g = setup
    for lam in (0.9, 1.0, 1.2):
        ev = np.linalg.eigvalsh(assemble_T(W, V, h, g, lam).B)
        assert ev.min() >= -1e-10 * ev.max()
        assert abs(np.sort(np.abs(ev))[-2]) <= 1e-8 * ev.max()


def test_S_identity_at_zero_coupling(setup):
    W, V, h, g = setup
    smp = s_matrix(assemble_T(W, V, h, g, 1.0), 0.0)
    assert np.allclose(smp.S, np.eye(g.size))


def test_S_unitary_eigenvalues(setup):
    W, V, h, g = setup
    rng = np.random.default_rng(3)
    for _ in range(8):
        z = complex(rng.uniform(0.5, 1.5), rng.choice([0.0, rng.uniform(1e-3, 10)]))
        r = rng.uniform(0, 1)
        ev = s_matrix(assemble_T(W, V, h, g, z), r).eigenvalues
        assert np.max(np.abs(np.abs(ev) - 1)) < 1e-8


def test_S_tends_to_identity_uniformly(setup):
    W, V, h, g = setup
    prev = None
    for y in (1e2, 1e3, 1e4, 1e5):
        T = assemble_T(W, V, h, g, 1.0 + 1j * y)
        d = max(np.linalg.norm(s_matrix(T, r).S - np.eye(g.size), 2) for r in np.linspace(0, 1, 11))
        if prev is not None:
            assert d < prev
        prev = d
    assert prev < 1e-2


@pytest.mark.parametrize("lam", [0.95, 1.005, 1.1])
def test_onshell_phase_matches_ode(setup, lam):
    W, V, h, g = setup
    T = assemble_T(W, V, h, g, lam)
    for r in (0.3, 1.0):
        ph = cmath.phase(onshell_eigenvalue(T, r))
        dd = relative_phase_shift(W, V, h, r, lam)
        assert abs(math.remainder(ph - 2 * dd, 2 * math.pi)) < 1e-3
        nt = s_matrix(T, r).nontrivial()
        assert len(nt) == 1


def test_determinant_limits(setup):
    W, V, h, g = setup
    assert perturbation_determinant(assemble_T(W, V, h, g, 1.0), 0.0) == 1
    assert abs(perturbation_determinant(assemble_T(W, V, h, g, 1.0 + 1e6j), 1.0) - 1) < 1e-3


def test_determinant_nonzero_off_axis(setup):
    W, V, h, g = setup
    for y in np.geomspace(1e-4, 1e2, 7):
        T = assemble_T(W, V, h, g, 1.0 + 1j * y)
        for r in np.linspace(0, 1, 6):
            assert abs(perturbation_determinant(T, r)) > 1e-8


def test_determinant_log_form_matches(setup):
    W, V, h, g = setup
    T = assemble_T(W, V, h, g, 0.9 + 0.5j)
    la, arg = perturbation_determinant(T, 0.7, log=True)
    D = perturbation_determinant(T, 0.7)
    assert abs(D - math.exp(la) * cmath.exp(1j * arg)) < 1e-14


def test_trace_correction_improves_modulus(setup):
    W, V, h, _ = setup
    z = 1.0 + 0.05j
    ref = perturbation_determinant(assemble_T(W, V, h, build_grid(V, 48, background=W), z), 1.0)
    g = build_grid(V, 12, background=W)
    T = assemble_T(W, V, h, g, z)
    plain = perturbation_determinant(T, 1.0, trace_correction=False)
    corr = perturbation_determinant(T, 1.0)
    assert abs(corr - ref) < abs(plain - ref)
    assert abs(corr - ref) < 1e-6


def test_galerkin_and_nystrom_agree(setup):
    W, V, h, g = setup
    a = onshell_eigenvalue(assemble_T(W, V, h, g, 1.01), 1.0)
    b = onshell_eigenvalue(assemble_T(W, V, h, g, 1.01, method="nystrom"), 1.0)
    assert abs(a - b) < 1e-3


def test_self_convergence(setup):
    W, V, h, _ = setup
    for z in (0.95, 1.012, 1.0 + 0.1j):
        assert self_convergence(W, V, h, z, 1.0) < 1e-6


def test_min_singular_identity_and_neumann(setup):
    W, V, h, g = setup
    assert min_singular_value(assemble_T(W, V, h, g, 1.0), 0.0) == 1.0
    assert min_singular_value(assemble_T(W, V, h, g, 1.0 + 1e4j), 1.0) > 0.99


def test_sqrt_psd_clamps_and_rejects():
    B = np.diag([1.0, -1e-12, 0.5])
    R = sqrt_psd(B)
    assert np.allclose(R @ R, np.diag([1.0, 0.0, 0.5]))
    with pytest.raises(DiscretizationError):
        sqrt_psd(np.diag([1.0, -1e-3]))


def test_singular_coupling_raises(setup):
    W, V, h, g = setup
    T = assemble_T(W, V, h, g, 1.0)
    bad = dataclasses.replace(T, T=-np.eye(g.size) * g.J[:, None])
    with pytest.raises(ResonancePointError) as exc:
        s_matrix(bad, 1.0)
    assert exc.value.r == 1.0
