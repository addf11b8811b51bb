from __future__ import annotations

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ssflab.ode import DIRICHLET, momentum, pruefer_count, transfer_matrix
from ssflab.potentials import PiecewisePotential, potential_from_steps
from ssflab.spectral_flow import TWO_PI, PhaseBranches, mu_invariant

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@st.composite
def potentials(draw, max_segments=6):
    n = draw(st.integers(1, max_segments))
    cuts = sorted(set(draw(st.lists(st.floats(0, 100, allow_nan=False), min_size=n + 1,
                                    max_size=n + 1))))
    if len(cuts) < 2:
        cuts = [0.0, 1.0]
    vals = draw(st.lists(finite, min_size=len(cuts) - 1, max_size=len(cuts) - 1))
    return PiecewisePotential(tuple(cuts), tuple(vals))


@given(potentials())
def test_json_round_trip_bit_exact(P):
    Q = PiecewisePotential.from_json(P.to_json())
    assert Q == P
    assert all(a.hex() == b.hex() for a, b in zip(P.breakpoints, Q.breakpoints))


@given(potentials(), st.floats(0, 200, allow_nan=False))
def test_tail_is_zero(P, dx):
    assert P(P.support_end + dx) == 0.0


@given(potentials(), potentials(), st.lists(st.floats(0, 120, allow_nan=False), max_size=20))
def test_sum_pointwise_and_breakpoint_union(P, Q, xs):
    S = P + Q
    assert set(S.breakpoints) == set(P.breakpoints) | set(Q.breakpoints)
    for x in xs:
        assert abs(S(x) - (P(x) + Q(x))) <= 1e-12 * (1 + abs(P(x)) + abs(Q(x)))


@settings(max_examples=100)
@given(st.floats(0.01, 20), st.floats(0.1, 60))
def test_free_pruefer_count(lam, L):
    n, _ = pruefer_count(PiecewisePotential.zero(), DIRICHLET, lam, L)
    q = math.sqrt(lam) * L / math.pi
    if abs(q - round(q)) > 1e-9:
        assert n == math.floor(q)


@given(st.floats(-10, 10), st.floats(0, 3), st.floats(0.01, 10), st.floats(0, 5))
def test_transfer_det_one(height, length, lam, y):
    M = transfer_matrix(height, length, complex(lam, y))
    assert abs(np.linalg.det(M) - 1) < 1e-12 * max(1.0, np.abs(M).max() ** 2)


@given(st.floats(-100, 100), st.floats(0, 100))
def test_momentum_upper_half_plane(lam, y):
    k = momentum(complex(lam, y))
    assert k.imag >= 0
    assert abs(k * k - complex(lam, y)) <= 1e-12 * (1 + abs(complex(lam, y)))


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=5))
def test_mu_integer_and_integral(ends):
    ends = np.array(ends)
    br = PhaseBranches(np.array([0.0, 1.0]), np.vstack([np.zeros_like(ends), ends]),
                       np.zeros(2, dtype=int))
    mu = mu_invariant(1.0, br)
    assert mu.values.dtype.kind == "i"
    moving = ends[np.abs(ends) > 1e-6]
    assert abs(mu.integral() - moving.sum()) < 1e-12
    assert abs(mu.riemann() - moving.sum()) <= TWO_PI * len(moving) / 32 + 1e-9


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0.1, 5), st.floats(-3, 3)), min_size=1,
                max_size=4))
def test_steps_superpose(steps):
    P = potential_from_steps([(a, a + w, v) for a, w, v in steps])
    for a, w, v in steps:
        x = a + 0.5 * w
        expected = sum(vv for aa, ww, vv in steps if aa <= x < aa + ww)
        assert abs(P(x) - expected) < 1e-9
