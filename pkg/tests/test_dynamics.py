import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfdecoherence.dynamics import SYSTEMS, flow, harmonic, make_system, pendulum, yoshida4


def test_registry():
    assert set(SYSTEMS) >= {"harmonic", "pendulum", "henon_heiles", "separable_harmonic"}
    assert make_system("pendulum", omega0=2.0).separatrix == pytest.approx(8.0)
    with pytest.raises(ValueError):
        make_system("double_pendulum")


@given(st.floats(0.5, 2.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_harmonic_flow_matches_closed_form(omega, q0, p0):
    system = harmonic(omega)
    t, q, p = flow(system, np.array([q0]), np.array([p0]), 5.0, 1e-3)
    exact_q = q0 * np.cos(omega * t) + p0 / omega * np.sin(omega * t)
    exact_p = p0 * np.cos(omega * t) - q0 * omega * np.sin(omega * t)
    assert np.abs(q[:, 0] - exact_q).max() < 1e-9
    assert np.abs(p[:, 0] - exact_p).max() < 1e-9


def test_yoshida_is_fourth_order():
    system = pendulum()
    q0, p0 = np.array([1.0]), np.array([0.3])
    ref = flow(system, q0, p0, 2.0, 1e-4)
    errs = []
    for h in (0.04, 0.02):
        _, q, _ = flow(system, q0, p0, 2.0, h)
        errs.append(abs(q[-1, 0] - ref[1][-1, 0]))
    assert 13.0 < errs[0] / errs[1] < 19.0


def test_yoshida_accepts_per_point_steps():
    system = harmonic()
    q = np.array([[1.0], [0.5]])
    p = np.array([[0.0], [0.5]])
    h = np.array([[0.1], [0.2]])
    q1, p1 = yoshida4(system, q, p, h)
    for k in range(2):
        qk, pk = yoshida4(system, q[k], p[k], float(h[k, 0]))
        np.testing.assert_allclose(q1[k], qk, atol=1e-15)
        np.testing.assert_allclose(p1[k], pk, atol=1e-15)


def test_energy_drift_stays_small():
    system = pendulum()
    _, q, p = flow(system, np.array([2.0]), np.array([0.0]), 50.0, 1e-3)
    e = system.energy(q, p)
    assert np.abs(e - e[0]).max() < 1e-8


def test_flow_duration_and_grid():
    system = harmonic()
    t, q, _ = flow(system, np.array([1.0]), np.array([0.0]), 1.0, 0.3)
    assert t[-1] == pytest.approx(1.0)
    assert q.shape == (t.size, 1)
    assert math.isclose(system.energy(q[:1], np.zeros((1, 1)))[0], 0.5)
