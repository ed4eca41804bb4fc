import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfdecoherence import wigner as wg
from selfdecoherence.errors import BoundaryError, GridMismatchError
from selfdecoherence.verify import position_basis_trace, random_band_limited_field, random_clean_kernel

GRID = wg.PhaseGrid.conjugate(-10.0, 10.0, 128, 1.0)


def field(fn, grid=GRID, hbar=1.0, scheme="spectral"):
    return wg.PhaseSpaceField.from_function(grid, fn, hbar, scheme)


def test_grid_validation():
    with pytest.raises(ValueError):
        wg.PhaseGrid(0.0, 1.0, 5, 0.0, 1.0, 8)
    with pytest.raises(ValueError):
        wg.PhaseGrid(1.0, 0.0, 8, 0.0, 1.0, 8)
    assert GRID.is_conjugate(1.0)
    assert not GRID.is_conjugate(0.5)
    assert GRID.cell_volume == pytest.approx(GRID.dq * GRID.dp)


@pytest.mark.parametrize("q0,p0,width,hbar", [(0.0, 0.0, 1.0, 1.0), (1.0, -2.0, 0.7, 1.0), (-0.5, 1.5, 1.2, 0.5)])
def test_gaussian_state_symbol_closed_form(q0, p0, width, hbar):
    grid = wg.PhaseGrid.conjugate(-10.0, 10.0, 128, hbar)
    w = wg.state_symbol(wg.gaussian_state_kernel(grid.q, hbar, q0, p0, width), hbar)
    Q, P = grid.mesh()
    s2 = hbar * width**2
    exact = np.exp(-((Q - q0) ** 2) / s2 - s2 * (P - p0) ** 2 / hbar**2) / (math.pi * hbar)
    assert np.abs(w.values - exact).max() < 1e-8
    assert w.integral().real == pytest.approx(1.0, abs=1e-10)


def test_ground_state_peak_is_inverse_pi():
    w = wg.state_symbol(wg.ho_ground_state_kernel(GRID.q, 1.0), 1.0)
    assert abs(w.values.real.max() - 1.0 / math.pi) < 1e-6


def test_identity_and_position_symbols():
    assert np.abs(wg.wigner_transform(wg.identity_kernel(GRID.q), 1.0).values - 1.0).max() < 1e-12
    Q, _ = GRID.mesh()
    assert np.abs(wg.wigner_transform(wg.position_kernel(GRID.q, 2), 1.0).values - Q**2).max() < 1e-10


def test_momentum_symbol_is_p_away_from_nyquist():
    sym = wg.wigner_transform(wg.momentum_kernel(GRID.q, 1.0, 1), 1.0, check=False)
    _, P = GRID.mesh()
    inner = np.abs(GRID.p) < GRID.p.max()
    assert np.abs(sym.values - P)[:, inner].max() < 1e-10


def test_dense_kernel_trips_boundary_check():
    with pytest.raises(BoundaryError):
        wg.wigner_transform(wg.momentum_kernel(GRID.q, 1.0, 1), 1.0)


def test_poisson_bracket_of_q_and_p_is_one():
    q = field(lambda Q, P: Q, scheme="fd4")
    p = field(lambda Q, P: P, scheme="fd4")
    assert np.abs(wg.poisson_bracket(q, p).values - 1.0).max() < 1e-12
    assert np.abs(wg.moyal_bracket(q, p, 3).values - 1.0).max() < 1e-12


def test_star_product_of_q_and_p():
    q = field(lambda Q, P: Q, scheme="fd4")
    p = field(lambda Q, P: P, scheme="fd4")
    Q, P = GRID.mesh()
    assert np.abs(wg.star_product(q, p, 1).values - (Q * P + 0.5j)).max() < 1e-10


def test_order_is_bounded():
    f = field(lambda Q, P: np.exp(-(Q**2 + P**2)))
    with pytest.raises(ValueError):
        wg.star_product(f, f, 5)
    assert wg.star_product(f, f, 2).truncation == 2


def test_mismatched_grids_rejected():
    other = wg.PhaseGrid.conjugate(-8.0, 8.0, 128, 1.0)
    with pytest.raises(GridMismatchError):
        wg.star_product(field(lambda Q, P: Q), field(lambda Q, P: Q, grid=other), 1)


def _smooth(a, b):
    return field(lambda Q, P: np.exp(-((Q - a) ** 2 + (P - b) ** 2) / 4) * np.cos(Q + b * P))


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_moyal_bracket_is_antisymmetric(a, b, c, d):
    f, g = _smooth(a, b), _smooth(c, d)
    for order in (1, 3):
        total = wg.moyal_bracket(f, g, order).values + wg.moyal_bracket(g, f, order).values
        assert np.abs(total).max() == 0.0


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_star_with_constant_is_identity(a, b):
    f = _smooth(a, b)
    one = field(lambda Q, P: np.ones_like(Q))
    assert np.abs(wg.star_product(f, one, 4).values - f.values).max() < 1e-12


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_order_zero_star_is_pointwise(a, b, c, d):
    f, g = _smooth(a, b), _smooth(c, d)
    assert np.abs(wg.star_product(f, g, 0).values - f.values * g.values).max() == 0.0


def test_pairing_matches_position_basis_trace():
    hbar = 1.0
    grid = wg.PhaseGrid.conjugate(-10.0, 10.0, 256, hbar)
    kern = wg.gaussian_state_kernel(grid.q, hbar, 0.5, 0.7, 1.0)
    rho = wg.state_symbol(kern, hbar)
    for name, fn in {"q2": lambda Q, P: Q * Q, "p2": lambda Q, P: P * P, "qp": lambda Q, P: Q * P}.items():
        exact = position_basis_trace(grid.q, kern.values, hbar, name)
        assert wg.pairing(rho, field(fn, grid)) == pytest.approx(exact, rel=1e-6)


@given(st.integers(0, 2**31))
def test_weyl_roundtrip_of_band_limited_field(seed):
    grid = wg.PhaseGrid.conjugate(-16.0, 16.0, 128, 1.0)
    f = random_band_limited_field(np.random.default_rng(seed), grid, 1.0)
    back = wg.wigner_transform(wg.weyl_quantize(f), 1.0)
    assert np.abs(back.values - f.values).max() / np.abs(f.values).max() < 1e-8


@given(st.integers(0, 2**31))
def test_hermitian_kernel_gives_real_symbol(seed):
    q = wg.PhaseGrid.conjugate(-16.0, 16.0, 128, 1.0).q
    k = random_clean_kernel(np.random.default_rng(seed), q, 1.0)
    herm = wg.OperatorKernel(q, 0.5 * (k.values + k.values.conj().T))
    sym = wg.wigner_transform(herm, 1.0)
    assert np.abs(sym.values.imag).max() <= 1e-8 * np.abs(sym.values).max()


def test_trace_is_phase_space_integral():
    kern = wg.gaussian_state_kernel(GRID.q, 1.0, 1.0, 2.0, 0.8)
    assert wg.operator_trace(kern).real == pytest.approx(1.0, abs=1e-12)
    assert wg.state_symbol(kern, 1.0).integral().real == pytest.approx(1.0, abs=1e-10)


def test_fd4_derivative_is_fourth_order():
    errs = []
    for n in (64, 128):
        grid = wg.PhaseGrid(-2.0, 2.0, n, -2.0, 2.0, n)
        f = field(lambda Q, P: np.sin(Q) * np.cos(P), grid, scheme="fd4")
        g = field(lambda Q, P: Q * Q + P, grid, scheme="fd4")
        Q, P = grid.mesh()
        exact = np.cos(Q) * np.cos(P) + np.sin(Q) * np.sin(P) * 2 * Q
        inner = (slice(4, -4), slice(4, -4))
        errs.append(np.abs(wg.poisson_bracket(f, g).values - exact)[inner].max())
    assert 12.0 < errs[0] / errs[1] < 20.0
