import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfdecoherence import charts as ch
from selfdecoherence import wigner as wg
from selfdecoherence.dynamics import harmonic, henon_heiles, pendulum, separable_harmonic
from selfdecoherence.errors import PreconditionError

GRID = wg.PhaseGrid(-3.0, 3.0, 64, -3.0, 3.0, 64)


def energy_chart(label, system, low=-math.inf, high=math.inf, priority=0):
    return ch.Chart(label, ch.EnergyWindow(system.energy, low, high), (ch.make_constant("hamiltonian", system),),
                    priority)


def test_pendulum_separatrix_split_is_a_partition():
    system = pendulum()
    lib = ch.Chart("lib", ch.SeparatrixSide(system.energy, system.separatrix, "inside"), priority=1)
    rot = ch.Chart("rot", ch.SeparatrixSide(system.energy, system.separatrix, "outside"))
    grid = wg.PhaseGrid(-math.pi, math.pi, 128, -3.0, 3.0, 128)
    report = ch.validate_partition(ch.Partition([lib, rot], grid))
    assert report.ok
    q = np.array([[0.0], [0.0], [math.pi / 2]])
    p = np.array([[1.0], [2.5], [0.0]])
    # H = 0.5, 3.125, 1: libration, rotation, libration
    assert list(ch.index_function(lib, q, p)) == [1, 0, 1]
    assert list(ch.index_function(rot, q, p)) == [0, 1, 0]
    assert ch.index_function(lib, q, p).dtype == np.int8


def test_separatrix_point_goes_to_outside_chart():
    system = pendulum()
    on = (np.array([[0.0]]), np.array([[2.0]]))
    assert ch.SeparatrixSide(system.energy, 2.0, "outside").contains(*on)[0]
    assert not ch.SeparatrixSide(system.energy, 2.0, "inside").contains(*on)[0]


@given(st.lists(st.floats(0.05, 4.0), min_size=1, max_size=4, unique=True))
def test_energy_window_stack_is_a_partition(cuts):
    system = harmonic()
    edges = [-math.inf, *sorted(cuts), math.inf]
    charts = [energy_chart(f"c{i}", system, lo, hi) for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:]))]
    part = ch.Partition(charts, GRID)
    assert np.all(part.index_sum() == 1)
    assert ch.validate_partition(part).ok


def test_overlap_and_gap_reported_with_coordinates():
    system = harmonic()
    over = ch.Partition([energy_chart("a", system, high=1.5), energy_chart("b", system, low=1.0)], GRID)
    report = ch.validate_partition(over)
    assert report.gaps.shape[0] == 0 and report.overlaps.shape[0] > 0
    h = system.energy(report.overlaps[:, :1], report.overlaps[:, 1:])
    assert np.all((h >= 1.0) & (h < 1.5))
    gap = ch.Partition([energy_chart("a", system, high=1.0), energy_chart("b", system, low=1.5)], GRID)
    report = ch.validate_partition(gap)
    assert report.overlaps.shape[0] == 0 and report.gaps.shape[0] > 0
    assert not report.ok and report.summary()


def test_assign_respects_priority_then_order():
    system = harmonic()
    low = energy_chart("low", system, high=1.5, priority=0)
    high = energy_chart("high", system, low=1.0, priority=1)
    part = ch.Partition([low, high], GRID)
    q = np.array([[0.0], [0.0], [0.0]])
    p = np.array([[0.5], [1.5], [2.0]])  # H = 0.125, 1.125, 2
    assert list(part.assign(q, p)) == [0, 1, 1]
    tie = ch.Partition([energy_chart("x", system, high=1.5), energy_chart("y", system, low=1.0)], GRID)
    assert list(tie.assign(q, p)) == [0, 0, 1]


def test_rectangle_is_half_open():
    r = ch.Rectangle((0.0, 0.0), (1.0, 1.0))
    q = np.array([[0.0], [1.0], [0.5]])
    p = np.array([[0.0], [0.5], [1.0]])
    assert list(r.contains(q, p)) == [True, False, False]


def test_half_plane_closed_flag():
    on = (np.array([[0.0]]), np.array([[1.0]]))
    assert ch.HalfPlane((1.0, 0.0), 0.0, closed=True).contains(*on)[0]
    assert not ch.HalfPlane((1.0, 0.0), 0.0, closed=False).contains(*on)[0]


def test_involution_of_valid_constants():
    system = pendulum()
    grid = wg.PhaseGrid(-math.pi, math.pi, 128, -3.0, 3.0, 128)
    lib = ch.Chart("lib", ch.SeparatrixSide(system.energy, system.separatrix, "inside"))
    H = ch.make_constant("hamiltonian", system).field(grid)
    assert ch.check_involution(H, [H], lib) < 1e-6


def test_separable_invariant_commutes_and_henon_heiles_breaks_it():
    g4 = wg.PhaseGrid(-3.0, 3.0, 24, -3.0, 3.0, 24, dof=2)
    everywhere = ch.Chart("all", ch.Rectangle((-10.0,) * 4, (10.0,) * 4))
    e2 = ch.make_constant("harmonic_energy", index=1).field(g4)
    sep = ch.make_constant("hamiltonian", separable_harmonic()).field(g4)
    assert ch.check_involution(sep, [e2], everywhere) < 1e-6
    hh = ch.make_constant("hamiltonian", henon_heiles(0.1)).field(g4)
    assert ch.check_involution(hh, [e2], everywhere) > 1e-2


def test_angular_momentum_conserved_by_isotropic_oscillator():
    g4 = wg.PhaseGrid(-2.0, 2.0, 16, -2.0, 2.0, 16, dof=2)
    everywhere = ch.Chart("all", ch.Rectangle((-10.0,) * 4, (10.0,) * 4))
    L = ch.make_constant("angular_momentum").field(g4)
    H = ch.make_constant("hamiltonian", separable_harmonic(1.0, 1.0)).field(g4)
    assert ch.check_involution(H, [L], everywhere) < 1e-10
    H2 = ch.make_constant("hamiltonian", separable_harmonic(1.0, 1.3)).field(g4)
    assert ch.check_involution(H2, [L], everywhere) > 1e-2


def test_empty_interior_rejected():
    system = harmonic()
    tiny = ch.Chart("tiny", ch.Rectangle((0.0, 0.0), (0.05, 0.05)))
    H = ch.make_constant("hamiltonian", system).field(GRID)
    with pytest.raises(PreconditionError):
        ch.check_involution(H, [H], tiny)


def test_restrict_zeroes_outside():
    system = harmonic()
    chart = energy_chart("low", system, high=1.0)
    H = ch.make_constant("hamiltonian", system).field(GRID)
    r = ch.restrict(H, chart)
    assert np.all(r.values[H.values.real >= 1.0] == 0)
    inside = H.values.real < 1.0
    np.testing.assert_array_equal(r.values[inside], H.values[inside])


def test_unknown_constant_form():
    with pytest.raises(ValueError):
        ch.make_constant("energy_of_the_universe")
