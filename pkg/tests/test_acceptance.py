"""One test per acceptance criterion; each prints a single PASS/FAIL line with the measured values."""

import math
import time
import warnings

import numpy as np
import pytest

from selfdecoherence import charts as ch
from selfdecoherence import classical as cl
from selfdecoherence import spectral as sp
from selfdecoherence import wigner as wg
from selfdecoherence.cli import main
from selfdecoherence.dynamics import harmonic, separable_harmonic
from selfdecoherence.errors import QuadratureAccuracyWarning
from selfdecoherence.scenario import load_scenario
from selfdecoherence.verify import (EVERYWHERE_1D, duality_errors, pairing_trace_error, random_band_limited_field,
                                    random_clean_kernel)

pytestmark = pytest.mark.acceptance


def test_01_gaussian_kernel_decay(record):
    start = time.perf_counter()
    grid = sp.EnergyGrid(0.0, 10.0, 401)
    state = sp.VanHoveState(sp.SpectralKernel(grid, 1, sp.flat_singular(grid, 1, 4.0, 6.0),
                                              sp.gaussian_nu_regular(grid, 1, sigma=0.2, amplitude=0.1)), 1.0)
    obs = sp.constant_observable(grid, 1)
    t = np.linspace(0.0, 15.0, 301)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureAccuracyWarning)
        curve = sp.decay_curve(state, obs, t)
        other = sp.decay_curve(state, obs, np.linspace(0.0, 15.0, 37))
    r0 = curve.regular[0].real
    law = np.abs(curve.regular.real - r0 * np.exp(-0.5 * (0.2 * t) ** 2)).max() / r0
    sing = np.concatenate([curve.total - curve.regular.real, other.total - other.regular.real])
    spread = float(np.ptp(sing))
    elapsed = time.perf_counter() - start
    ok = law < 1e-3 and spread < 1e-12 and elapsed < 10.0
    record(1, ok, f"gaussian law deviation {law:.2e} < 1e-3, singular spread {spread:.1e} < 1e-12, {elapsed:.2f}s < 10s")
    assert ok


def test_02_c1_kernel_slope(record):
    start = time.perf_counter()
    grid = sp.EnergyGrid(0.0, 10.0, 401)
    state = sp.VanHoveState(sp.SpectralKernel(grid, 1, sp.flat_singular(grid, 1, 4.0, 6.0),
                                              sp.compact_c1_regular(grid, 1)), 1.0)
    t_hi = sp.validity_time(grid, 1.0)
    curve = sp.decay_curve(state, sp.constant_observable(grid, 1), np.linspace(0.0, t_hi, 2001))
    slope = sp.envelope_slope(curve, t_hi)
    elapsed = time.perf_counter() - start
    ok = slope <= -0.85 and elapsed < 10.0
    record(2, ok, f"log-log envelope slope {slope:.3f} <= -0.85 over [{t_hi / 10:g}, {t_hi:g}], {elapsed:.2f}s < 10s")
    assert ok


def test_03_hbar_slopes(record):
    start = time.perf_counter()
    grid = wg.PhaseGrid(-8.0, 8.0, 256, -8.0, 8.0, 256)
    Q, P = grid.mesh()
    f = np.exp(-(Q**2 + P**2) / 4) * np.cos(Q + 0.5 * P)
    g = np.exp(-((Q - 0.5) ** 2 + P**2) / 6) * np.sin(P - 0.3 * Q)
    hs = np.array([0.1, 0.05, 0.025, 0.0125])
    star, bracket = [], []
    for h in hs:
        F = wg.PhaseSpaceField(grid, f, h, "spectral")
        G = wg.PhaseSpaceField(grid, g, h, "spectral")
        star.append(np.abs(wg.star_product(F, G, 4).values - f * g).max())
        bracket.append(np.abs(wg.moyal_bracket(F, G, 4).values - wg.poisson_bracket(F, G).values).max())
    s1 = np.polyfit(np.log(hs), np.log(star), 1)[0]
    s2 = np.polyfit(np.log(hs), np.log(bracket), 1)[0]
    elapsed = time.perf_counter() - start
    ok = 0.9 <= s1 <= 1.1 and 1.9 <= s2 <= 2.1 and elapsed < 30.0
    record(3, ok, f"star slope {s1:.4f} in [0.9, 1.1], moyal-poisson slope {s2:.4f} in [1.9, 2.1], {elapsed:.2f}s < 30s")
    assert ok


def test_04_pairing_vs_trace(record):
    start = time.perf_counter()
    e256 = pairing_trace_error(256)
    e128 = pairing_trace_error(128)
    elapsed = time.perf_counter() - start
    ok = e256 < 1e-6 and e256 < e128 and elapsed < 30.0
    record(4, ok, f"pairing vs trace {e256:.2e} < 1e-6 on 256^2, {e128:.2e} on 128^2 (decreasing), {elapsed:.2f}s < 30s")
    assert ok


def test_05_roundtrip_quantization(record):
    grid = wg.PhaseGrid.conjugate(-16.0, 16.0, 128, 1.0)
    fwd = back = 0.0
    for k in range(10):
        rng = np.random.default_rng(1000 + k)
        f = random_band_limited_field(rng, grid, 1.0)
        r = wg.wigner_transform(wg.weyl_quantize(f), 1.0)
        fwd = max(fwd, np.abs(r.values - f.values).max() / np.abs(f.values).max())
        kern = random_clean_kernel(rng, grid.q, 1.0)
        r2 = wg.weyl_quantize(wg.wigner_transform(kern, 1.0))
        back = max(back, np.abs(r2.values - kern.values).max() / np.abs(kern.values).max())
    ok = fwd < 1e-8 and back < 1e-8
    record(5, ok, f"W(Q(f)) error {fwd:.1e}, Q(W(K)) error {back:.1e}, both < 1e-8 over 10 cases")
    assert ok


def test_06_pointer_basis(record):
    rec = inv = 0.0
    grid = sp.EnergyGrid(0.0, 1.0, 3)
    for k in range(100):
        rng = np.random.default_rng(2000 + k)
        m = int(rng.integers(1, 9))
        blocks = sp.random_hermitian_blocks(3, m, rng)
        state = sp.VanHoveState(sp.SpectralKernel(grid, m, blocks, np.zeros((3, 3, m, m))))
        basis = sp.pointer_basis(state)
        rot = sp.apply_pointer_basis(state, basis).kernel.singular
        rec = max(rec, basis.reconstruction_error)
        inv = max(inv, np.abs(np.trace(rot, axis1=1, axis2=2) - np.trace(blocks, axis1=1, axis2=2)).max())
    ok = rec < 1e-10 and inv < 1e-12
    record(6, ok, f"reconstruction {rec:.1e} < 1e-10, per-energy trace change {inv:.1e} < 1e-12 over 100 blocks")
    assert ok


def test_07_partition_of_unity(record, scenarios):
    sc = load_scenario(scenarios / "pendulum_two_chart.toml")
    report = ch.validate_partition(sc.partition())
    defects = report.gaps.shape[0] + report.overlaps.shape[0]
    H = wg.PhaseSpaceField.from_function(sc.phase_grid, sc.system.field_function(), sc.hbar, sc.scheme)
    residual = max(ch.check_involution(H, [c.field(sc.phase_grid, sc.hbar, sc.scheme) for c in chart.constants], chart)
                   for chart in sc.charts)
    # a non-trivial valid constant: the second oscillator energy of a separable pair
    g4 = wg.PhaseGrid(-3.0, 3.0, 24, -3.0, 3.0, 24, dof=2)
    box = ch.Chart("all", ch.Rectangle((-10.0,) * 4, (10.0,) * 4))
    e2 = ch.make_constant("harmonic_energy", index=1).field(g4)
    residual = max(residual, ch.check_involution(ch.make_constant("hamiltonian", separable_harmonic()).field(g4), [e2], box))
    hh = load_scenario(scenarios / "henon_heiles.toml")
    (chart,) = hh.charts
    Hh = chart.constants[0].field(hh.phase_grid, hh.hbar, hh.scheme)
    negative = ch.check_involution(Hh, [c.field(hh.phase_grid, hh.hbar, hh.scheme) for c in chart.constants], chart)
    ok = defects == 0 and residual < 1e-6 and negative > 1e-2
    record(7, ok, f"pendulum partition defects {defects}, involution residual {residual:.1e} < 1e-6, "
                  f"henon-heiles residual {negative:.3g} > 1e-2")
    assert ok


def test_08_classical_limit(record):
    start = time.perf_counter()
    aa = cl.build_action_angle(harmonic(), EVERYWHERE_1D, [0.5])
    grid = wg.PhaseGrid(-2.6, 2.6, 512, -2.6, 2.6, 512)
    dens = cl.classical_density({"all": ([0.5], [1.0])}, {"all": aa}, grid, smearing=0.03)
    uniform = cl.angular_uniformity(dens, "all", aa, 0.5)
    minimum = dens.field.values.real.min()
    norm = abs(dens.field.integral().real - 1.0)
    duality = max(duality_errors(seed=0, cases=20))
    elapsed = time.perf_counter() - start
    ok = uniform < 1e-3 and minimum >= -1e-10 and norm < 1e-3 and duality < 1e-3 \
        and elapsed < 60.0
    record(8, ok, f"uniformity {uniform:.1e} < 1e-3, min {minimum:.1e} >= -1e-10, "
                  f"normalization {norm:.1e} < 1e-3, duality {duality:.1e} < 1e-3 over 20 cases, {elapsed:.1f}s < 60s")
    assert ok


def test_09_trajectories(record):
    system = harmonic()
    aa = cl.build_action_angle(system, EVERYWHERE_1D, [0.5])
    tr = cl.sample_trajectory(aa, 0.5, 0.0, 20.0, 1e-3)
    closed = max(np.abs(tr.q[:, 0] - np.sin(tr.times)).max(), np.abs(tr.p[:, 0] - np.cos(tr.times)).max())
    drift = tr.energy_drift()
    fit = cl.angle_fit(tr.times, cl.orbit_angle(aa, 0.5, tr.q, tr.p))
    grid = wg.PhaseGrid(-2.6, 2.6, 512, -2.6, 2.6, 512)
    dens = cl.classical_density({"all": ([0.5], [1.0])}, {"all": aa}, grid, smearing=0.03)
    flow = cl.density_flow_invariance(dens.field, system, 1.0)
    Q, _ = grid.mesh()
    theta = np.linspace(0.0, 2 * math.pi, 64, endpoint=False)
    control = cl.density_flow_invariance(dens.field.with_values(Q), system, 1.0, points=(np.cos(theta), np.sin(theta)))
    ok = closed < 1e-6 and drift < 1e-8 and fit["max_residual"] < 1e-6 and flow < 1e-2 and control >= 0.5
    record(9, ok, f"closed form {closed:.1e} < 1e-6, energy drift {drift:.1e} < 1e-8, angle residual "
                  f"{fit['max_residual']:.1e} < 1e-6, flow drift {flow:.1e} < 1e-2, negative control {control:.2f} >= 0.5")
    assert ok


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_10_determinism(record, scenarios, tmp_path, capsys):
    codes = []
    for run in ("a", "b"):
        codes.append(main(["verify", "-o", str(tmp_path / run / "verify"), "-q"]))
        for cmd in ("decohere", "wigner", "classical"):
            codes.append(main([cmd, str(scenarios / "harmonic.toml"), "-o", str(tmp_path / run / cmd), "-q"]))
    capsys.readouterr()
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    same = a == b
    ok = same and not any(codes) and len(a) > 10
    record(10, ok, f"verify and harmonic decohere/wigner/classical rerun: {len(a)} files byte-identical = {same}")
    assert ok
