"""Fixed-seed invariant suite behind ``selfdecoherence verify``."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ellipk

from . import charts as ch
from . import classical as cl
from . import spectral as sp
from . import wigner as wg
from .dynamics import harmonic, henon_heiles, pendulum, separable_harmonic
from .errors import QuadratureAccuracyWarning

__all__ = ["Check", "run_suite", "SUITES"]


@dataclass
class Check:
    name: str
    value: float
    tolerance: object
    relation: str  # "<", "<=", ">", ">=", "in"
    passed: bool

    def line(self) -> str:
        tol = f"[{self.tolerance[0]:g}, {self.tolerance[1]:g}]" if self.relation == "in" else f"{self.tolerance:g}"
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.6g} {self.relation} {tol}"

    def as_dict(self) -> dict:
        d = asdict(self)
        d["value"] = _finite(d["value"])
        if isinstance(d["tolerance"], tuple):
            d["tolerance"] = list(d["tolerance"])
        return d


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _check(name, value, relation, tol) -> Check:
    value = float(value)
    ok = {
        "<": lambda: value < tol,
        "<=": lambda: value <= tol,
        ">": lambda: value > tol,
        ">=": lambda: value >= tol,
        "in": lambda: tol[0] <= value <= tol[1],
    }[relation]()
    return Check(name, value, tuple(tol) if relation == "in" else tol, relation, bool(ok and math.isfinite(value)))


def _slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# -- spectral ----------------------------------------------------------------


def spectral_checks(seed: int = 0) -> list[Check]:
    out = []
    grid = sp.EnergyGrid(0.0, 10.0, 401)
    state = sp.VanHoveState(sp.SpectralKernel(grid, 1, sp.flat_singular(grid, 1, 4.0, 6.0),
                                              sp.gaussian_nu_regular(grid, 1, sigma=0.2, amplitude=0.1)))
    obs = sp.constant_observable(grid, 1)
    t = np.linspace(0.0, 15.0, 301)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureAccuracyWarning)
        curve = sp.decay_curve(state, obs, t)
        perm = np.random.default_rng(seed).permutation(t.size)
        again = sp.decay_curve(state, obs, np.sort(t[perm]))
    out.append(_check("spectral.gaussian_law_deviation", sp.gaussian_law_deviation(curve, 0.2), "<", 1e-3))
    sing = np.abs((curve.total - curve.regular.real) - (again.total - again.regular.real)).max()
    out.append(_check("spectral.singular_constancy", sing, "<", 1e-12))

    c1 = sp.VanHoveState(sp.SpectralKernel(grid, 1, sp.flat_singular(grid, 1, 4.0, 6.0), sp.compact_c1_regular(grid, 1)))
    c1_curve = sp.decay_curve(c1, obs, np.linspace(0.0, sp.validity_time(grid, 1.0), 2001))
    out.append(_check("spectral.c1_decay_slope", sp.envelope_slope(c1_curve), "<=", -0.85))

    vals = []
    for n in (41, 81, 161, 321):
        g = sp.EnergyGrid(0.0, 10.0, n)
        s = sp.VanHoveState(sp.SpectralKernel(g, 1, sp.thermal_singular(g, 1, 0.7), sp.compact_c1_regular(g, 1)))
        vals.append(sp.expectation_at_time(s, sp.energy_observable(g, 1), 1.0))
    d = np.diff(vals)
    out.append(_check("spectral.quadrature_order_ratio", d[-2] / d[-1], "in", (3.5, 4.5)))

    worst_rec, worst_tr, worst_off = 0.0, 0.0, 0.0
    g8 = sp.EnergyGrid(0.0, 1.0, 3)
    for k in range(100):
        rng = np.random.default_rng(seed + k)
        m = int(rng.integers(1, 9))
        blocks = sp.random_hermitian_blocks(g8.n_points, m, rng)
        st = sp.VanHoveState(sp.SpectralKernel(g8, m, blocks, np.zeros((3, 3, m, m))))
        basis = sp.pointer_basis(st)
        worst_rec = max(worst_rec, basis.reconstruction_error)
        rot = sp.apply_pointer_basis(st, basis)
        tr0 = np.trace(blocks, axis1=1, axis2=2)
        tr1 = np.trace(rot.kernel.singular, axis1=1, axis2=2)
        worst_tr = max(worst_tr, float(np.abs(tr0 - tr1).max()))
        off = rot.kernel.singular - np.einsum("wmm->wm", rot.kernel.singular)[..., None] * np.eye(m)
        worst_off = max(worst_off, float(np.abs(off).max()))
    out.append(_check("spectral.pointer_reconstruction", worst_rec, "<", 1e-10))
    out.append(_check("spectral.pointer_trace_invariance", worst_tr, "<", 1e-12))
    out.append(_check("spectral.pointer_offdiagonal", worst_off, "<", 1e-10))

    wide = sp.VanHoveState(sp.SpectralKernel(grid, 1, sp.thermal_singular(grid, 1, 0.5),
                                             sp.gaussian_nu_regular(grid, 1, sigma=1.0, amplitude=0.05)))
    late = sp.decay_curve(wide, sp.energy_observable(grid, 1), np.array([0.0, 8.0]))
    plateau = abs(late.total[-1] - sp.expectation_at_time(sp.weak_limit(wide), sp.energy_observable(grid, 1), 0.0))
    out.append(_check("spectral.weak_limit_plateau", plateau, "<", 1e-6))
    return out


# -- wigner ------------------------------------------------------------------


def _smooth_pair():
    f = lambda Q, P: np.exp(-(Q**2 + P**2) / 4) * np.cos(Q + 0.5 * P)  # noqa: E731
    g = lambda Q, P: np.exp(-((Q - 0.5) ** 2 + P**2) / 6) * np.sin(P - 0.3 * Q)  # noqa: E731
    return f, g


def hbar_slopes() -> tuple[float, float]:
    grid = wg.PhaseGrid(-8.0, 8.0, 256, -8.0, 8.0, 256)
    f, g = _smooth_pair()
    hs = [0.1, 0.05, 0.025, 0.0125]
    star, bracket = [], []
    for h in hs:
        F = wg.PhaseSpaceField.from_function(grid, f, h, "spectral")
        G = wg.PhaseSpaceField.from_function(grid, g, h, "spectral")
        star.append(np.abs(wg.star_product(F, G, 4).values - F.values * G.values).max())
        bracket.append(np.abs(wg.moyal_bracket(F, G, 4).values - wg.poisson_bracket(F, G).values).max())
    return _slope(hs, star), _slope(hs, bracket)


def position_basis_trace(q, rho, hbar, observable) -> float:
    """Tr(rho O) with O built from diagonal q and DFT momentum matrices."""
    n = q.size
    dq = q[1] - q[0]
    k = 2 * np.pi * np.fft.fftfreq(n, dq)
    F = np.fft.fft(np.eye(n), axis=0)
    P = np.conj(F.T) @ np.diag(hbar * k) @ F / n
    X = np.diag(q)
    ops = {
        "q2": X @ X,
        "p2": P @ P,
        "qp": 0.5 * (X @ P + P @ X),
        "q4": X @ X @ X @ X,
        "p4": P @ P @ P @ P,
        "H": 0.5 * (X @ X + P @ P),
    }
    return float(np.real(np.trace(rho @ ops[observable]) * dq))


SYMBOLS = {
    "q2": lambda Q, P: Q * Q,
    "p2": lambda Q, P: P * P,
    "qp": lambda Q, P: Q * P,
    "q4": lambda Q, P: Q**4,
    "p4": lambda Q, P: P**4,
    "H": lambda Q, P: 0.5 * (Q * Q + P * P),
}
GAUSSIAN_FAMILY = ((0.5, 0.7, 1.0), (1.0, 12.0, 0.35), (-2.0, -5.0, 0.5))


def pairing_trace_error(n: int, hbar: float = 1.0) -> float:
    grid = wg.PhaseGrid.conjugate(-10.0, 10.0, n, hbar)
    worst = 0.0
    for q0, p0, w in GAUSSIAN_FAMILY:
        kern = wg.gaussian_state_kernel(grid.q, hbar, q0, p0, w)
        rho = wg.state_symbol(kern, hbar)
        for name, fn in SYMBOLS.items():
            obs = wg.PhaseSpaceField.from_function(rho.grid, fn, hbar)
            exact = position_basis_trace(grid.q, kern.values, hbar, name)
            worst = max(worst, abs(wg.pairing(rho, obs) - exact) / abs(exact))
    return worst


def random_band_limited_field(rng, grid, hbar, n_bumps=4):
    Q, P = grid.mesh()
    vals = np.zeros(grid.shape, complex)
    for _ in range(n_bumps):
        q0, p0 = rng.uniform(-2.0, 2.0, 2)
        a = rng.uniform(0.6, 1.5)
        b = rng.uniform(1.0, 1.5)
        c = rng.normal() + 1j * rng.normal()
        vals += c * np.exp(-((Q - q0) / a) ** 2 - ((P - p0) / b) ** 2)
    return wg.PhaseSpaceField(grid, vals, hbar, "spectral")


def random_clean_kernel(rng, q, hbar, n_packets=3):
    vals = np.zeros((q.size, q.size), complex)
    for _ in range(n_packets):
        a = wg.gaussian_state_kernel(q, hbar, *rng.uniform(-2, 2, 2), rng.uniform(0.7, 1.4)).values
        vals += (rng.normal() + 1j * rng.normal()) * a
        b = wg.gaussian_state_kernel(q, hbar, *rng.uniform(-2, 2, 2), rng.uniform(0.7, 1.4)).values
        vals += rng.normal() * (a @ b) * (q[1] - q[0])
    return wg.OperatorKernel(q, vals)


def roundtrip_errors(seed: int = 0, cases: int = 10, n: int = 128, hbar: float = 1.0) -> tuple[float, float]:
    grid = wg.PhaseGrid.conjugate(-16.0, 16.0, n, hbar)
    fwd, back = 0.0, 0.0
    for k in range(cases):
        rng = np.random.default_rng(seed + k)
        f = random_band_limited_field(rng, grid, hbar)
        r = wg.wigner_transform(wg.weyl_quantize(f), hbar)
        fwd = max(fwd, float(np.abs(r.values - f.values).max() / np.abs(f.values).max()))
        kern = random_clean_kernel(rng, grid.q, hbar)
        r2 = wg.weyl_quantize(wg.wigner_transform(kern, hbar))
        back = max(back, float(np.abs(r2.values - kern.values).max() / np.abs(kern.values).max()))
    return fwd, back


def wigner_checks(seed: int = 0) -> list[Check]:
    out = []
    s1, s2 = hbar_slopes()
    out.append(_check("wigner.star_hbar_slope", s1, "in", (0.9, 1.1)))
    out.append(_check("wigner.moyal_minus_poisson_hbar_slope", s2, "in", (1.9, 2.1)))
    out.append(_check("wigner.pairing_vs_trace_256", pairing_trace_error(256), "<", 1e-6))
    fwd, back = roundtrip_errors(seed)
    out.append(_check("wigner.roundtrip_field", fwd, "<", 1e-8))
    out.append(_check("wigner.roundtrip_kernel", back, "<", 1e-8))

    grid = wg.PhaseGrid.conjugate(-10.0, 10.0, 128, 1.0)
    gs = wg.wigner_transform(wg.ho_ground_state_kernel(grid.q, 1.0), 1.0)
    Q, P = grid.mesh()
    out.append(_check("wigner.ground_state_symbol", np.abs(gs.values - 2 * np.exp(-(Q**2 + P**2))).max(), "<", 1e-8))
    wide = wg.PhaseGrid.conjugate(-16.0, 16.0, 128, 1.0)
    herm = random_clean_kernel(np.random.default_rng(seed), wide.q, 1.0)
    herm = wg.OperatorKernel(wide.q, 0.5 * (herm.values + herm.values.conj().T))
    sym = wg.wigner_transform(herm, 1.0)
    out.append(_check("wigner.hermitian_gives_real", np.abs(sym.values.imag).max() / np.abs(sym.values).max(), "<", 1e-8))
    f, g = _smooth_pair()
    F = wg.PhaseSpaceField.from_function(grid, f, 1.0, "spectral")
    G = wg.PhaseSpaceField.from_function(grid, g, 1.0, "spectral")
    anti = np.abs(wg.moyal_bracket(F, G, 3).values + wg.moyal_bracket(G, F, 3).values).max()
    out.append(_check("wigner.moyal_antisymmetry", anti, "<=", 0.0))
    return out


# -- charts ------------------------------------------------------------------


def pendulum_charts(omega0: float = 1.0):
    system = pendulum(omega0)
    lib = ch.Chart("libration", ch.SeparatrixSide(system.energy, system.separatrix, "inside"),
                   (ch.make_constant("hamiltonian", system),), priority=1)
    rot = ch.Chart("rotation", ch.SeparatrixSide(system.energy, system.separatrix, "outside"),
                   (ch.make_constant("hamiltonian", system),), priority=0, anchors=((0.0, 1), (0.0, -1)))
    return system, lib, rot


def moyal_gap_ratios() -> list[float]:
    """Moyal minus Poisson residual for (H, H^2) of the pendulum, hbar halved twice."""
    system, lib, _ = pendulum_charts()
    grid = wg.PhaseGrid(-math.pi, math.pi, 128, -3.0, 3.0, 128)
    h_fn = system.field_function()
    gaps = []
    for hbar in (0.1, 0.05, 0.025):
        H = wg.PhaseSpaceField.from_function(grid, h_fn, hbar, "fd4")
        H2 = H.with_values(H.values**2)
        gaps.append(ch.moyal_involution_residual(H, [H2], lib, hbar, 3) - ch.check_involution(H, [H2], lib))
    return [gaps[0] / gaps[1], gaps[1] / gaps[2]]


def chart_checks(seed: int = 0) -> list[Check]:
    out = []
    system, lib, rot = pendulum_charts()
    grid = wg.PhaseGrid(-math.pi, math.pi, 128, -3.0, 3.0, 128)
    report = ch.validate_partition(ch.Partition([lib, rot], grid))
    out.append(_check("charts.pendulum_partition_defects", report.gaps.shape[0] + report.overlaps.shape[0], "<=", 0))
    H = wg.PhaseSpaceField.from_function(grid, system.field_function(), 1.0, "fd4")
    out.append(_check("charts.pendulum_involution", ch.check_involution(H, [H], lib), "<", 1e-6))

    g4 = wg.PhaseGrid(-3.0, 3.0, 24, -3.0, 3.0, 24, dof=2)
    everywhere = ch.Chart("all", ch.Rectangle((-10.0,) * 4, (10.0,) * 4))
    P2 = ch.make_constant("harmonic_energy", index=1).field(g4)
    Hs = ch.make_constant("hamiltonian", separable_harmonic()).field(g4)
    out.append(_check("charts.separable_involution", ch.check_involution(Hs, [P2], everywhere), "<", 1e-6))
    Hh = ch.make_constant("hamiltonian", henon_heiles(0.1)).field(g4)
    out.append(_check("charts.henon_heiles_negative_control", ch.check_involution(Hh, [P2], everywhere), ">", 1e-2))
    for i, r in enumerate(moyal_gap_ratios()):
        out.append(_check(f"charts.moyal_gap_ratio_{i + 1}", r, "in", (3.2, 4.8)))
    return out


# -- classical ---------------------------------------------------------------

EVERYWHERE_1D = ch.Chart("all", ch.Rectangle((-1e9, -1e9), (1e9, 1e9)))


def duality_errors(seed: int = 0, cases: int = 20) -> list[float]:
    """Relative mismatch of phase-space and spectral pairings for decohered random states."""
    system = harmonic()
    grid = wg.PhaseGrid(-2.3, 2.3, 1024, -2.3, 2.3, 1024)
    egrid = sp.EnergyGrid(1.0, 2.0, 6)
    aa = cl.build_action_angle(system, EVERYWHERE_1D, egrid.points)
    errs = []
    for k in range(cases):
        rng = np.random.default_rng(seed + k)
        blocks = sp.random_hermitian_blocks(egrid.n_points, 2, rng, psd=True)
        blocks *= rng.uniform(0.2, 1.0, egrid.n_points)[:, None, None]
        blocks /= np.dot(egrid.weights, np.real(np.trace(blocks, axis1=1, axis2=2)))
        reg = 1e-3 * np.ones((6, 6, 2, 2))
        state = sp.VanHoveState(sp.SpectralKernel(egrid, 2, blocks, reg))
        decohered = sp.weak_limit(state)
        decohered = sp.apply_pointer_basis(decohered, sp.pointer_basis(decohered))
        dens = cl.decohered_to_classical(decohered, ["all", "all"], {"all": aa}, grid, smearing=0.02)
        a, b, c = rng.uniform(0.0, 1.0, 3)
        phase, spectral = cl.duality_check(dens, lambda e, _: a + b * e + c * e * e)
        errs.append(abs(phase - spectral) / abs(spectral))
    return errs


def classical_checks(seed: int = 0) -> list[Check]:
    out = []
    system = harmonic()
    aa = cl.build_action_angle(system, EVERYWHERE_1D, [0.5, 1.0, 2.0])
    o = aa.orbit(0.5)
    out.append(_check("classical.harmonic_period", abs(o.period - 2 * math.pi), "<", 1e-8))
    out.append(_check("classical.harmonic_action", abs(o.action - 0.5), "<", 1e-8))
    half = ch.Chart("half", ch.HalfPlane((1.0, 0.0), 0.0))
    aah = cl.build_action_angle(system, half, [0.5])
    out.append(_check("classical.half_plane_volume", abs(cl.configuration_volume(aah, 0.5) - math.pi), "<", 1e-4))

    pend, lib, rot = pendulum_charts()
    levels = [0.2, 0.8, 1.5]
    al = cl.build_action_angle(pend, lib, levels)
    ell = max(abs(al.orbit(e).period - 4 * ellipk(e / 2)) for e in levels)
    out.append(_check("classical.pendulum_period_vs_elliptic", ell, "<", 1e-8))
    out.append(_check("classical.pendulum_action_monotone", float(al.action_is_monotone()), ">=", 1.0))

    grid = wg.PhaseGrid(-2.6, 2.6, 512, -2.6, 2.6, 512)
    dens = cl.classical_density({"all": ([0.5], [1.0])}, {"all": aa}, grid, smearing=0.03)
    out.append(_check("classical.ring_angular_uniformity", cl.angular_uniformity(dens, "all", aa, 0.5), "<", 1e-3))
    out.append(_check("classical.ring_min", dens.field.values.real.min(), ">=", -1e-10))
    out.append(_check("classical.ring_normalization", abs(dens.field.integral().real - 1.0), "<", 1e-3))
    out.append(_check("classical.duality_20_cases", max(duality_errors(seed)), "<", 1e-3))

    tr = cl.sample_trajectory(aa, 0.5, 0.0, 20.0, 1e-3)
    closed = max(np.abs(tr.q[:, 0] - np.sin(tr.times)).max(), np.abs(tr.p[:, 0] - np.cos(tr.times)).max())
    out.append(_check("classical.trajectory_closed_form", closed, "<", 1e-6))
    out.append(_check("classical.trajectory_energy_drift", tr.energy_drift(), "<", 1e-8))
    fit = cl.angle_fit(tr.times, cl.orbit_angle(aa, 0.5, tr.q, tr.p))
    out.append(_check("classical.angle_fit_residual", fit["max_residual"], "<", 1e-6))
    out.append(_check("classical.angle_rate_error", abs(fit["rate"] / o.angular_rate - 1.0), "<", 1e-4))
    trp = cl.sample_trajectory(al, 0.8, 0.0, 20.0, 1e-3)
    fitp = cl.angle_fit(trp.times, cl.orbit_angle(al, 0.8, trp.q, trp.p))
    out.append(_check("classical.pendulum_angle_rate_error", abs(fitp["rate"] / al.orbit(0.8).angular_rate - 1), "<", 1e-4))

    drift = cl.density_flow_invariance(dens.field, system, 1.0, seed=seed)
    out.append(_check("classical.flow_invariance", drift, "<", 1e-2))
    theta = np.linspace(0.0, 2 * math.pi, 64, endpoint=False)
    Q, _ = grid.mesh()
    neg = cl.density_flow_invariance(dens.field.with_values(Q), system, 1.0, points=(np.cos(theta), np.sin(theta)))
    out.append(_check("classical.flow_negative_control", neg, ">=", 0.5))
    return out


SUITES = {
    "spectral": spectral_checks,
    "wigner": wigner_checks,
    "charts": chart_checks,
    "classical": classical_checks,
}


def run_suite(seed: int = 0, suites=None, echo=None) -> list[Check]:
    checks = []
    for name in suites or SUITES:
        for c in SUITES[name](seed):
            checks.append(c)
            if echo is not None:
                echo(c.line())
    return checks
