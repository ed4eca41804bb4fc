"""Classical side of the decohered limit: action-angle tables, level-set densities and trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree

from .charts import Chart, index_function
from .dynamics import HamiltonianSystem, flow, harmonic, yoshida4
from .errors import PreconditionError, UnreachableLevelError
from .spectral import VanHoveState
from .wigner import PhaseGrid, PhaseSpaceField, pairing

__all__ = [
    "LevelOrbit",
    "ActionAngleChart",
    "build_action_angle",
    "configuration_volume",
    "separable_volume",
    "energy_resolution",
    "ClassicalDensity",
    "classical_density",
    "decohered_to_classical",
    "duality_check",
    "Trajectory",
    "sample_trajectory",
    "orbit_angle",
    "angle_fit",
    "density_flow_invariance",
    "angular_uniformity",
]

CLOSURE_TOL = 1e-6
DEFAULT_MAX_TIME = 200.0


@dataclass(eq=False)
class LevelOrbit:
    """One traced level set. Arrays are empty and numbers NaN when ``reachable`` is False."""

    energy: float
    reachable: bool
    reason: str = ""
    period: float = math.nan
    action: float = math.nan
    volume: float = math.nan
    closure_error: float = math.nan
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    q: np.ndarray = field(default_factory=lambda: np.empty((0, 1)))
    p: np.ndarray = field(default_factory=lambda: np.empty((0, 1)))
    winding: float = 0.0  # q advance per period; 0 for librating orbits
    components: list = field(default_factory=list)  # further pieces of the level set in the chart

    @property
    def angular_rate(self) -> float:
        return 2.0 * math.pi / self.period


@dataclass(eq=False)
class ActionAngleChart:
    chart: Chart
    system: HamiltonianSystem
    anchor: tuple
    step: float
    orbits: list

    @property
    def energies(self) -> np.ndarray:
        return np.array([o.energy for o in self.orbits])

    @property
    def reachable(self) -> np.ndarray:
        return np.array([o.reachable for o in self.orbits], bool)

    @property
    def unreachable_levels(self) -> list[float]:
        return [o.energy for o in self.orbits if not o.reachable]

    @property
    def frequency(self) -> np.ndarray:
        """dH/dJ by finite differences across reachable neighbouring levels (2pi/T for a lone level)."""
        out = np.full(len(self.orbits), np.nan)
        idx = [i for i, o in enumerate(self.orbits) if o.reachable]
        if len(idx) == 1:
            out[idx[0]] = self.orbits[idx[0]].angular_rate
        elif len(idx) > 1:
            order = sorted(idx, key=lambda i: self.orbits[i].energy)
            e = np.array([self.orbits[i].energy for i in order])
            j = np.array([self.orbits[i].action for i in order])
            out[order] = np.gradient(e, j)
        return out

    def action_is_monotone(self) -> bool:
        pairs = sorted((o.energy, o.action) for o in self.orbits if o.reachable)
        j = np.array([a for _, a in pairs])
        return bool(np.all(np.diff(j) > 0))

    def orbit(self, energy: float) -> LevelOrbit:
        for o in self.orbits:
            if o.energy == energy:
                return o
        raise KeyError(f"level {energy!r} not in the orbit table of chart {self.chart.label!r}")


def _inverse_quadratic(u, t, target):
    """t at which the sampled u reaches ``target``, from three (u, t) samples."""
    u0, u1, u2 = u
    t0, t1, t2 = t
    return (t0 * (target - u1) * (target - u2) / ((u0 - u1) * (u0 - u2))
            + t1 * (target - u0) * (target - u2) / ((u1 - u0) * (u1 - u2))
            + t2 * (target - u0) * (target - u1) / ((u2 - u0) * (u2 - u1)))


def _time_inside(chart: Chart, q, p, times) -> float:
    """Time spent inside the chart along a sampled path, crossings located by linear interpolation."""
    s = np.asarray(chart.predicate.signed(q, p), float)
    inside = np.asarray(chart.contains(q, p), bool)
    dt = np.diff(times)
    total = float(dt[inside[:-1] & inside[1:]].sum())
    for k in np.flatnonzero(inside[:-1] != inside[1:]):
        frac = s[k] / (s[k] - s[k + 1]) if s[k] != s[k + 1] else 0.5
        frac = min(max(frac, 0.0), 1.0)
        total += dt[k] * (frac if inside[k] else 1.0 - frac)
    return total


def build_action_angle(system: HamiltonianSystem, chart: Chart, levels: Sequence[float],
                       step: float = 1e-3, max_time: float = DEFAULT_MAX_TIME,
                       anchors: Sequence[tuple] | None = None) -> ActionAngleChart:
    """Trace the level sets H = E of a one-degree-of-freedom chart.

    Each anchor (q_a, sign of p) seeds one connected piece of the level set; the
    orbit is integrated until it returns to the section q = q_a (or q_a +- the
    configuration period for rotations). All levels are integrated together.
    The first anchor defines the angle origin; the configuration volume adds up
    the in-chart time of every piece.
    """
    if system.dof != 1:
        raise PreconditionError("action-angle tables are built for one degree of freedom per chart")
    if not step > 0:
        raise ValueError("step must be positive")
    anchors = tuple(anchors if anchors is not None else chart.anchors)
    if not anchors:
        raise PreconditionError(f"chart {chart.label!r} declares no anchor")
    energies = np.asarray(levels, float).ravel()
    pieces = [_trace_anchor(system, chart, energies, a, step, max_time) for a in anchors]
    orbits = []
    for i in range(len(energies)):
        comps = [piece[i] for piece in pieces]
        bad = next((c for c in comps if not c.reachable), None)
        if bad is not None:
            orbits.append(bad)
            continue
        main = comps[0]
        main.volume = float(sum(c.volume for c in comps))
        main.components = comps[1:]
        orbits.append(main)
    q_a, sign = anchors[0]
    return ActionAngleChart(chart, system, (q_a, 1.0 if sign >= 0 else -1.0), step, orbits)


def _trace_anchor(system, chart, energies, anchor, step, max_time) -> list:
    q_anchor, sign = float(anchor[0]), (1.0 if anchor[1] >= 0 else -1.0)
    orbits: list = [None] * len(energies)
    v_anchor = float(system.potential(np.array([q_anchor])))
    live = []
    for i, e in enumerate(energies):
        if not e > v_anchor:
            orbits[i] = LevelOrbit(float(e), False, "level does not reach the chart anchor")
            continue
        q0 = np.array([q_anchor])
        p0 = np.array([sign * math.sqrt(2.0 * (e - v_anchor))])
        if not bool(chart.contains(q0, p0)):
            orbits[i] = LevelOrbit(float(e), False, "level starts outside the chart")
            continue
        live.append(i)
    if live:
        _trace(system, chart, energies, live, orbits, q_anchor, sign, step, max_time)
    return orbits


def _trace(system, chart, energies, live, orbits, q_anchor, sign, step, max_time):
    v_anchor = float(system.potential(np.array([q_anchor])))
    q = np.full((len(live), 1), q_anchor)
    p = sign * np.sqrt(2.0 * (energies[live] - v_anchor))[:, None]
    period_len = system.q_period
    qs, ps = [q], [p]
    closed = np.full(len(live), -1)
    n_max = int(math.ceil(max_time / step))
    u_prev = np.zeros(len(live))
    for k in range(1, n_max + 1):
        q, p = yoshida4(system, q, p, step)
        qs.append(q)
        ps.append(p)
        u = sign * (q[:, 0] - q_anchor)
        back = (u_prev < 0) & (u >= 0)
        if period_len is not None:
            back |= (u_prev < period_len) & (u >= period_len)
        newly = back & (closed < 0)
        closed[newly] = k
        u_prev = u
        if np.all(closed >= 0):
            break
    qs = np.stack(qs)
    ps = np.stack(ps)
    times = step * np.arange(qs.shape[0])
    for j, i in enumerate(live):
        e = float(energies[i])
        k = int(closed[j])
        if k < 0:
            orbits[i] = LevelOrbit(e, False, f"orbit did not close within t = {max_time:g}")
            continue
        if k < 2:
            orbits[i] = LevelOrbit(e, False, "orbit closes within two steps; reduce the step")
            continue
        qq = qs[: k + 1, j, :]
        pp = ps[: k + 1, j, :]
        u = sign * (qq[:, 0] - q_anchor)
        winding = 0.0
        target = 0.0
        if period_len is not None and u[-1] >= period_len and u[-2] < period_len:
            target = period_len
            winding = sign * period_len
        period = float(_inverse_quadratic(u[k - 2: k + 1], times[k - 2: k + 1], target))
        # exact end state by one partial step from the last sample before closure
        tail = period - times[k - 1]
        q_end, p_end = yoshida4(system, qq[k - 1], pp[k - 1], tail)
        start = np.array([qq[0, 0] + winding, pp[0, 0]])
        pts = np.concatenate([qq[:k], pp[:k]], axis=1)
        diameter = float(np.max(np.ptp(pts, axis=0)))
        err = float(np.hypot(q_end[0] - start[0], p_end[0] - start[1])) / max(diameter, 1e-300)
        if err > CLOSURE_TOL:
            orbits[i] = LevelOrbit(e, False, f"orbit failed to close (relative gap {err:.3g})")
            continue
        t_orb = times[:k]
        p2 = pp[:k, 0] ** 2
        loop = trapezoid(p2, t_orb) + 0.5 * tail * (p2[-1] + p_end[0] ** 2)
        volume = _time_inside(chart, np.vstack([qq[:k], q_end[None]]), np.vstack([pp[:k], p_end[None]]),
                              np.append(t_orb, period))
        orbits[i] = LevelOrbit(e, True, "", period, float(loop / (2.0 * math.pi)), volume, err,
                               t_orb.copy(), qq[:k].copy(), pp[:k].copy(), winding)


def configuration_volume(aa: ActionAngleChart, level: float) -> float:
    """Time the level set spends inside the chart over one period."""
    orbit = aa.orbit(level)
    if not orbit.reachable:
        raise UnreachableLevelError(f"level H = {level:g} is unreachable in chart {aa.chart.label!r}: {orbit.reason}")
    return orbit.volume


def separable_volume(system: HamiltonianSystem, energies: Sequence[float], step: float = 1e-3) -> float:
    """Product of per-degree-of-freedom periods for the separable oscillator, by orbit tracing."""
    if system.name != "separable_harmonic":
        raise PreconditionError("product volumes are defined for separable systems only")
    omegas = (system.params["omega1"], system.params["omega2"])
    if len(energies) != len(omegas):
        raise PreconditionError(f"expected {len(omegas)} per-dof energies, got {len(energies)}")
    volume = 1.0
    for w, e in zip(omegas, energies):
        sub = harmonic(w)
        whole = Chart("whole", _Everywhere())
        volume *= configuration_volume(build_action_angle(sub, whole, [e], step), float(e))
    return volume


class _Everywhere:
    kind = "everywhere"

    def contains(self, q, p):
        return np.ones(np.shape(np.asarray(q))[:-1], bool)

    def signed(self, q, p):
        return np.ones(np.shape(np.asarray(q))[:-1])


# -- densities -------------------------------------------------------------


def _grid_energy(system, grid):
    q, p = grid.points()
    return system.energy(q, p)


def energy_resolution(system: HamiltonianSystem, grid: PhaseGrid, levels: Sequence[float]) -> float:
    """Largest energy spread of a grid cell that the given level sets pass through."""
    h = _grid_energy(system, grid)
    corners = np.stack([h[:-1, :-1], h[1:, :-1], h[:-1, 1:], h[1:, 1:]])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    worst = 0.0
    for e in levels:
        hit = (lo <= e) & (e <= hi)
        if hit.any():
            worst = max(worst, float((hi - lo)[hit].max()))
    return worst


@dataclass(eq=False)
class ClassicalDensity:
    field: PhaseSpaceField
    system: HamiltonianSystem
    charts: dict
    tables: dict  # label -> (energies, weights, volumes)
    smearing: float

    def evaluate(self, q, p) -> np.ndarray:
        """Closed-form density at arbitrary phase points (trailing dof axis)."""
        q = np.asarray(q, float)
        p = np.asarray(p, float)
        h = self.system.energy(q, p)
        out = np.zeros(h.shape)
        norm = 1.0 / (math.sqrt(2.0 * math.pi) * self.smearing)
        for label, (energies, weights, volumes) in self.tables.items():
            mask = index_function(self.charts[label], q, p)
            part = np.zeros(h.shape)
            for e, w, c in zip(energies, weights, volumes):
                if w != 0.0:
                    part += (w / c) * np.exp(-0.5 * ((h - e) / self.smearing) ** 2)
            out += norm * part * mask
        return out

    def chart_field(self, label: str) -> PhaseSpaceField:
        sub = ClassicalDensity(self.field, self.system, self.charts, {label: self.tables[label]}, self.smearing)
        q, p = self.field.grid.points()
        return self.field.with_values(sub.evaluate(q, p))

    def total_weight(self) -> float:
        return float(sum(np.sum(w) for _, w, _ in self.tables.values()))


def classical_density(weights: Mapping[str, tuple], aa_charts: Mapping[str, ActionAngleChart],
                      grid: PhaseGrid, smearing: float | None = None, hbar: float = 1.0) -> ClassicalDensity:
    """Mixture of smeared level-set densities, each divided by its configuration volume.

    ``weights`` maps chart label to (energies, weights). The smearing is a
    normalized Gaussian in energy; by default four times the energy spread of
    one grid cell on the requested levels.
    """
    if not aa_charts:
        raise PreconditionError("no charts given")
    system = next(iter(aa_charts.values())).system
    tables = {}
    total = 0.0
    all_levels = []
    for label, (energies, w) in weights.items():
        if label not in aa_charts:
            raise PreconditionError(f"weights given for unknown chart {label!r}")
        energies = np.asarray(energies, float).ravel()
        w = np.asarray(w, float).ravel()
        if energies.shape != w.shape:
            raise PreconditionError(f"chart {label!r}: {energies.size} levels but {w.size} weights")
        if np.any(w < 0):
            raise PreconditionError(f"chart {label!r}: negative weight {w.min():.3g}")
        if not np.all(np.isfinite(w)):
            raise PreconditionError(f"chart {label!r}: non-finite weights")
        total += float(w.sum())
        volumes = np.full(energies.shape, np.nan)
        for k, (e, wk) in enumerate(zip(energies, w)):
            if wk > 0:
                volumes[k] = configuration_volume(aa_charts[label], float(e))
                all_levels.append(float(e))
        tables[label] = (energies, w, volumes)
    if total != 0.0 and abs(total - 1.0) > 1e-10:
        raise PreconditionError(f"weights sum to {total:.12g}, expected 1")
    resolution = energy_resolution(system, grid, all_levels) if all_levels else 0.0
    if smearing is None:
        smearing = 4.0 * resolution if resolution > 0 else 4.0 * max(grid.dq, grid.dp)
    if not smearing > 0:
        raise PreconditionError("smearing width must be positive")
    if smearing < resolution:
        raise PreconditionError(
            f"smearing {smearing:.3g} is below the grid energy resolution {resolution:.3g} on the requested levels")
    charts = {label: aa.chart for label, aa in aa_charts.items()}
    density = ClassicalDensity(None, system, charts, tables, float(smearing))
    q, p = grid.points()
    density.field = PhaseSpaceField(grid, density.evaluate(q, p), hbar, "spectral")
    return density


def decohered_to_classical(state: VanHoveState, channel_charts: Sequence[str],
                           aa_charts: Mapping[str, ActionAngleChart], grid: PhaseGrid,
                           smearing: float | None = None, offdiag_tol: float = 1e-10) -> ClassicalDensity:
    """Classical density whose level weights are the decohered pointer populations.

    Channel m at grid energy w carries weight rho(w)_mm times the quadrature
    weight of w, and is placed on the level H = w of chart ``channel_charts[m]``.
    """
    k = state.kernel
    if np.any(k.regular != 0):
        raise PreconditionError("state still has a regular part; take the weak limit first")
    off = k.singular - np.einsum("wmm->wm", k.singular)[..., None] * np.eye(k.n_channels)
    if np.abs(off).max(initial=0.0) > offdiag_tol:
        raise PreconditionError("singular part is not diagonal; apply the pointer basis first")
    if len(channel_charts) != k.n_channels:
        raise PreconditionError(f"{k.n_channels} channels but {len(channel_charts)} chart labels")
    pop = np.real(np.einsum("wmm->wm", k.singular)) * k.grid.weights[:, None]
    energies = k.grid.points
    gathered: dict = {}
    for m, label in enumerate(channel_charts):
        sel = pop[:, m] != 0
        e_list, w_list = gathered.setdefault(label, ([], []))
        e_list.extend(energies[sel].tolist())
        w_list.extend(pop[sel, m].tolist())
    weights = {}
    for label, (e_list, w_list) in gathered.items():
        e = np.array(e_list)
        w = np.array(w_list)
        uniq, inv = np.unique(e, return_inverse=True)
        weights[label] = (uniq, np.bincount(inv, weights=w, minlength=uniq.size))
    return classical_density(weights, aa_charts, grid, smearing, state.hbar)


def duality_check(density: ClassicalDensity, observable) -> tuple[float, float]:
    """(phase-space pairing, spectral pairing) for an observable diagonal in energy.

    ``observable(energy, label)`` returns O(w) on chart ``label``; its symbol is
    O(H(phi)) restricted to the chart.
    """
    q, p = density.field.grid.points()
    h = density.system.energy(q, p)
    sym = np.zeros(h.shape)
    spectral = 0.0
    for label, (energies, weights, _) in density.tables.items():
        sym += np.asarray(observable(h, label), float) * index_function(density.charts[label], q, p)
        spectral += float(np.sum(weights * np.asarray(observable(energies, label), float)))
    phase = pairing(density.field, density.field.with_values(sym))
    return phase, spectral


def angular_uniformity(density: ClassicalDensity, label: str, aa: ActionAngleChart, level: float,
                       n_angles: int = 64, n_nodes: int = 96, band: float = 6.0) -> float:
    """max over angles of |m(theta) C / w - 1| for one level of one chart.

    m(theta) is the mass per unit time-angle, integral of rho dH across the
    smeared level set along the normal line through the orbit point at angle
    theta. Any transversal gives the same value for a density that depends on
    H alone, so m C / w = 1 exactly when the 1/C factor is right.
    """
    energies, weights, volumes = density.tables[label]
    k = int(np.flatnonzero(energies == level)[0])
    w, c = weights[k], volumes[k]
    if w == 0:
        raise PreconditionError("level carries no weight")
    orbit = aa.orbit(level)
    idx = np.linspace(0, orbit.times.size, n_angles, endpoint=False).astype(int)
    q0, p0 = orbit.q[idx, 0], orbit.p[idx, 0]
    dhdq, dhdp = aa.system.gradient(orbit.q[idx], orbit.p[idx])
    g = np.hypot(dhdq[:, 0], dhdp[:, 0])[:, None]
    nq, np_ = dhdq[:, 0:1] / g, dhdp[:, 0:1] / g
    x, wx = np.polynomial.legendre.leggauss(n_nodes)
    half = band * density.smearing / g
    s = half * x[None, :]
    qq = q0[:, None] + s * nq
    pp = p0[:, None] + s * np_
    rho = density.evaluate(qq[..., None], pp[..., None])
    gq, gp = aa.system.gradient(qq[..., None], pp[..., None])
    dh_ds = gq[..., 0] * nq + gp[..., 0] * np_
    mass = np.sum(rho * dh_ds * wx[None, :], axis=1) * half[:, 0]
    return float(np.abs(mass * c / w - 1.0).max())


# -- trajectories ----------------------------------------------------------


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    constants: dict
    left_chart: bool

    def energy_drift(self) -> float:
        return float(np.abs(self.energy - self.energy[0]).max())


def _phase_velocity(system, q, p):
    dhdq, dhdp = system.gradient(q, p)
    return dhdp, -dhdq


def sample_trajectory(aa: ActionAngleChart, level: float, tau0: float = 0.0, duration: float = 0.0,
                      step: float | None = None, theta0: float = 0.0) -> Trajectory:
    """Trajectory starting on the level set at time-angle ``tau0`` past the chart anchor.

    With one degree of freedom per chart the only angle is the time-like one, so
    ``theta0`` must be 0.
    """
    if theta0 != 0.0:
        raise PreconditionError("one-degree-of-freedom charts carry no angle besides the time variable")
    orbit = aa.orbit(level)
    if not orbit.reachable:
        raise UnreachableLevelError(f"level H = {level:g} is unreachable in chart {aa.chart.label!r}: {orbit.reason}")
    h = aa.step if step is None else step
    system = aa.system
    q0 = orbit.q[0].copy()
    p0 = orbit.p[0].copy()
    offset = float(np.mod(tau0, orbit.period))
    if offset:
        _, qs, ps = flow(system, q0, p0, offset, h)
        q0, p0 = qs[-1], ps[-1]
    times, qs, ps = flow(system, q0, p0, duration, h)
    energy = system.energy(qs, ps)
    constants = {c.name: np.asarray(c(qs, ps), float) for c in aa.chart.constants}
    left = not bool(np.all(aa.chart.contains(qs, ps)))
    return Trajectory(times, qs, ps, energy, constants, left)


def orbit_angle(aa: ActionAngleChart, level: float, q, p) -> np.ndarray:
    """Angle in [0, 2pi) of phase points lying on a traced level set.

    Nearest polyline sample, then two Newton corrections along the flow.
    """
    orbit = aa.orbit(level)
    if not orbit.reachable:
        raise UnreachableLevelError(f"level H = {level:g} is unreachable in chart {aa.chart.label!r}")
    system = aa.system
    q = np.asarray(q, float).reshape(-1, 1)
    p = np.asarray(p, float).reshape(-1, 1)
    if orbit.winding:
        a = orbit.q[0, 0]
        s = math.copysign(1.0, orbit.winding)
        span = abs(orbit.winding)
        q = a + s * np.mod(s * (q - a), span)
    tree = cKDTree(np.column_stack([orbit.q[:, 0], orbit.p[:, 0]]))
    _, k = tree.query(np.column_stack([q[:, 0], p[:, 0]]))
    t = orbit.times[k].copy()
    qk, pk = orbit.q[k], orbit.p[k]
    for _ in range(2):
        vq, vp = _phase_velocity(system, qk, pk)
        delta = ((q - qk) * vq + (p - pk) * vp)[:, 0] / (vq * vq + vp * vp)[:, 0]
        qk, pk = yoshida4(system, qk, pk, delta[:, None])
        t += delta
    return np.mod(2.0 * math.pi * t / orbit.period, 2.0 * math.pi)


def angle_fit(times, angles) -> dict:
    """Least-squares line through the unwrapped angle; reports rate, R^2 and max residual."""
    theta = np.unwrap(np.asarray(angles, float))
    t = np.asarray(times, float)
    if t.size < 2:
        return {"rate": math.nan, "r_squared": 1.0, "max_residual": 0.0}
    slope, intercept = np.polyfit(t, theta, 1)
    resid = theta - (slope * t + intercept)
    ss_tot = float(np.sum((theta - theta.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"rate": float(slope), "r_squared": r2, "max_residual": float(np.abs(resid).max())}


def density_flow_invariance(density: PhaseSpaceField, system: HamiltonianSystem, t_probe: float,
                            points: tuple | None = None, n_samples: int = 400, seed: int = 0,
                            step: float = 1e-3) -> float:
    """max |rho(flowed) - rho(start)| / max |rho(start)| over sample points, by cubic spline interpolation.

    Without explicit ``points``, samples are drawn where |rho| exceeds 1% of its
    maximum, away from the grid edge.
    """
    grid = density.grid
    if grid.dof != 1:
        raise PreconditionError("flow invariance is checked on one-degree-of-freedom fields")
    values = np.real(density.values)
    if points is None:
        rng = np.random.default_rng(seed)
        interior = np.zeros(values.shape, bool)
        interior[3:-3, 3:-3] = True
        idx = np.flatnonzero((np.abs(values) >= 0.01 * np.abs(values).max()) & interior)
        if idx.size == 0:
            return 0.0
        pick = rng.choice(idx, size=min(n_samples, idx.size), replace=False)
        iq, ip = np.unravel_index(np.sort(pick), values.shape)
        jitter = rng.uniform(-0.5, 0.5, size=(2, pick.size))
        q0 = grid.q[iq] + jitter[0] * grid.dq
        p0 = grid.p[ip] + jitter[1] * grid.dp
    else:
        q0 = np.asarray(points[0], float).ravel()
        p0 = np.asarray(points[1], float).ravel()
    _, qs, ps = flow(system, q0[:, None], p0[:, None], t_probe, step)
    q1, p1 = qs[-1, :, 0], ps[-1, :, 0]
    # a grid spanning exactly one period of an angle-like q is sampled periodically
    span = grid.q_max - grid.q_min
    periodic = system.q_period is not None and abs(span - system.q_period) <= 1e-12 * span
    pad = 8 if periodic else 0
    if periodic:
        values = np.pad(values, ((pad, pad), (0, 0)), mode="wrap")
    coeffs = ndimage.spline_filter(values, order=3, mode="nearest")

    def sample(qq, pp):
        fi = (qq - grid.q_min) / grid.dq
        if periodic:
            fi = np.mod(fi, grid.n_q) + pad
        fj = (pp - grid.p_min) / grid.dp
        if np.any((fi < 0) | (fi > values.shape[0] - 1) | (fj < 0) | (fj > grid.n_p - 1)):
            raise PreconditionError("flowed sample points leave the phase grid")
        return ndimage.map_coordinates(coeffs, [fi, fj], order=3, mode="nearest", prefilter=False)

    start = sample(q0, p0)
    end = sample(q1, p1)
    scale = float(np.abs(start).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(end - start).max() / scale)
