"""Phase-space charts: index functions, partitions of unity and local constants of motion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import GridMismatchError, PreconditionError
from .wigner import PhaseGrid, PhaseSpaceField, moyal_bracket, poisson_bracket

__all__ = [
    "EnergyWindow",
    "HalfPlane",
    "Rectangle",
    "SeparatrixSide",
    "Constant",
    "make_constant",
    "Chart",
    "Partition",
    "PartitionReport",
    "index_function",
    "validate_partition",
    "restrict",
    "interior_mask",
    "check_involution",
    "moyal_involution_residual",
]

INTERIOR_MARGIN = 2


def _coords(q, p):
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    return np.concatenate([q, p], axis=-1)


@dataclass(frozen=True, eq=False)
class EnergyWindow:
    """low <= H < high (``include_high`` closes the top)."""

    hamiltonian: Callable
    low: float = -math.inf
    high: float = math.inf
    include_high: bool = False
    kind = "energy-window"

    def contains(self, q, p):
        h = self.hamiltonian(q, p)
        upper = h <= self.high if self.include_high else h < self.high
        return (h >= self.low) & upper

    def signed(self, q, p):
        h = self.hamiltonian(q, p)
        return np.minimum(h - self.low, self.high - h)


@dataclass(frozen=True, eq=False)
class HalfPlane:
    """normal . (q_1..q_N, p_1..p_N) >= offset (strict when ``closed`` is False)."""

    normal: tuple
    offset: float = 0.0
    closed: bool = True
    kind = "half-plane"

    def signed(self, q, p):
        return _coords(q, p) @ np.asarray(self.normal, float) - self.offset

    def contains(self, q, p):
        s = self.signed(q, p)
        return s >= 0 if self.closed else s > 0


@dataclass(frozen=True, eq=False)
class Rectangle:
    """Half-open box lower <= x < upper in the coordinates (q_1..q_N, p_1..p_N)."""

    lower: tuple
    upper: tuple
    kind = "rectangle"

    def contains(self, q, p):
        x = _coords(q, p)
        return np.all((x >= np.asarray(self.lower)) & (x < np.asarray(self.upper)), axis=-1)

    def signed(self, q, p):
        x = _coords(q, p)
        return np.min(np.minimum(x - np.asarray(self.lower), np.asarray(self.upper) - x), axis=-1)


@dataclass(frozen=True, eq=False)
class SeparatrixSide:
    """Inside: H < energy. Outside: H >= energy, optionally restricted to one sign of p_1."""

    hamiltonian: Callable
    energy: float
    side: str = "inside"
    p_sign: int = 0
    kind = "separatrix-side"

    def __post_init__(self):
        if self.side not in ("inside", "outside"):
            raise ValueError("side must be 'inside' or 'outside'")

    def contains(self, q, p):
        h = self.hamiltonian(q, p)
        inside = h < self.energy if self.side == "inside" else h >= self.energy
        if self.p_sign:
            p1 = np.asarray(p, float)[..., 0]
            inside = inside & ((p1 >= 0) if self.p_sign > 0 else (p1 < 0))
        return inside

    def signed(self, q, p):
        h = self.hamiltonian(q, p)
        s = self.energy - h if self.side == "inside" else h - self.energy
        if self.p_sign:
            s = np.minimum(s, self.p_sign * np.asarray(p, float)[..., 0])
        return s


@dataclass(frozen=True, eq=False)
class Constant:
    """A named scalar function of the phase point (q, p), trailing axis = degree of freedom."""

    name: str
    func: Callable

    def __call__(self, q, p):
        return self.func(np.asarray(q, float), np.asarray(p, float))

    def field(self, grid: PhaseGrid, hbar: float = 1.0, scheme: str = "fd4") -> PhaseSpaceField:
        q, p = grid.points()
        return PhaseSpaceField(grid, self(q, p), hbar, scheme)


def make_constant(name: str, system=None, **params) -> Constant:
    """Constants of motion from a fixed catalogue of closed forms."""
    i = int(params.get("index", 0))
    if name == "hamiltonian":
        if system is None:
            raise ValueError("'hamiltonian' needs a system")
        return Constant(name, system.energy)
    if name == "harmonic_energy":
        w = float(params.get("omega", 1.0))
        return Constant(f"{name}[{i}]", lambda q, p: 0.5 * (p[..., i] ** 2 + (w * q[..., i]) ** 2))
    if name == "momentum":
        return Constant(f"{name}[{i}]", lambda q, p: p[..., i])
    if name == "position":
        return Constant(f"{name}[{i}]", lambda q, p: q[..., i])
    if name == "angular_momentum":
        return Constant(name, lambda q, p: q[..., 0] * p[..., 1] - q[..., 1] * p[..., 0])
    raise ValueError(f"unknown constant form {name!r}")


@dataclass(eq=False)
class Chart:
    label: str
    predicate: object
    constants: tuple = ()
    priority: int = 0
    anchors: tuple = ((0.0, 1),)
    action_angle: object = None

    def contains(self, q, p):
        return self.predicate.contains(q, p)


def index_function(chart: Chart, q, p) -> np.ndarray:
    """1 where the phase point lies in the chart's domain, 0 elsewhere."""
    return np.asarray(chart.contains(q, p), dtype=np.int8)


@dataclass(eq=False)
class Partition:
    charts: Sequence[Chart]
    grid: PhaseGrid
    region: object = None

    def __post_init__(self):
        labels = [c.label for c in self.charts]
        if len(set(labels)) != len(labels):
            raise ValueError(f"chart labels must be unique: {labels}")

    def index_sum(self) -> np.ndarray:
        q, p = self.grid.points()
        total = np.zeros(self.grid.shape, dtype=np.int64)
        for chart in self.charts:
            total += index_function(chart, q, p)
        return total

    def covered(self) -> np.ndarray:
        if self.region is None:
            return np.ones(self.grid.shape, bool)
        q, p = self.grid.points()
        return np.asarray(self.region.contains(q, p), bool)

    def assign(self, q, p) -> np.ndarray:
        """Index of the owning chart per point (highest priority first, then declaration order); -1 if none."""
        order = sorted(range(len(self.charts)), key=lambda i: (-self.charts[i].priority, i))
        owner = np.full(np.shape(np.asarray(q))[:-1], -1, dtype=np.int64)
        for i in order:
            hit = (owner < 0) & np.asarray(self.charts[i].contains(q, p), bool)
            owner[hit] = i
        return owner


@dataclass(frozen=True, eq=False)
class PartitionReport:
    gaps: np.ndarray
    overlaps: np.ndarray

    @property
    def ok(self) -> bool:
        return self.gaps.shape[0] == 0 and self.overlaps.shape[0] == 0

    def summary(self, limit: int = 5) -> list[str]:
        lines = []
        for name, pts in (("gap", self.gaps), ("overlap", self.overlaps)):
            if pts.shape[0]:
                shown = ", ".join("(" + ", ".join(f"{v:.6g}" for v in row) + ")" for row in pts[:limit])
                more = f" and {pts.shape[0] - limit} more" if pts.shape[0] > limit else ""
                lines.append(f"{pts.shape[0]} {name} point(s): {shown}{more}")
        return lines


def validate_partition(partition: Partition) -> PartitionReport:
    """Grid points of the covered region whose index sum is not exactly 1."""
    total = partition.index_sum()
    covered = partition.covered()
    q, p = partition.grid.points()
    coords = np.concatenate([q, p], axis=-1)
    gaps = coords[covered & (total == 0)]
    overlaps = coords[covered & (total > 1)]
    return PartitionReport(gaps, overlaps)


def restrict(field: PhaseSpaceField, chart: Chart) -> PhaseSpaceField:
    q, p = field.grid.points()
    return field.with_values(field.values * index_function(chart, q, p))


def interior_mask(chart: Chart, grid: PhaseGrid, margin: int = INTERIOR_MARGIN) -> np.ndarray:
    """Chart points whose ``margin``-cell neighbourhood lies in the chart and inside the grid."""
    q, p = grid.points()
    mask = np.asarray(chart.contains(q, p), bool)
    if margin <= 0:
        return mask
    structure = np.ones((3,) * mask.ndim, bool)
    return ndimage.binary_erosion(mask, structure=structure, iterations=margin, border_value=0)


def _residual(fields, chart, margin, bracket) -> float:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError("constants live on different grids")
    mask = interior_mask(chart, grid, margin)
    if not mask.any():
        raise PreconditionError(f"chart {chart.label!r} has no interior points after a {margin}-cell margin")
    worst = 0.0
    for i in range(len(fields)):
        for j in range(i + 1, len(fields)):
            b = bracket(fields[i], fields[j])
            worst = max(worst, float(np.abs(b.values[mask]).max()))
    return worst


def check_involution(H: PhaseSpaceField, constants: Sequence[PhaseSpaceField], chart: Chart,
                     margin: int = INTERIOR_MARGIN) -> float:
    """Largest |{O_I, O_J}| (Poisson) over distinct pairs of {H, constants...} in the chart interior."""
    return _residual([H, *constants], chart, margin, poisson_bracket)


def moyal_involution_residual(H: PhaseSpaceField, constants: Sequence[PhaseSpaceField], chart: Chart,
                              hbar: float, order: int, margin: int = INTERIOR_MARGIN) -> float:
    """As :func:`check_involution` with the Moyal bracket at the given hbar and truncation."""
    fields = [f.with_values(f.values, hbar=hbar) for f in (H, *constants)]
    return _residual(fields, chart, margin, lambda a, b: moyal_bracket(a, b, order))
