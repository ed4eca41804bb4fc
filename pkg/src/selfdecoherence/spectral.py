"""Van Hove kernels in the energy basis.

A state or observable is stored as a pair of arrays on a uniform energy grid:

* ``singular[w, m, m']`` is the coefficient of the diagonal-in-energy term
  proportional to ``delta(w - w')``; the delta is carried structurally and
  never sampled.
* ``regular[w, w', m, m']`` is an ordinary function on the grid square.

All integrals over energy use the composite trapezoidal rule of the grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GridMismatchError,
    NonHermitianError,
    NumericalError,
    PreconditionError,
    QuadratureAccuracyWarning,
    ShapeError,
)

__all__ = [
    "EnergyGrid",
    "SpectralKernel",
    "VanHoveObservable",
    "VanHoveState",
    "Violation",
    "PointerBasisResult",
    "DecayCurve",
    "validate_state",
    "trace",
    "expectation_at_time",
    "decay_curve",
    "weak_limit",
    "pointer_basis",
    "apply_pointer_basis",
    "validity_time",
    "thermal_singular",
    "flat_singular",
    "gaussian_nu_regular",
    "compact_c1_regular",
    "energy_observable",
    "constant_observable",
    "random_hermitian_blocks",
    "gaussian_law_deviation",
    "fit_gaussian_width",
    "envelope_slope",
]

HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-10
NORMALIZATION_TOL = 1e-10
IMAG_RESIDUE_TOL = 1e-8
POINTER_HERMITIAN_TOL = 1e-8


@dataclass(frozen=True)
class EnergyGrid:
    omega_min: float
    omega_max: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.omega_min) and np.isfinite(self.omega_max)):
            raise ValueError("energy grid bounds must be finite")
        if self.omega_min < 0:
            raise ValueError(f"omega_min must be >= 0, got {self.omega_min}")
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        if self.omega_max <= self.omega_min:
            raise ValueError("omega_max must exceed omega_min")

    @property
    def spacing(self) -> float:
        return (self.omega_max - self.omega_min) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return self.omega_min + self.spacing * np.arange(self.n_points)

    @property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights."""
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w


@dataclass(frozen=True, eq=False)
class SpectralKernel:
    grid: EnergyGrid
    n_channels: int
    singular: np.ndarray
    regular: np.ndarray

    def __post_init__(self):
        n, m = self.grid.n_points, self.n_channels
        if m < 1:
            raise ShapeError("n_channels must be >= 1")
        singular = np.asarray(self.singular, dtype=complex)
        regular = np.asarray(self.regular, dtype=complex)
        if singular.shape != (n, m, m):
            raise ShapeError(f"singular part has shape {singular.shape}, expected {(n, m, m)}")
        if regular.shape != (n, n, m, m):
            raise ShapeError(f"regular part has shape {regular.shape}, expected {(n, n, m, m)}")
        if not (np.all(np.isfinite(singular)) and np.all(np.isfinite(regular))):
            raise ValueError("kernel entries must be finite")
        object.__setattr__(self, "singular", singular)
        object.__setattr__(self, "regular", regular)

    @classmethod
    def zeros(cls, grid: EnergyGrid, n_channels: int = 1) -> "SpectralKernel":
        n, m = grid.n_points, n_channels
        return cls(grid, m, np.zeros((n, m, m), complex), np.zeros((n, n, m, m), complex))

    def replace(self, *, singular=None, regular=None) -> "SpectralKernel":
        return SpectralKernel(
            self.grid,
            self.n_channels,
            self.singular if singular is None else singular,
            self.regular if regular is None else regular,
        )


def _regular_asymmetry(regular: np.ndarray) -> np.ndarray:
    # regular(w, w', m, m') - conj(regular(w', w, m', m))
    return regular - np.conj(regular.transpose(1, 0, 3, 2))


def _singular_asymmetry(singular: np.ndarray) -> np.ndarray:
    return singular - np.conj(singular.transpose(0, 2, 1))


@dataclass(frozen=True, eq=False)
class VanHoveObservable:
    kernel: SpectralKernel

    def __post_init__(self):
        k = self.kernel
        scale = max(1.0, float(np.abs(k.singular).max(initial=0)), float(np.abs(k.regular).max(initial=0)))
        asym = max(
            float(np.abs(_singular_asymmetry(k.singular)).max(initial=0)),
            float(np.abs(_regular_asymmetry(k.regular)).max(initial=0)),
        )
        if asym > HERMITICITY_TOL * scale:
            raise NonHermitianError(f"observable is not self-adjoint (max asymmetry {asym:.3e})")


@dataclass(frozen=True, eq=False)
class VanHoveState:
    kernel: SpectralKernel
    hbar: float = 1.0

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")

    @property
    def grid(self) -> EnergyGrid:
        return self.kernel.grid


@dataclass(frozen=True)
class Violation:
    constraint: str
    magnitude: float
    location: tuple | None
    message: str


def trace(state: VanHoveState) -> complex:
    """Pairing of the state with the identity: sum over m of the integral of rho(w)_mm."""
    k = state.kernel
    diag = np.einsum("wmm->w", k.singular)
    return complex(np.dot(k.grid.weights, diag))


def validate_state(state: VanHoveState) -> list[Violation]:
    """Check hermiticity, diagonal positivity and normalization.

    Returns an empty list when the state is admissible. Structural problems
    (shape, non-finite entries) raise when the kernel is built and never
    appear here.
    """
    k = state.kernel
    report: list[Violation] = []

    reg_asym = np.abs(_regular_asymmetry(k.regular))
    sing_asym = np.abs(_singular_asymmetry(k.singular))
    for name, asym in (("regular", reg_asym), ("singular", sing_asym)):
        worst = float(asym.max(initial=0))
        if worst > HERMITICITY_TOL:
            loc = tuple(int(i) for i in np.unravel_index(np.argmax(asym), asym.shape))
            report.append(
                Violation("hermiticity", worst, loc, f"{name} part not hermitian, max asymmetry {worst:.3e} at {loc}")
            )

    diag = np.einsum("wmm->wm", k.singular).real
    worst = float(-diag.min())
    if worst > POSITIVITY_TOL:
        loc = tuple(int(i) for i in np.unravel_index(np.argmin(diag), diag.shape))
        report.append(
            Violation("positivity", worst, loc, f"diagonal population {-worst:.3e} < 0 at (w, m) = {loc}")
        )

    tr = trace(state)
    dev = abs(tr - 1.0)
    if dev > NORMALIZATION_TOL:
        report.append(
            Violation("normalization", dev, None, f"state normalization (rho|I) = {tr.real:.12g}, expected 1")
        )
    return report


def validity_time(grid: EnergyGrid, hbar: float) -> float:
    """Largest |t| for which the phase advances at most a quarter period per cell."""
    return hbar / (4.0 * grid.spacing)


def _check_compatible(state: VanHoveState, obs: VanHoveObservable) -> None:
    a, b = state.kernel, obs.kernel
    if a.grid != b.grid:
        raise GridMismatchError(f"state grid {a.grid} differs from observable grid {b.grid}")
    if a.n_channels != b.n_channels:
        raise GridMismatchError("state and observable have different channel counts")


def _singular_pairing(state: VanHoveState, obs: VanHoveObservable) -> complex:
    k, o = state.kernel, obs.kernel
    per_w = np.einsum("wab,wab->w", np.conj(k.singular), o.singular)
    return complex(np.dot(k.grid.weights, per_w))


def _regular_weights(state: VanHoveState, obs: VanHoveObservable) -> np.ndarray:
    k, o = state.kernel, obs.kernel
    w = k.grid.weights
    pair = np.einsum("ijab,ijab->ij", np.conj(k.regular), o.regular)
    return pair * w[:, None] * w[None, :]


def _regular_series(state: VanHoveState, obs: VanHoveObservable, times: np.ndarray) -> np.ndarray:
    M = _regular_weights(state, obs)
    omega = state.grid.points
    phase = np.exp(1j * np.outer(times, omega) / state.hbar)
    # sum_ij M_ij exp(i (w_i - w_j) t / hbar), one fixed reduction order per t
    return np.sum((phase @ M) * np.conj(phase), axis=1)


def _warn_validity(state: VanHoveState, times: np.ndarray) -> np.ndarray:
    t_max = validity_time(state.grid, state.hbar)
    beyond = np.abs(times) > t_max
    if np.any(beyond):
        warnings.warn(
            f"t up to {np.abs(times).max():.4g} exceeds the resolved range t_max = {t_max:.4g}",
            QuadratureAccuracyWarning,
            stacklevel=3,
        )
    return ~beyond


def expectation_at_time(state: VanHoveState, obs: VanHoveObservable, t: float) -> float:
    """Mean value of ``obs`` in ``state`` evolved to time ``t``."""
    curve = decay_curve(state, obs, np.array([float(t)]))
    return float(curve.total[0])


@dataclass(frozen=True, eq=False)
class DecayCurve:
    t: np.ndarray
    total: np.ndarray
    regular: np.ndarray
    singular: float
    resolved: np.ndarray = field(repr=False)

    def rows(self):
        for t, tot, r in zip(self.t, self.total, self.regular):
            yield float(t), float(tot), float(r.real), float(r.imag)


def decay_curve(state: VanHoveState, obs: VanHoveObservable, t_grid) -> DecayCurve:
    """Expectation value and its regular (oscillatory) part along ``t_grid``."""
    _check_compatible(state, obs)
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D array")
    if np.any(np.diff(times) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    resolved = _warn_validity(state, times)

    s = _singular_pairing(state, obs)
    r = _regular_series(state, obs, times)
    total = s + r
    if not np.all(np.isfinite(total)):
        raise NumericalError("non-finite expectation value")
    residue = float(np.abs(total.imag).max())
    if residue > IMAG_RESIDUE_TOL:
        raise NumericalError(
            f"imaginary residue {residue:.3e} of the expectation value; inputs are not hermitian"
        )
    return DecayCurve(times, total.real.copy(), r, float(s.real), resolved)


def weak_limit(state: VanHoveState) -> VanHoveState:
    """Drop the regular part: only the diagonal-singular terms survive t -> infinity."""
    k = state.kernel
    return VanHoveState(k.replace(regular=np.zeros_like(k.regular)), state.hbar)


@dataclass(frozen=True, eq=False)
class PointerBasisResult:
    unitary: np.ndarray
    eigenvalues: np.ndarray
    reconstruction_error: float = 0.0

    def unitarity_error(self) -> float:
        u = self.unitary
        eye = np.eye(u.shape[-1])
        return float(np.abs(np.conj(u.transpose(0, 2, 1)) @ u - eye).max())


def _order_columns(vals: np.ndarray, vecs: np.ndarray, tie_tol: float = 1e-12):
    lead = np.argmax(np.abs(vecs) - 1e-12 * np.arange(vecs.shape[0])[:, None], axis=0)
    order = sorted(range(vals.size), key=lambda c: -vals[c])
    # regroup near-equal eigenvalues by the leading original index
    out: list[int] = []
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and vals[order[i]] - vals[order[j]] <= tie_tol * max(1.0, abs(vals[order[i]])):
            j += 1
        out.extend(sorted(order[i:j], key=lambda c: lead[c]))
        i = j
    return np.array(out), lead


def pointer_basis(state: VanHoveState) -> PointerBasisResult:
    """Diagonalize the singular block at every grid energy.

    Eigenvalues come out in descending order; near-degenerate eigenvalues are
    ordered by the smallest original channel index that dominates the
    eigenvector. Each eigenvector's dominant component is made real and
    positive so the result is reproducible.
    """
    rho = state.kernel.singular
    asym = float(np.abs(_singular_asymmetry(rho)).max(initial=0))
    if asym > POINTER_HERMITIAN_TOL:
        raise NonHermitianError(f"singular block is not hermitian (max asymmetry {asym:.3e})")
    herm = 0.5 * (rho + np.conj(rho.transpose(0, 2, 1)))
    vals, vecs = np.linalg.eigh(herm)

    n_w, m, _ = rho.shape
    unitary = np.empty((n_w, m, m), complex)
    eig = np.empty((n_w, m))
    for w in range(n_w):
        order, lead = _order_columns(vals[w], vecs[w])
        u = vecs[w][:, order]
        pivots = u[lead[order], np.arange(m)]
        u = u * (np.conj(pivots) / np.abs(pivots))[None, :]
        unitary[w] = u
        eig[w] = vals[w][order]

    recon = unitary @ (eig[:, :, None] * np.conj(unitary.transpose(0, 2, 1)))
    err = float(np.abs(recon - rho).max(initial=0))
    return PointerBasisResult(unitary, eig, err)


def apply_pointer_basis(state: VanHoveState, basis: PointerBasisResult) -> VanHoveState:
    """Rotate both kernel parts into the pointer basis, energy by energy."""
    k = state.kernel
    u = np.asarray(basis.unitary)
    if u.shape != k.singular.shape:
        raise ShapeError(f"basis shape {u.shape} does not match singular part {k.singular.shape}")
    udag = np.conj(u.transpose(0, 2, 1))
    singular = udag @ k.singular @ u
    regular = udag[:, None] @ k.regular @ u[None, :]
    return VanHoveState(k.replace(singular=singular, regular=regular), state.hbar)


# --------------------------------------------------------------------------
# kernel generators


def _channel_matrix(n_channels: int, channel_matrix=None) -> np.ndarray:
    if channel_matrix is None:
        return np.eye(n_channels) / n_channels
    c = np.asarray(channel_matrix, dtype=complex)
    if c.shape != (n_channels, n_channels):
        raise ShapeError("channel matrix must be n_channels x n_channels")
    return c / np.trace(c)


def _normalized_profile(grid: EnergyGrid, profile: np.ndarray) -> np.ndarray:
    z = np.dot(grid.weights, profile)
    if not z > 0:
        raise PreconditionError("energy profile has zero weight on the grid")
    return profile / z


def thermal_singular(grid: EnergyGrid, n_channels: int = 1, beta: float = 1.0, channel_matrix=None) -> np.ndarray:
    """exp(-beta w)/Z times a unit-trace channel matrix; Z by the grid quadrature."""
    prof = _normalized_profile(grid, np.exp(-beta * (grid.points - grid.omega_min)))
    return prof[:, None, None] * _channel_matrix(n_channels, channel_matrix)[None]


def flat_singular(grid: EnergyGrid, n_channels: int = 1, lo: float | None = None, hi: float | None = None,
                  channel_matrix=None) -> np.ndarray:
    """Uniform population on [lo, hi] (closed), normalized by the grid quadrature."""
    w = grid.points
    lo = grid.omega_min if lo is None else lo
    hi = grid.omega_max if hi is None else hi
    eps = 1e-9 * grid.spacing
    prof = ((w >= lo - eps) & (w <= hi + eps)).astype(float)
    prof = _normalized_profile(grid, prof)
    return prof[:, None, None] * _channel_matrix(n_channels, channel_matrix)[None]


def gaussian_nu_regular(grid: EnergyGrid, n_channels: int = 1, sigma: float = 0.2, amplitude: float = 0.1,
                        center: float | None = None, window_width: float = 1.0, compensate: bool = True) -> np.ndarray:
    """Regular kernel Gaussian in nu = w - w' under a Gaussian window in both energies.

    The window contributes a factor exp(-nu^2 / (4 s^2)) after integrating the
    mean energy out; with ``compensate`` the nu-width is widened so the
    overall decay law is exactly exp(-sigma^2 t^2 / (2 hbar^2)).
    """
    w = grid.points
    c = 0.5 * (grid.omega_min + grid.omega_max) if center is None else center
    s = window_width
    inv_var = 1.0 / sigma**2
    if compensate:
        inv_var -= 1.0 / (2.0 * s**2)
        if inv_var <= 0:
            raise PreconditionError("window too narrow to compensate for this sigma")
    win = np.exp(-((w - c) ** 2) / (2.0 * s**2))
    nu = w[:, None] - w[None, :]
    base = amplitude * np.exp(-0.5 * nu**2 * inv_var) * win[:, None] * win[None, :]
    return base[:, :, None, None] * np.eye(n_channels)[None, None]


def compact_c1_regular(grid: EnergyGrid, n_channels: int = 1, support: float = 2.0, amplitude: float = 0.1,
                       center: float | None = None, half_width: float = 4.0) -> np.ndarray:
    """(1 - (nu/a)^2)^2 on |nu| < a: once continuously differentiable, compact in nu.

    The energy window is cos^4 on ``center +- half_width``, smooth enough not
    to limit the decay rate.
    """
    w = grid.points
    c = 0.5 * (grid.omega_min + grid.omega_max) if center is None else center
    u = np.abs(w[:, None] - w[None, :]) / support
    g = np.where(u < 1.0, (1.0 - u**2) ** 2, 0.0)
    x = (w - c) / half_width
    win = np.where(np.abs(x) < 1.0, np.cos(0.5 * np.pi * x) ** 4, 0.0)
    base = amplitude * g * win[:, None] * win[None, :]
    return base[:, :, None, None] * np.eye(n_channels)[None, None]


def energy_observable(grid: EnergyGrid, n_channels: int = 1, regular_value: float = 1.0) -> VanHoveObservable:
    """Singular part w * delta_mm'; regular part constant ``regular_value`` * delta_mm'."""
    n, m = grid.n_points, n_channels
    sing = grid.points[:, None, None] * np.eye(m)[None]
    reg = np.full((n, n), regular_value)[:, :, None, None] * np.eye(m)[None, None]
    return VanHoveObservable(SpectralKernel(grid, m, sing, reg))


def constant_observable(grid: EnergyGrid, n_channels: int = 1, singular_value: float = 1.0,
                        regular_value: float = 1.0) -> VanHoveObservable:
    n, m = grid.n_points, n_channels
    sing = np.full(n, singular_value)[:, None, None] * np.eye(m)[None]
    reg = np.full((n, n), regular_value)[:, :, None, None] * np.eye(m)[None, None]
    return VanHoveObservable(SpectralKernel(grid, m, sing, reg))


def random_hermitian_blocks(n_blocks: int, size: int, rng: np.random.Generator, psd: bool = False) -> np.ndarray:
    a = rng.standard_normal((n_blocks, size, size)) + 1j * rng.standard_normal((n_blocks, size, size))
    if psd:
        return a @ np.conj(a.transpose(0, 2, 1))
    return 0.5 * (a + np.conj(a.transpose(0, 2, 1)))


# -- decay-law diagnostics -------------------------------------------------


def gaussian_law_deviation(curve: DecayCurve, sigma: float, hbar: float = 1.0) -> float:
    """max_t |R(t)/R(0) - exp(-sigma^2 t^2 / (2 hbar^2))|; the curve must start at t = 0."""
    if curve.t[0] != 0.0:
        raise ValueError("curve must start at t = 0")
    r0 = curve.regular[0]
    if r0 == 0:
        raise ValueError("regular contribution vanishes at t = 0")
    law = np.exp(-0.5 * (sigma * curve.t / hbar) ** 2)
    return float(np.abs(curve.regular / r0 - law).max())


def fit_gaussian_width(curve: DecayCurve, hbar: float = 1.0, floor: float = 1e-6) -> float:
    """Least-squares sigma in log(R/R0) = -sigma^2 t^2 / (2 hbar^2), using points above ``floor``."""
    r0 = curve.regular[0]
    if curve.t[0] != 0.0 or r0 == 0:
        return float("nan")
    ratio = np.abs(curve.regular / r0)
    keep = (ratio > floor) & (curve.t > 0)
    if not keep.any():
        return float("nan")
    x = 0.5 * (curve.t[keep] / hbar) ** 2
    y = -np.log(ratio[keep])
    return float(np.sqrt(max(np.dot(x, y) / np.dot(x, x), 0.0)))


def envelope_slope(curve: DecayCurve, t_hi: float | None = None) -> float:
    """log-log slope of the upper envelope max_{t' >= t} |R(t')| over the decade [t_hi/10, t_hi].

    ``t_hi`` defaults to the last resolved time of the curve.
    """
    t = curve.t
    if t_hi is None:
        resolved = t[curve.resolved]
        t_hi = float(resolved[-1]) if resolved.size else float(t[-1])
    sel = (t >= t_hi / 10.0) & (t <= t_hi) & (t > 0)
    if sel.sum() < 3:
        raise ValueError("need at least three time points in the fitting decade")
    mag = np.abs(curve.regular[sel])
    env = np.maximum.accumulate(mag[::-1])[::-1]
    if np.any(env <= 0):
        raise ValueError("regular contribution vanishes inside the fitting decade")
    slope, _ = np.polyfit(np.log(t[sel]), np.log(env), 1)
    return float(slope)
