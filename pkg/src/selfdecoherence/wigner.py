"""Weyl-Wigner-Moyal symbols on uniform phase-space grids.

Conventions
-----------
* Operator symbols use ``f(q, p) = int <q + y/2| f |q - y/2> exp(-i p y / hbar) dy``;
  the identity maps to 1 and the oscillator ground-state projector to
  ``2 exp(-(q^2 + p^2)/hbar)``. State symbols carry an extra ``1/(2 pi hbar)``
  (see :func:`state_symbol`).
* The Poisson bracket is ``{q, p} = +1``; the star product is
  ``f * g = sum_k (i hbar / 2)^k / k! * Pi^k(f, g)`` with
  ``Pi^k(f, g) = sum_j C(k, j) (-1)^j (d_q^(k-j) d_p^j f)(d_p^(k-j) d_q^j g)``,
  so ``q * p = q p + i hbar / 2``.
* Grids are periodic cells: ``q_j = q_min + j dq`` with ``dq = (q_max - q_min)/n_q``
  (``q_max`` excluded), and likewise in ``p``.

Discrete Weyl map
-----------------
An operator kernel ``K[r, s]`` on ``n`` positions is relabelled by centre and
difference ``m = r - s`` (taken in ``[-n/2, n/2)``). Even differences have
their centre on a grid point. Odd differences have it half a cell off; those
columns are moved onto the grid by a detrended Fourier half-shift, which is
exact for trigonometric data and for linear trends. A DFT over the
difference then gives the symbol on the conjugate momentum grid
``p_l = 2 pi hbar l / (n dq)``. Every step is an invertible linear map, so
:func:`weyl_quantize` undoes :func:`wigner_transform` to round-off.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import BoundaryError, GridMismatchError, ShapeError

__all__ = [
    "PhaseGrid",
    "PhaseSpaceField",
    "OperatorKernel",
    "derivative",
    "partial",
    "wigner_transform",
    "weyl_quantize",
    "state_symbol",
    "star_product",
    "moyal_bracket",
    "poisson_bracket",
    "pairing",
    "identity_kernel",
    "gaussian_state_kernel",
    "ho_ground_state_kernel",
    "position_kernel",
    "momentum_kernel",
    "operator_trace",
]

SCHEMES = ("spectral", "fd4")
MAX_STAR_ORDER = 4
BOUNDARY_TOL = 1e-10
SPECTRAL_TAIL_TOL = 1e-8
WRAP_BAND = 2


@dataclass(frozen=True)
class PhaseGrid:
    q_min: float
    q_max: float
    n_q: int
    p_min: float
    p_max: float
    n_p: int
    dof: int = 1

    def __post_init__(self):
        for name in ("q_min", "q_max", "p_min", "p_max"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.q_max <= self.q_min or self.p_max <= self.p_min:
            raise ValueError("grid extents must be positive")
        for name in ("n_q", "n_p"):
            n = getattr(self, name)
            if n < 4 or n % 2:
                raise ValueError(f"{name} must be even and >= 4, got {n}")
        if self.dof < 1:
            raise ValueError("dof must be >= 1")

    @classmethod
    def conjugate(cls, q_min: float, q_max: float, n: int, hbar: float) -> "PhaseGrid":
        """Grid whose momentum axis is the DFT partner of the position axis."""
        dq = (q_max - q_min) / n
        p_half = math.pi * hbar / dq
        return cls(q_min, q_max, n, -p_half, p_half, n)

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_q

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def q(self) -> np.ndarray:
        return self.q_min + self.dq * np.arange(self.n_q)

    @property
    def p(self) -> np.ndarray:
        return self.p_min + self.dp * np.arange(self.n_p)

    @property
    def shape(self) -> tuple:
        return (self.n_q, self.n_p) * self.dof

    @property
    def cell_volume(self) -> float:
        return (self.dq * self.dp) ** self.dof

    def mesh(self):
        """(Q, P) arrays of shape (n_q, n_p); single degree of freedom only."""
        if self.dof != 1:
            raise ValueError("mesh() is defined for dof = 1; use points()")
        return np.meshgrid(self.q, self.p, indexing="ij")

    def points(self):
        """(q, p) arrays of shape ``shape + (dof,)``; axes alternate q_1, p_1, q_2, ..."""
        axes = [self.q, self.p] * self.dof
        grids = np.meshgrid(*axes, indexing="ij")
        q = np.stack(grids[0::2], axis=-1)
        p = np.stack(grids[1::2], axis=-1)
        return q, p

    def is_conjugate(self, hbar: float) -> bool:
        if self.dof != 1 or self.n_q != self.n_p:
            return False
        ref = PhaseGrid.conjugate(self.q_min, self.q_max, self.n_q, hbar)
        return math.isclose(ref.p_min, self.p_min, rel_tol=1e-12) and math.isclose(
            ref.p_max, self.p_max, rel_tol=1e-12
        )


@dataclass(frozen=True, eq=False)
class PhaseSpaceField:
    grid: PhaseGrid
    values: np.ndarray
    hbar: float = 1.0
    scheme: str = "fd4"
    truncation: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise ShapeError(f"values shape {values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown differentiation scheme {self.scheme!r}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: PhaseGrid, func, hbar: float = 1.0, scheme: str = "fd4") -> "PhaseSpaceField":
        if grid.dof == 1:
            Q, P = grid.mesh()
            vals = func(Q, P)
        else:
            vals = func(*grid.points())
        vals = np.broadcast_to(np.asarray(vals, dtype=complex), grid.shape)
        return cls(grid, vals, hbar, scheme)

    def with_values(self, values, **changes) -> "PhaseSpaceField":
        kw = dict(hbar=self.hbar, scheme=self.scheme, truncation=self.truncation)
        kw.update(changes)
        return PhaseSpaceField(self.grid, values, **kw)

    def integral(self) -> complex:
        return complex(self.values.sum() * self.grid.cell_volume)


@dataclass(frozen=True, eq=False)
class OperatorKernel:
    """Position-representation kernel ``values[r, s] = <x_r| f |x_s>`` (continuum normalization)."""

    q_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_grid, dtype=float)
        vals = np.asarray(self.values, dtype=complex)
        n = q.size
        if n < 4 or n % 2:
            raise ShapeError("kernel grid needs an even number (>= 4) of points")
        if vals.shape != (n, n):
            raise ShapeError(f"kernel shape {vals.shape} != {(n, n)}")
        dq = np.diff(q)
        if not np.allclose(dq, dq[0], rtol=1e-10, atol=0):
            raise ValueError("kernel grid must be uniform")
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel entries must be finite")
        object.__setattr__(self, "q_grid", q)
        object.__setattr__(self, "values", vals)

    @property
    def dq(self) -> float:
        return float(self.q_grid[1] - self.q_grid[0])

    @property
    def n(self) -> int:
        return self.q_grid.size

    def phase_grid(self, hbar: float) -> PhaseGrid:
        q0 = float(self.q_grid[0])
        return PhaseGrid.conjugate(q0, q0 + self.n * self.dq, self.n, hbar)


# --------------------------------------------------------------------------
# differentiation

_FD4_INTERIOR = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD4_EDGE = {
    0: (np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0, 0),
    1: (np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0, -1),
}


def _fd4_first(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(values, axis, 0)
    n = f.shape[0]
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] * _FD4_INTERIOR[0] + f[1:-3] * _FD4_INTERIOR[1]
                 + f[3:-1] * _FD4_INTERIOR[3] + f[4:] * _FD4_INTERIOR[4])
    for i, (coef, start) in _FD4_EDGE.items():
        lo = i + start
        out[i] = np.tensordot(coef, f[lo:lo + 5], axes=(0, 0))
        # mirrored stencil at the upper edge
        j = n - 1 - i
        out[j] = -np.tensordot(coef, f[j - start - 4:j - start + 1][::-1], axes=(0, 0))
    return np.moveaxis(out / h, 0, axis)


def _spectral(values: np.ndarray, h: float, axis: int, order: int, workers=None) -> np.ndarray:
    n = values.shape[axis]
    k = 2.0 * np.pi * scipy.fft.fftfreq(n, d=h)
    mult = (1j * k) ** order
    if order % 2:
        mult[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    spec = scipy.fft.fft(values, axis=axis, workers=workers)
    return scipy.fft.ifft(spec * mult.reshape(shape), axis=axis, workers=workers)


def derivative(values: np.ndarray, h: float, axis: int, order: int, scheme: str, workers=None) -> np.ndarray:
    """``order``-th derivative along ``axis`` with grid step ``h``."""
    if order == 0:
        return values
    if scheme == "spectral":
        return _spectral(values, h, axis, order, workers)
    if scheme == "fd4":
        out = values
        for _ in range(order):
            out = _fd4_first(out, h, axis)
        return out
    raise ValueError(f"unknown scheme {scheme!r}")


def partial(f: PhaseSpaceField, n_q: int, n_p: int, dof_index: int = 0, scheme: str | None = None) -> np.ndarray:
    g = f.grid
    sch = scheme or f.scheme
    out = derivative(f.values, g.dq, 2 * dof_index, n_q, sch)
    return derivative(out, g.dp, 2 * dof_index + 1, n_p, sch)


def _check_pair(f: PhaseSpaceField, g: PhaseSpaceField) -> str:
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")
    if f.hbar != g.hbar:
        raise GridMismatchError(f"fields carry different hbar ({f.hbar} vs {g.hbar})")
    return "fd4" if "fd4" in (f.scheme, g.scheme) else "spectral"


# --------------------------------------------------------------------------
# products and brackets


class _Derivatives:
    """Lazily cached mixed partials of one field."""

    def __init__(self, field: PhaseSpaceField, scheme: str):
        self.field = field
        self.scheme = scheme
        self._cache: dict[tuple[int, int], np.ndarray] = {(0, 0): field.values}

    def __call__(self, a: int, b: int) -> np.ndarray:
        key = (a, b)
        if key not in self._cache:
            g = self.field.grid
            base = self(a, 0) if b else self(a - 1, 0)
            if b:
                self._cache[key] = derivative(base, g.dp, 1, b, self.scheme)
            else:
                self._cache[key] = derivative(base, g.dq, 0, 1, self.scheme)
        return self._cache[key]


def _bidifferential(df: _Derivatives, dg: _Derivatives, k: int) -> np.ndarray:
    out = np.zeros(df.field.grid.shape, complex)
    for j in range(k + 1):
        c = math.comb(k, j) * (-1) ** j
        out = out + c * (df(k - j, j) * dg(j, k - j))
    return out


def _star_values(f: PhaseSpaceField, g: PhaseSpaceField, order: int, scheme: str) -> np.ndarray:
    df, dg = _Derivatives(f, scheme), _Derivatives(g, scheme)
    out = f.values * g.values
    coef = 1.0 + 0.0j
    for k in range(1, order + 1):
        coef = coef * (0.5j * f.hbar) / k
        out = out + coef * _bidifferential(df, dg, k)
    return out


def _check_order(order: int) -> None:
    if not 0 <= order <= MAX_STAR_ORDER:
        raise ValueError(f"star-product order must be in [0, {MAX_STAR_ORDER}], got {order}")


def star_product(f: PhaseSpaceField, g: PhaseSpaceField, order: int) -> PhaseSpaceField:
    """Moyal star product truncated after the ``order``-th power of hbar."""
    _check_order(order)
    scheme = _check_pair(f, g)
    if f.grid.dof != 1:
        raise ValueError("star products are implemented for one degree of freedom")
    return f.with_values(_star_values(f, g, order, scheme), scheme=scheme, truncation=order)


def moyal_bracket(f: PhaseSpaceField, g: PhaseSpaceField, order: int) -> PhaseSpaceField:
    """(f*g - g*f) / (i hbar) with the star product truncated at ``order``."""
    _check_order(order)
    scheme = _check_pair(f, g)
    if f.grid.dof != 1:
        raise ValueError("Moyal brackets are implemented for one degree of freedom")
    fg = _star_values(f, g, order, scheme)
    gf = _star_values(g, f, order, scheme)
    return f.with_values((fg - gf) / (1j * f.hbar), scheme=scheme, truncation=order)


def poisson_bracket(f: PhaseSpaceField, g: PhaseSpaceField) -> PhaseSpaceField:
    """sum_i d_qi f d_pi g - d_pi f d_qi g."""
    scheme = _check_pair(f, g)
    out = np.zeros(f.grid.shape, complex)
    for i in range(f.grid.dof):
        out = out + (partial(f, 1, 0, i, scheme) * partial(g, 0, 1, i, scheme)
                     - partial(f, 0, 1, i, scheme) * partial(g, 1, 0, i, scheme))
    return f.with_values(out, scheme=scheme, truncation=None)


def pairing(rho_field: PhaseSpaceField, obs_field: PhaseSpaceField) -> float:
    """Phase-space integral of rho * O (periodic trapezoid rule)."""
    _check_pair(rho_field, obs_field)
    total = np.sum(rho_field.values * obs_field.values) * rho_field.grid.cell_volume
    return float(total.real)


# --------------------------------------------------------------------------
# Weyl map


@functools.lru_cache(maxsize=16)
def _half_shift(n: int, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrix evaluating periodic data at ``j + delta`` and its inverse.

    A linear ramp through the two end samples is removed before the Fourier
    shift and added back analytically.
    """
    j = np.arange(n)
    k = scipy.fft.fftfreq(n) * n
    mult = np.exp(2j * np.pi * k * delta / n)
    S = scipy.fft.ifft(mult[:, None] * scipy.fft.fft(np.eye(n), axis=0), axis=0)
    ramp = np.zeros((n, n))
    ramp[:, 0], ramp[:, -1] = 1 - j / (n - 1), j / (n - 1)
    ramp_s = np.zeros((n, n))
    ramp_s[:, 0], ramp_s[:, -1] = 1 - (j + delta) / (n - 1), (j + delta) / (n - 1)
    T = S @ (np.eye(n) - ramp) + ramp_s
    T_inv = np.linalg.inv(T)
    T.setflags(write=False)
    T_inv.setflags(write=False)
    return T, T_inv


def _difference_layout(n: int):
    """Row/column index arrays mapping (centre j, difference m) to kernel entries."""
    m = (scipy.fft.fftfreq(n) * n).astype(int)
    j = np.arange(n)[:, None]
    odd = (m % 2).astype(bool)
    # even m: centre j; odd m: centre j + 1/2
    up = np.where(odd, (m + 1) // 2, m // 2)[None, :]
    down = np.where(odd, (m - 1) // 2, m // 2)[None, :]
    rows = (j + up) % n
    cols = (j - down) % n
    return rows, cols, odd, m


def _check_wrap(G: np.ndarray, m: np.ndarray, tol: float, what: str) -> None:
    scale = float(np.abs(G).max(initial=0))
    if scale == 0:
        return
    band = np.abs(m) >= G.shape[0] // 2 - WRAP_BAND
    edge = float(np.abs(G[:, band]).max(initial=0))
    if edge > tol * scale:
        raise BoundaryError(
            f"{what} reaches the periodic wrap of the difference variable "
            f"(relative magnitude {edge / scale:.2e} > {tol:.0e}); enlarge the grid"
        )


def wigner_transform(op: OperatorKernel, hbar: float, check: bool = True, workers=None) -> PhaseSpaceField:
    """Operator symbol of ``op`` on the conjugate phase grid."""
    if not hbar > 0:
        raise ValueError("hbar must be positive")
    n, dq = op.n, op.dq
    rows, cols, odd, m = _difference_layout(n)
    G = op.values[rows, cols]
    if check:
        _check_wrap(G, m, BOUNDARY_TOL, "kernel support")
    T, _ = _half_shift(n, -0.5)
    if np.any(odd):
        G[:, odd] = T @ G[:, odd]
    spec = dq * scipy.fft.fftshift(scipy.fft.fft(G, axis=1, workers=workers), axes=1)
    return PhaseSpaceField(op.phase_grid(hbar), spec, hbar, scheme="spectral")


def weyl_quantize(field: PhaseSpaceField, check: bool = True, workers=None) -> OperatorKernel:
    """Inverse of :func:`wigner_transform` (symmetric ordering)."""
    g = field.grid
    if not g.is_conjugate(field.hbar):
        raise GridMismatchError("Weyl quantization needs the conjugate phase grid of the position axis")
    n, dq = g.n_q, g.dq
    rows, cols, odd, m = _difference_layout(n)
    G = scipy.fft.ifft(scipy.fft.ifftshift(field.values, axes=1), axis=1, workers=workers) / dq
    if check:
        _check_wrap(G, m, SPECTRAL_TAIL_TOL, "field spectrum")
    _, T_inv = _half_shift(n, -0.5)
    if np.any(odd):
        G[:, odd] = T_inv @ G[:, odd]
    K = np.empty((n, n), complex)
    K[rows, cols] = G
    return OperatorKernel(g.q, K)


def state_symbol(op: OperatorKernel, hbar: float, check: bool = True) -> PhaseSpaceField:
    """Symbol of a density operator, normalized so its phase-space integral is its trace."""
    f = wigner_transform(op, hbar, check=check)
    return f.with_values(f.values / (2.0 * np.pi * hbar))


# --------------------------------------------------------------------------
# kernels used throughout the package and its tests


def identity_kernel(q: np.ndarray) -> OperatorKernel:
    q = np.asarray(q, float)
    return OperatorKernel(q, np.eye(q.size) / (q[1] - q[0]))


def gaussian_state_kernel(q: np.ndarray, hbar: float, q0: float = 0.0, p0: float = 0.0,
                          width: float = 1.0) -> OperatorKernel:
    """Projector on a normalized Gaussian wave packet; ``width`` is the position std times sqrt(2/hbar)."""
    q = np.asarray(q, float)
    s2 = hbar * width**2
    psi = (np.pi * s2) ** -0.25 * np.exp(-((q - q0) ** 2) / (2 * s2) + 1j * p0 * q / hbar)
    return OperatorKernel(q, np.outer(psi, np.conj(psi)))


def ho_ground_state_kernel(q: np.ndarray, hbar: float) -> OperatorKernel:
    """Ground-state projector of H = (p^2 + q^2)/2."""
    return gaussian_state_kernel(q, hbar)


def position_kernel(q: np.ndarray, power: int = 1) -> OperatorKernel:
    q = np.asarray(q, float)
    return OperatorKernel(q, np.diag(q**power) / (q[1] - q[0]))


def momentum_kernel(q: np.ndarray, hbar: float, power: int = 1) -> OperatorKernel:
    """Spectral (Fourier) representation of p^power on the periodic position grid."""
    q = np.asarray(q, float)
    n, dq = q.size, q[1] - q[0]
    k = 2.0 * np.pi * scipy.fft.fftfreq(n, d=dq)
    mult = (hbar * k) ** power
    if power % 2:
        mult[n // 2] = 0.0
    mat = scipy.fft.ifft(mult[:, None] * scipy.fft.fft(np.eye(n), axis=0), axis=0)
    return OperatorKernel(q, mat / dq)


def operator_trace(*kernels: OperatorKernel) -> complex:
    """Trace of a product of kernels (continuum normalization, dq^k quadrature)."""
    if not kernels:
        raise ValueError("need at least one kernel")
    dq = kernels[0].dq
    acc = kernels[0].values
    for k in kernels[1:]:
        if k.n != kernels[0].n:
            raise GridMismatchError("kernels on different grids")
        acc = acc @ k.values * dq
    return complex(np.trace(acc) * dq)
