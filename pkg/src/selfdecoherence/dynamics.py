"""Hamiltonian systems of the form H = |p|^2 / 2 + V(q) and a symplectic integrator.

Phase points are passed as ``(q, p)`` arrays whose last axis runs over the
degrees of freedom, so any leading batch shape is accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "HamiltonianSystem",
    "harmonic",
    "pendulum",
    "henon_heiles",
    "separable_harmonic",
    "make_system",
    "SYSTEMS",
    "yoshida4",
    "flow",
]


@dataclass(frozen=True, eq=False)
class HamiltonianSystem:
    name: str
    dof: int
    potential: Callable[[np.ndarray], np.ndarray]
    force: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    separatrix: float | None = None
    q_period: float | None = None

    def energy(self, q, p) -> np.ndarray:
        q = np.asarray(q, float)
        p = np.asarray(p, float)
        return 0.5 * np.sum(p * p, axis=-1) + self.potential(q)

    def gradient(self, q, p):
        """(dH/dq, dH/dp)."""
        return -self.force(np.asarray(q, float)), np.asarray(p, float)

    def field_function(self):
        """H as a function of grid coordinates, suitable for PhaseSpaceField.from_function."""
        if self.dof == 1:
            return lambda Q, P: self.energy(Q[..., None], P[..., None])
        return self.energy


def harmonic(omega: float = 1.0) -> HamiltonianSystem:
    return HamiltonianSystem(
        "harmonic", 1,
        lambda q: 0.5 * omega**2 * q[..., 0] ** 2,
        lambda q: -(omega**2) * q,
        {"omega": omega},
    )


def pendulum(omega0: float = 1.0) -> HamiltonianSystem:
    """V = omega0^2 (1 - cos q); the separatrix sits at H = 2 omega0^2."""
    w2 = omega0**2
    return HamiltonianSystem(
        "pendulum", 1,
        lambda q: w2 * (1.0 - np.cos(q[..., 0])),
        lambda q: -w2 * np.sin(q),
        {"omega0": omega0},
        separatrix=2.0 * w2,
        q_period=2.0 * math.pi,
    )


def henon_heiles(lam: float = 1.0) -> HamiltonianSystem:
    def potential(q):
        x, y = q[..., 0], q[..., 1]
        return 0.5 * (x * x + y * y) + lam * (x * x * y - y**3 / 3.0)

    def force(q):
        x, y = q[..., 0], q[..., 1]
        return np.stack([-(x + 2.0 * lam * x * y), -(y + lam * (x * x - y * y))], axis=-1)

    return HamiltonianSystem("henon_heiles", 2, potential, force, {"lam": lam},
                             separatrix=1.0 / (6.0 * lam * lam) if lam else None)


def separable_harmonic(omega1: float = 1.0, omega2: float = 1.0) -> HamiltonianSystem:
    w = np.array([omega1, omega2])
    return HamiltonianSystem(
        "separable_harmonic", 2,
        lambda q: 0.5 * np.sum((w * q) ** 2, axis=-1),
        lambda q: -(w**2) * q,
        {"omega1": omega1, "omega2": omega2},
    )


SYSTEMS = {
    "harmonic": harmonic,
    "pendulum": pendulum,
    "henon_heiles": henon_heiles,
    "separable_harmonic": separable_harmonic,
}


def make_system(name: str, **params) -> HamiltonianSystem:
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
    return factory(**params)


# Yoshida's fourth-order composition of the leapfrog
_CBRT2 = 2.0 ** (1.0 / 3.0)
_W1 = 1.0 / (2.0 - _CBRT2)
_W0 = -_CBRT2 / (2.0 - _CBRT2)
_DRIFT = (0.5 * _W1, 0.5 * (_W0 + _W1), 0.5 * (_W0 + _W1), 0.5 * _W1)
_KICK = (_W1, _W0, _W1)


def yoshida4(system: HamiltonianSystem, q: np.ndarray, p: np.ndarray, h: float):
    """One fourth-order symplectic step (drift-kick-...-drift)."""
    for i in range(3):
        q = q + _DRIFT[i] * h * p
        p = p + _KICK[i] * h * system.force(q)
    q = q + _DRIFT[3] * h * p
    return q, p


def flow(system: HamiltonianSystem, q0, p0, duration: float, step: float):
    """Integrate from (q0, p0) for ``duration``; returns (times, q, p) with time on axis 0.

    The step is shrunk slightly so that an integer number of steps lands
    exactly on ``duration``.
    """
    q = np.array(q0, dtype=float)
    p = np.array(p0, dtype=float)
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(round(duration / step)) if duration > 0 else 0
    if duration > 0:
        n = max(n, 1)
    h = duration / n if n else 0.0
    qs = np.empty((n + 1,) + q.shape)
    ps = np.empty((n + 1,) + p.shape)
    qs[0], ps[0] = q, p
    for i in range(1, n + 1):
        q, p = yoshida4(system, q, p, h)
        qs[i], ps[i] = q, p
    return h * np.arange(n + 1), qs, ps
