"""Thermal Wigner sampling of harmonic-bath initial conditions.

The Wigner function of a thermal harmonic mode is a Gaussian in (x, p)
whose widths include zero-point motion:

    var_x = hbar / (2 m w tanh(hbar w beta / 2))
    var_p = hbar m w / (2 tanh(hbar w beta / 2))

Modes are uncorrelated, so each coordinate is drawn independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import DiscretizedBath


@dataclass(frozen=True)
class ThermalState:
    """Inverse temperature; ``beta = inf`` means the zero-temperature limit."""

    beta: float

    def __post_init__(self):
        if np.isnan(self.beta) or self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")

    @classmethod
    def zero_temperature(cls) -> "ThermalState":
        return cls(np.inf)

    @property
    def is_zero_temperature(self) -> bool:
        return np.isinf(self.beta)


@dataclass(frozen=True)
class BathPhasePoint:
    """Initial positions and momenta of every bath mode.

    Arrays have shape ``(..., n_modes)``; a leading axis holds a batch of
    independent draws.
    """

    x0: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        p0 = np.asarray(self.p0, dtype=float)
        if x0.shape != p0.shape or x0.ndim == 0:
            raise ValueError("x0 and p0 must be arrays of identical shape")
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(p0))):
            raise ValueError("phase point entries must be finite")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "p0", p0)

    @property
    def n_modes(self) -> int:
        return self.x0.shape[-1]

    @classmethod
    def stack(cls, points) -> "BathPhasePoint":
        points = list(points)
        return cls(np.stack([pt.x0 for pt in points]), np.stack([pt.p0 for pt in points]))

    @classmethod
    def zeros(cls, n_modes: int) -> "BathPhasePoint":
        return cls(np.zeros(n_modes), np.zeros(n_modes))


def mode_variances(bath: DiscretizedBath, thermal: ThermalState, j: int | None = None):
    """Position and momentum variances of mode ``j`` (all modes if None)."""
    w, m, hbar = bath.omega, bath.mass, bath.hbar
    if j is not None:
        if not 0 <= j < bath.n_modes:
            raise IndexError(f"mode index {j} out of range for {bath.n_modes} modes")
        w, m = w[j], m[j]
    t = np.tanh(0.5 * hbar * w * thermal.beta)
    var_x = hbar / (2.0 * m * w * t)
    var_p = hbar * m * w / (2.0 * t)
    return var_x, var_p


def trajectory_rng(master_seed: int, index: int, *stream) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of a run seeded with ``master_seed``.

    Extra integers in ``stream`` select further independent sub-streams
    without disturbing the trajectory's own draws.
    """
    return np.random.default_rng(np.random.SeedSequence([master_seed, index, *stream]))


def sample(bath: DiscretizedBath, thermal: ThermalState, rng: np.random.Generator) -> BathPhasePoint:
    """Draw one phase point from the thermal Wigner distribution."""
    var_x, var_p = mode_variances(bath, thermal)
    x0 = np.sqrt(var_x) * rng.standard_normal(bath.n_modes)
    p0 = np.sqrt(var_p) * rng.standard_normal(bath.n_modes)
    return BathPhasePoint(x0, p0)


def sample_many(bath: DiscretizedBath, thermal: ThermalState, rng: np.random.Generator, size: int) -> BathPhasePoint:
    """``size`` i.i.d. phase points from one generator, shape ``(size, n_modes)``."""
    var_x, var_p = mode_variances(bath, thermal)
    x0 = np.sqrt(var_x) * rng.standard_normal((size, bath.n_modes))
    p0 = np.sqrt(var_p) * rng.standard_normal((size, bath.n_modes))
    return BathPhasePoint(x0, p0)
