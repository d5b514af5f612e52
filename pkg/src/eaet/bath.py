"""Ohmic spectral density and its finite harmonic-bath discretization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SpectralDensityParams:
    """Ohmic bath parameters in natural units (hbar = 1 by default).

    xi is the dimensionless Kondo parameter, omega_c the cutoff frequency.
    """

    xi: float
    omega_c: float
    hbar: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.xi) or self.xi < 0:
            raise ValueError(f"xi must be finite and >= 0, got {self.xi}")
        if not np.isfinite(self.omega_c) or self.omega_c <= 0:
            raise ValueError(f"omega_c must be finite and > 0, got {self.omega_c}")
        if self.hbar <= 0:
            raise ValueError(f"hbar must be > 0, got {self.hbar}")

    @property
    def reorganization_target(self) -> float:
        """hbar * xi * omega_c / 2, the value every discretization must reproduce."""
        return 0.5 * self.hbar * self.xi * self.omega_c


@dataclass(frozen=True)
class DiscretizedBath:
    """Harmonic modes (omega_j, c_j, m_j) standing in for a continuous bath."""

    omega: np.ndarray
    c: np.ndarray
    mass: np.ndarray
    hbar: float = 1.0
    params: SpectralDensityParams | None = field(default=None, compare=False)

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        c = np.asarray(self.c, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if omega.ndim != 1 or omega.size == 0:
            raise ValueError("omega must be a non-empty 1-d array")
        if c.shape != omega.shape or mass.shape != omega.shape:
            raise ValueError("omega, c and mass must have the same length")
        if np.any(omega <= 0):
            raise ValueError("all mode frequencies must be positive")
        if np.any(np.diff(omega) <= 0):
            raise ValueError("mode frequencies must be strictly increasing")
        if np.any(mass <= 0):
            raise ValueError("all mode masses must be positive")
        for name, arr in (("omega", omega), ("c", c), ("mass", mass)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_modes(self) -> int:
        return self.omega.size

    @classmethod
    def single_mode(cls, omega: float, c: float, mass: float = 1.0) -> "DiscretizedBath":
        return cls(np.array([omega]), np.array([c]), np.array([mass]))


def ohmic_spectral_density(params: SpectralDensityParams, omega):
    """J(w) = (pi/2) * hbar * xi * w * exp(-w / omega_c)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("spectral density is defined for omega >= 0 only")
    out = 0.5 * np.pi * params.hbar * params.xi * omega * np.exp(-omega / params.omega_c)
    return float(out) if out.ndim == 0 else out


def discretize(params: SpectralDensityParams, n_modes: int) -> DiscretizedBath:
    """Equal-weight logarithmic discretization of the Ohmic density.

    Mode j (1-based) sits at the midpoint quantile of the mode density
    rho(w) ~ exp(-w / omega_c):

        omega_j = -omega_c * log(1 - (j - 1/2) / N)
        c_j     = omega_j * sqrt(xi * omega_c * m_j * hbar / N),   m_j = 1

    Every mode then carries reorganization energy hbar*xi*omega_c/(2N), so
    the sum rule holds identically for any N.
    """
    if int(n_modes) != n_modes or n_modes < 1:
        raise ValueError(f"n_modes must be a positive integer, got {n_modes}")
    n = int(n_modes)
    j = np.arange(1, n + 1, dtype=float)
    omega = -params.omega_c * np.log1p(-(j - 0.5) / n)
    mass = np.ones(n)
    c = omega * np.sqrt(params.xi * params.omega_c * mass * params.hbar / n)
    return DiscretizedBath(omega, c, mass, hbar=params.hbar, params=params)


def reorganization_sum(bath: DiscretizedBath) -> float:
    """sum_j c_j^2 / (2 m_j omega_j^2)."""
    return float(np.sum(bath.c**2 / (2.0 * bath.mass * bath.omega**2)))
