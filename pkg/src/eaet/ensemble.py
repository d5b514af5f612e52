"""Monte Carlo ensembles of Ehrenfest trajectories.

Trajectory k draws its bath phase point from the stream (master_seed, k).
Trajectories are grouped into fixed blocks of ``batch_size`` consecutive
indices; a block is the unit of vectorized work and of dispatch to worker
processes. Shot sampling uses one stream per block, (master_seed, block,
SHOT_STREAM), and shot-mode blocks are always filled to full size so the
draws seen by trajectory k never depend on how many trajectories run.

Per-trajectory series are gathered in index order before averaging, which
makes every result bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bath import SpectralDensityParams, discretize
from .ehrenfest import TrajectoryState, n_substeps, propagate_rk4
from .pvqd import OptimizerSettings, evolve_trajectory
from .wigner import BathPhasePoint, ThermalState, sample, trajectory_rng

log = logging.getLogger(__name__)

ENGINES = ("rk4", "pvqd_exact", "pvqd_shots")
SHOT_STREAM = 1
MAX_FAILURE_FRACTION = 0.01
WORKERS_ENV = "EAET_WORKERS"


class EnsembleError(RuntimeError):
    """Raised when too many trajectories fail for the run to be trusted."""


@dataclass(frozen=True)
class PhysicsParams:
    omega_sys: float = 1.0
    xi: float = 1.2
    omega_c: float = 2.5
    beta: float = 0.2
    n_modes: int = 60

    def __post_init__(self):
        if not np.isfinite(self.omega_sys) or self.omega_sys < 0:
            raise ValueError("omega_sys must be finite and >= 0")
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ValueError("beta must be finite and > 0")
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ValueError("n_modes must be a positive integer")
        SpectralDensityParams(self.xi, self.omega_c)


@dataclass(frozen=True)
class NumericsParams:
    """Time grid and integration knobs.

    ``max_substep`` caps the internal RK4 step; every output step dt is split
    into the fewest equal substeps not exceeding it. ``batch_size`` fixes the
    trajectory blocks (and with them the shot streams).
    """

    dt: float = 0.05
    t_max: float = 15.0
    shots: int = 50_000
    max_substep: float = 0.00625
    batch_size: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        ratio = self.t_max / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"dt = {self.dt} does not divide t_max = {self.t_max}")
        if int(self.shots) != self.shots or self.shots < 1:
            raise ValueError("shots must be a positive integer")
        if not self.max_substep > 0:
            raise ValueError("max_substep must be > 0")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def substeps(self) -> int:
        return n_substeps(self.dt, self.max_substep)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class EnsembleConfig:
    n_trajectories: int = 10_000
    master_seed: int = 0
    engine: str = "rk4"
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    numerics: NumericsParams = field(default_factory=NumericsParams)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if int(self.n_trajectories) != self.n_trajectories or self.n_trajectories < 1:
            raise ValueError("n_trajectories must be a positive integer")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ValueError("master_seed must be a non-negative integer")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")

    def bath(self):
        p = self.physics
        return discretize(SpectralDensityParams(p.xi, p.omega_c), p.n_modes)

    def thermal(self) -> ThermalState:
        return ThermalState(self.physics.beta)


@dataclass(frozen=True)
class TrajectorySet:
    """Per-trajectory observables, rows in trajectory-index order."""

    times: np.ndarray
    p_reactant: np.ndarray
    sigma_z: np.ndarray
    failed: np.ndarray
    unconverged_steps: np.ndarray

    @property
    def n_trajectories(self) -> int:
        return self.p_reactant.shape[0]

    def head(self, n: int) -> "TrajectorySet":
        """The first ``n`` trajectories (a smaller ensemble with the same seeds)."""
        return TrajectorySet(self.times, self.p_reactant[:n], self.sigma_z[:n], self.failed[:n],
                             self.unconverged_steps[:n])


@dataclass(frozen=True)
class PopulationSeries:
    times: np.ndarray
    p_reactant_mean: np.ndarray
    p_reactant_stderr: np.ndarray
    sigma_z_mean: np.ndarray
    sigma_z_stderr: np.ndarray
    n_contributing: int
    n_unconverged_steps: int = 0
    n_failed: int = 0


@dataclass(frozen=True)
class DeviationReport:
    max: float
    rms: float

    def as_dict(self) -> dict:
        return {"max": self.max, "rms": self.rms}


def _stderr(values):
    n = values.shape[0]
    if n < 2:
        return np.zeros(values.shape[1:])
    return np.std(values, axis=0, ddof=1) / np.sqrt(n)


def aggregate(trajectories: TrajectorySet) -> PopulationSeries:
    """Mean and standard error over the trajectories that did not fail."""
    ok = ~trajectories.failed
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise EnsembleError("no trajectory finished")
    p = trajectories.p_reactant[ok]
    sz = trajectories.sigma_z[ok]
    return PopulationSeries(
        times=trajectories.times,
        p_reactant_mean=p.mean(axis=0),
        p_reactant_stderr=_stderr(p),
        sigma_z_mean=sz.mean(axis=0),
        sigma_z_stderr=_stderr(sz),
        n_contributing=n_ok,
        n_unconverged_steps=int(trajectories.unconverged_steps[ok].sum()),
        n_failed=int(trajectories.failed.sum()),
    )


def compare_series(a: PopulationSeries, b: PopulationSeries) -> DeviationReport:
    """Max and RMS pointwise deviation of the reactant-population means."""
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise ValueError("series are on different time grids")
    d = np.abs(a.p_reactant_mean - b.p_reactant_mean)
    return DeviationReport(float(d.max()), float(np.sqrt(np.mean(d**2))))


def sample_phase_points(cfg: EnsembleConfig, indices) -> BathPhasePoint:
    """Wigner draws for the given trajectory indices, one stream per index."""
    bath, thermal = cfg.bath(), cfg.thermal()
    return BathPhasePoint.stack(sample(bath, thermal, trajectory_rng(cfg.master_seed, int(k))) for k in indices)


def _run_block(cfg: EnsembleConfig, block: int, points: BathPhasePoint | None):
    """Evolve one block; returns (P, sigma_z, unconverged) for its rows."""
    num = cfg.numerics
    start = block * num.batch_size
    n_rows = num.batch_size if cfg.engine == "pvqd_shots" else min(num.batch_size, cfg.n_trajectories - start)
    if points is None:
        points = sample_phase_points(cfg, range(start, start + n_rows))
    bath = cfg.bath()
    if cfg.engine == "rk4":
        state = TrajectoryState.initial(bath, points, cfg.physics.omega_sys)
        _, p, sz = propagate_rk4(state, num.dt, num.n_steps, num.substeps)
        unconverged = np.zeros(p.shape[0], dtype=int)
    else:
        shots, rng = None, None
        if cfg.engine == "pvqd_shots":
            shots = num.shots
            rng = trajectory_rng(cfg.master_seed, block, SHOT_STREAM)
        res = evolve_trajectory(points, bath, cfg.physics.omega_sys, num.dt, num.n_steps, cfg.optimizer,
                                shots=shots, rng=rng, substeps=num.substeps)
        p, sz, unconverged = res.p_reactant, res.sigma_z, res.unconverged_steps
    return p, sz, unconverged


def _run_block_guarded(args):
    cfg, block, points = args
    try:
        return _run_block(cfg, block, points)
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("block %d failed: %s", block, exc)
        return None


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return 1
    workers = int(value)
    if workers < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {value!r}")
    return workers


def _block_points(points: BathPhasePoint, start: int, n_rows: int) -> BathPhasePoint:
    # pad a short trailing block by repeating its last row; padded rows are dropped
    x0, p0 = points.x0[start:start + n_rows], points.p0[start:start + n_rows]
    if x0.shape[0] < n_rows:
        pad = n_rows - x0.shape[0]
        x0 = np.concatenate([x0, np.repeat(x0[-1:], pad, axis=0)])
        p0 = np.concatenate([p0, np.repeat(p0[-1:], pad, axis=0)])
    return BathPhasePoint(x0, p0)


def simulate(cfg: EnsembleConfig, workers: int | None = None,
             initial_conditions: BathPhasePoint | None = None) -> TrajectorySet:
    """Evolve every trajectory of ``cfg`` and return the per-trajectory series.

    ``initial_conditions`` replaces the Wigner draws: either one phase point
    used for every trajectory or one row per trajectory. Rows whose series
    are not finite, or whose block raised a numerical error, are marked
    failed; more than 1% failures raises :class:`EnsembleError`.
    """
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    n, bs = cfg.n_trajectories, cfg.numerics.batch_size
    n_blocks = -(-n // bs)
    full_rows = bs if cfg.engine == "pvqd_shots" else None

    if initial_conditions is not None:
        ic = initial_conditions
        if ic.n_modes != cfg.physics.n_modes:
            raise ValueError(f"initial conditions have {ic.n_modes} modes, expected {cfg.physics.n_modes}")
        if ic.x0.ndim == 1:
            ic = BathPhasePoint(np.broadcast_to(ic.x0, (n, ic.n_modes)), np.broadcast_to(ic.p0, (n, ic.n_modes)))
        elif ic.x0.shape[0] != n:
            raise ValueError(f"expected {n} initial conditions, got {ic.x0.shape[0]}")
        tasks = [(cfg, b, _block_points(ic, b * bs, full_rows or min(bs, n - b * bs))) for b in range(n_blocks)]
    else:
        tasks = [(cfg, b, None) for b in range(n_blocks)]

    if workers == 1 or n_blocks == 1:
        results = [_run_block_guarded(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n_blocks)) as pool:
            results = list(pool.map(_run_block_guarded, tasks))

    n_times = cfg.numerics.n_steps + 1
    p_all = np.full((n, n_times), np.nan)
    sz_all = np.full((n, n_times), np.nan)
    unconverged = np.zeros(n, dtype=int)
    for b, res in enumerate(results):
        start = b * bs
        rows = min(bs, n - start)
        if res is None:
            continue
        p, sz, unc = res
        p_all[start:start + rows] = p[:rows]
        sz_all[start:start + rows] = sz[:rows]
        unconverged[start:start + rows] = unc[:rows]

    failed = ~(np.all(np.isfinite(p_all), axis=1) & np.all(np.isfinite(sz_all), axis=1))
    n_failed = int(failed.sum())
    if n_failed:
        log.warning("%d of %d trajectories failed and are excluded", n_failed, n)
    if n_failed > MAX_FAILURE_FRACTION * n:
        raise EnsembleError(f"{n_failed} of {n} trajectories failed (limit {MAX_FAILURE_FRACTION:.0%})")
    return TrajectorySet(cfg.numerics.times, p_all, sz_all, failed, unconverged)


def run_ensemble(cfg: EnsembleConfig, workers: int | None = None,
                 initial_conditions: BathPhasePoint | None = None) -> PopulationSeries:
    """Ensemble-averaged populations; see :func:`simulate` for the arguments."""
    return aggregate(simulate(cfg, workers, initial_conditions))
