"""Projected variational time stepping of the ZXZ circuit.

At every step the increment d_theta minimizes

    L(d_theta, dt) = (1 - |<0| C^dagger(theta) U(dt) C(theta + d_theta) |0>|^2) / dt^2

where U(dt) is the exact short-time propagator of the Ehrenfest
Hamiltonian. Gradients come from the parameter-shift rule and the
minimization uses ADAM, warm-started at d_theta = 0.

The global phase theta_1 never changes the loss and is not optimized.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import vqc
from .bath import DiscretizedBath
from .ehrenfest import QubitState, TrajectoryState, coupled_step, mean_path
from .wigner import BathPhasePoint

N_PARAMS = 4
# theta_2, theta_3, theta_4; theta_1 is the loss-invariant global phase
SHIFTED = (1, 2, 3)
LR_SCHEDULES = ("inv_sqrt", "constant")


def _shift_table():
    shifts = np.zeros((1 + 2 * len(SHIFTED), N_PARAMS))
    for k, i in enumerate(SHIFTED):
        shifts[1 + 2 * k, i] = 0.5 * np.pi
        shifts[2 + 2 * k, i] = -0.5 * np.pi
    return shifts


# row 0 is the unshifted point, then (+pi/2, -pi/2) pairs per optimized angle
_SHIFTS = _shift_table()


@dataclass(frozen=True)
class OptimizerSettings:
    """ADAM and stopping knobs for one projected step.

    Exact-fidelity steps stop once the loss drops below ``tol_loss`` or after
    ``max_iters`` updates. Shot-sampled steps run a fixed ``shot_iters``
    budget with the learning rate following ``shot_lr_schedule``
    ("inv_sqrt": lr / sqrt(t), "constant": lr).
    """

    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    tol_loss: float = 1e-16
    max_iters: int = 1000
    shot_iters: int = 150
    shot_lr_schedule: str = "inv_sqrt"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.tol_loss > 0:
            raise ValueError("tol_loss must be > 0")
        for name in ("max_iters", "shot_iters"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.shot_lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"shot_lr_schedule must be one of {LR_SCHEDULES}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(adam: AdamState, grad, d_params, settings: OptimizerSettings = OptimizerSettings(),
              learning_rate: float | None = None):
    """Bias-corrected ADAM update; returns the new state and parameters."""
    lr = settings.learning_rate if learning_rate is None else learning_rate
    b1, b2 = settings.beta1, settings.beta2
    t = adam.t + 1
    m = b1 * adam.m + (1.0 - b1) * grad
    v = b2 * adam.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    d_params = d_params - lr * m_hat / (np.sqrt(v_hat) + settings.epsilon)
    return AdamState(m, v, t), d_params


def _dagger(u):
    return np.conj(np.swapaxes(np.asarray(u, dtype=complex), -1, -2))


def _check_dt(dt):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")


def _infidelities(target, theta, shots, rng):
    if shots is None:
        return vqc.infidelity_from_target(target, theta)
    return 1.0 - vqc.sample_counts(vqc.fidelity_from_target(target, theta), shots, rng)


def _loss_and_gradient(target, theta, dt, shots=None, rng=None):
    """Loss at ``theta`` and its parameter-shift gradient.

    ``target`` is U C(theta_old)|0> with shape ``(..., 2)``. All seven
    circuit evaluations are drawn together.
    """
    losses = _infidelities(target[..., None, :], theta[..., None, :] + _SHIFTS, shots, rng) / dt**2
    grad = np.zeros(theta.shape)
    grad[..., SHIFTED] = 0.5 * (losses[..., 1::2] - losses[..., 2::2])
    return losses[..., 0], grad


def loss(params, d_params, step_u, dt: float, shots: int | None = None, rng=None):
    """Projection loss; exact when ``shots`` is None, otherwise shot-sampled.

    ``step_u`` is the forward propagator exp(-i H dt / hbar); the overlap
    uses its adjoint so that the minimizer satisfies
    C(theta + d_theta)|0> = step_u C(theta)|0> up to a phase.
    """
    _check_dt(dt)
    theta_new = np.asarray(params, dtype=float) + np.asarray(d_params, dtype=float)
    if shots is None:
        step_u = np.asarray(step_u, dtype=complex)
        vqc.check_unitary(step_u)
        return vqc.infidelity_from_target(vqc.overlap_target(params, _dagger(step_u)), theta_new) / dt**2
    f = vqc.fidelity_shots(params, _dagger(step_u), theta_new, shots, rng)
    return (1.0 - f) / dt**2


def gradient(params, d_params, step_u, dt: float, shots: int | None = None, rng=None):
    """Parameter-shift gradient of :func:`loss` with respect to ``d_params``.

    Component i is (L(d + pi/2 e_i) - L(d - pi/2 e_i)) / 2; the global-phase
    component is identically zero.
    """
    _check_dt(dt)
    step_u = np.asarray(step_u, dtype=complex)
    vqc.check_unitary(step_u)
    target = vqc.overlap_target(params, _dagger(step_u))
    theta = np.asarray(params, dtype=float) + np.asarray(d_params, dtype=float)
    batch = np.broadcast_shapes(target.shape[:-1], theta.shape[:-1])
    target = np.broadcast_to(target, (*batch, 2))
    theta = np.broadcast_to(theta, (*batch, N_PARAMS))
    return _loss_and_gradient(target, theta, dt, shots, rng)[1]


@dataclass(frozen=True)
class OptimizeReport:
    """Per-trajectory outcome of one projected step (arrays over the batch)."""

    d_params: np.ndarray
    loss: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def project_step(params, step_u, dt: float, settings: OptimizerSettings = OptimizerSettings(),
                 shots: int | None = None, rng: np.random.Generator | None = None):
    """Optimize d_theta for one time step and return (theta + d_theta, report).

    ``params`` may carry a batch axis; every row is optimized independently
    and stops as soon as its own loss is below tolerance. Shot-sampled rows
    always run the full ``shot_iters`` budget and are reported converged.
    """
    _check_dt(dt)
    if shots is not None and rng is None:
        raise ValueError("shot-sampled steps need a random generator")
    params = np.asarray(params, dtype=float)
    batch_shape = params.shape[:-1]
    theta = params.reshape(-1, N_PARAMS)
    step_u = np.asarray(step_u, dtype=complex)
    vqc.check_unitary(step_u)
    target = vqc.overlap_target(theta, _dagger(np.broadcast_to(step_u, (*batch_shape, 2, 2))).reshape(-1, 2, 2))
    n = theta.shape[0]

    d = np.zeros_like(theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    last_loss = np.full(n, np.nan)
    iterations = np.zeros(n, dtype=int)
    converged = np.zeros(n, dtype=bool)
    active = np.arange(n)

    sampled = shots is not None
    budget = settings.shot_iters if sampled else settings.max_iters
    for it in range(1, budget + 2):
        value, grad = _loss_and_gradient(target[active], theta[active] + d[active], dt, shots, rng)
        last_loss[active] = value
        if not sampled:
            done = value < settings.tol_loss
            converged[active[done]] = True
            active, grad = active[~done], grad[~done]
        if it > budget or active.size == 0:
            break
        lr = settings.learning_rate
        if sampled and settings.shot_lr_schedule == "inv_sqrt":
            lr = lr / np.sqrt(it)
        adam, d[active] = adam_step(AdamState(m[active], v[active], it - 1), grad, d[active],
                                    settings, learning_rate=lr)
        m[active], v[active] = adam.m, adam.v
        iterations[active] = it
    if sampled:
        converged[:] = True

    report = OptimizeReport(
        d_params=d.reshape(params.shape),
        loss=last_loss.reshape(batch_shape),
        iterations=iterations.reshape(batch_shape),
        converged=converged.reshape(batch_shape),
    )
    return (theta + d).reshape(params.shape), report


@dataclass
class TrajectoryResult:
    """Observables of one (or a batch of) trajectories on the step grid."""

    times: np.ndarray
    p_reactant: np.ndarray
    sigma_z: np.ndarray
    unconverged_steps: np.ndarray = field(default=None)
    iterations: np.ndarray = field(default=None)


def evolve_trajectory(initial: BathPhasePoint, bath: DiscretizedBath, omega_sys: float, dt: float,
                      n_steps: int, settings: OptimizerSettings = OptimizerSettings(),
                      shots: int | None = None, rng: np.random.Generator | None = None,
                      substeps: int = 1) -> TrajectoryResult:
    """Propagate the circuit parameters alongside the Ehrenfest bath.

    Each step reads the qubit state off the circuit, integrates the coupled
    qubit-bath equations over ``dt`` (in ``substeps`` RK4 steps) to obtain
    the bath at t + dt and the qubit propagator U, then projects the circuit
    onto U C(theta)|0>. The qubit starts in the reactant state (theta = 0).
    ``initial`` may hold a batch of phase points; all are stepped together.
    """
    _check_dt(dt)
    state = TrajectoryState.initial(bath, initial, omega_sys)
    batch_shape = initial.x0.shape[:-1]
    theta = np.zeros((*batch_shape, N_PARAMS))
    amp = vqc.ansatz_state(theta)
    p_hist, sz_hist = [np.abs(amp[..., 0]) ** 2], [mean_path(amp)]
    unconverged = np.zeros(batch_shape, dtype=int)
    iterations = np.zeros(batch_shape, dtype=int)

    for _ in range(n_steps):
        state = replace(state, qubit=QubitState(amp))
        state, u = coupled_step(state, dt, substeps, with_propagator=True)
        theta, report = project_step(theta, u, dt, settings, shots, rng)
        unconverged += ~report.converged
        iterations += report.iterations
        amp = vqc.ansatz_state(theta)
        p_hist.append(np.abs(amp[..., 0]) ** 2)
        sz_hist.append(mean_path(amp))

    times = dt * np.arange(n_steps + 1)
    return TrajectoryResult(times, np.stack(p_hist, axis=-1), np.stack(sz_hist, axis=-1),
                            unconverged, iterations)
