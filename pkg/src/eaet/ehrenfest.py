"""Single Ehrenfest trajectory of the driven spin-boson model.

The qubit sees H(t) = hbar*Omega*sigma_x - eps(t)*sigma_z with
eps(t) = sum_j c_j x_j(t). Each bath mode is a classical oscillator driven
by the mean path y = <sigma_z> of the qubit (back-reaction).

Basis convention: |0> is the reactant (s = +1), |1> the product (s = -1).

All state arrays carry an optional leading batch shape so that many
independent trajectories can be stepped together; the arithmetic is
elementwise per trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bath import DiscretizedBath
from .wigner import BathPhasePoint

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class QubitState:
    """Amplitudes on |0> (reactant) and |1> (product), shape ``(..., 2)``."""

    amp: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amp, dtype=complex)
        if amp.ndim == 0 or amp.shape[-1] != 2:
            raise ValueError("qubit amplitudes must have a trailing axis of length 2")
        object.__setattr__(self, "amp", amp)

    @classmethod
    def reactant(cls, batch_shape=()) -> "QubitState":
        amp = np.zeros((*batch_shape, 2), dtype=complex)
        amp[..., 0] = 1.0
        return cls(amp)

    @classmethod
    def product(cls, batch_shape=()) -> "QubitState":
        amp = np.zeros((*batch_shape, 2), dtype=complex)
        amp[..., 1] = 1.0
        return cls(amp)

    @property
    def amp0(self):
        return self.amp[..., 0]

    @property
    def amp1(self):
        return self.amp[..., 1]

    @property
    def p_reactant(self):
        return np.abs(self.amp[..., 0]) ** 2

    @property
    def norm(self):
        return np.sqrt(np.abs(self.amp[..., 0]) ** 2 + np.abs(self.amp[..., 1]) ** 2)

    def normalized(self) -> "QubitState":
        return QubitState(self.amp / self.norm[..., None])


def mean_path(state):
    """Ehrenfest mean position y = P0*(+1) + P1*(-1) = <sigma_z>.

    Accepts a :class:`QubitState` or a raw ``(..., 2)`` amplitude array.
    """
    amp = state.amp if isinstance(state, QubitState) else np.asarray(state)
    return np.abs(amp[..., 0]) ** 2 - np.abs(amp[..., 1]) ** 2


@dataclass(frozen=True)
class TrajectoryState:
    """Qubit plus classical bath phase space at time ``t``.

    ``x`` and ``p`` have shape ``(..., n_modes)`` matching the qubit batch.
    """

    qubit: QubitState
    x: np.ndarray
    p: np.ndarray
    bath: DiscretizedBath
    omega_sys: float = 1.0
    t: float = 0.0

    @classmethod
    def initial(cls, bath: DiscretizedBath, point: BathPhasePoint, omega_sys: float = 1.0,
                qubit: QubitState | None = None) -> "TrajectoryState":
        if point.n_modes != bath.n_modes:
            raise ValueError(f"phase point has {point.n_modes} modes, bath has {bath.n_modes}")
        if qubit is None:
            qubit = QubitState.reactant(point.x0.shape[:-1])
        return cls(qubit, point.x0.copy(), point.p0.copy(), bath, float(omega_sys), 0.0)


def driving_field(state: TrajectoryState):
    """eps(t) = sum_j c_j x_j(t)."""
    return np.sum(state.x * state.bath.c, axis=-1)


def advance_bath(state: TrajectoryState, y, dt: float) -> TrajectoryState:
    """Evolve every mode for ``dt`` under x'' = -w^2 x + (c/m) y with y frozen.

    The qubit is left untouched; ``t`` advances by ``dt``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    bath = state.bath
    w, m = bath.omega, bath.mass
    y = np.asarray(y, dtype=float)[..., None]
    x_eq = bath.c * y / (m * w**2)
    cos, sin = np.cos(w * dt), np.sin(w * dt)
    dx = state.x - x_eq
    x = x_eq + dx * cos + state.p / (m * w) * sin
    p = state.p * cos - m * w * dx * sin
    return replace(state, x=x, p=p, t=state.t + dt)


def _pauli_coefficients(state: TrajectoryState):
    hx = state.bath.hbar * state.omega_sys
    hz = -driving_field(state)
    return hx, hz


def hamiltonian_matrix(state: TrajectoryState):
    """hbar*Omega*sigma_x - eps*sigma_z, shape ``(..., 2, 2)``."""
    hx, hz = _pauli_coefficients(state)
    hz = np.asarray(hz)
    return hx * SIGMA_X + hz[..., None, None] * SIGMA_Z


def pauli_exponential(hx, hy, hz, dt: float, hbar: float = 1.0):
    """exp(-i dt (hx X + hy Y + hz Z) / hbar) in closed form, shape ``(..., 2, 2)``."""
    hx, hy, hz = np.broadcast_arrays(*(np.asarray(h, dtype=float) for h in (hx, hy, hz)))
    r = np.sqrt(hx**2 + hy**2 + hz**2)
    phase = r * dt / hbar
    # sin(r dt / hbar) / r, finite at r = 0
    s = (dt / hbar) * np.sinc(phase / np.pi)
    c = np.cos(phase)
    u = np.empty((*r.shape, 2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * s * hz
    u[..., 0, 1] = -1j * s * (hx - 1j * hy)
    u[..., 1, 0] = -1j * s * (hx + 1j * hy)
    u[..., 1, 1] = c + 1j * s * hz
    return u


def step_unitary(state: TrajectoryState, dt: float):
    """exp(-i H(t) dt / hbar) with H frozen at the state's current time."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    hx, hz = _pauli_coefficients(state)
    return pauli_exponential(hx, 0.0, hz, dt, state.bath.hbar)


def apply_unitary(u, amp):
    """u @ amp for batched 2x2 matrices and ``(..., 2)`` amplitudes."""
    a0, a1 = amp[..., 0], amp[..., 1]
    return np.stack([u[..., 0, 0] * a0 + u[..., 0, 1] * a1,
                     u[..., 1, 0] * a0 + u[..., 1, 1] * a1], axis=-1)


def _h_apply(hx, hz, amp):
    # H amp for H = hx X + hz Z, written symmetrically in the two components
    a0, a1 = amp[..., 0], amp[..., 1]
    return np.stack([hz * a0 + hx * a1, hx * a0 - hz * a1], axis=-1)


def _h_matrix_apply(hx, hz, mat):
    # H @ mat for batched 2x2 mat
    r0, r1 = mat[..., 0, :], mat[..., 1, :]
    hz = np.asarray(hz)[..., None]
    return np.stack([hz * r0 + hx * r1, hx * r0 - hz * r1], axis=-2)


class _FreeRotation:
    """Exact free-oscillator flow over a fixed interval (linear in (x, p))."""

    def __init__(self, bath: DiscretizedBath, tau: float):
        self.mw = bath.mass * bath.omega
        self.cos = np.cos(bath.omega * tau)
        self.sin = np.sin(bath.omega * tau)

    def __call__(self, x, p):
        return x * self.cos + p / self.mw * self.sin, p * self.cos - self.mw * x * self.sin


def rk4_step(state: TrajectoryState, dt: float, with_propagator: bool = False):
    """One RK4 step of the coupled qubit-bath equations.

    The qubit obeys i hbar d|psi>/dt = H(t)|psi>; each mode obeys
    x'' = -w^2 x + (c/m) y with y = <sigma_z> of the current qubit state.
    Free oscillation is propagated exactly (integrating-factor RK4) and the
    field is re-evaluated at every substage from the substage bath. The
    qubit is renormalized afterwards.

    With ``with_propagator`` the 2x2 linear map the step applied to the
    qubit amplitudes is returned as well.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    bath = state.bath
    hbar = bath.hbar
    hx = hbar * state.omega_sys
    c = bath.c
    half, full = _FreeRotation(bath, 0.5 * dt), _FreeRotation(bath, dt)
    x, p, psi = state.x, state.p, state.qubit.amp

    def forces(x_s, psi_s):
        hz = -np.sum(x_s * c, axis=-1)
        dp = c * mean_path(psi_s)[..., None]
        dpsi = (-1j / hbar) * _h_apply(hx, hz, psi_s)
        return hz, dp, dpsi

    hz1, dp1, dpsi1 = forces(x, psi)
    x2, p2 = half(x, p + 0.5 * dt * dp1)
    psi2 = psi + 0.5 * dt * dpsi1
    hz2, dp2, dpsi2 = forces(x2, psi2)

    xh, ph = half(x, p)
    x3, p3 = xh, ph + 0.5 * dt * dp2
    psi3 = psi + 0.5 * dt * dpsi2
    hz3, dp3, dpsi3 = forces(x3, psi3)

    xf, pf = full(x, p)
    kx3, kp3 = half(np.zeros_like(dp3), dp3)
    x4, p4 = xf + dt * kx3, pf + dt * kp3
    psi4 = psi + dt * dpsi3
    hz4, dp4, dpsi4 = forces(x4, psi4)

    kx1, kp1 = full(np.zeros_like(dp1), dp1)
    kx23, kp23 = half(np.zeros_like(dp2), dp2 + dp3)
    x_new = xf + (dt / 6.0) * (kx1 + 2.0 * kx23)
    p_new = pf + (dt / 6.0) * (kp1 + 2.0 * kp23 + dp4)
    psi_new = psi + (dt / 6.0) * (dpsi1 + 2.0 * dpsi2 + 2.0 * dpsi3 + dpsi4)

    new_state = replace(state, qubit=QubitState(psi_new).normalized(), x=x_new, p=p_new, t=state.t + dt)
    if not with_propagator:
        return new_state

    def gen(hz, mat):
        return (-1j / hbar) * _h_matrix_apply(hx, hz, mat)

    eye = np.broadcast_to(IDENTITY, (*np.shape(hz1), 2, 2))
    r2 = eye + 0.5 * dt * gen(hz1, eye)
    r3 = eye + 0.5 * dt * gen(hz2, r2)
    r4 = eye + dt * gen(hz3, r3)
    prop = eye + (dt / 6.0) * (gen(hz1, eye) + 2.0 * gen(hz2, r2) + 2.0 * gen(hz3, r3) + gen(hz4, r4))
    return new_state, prop


def nearest_unitary(mat):
    """Unitary polar factor of a batch of 2x2 matrices."""
    w, _, vh = np.linalg.svd(mat)
    return w @ vh


def n_substeps(dt: float, max_substep: float) -> int:
    """Smallest number of equal substeps of ``dt`` no longer than ``max_substep``."""
    if not max_substep > 0:
        raise ValueError(f"max_substep must be positive, got {max_substep}")
    return max(1, int(np.ceil(dt / max_substep - 1e-9)))


def coupled_step(state: TrajectoryState, dt: float, substeps: int = 1, with_propagator: bool = False):
    """Advance ``dt`` with ``substeps`` RK4 steps.

    With ``with_propagator`` also returns the unitary that carries the
    initial qubit amplitudes to the final ones, i.e. the time-ordered
    propagator exp(-i int H dt / hbar) along this trajectory.
    """
    h = dt / substeps
    if not with_propagator:
        for _ in range(substeps):
            state = rk4_step(state, h)
        return state
    total = None
    for _ in range(substeps):
        state, prop = rk4_step(state, h, with_propagator=True)
        total = prop if total is None else prop @ total
    return state, nearest_unitary(total)


class BackReactionAccumulator:
    """Bath trajectories from the closed-form memory integral.

    x_j(t) = x0 cos(w t) + p0/(m w) sin(w t) + c/(m w) * (A sin(w t) - B cos(w t))
    with A = int y(t') cos(w t') dt' and B = int y(t') sin(w t') dt'.
    The integrals are accumulated exactly for piecewise-constant y. Kept as
    an independent check on :func:`advance_bath`.
    """

    def __init__(self, bath: DiscretizedBath, point: BathPhasePoint):
        self.bath = bath
        self.x0 = point.x0.copy()
        self.p0 = point.p0.copy()
        self.a = np.zeros_like(self.x0)
        self.b = np.zeros_like(self.x0)
        self.t = 0.0

    def advance(self, y, dt: float) -> None:
        w = self.bath.omega
        y = np.asarray(y, dtype=float)[..., None]
        t0, t1 = self.t, self.t + dt
        self.a += y * (np.sin(w * t1) - np.sin(w * t0)) / w
        self.b += y * (np.cos(w * t0) - np.cos(w * t1)) / w
        self.t = t1

    def positions(self):
        w, m, c = self.bath.omega, self.bath.mass, self.bath.c
        wt = w * self.t
        free = self.x0 * np.cos(wt) + self.p0 / (m * w) * np.sin(wt)
        memory = c / (m * w) * (self.a * np.sin(wt) - self.b * np.cos(wt))
        return free + memory

    def driving_field(self):
        return np.sum(self.positions() * self.bath.c, axis=-1)


def propagate_rk4(state: TrajectoryState, dt: float, n_steps: int, substeps: int = 1):
    """Run ``n_steps`` output steps of ``dt``, each split into ``substeps`` RK4 steps.

    Returns (final state, P_reactant, <sigma_z>) with observables of shape
    ``(..., n_steps + 1)`` including t = 0.
    """
    p_hist = [state.qubit.p_reactant]
    sz_hist = [mean_path(state.qubit)]
    for _ in range(n_steps):
        state = coupled_step(state, dt, substeps)
        p_hist.append(state.qubit.p_reactant)
        sz_hist.append(mean_path(state.qubit))
    return state, np.stack(p_hist, axis=-1), np.stack(sz_hist, axis=-1)
