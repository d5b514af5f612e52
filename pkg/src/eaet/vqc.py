"""Single-qubit statevector backend for the ZXZ ansatz.

Rotation convention: R_P(theta) = exp(-i theta P / 2). The ansatz is

    C(theta) = exp(i theta_1) R_z(theta_2) R_x(theta_3) R_z(theta_4)

Parameter arrays have shape ``(..., 4)``; every function broadcasts over
the leading axes.
"""

from __future__ import annotations

import numpy as np

from .ehrenfest import QubitState

UNITARY_TOL = 1e-8


def rz(theta):
    theta = np.asarray(theta, dtype=float)
    u = np.zeros((*theta.shape, 2, 2), dtype=complex)
    u[..., 0, 0] = np.exp(-0.5j * theta)
    u[..., 1, 1] = np.exp(0.5j * theta)
    return u


def rx(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(0.5 * theta), np.sin(0.5 * theta)
    u = np.empty((*theta.shape, 2, 2), dtype=complex)
    u[..., 0, 0] = c
    u[..., 0, 1] = -1j * s
    u[..., 1, 0] = -1j * s
    u[..., 1, 1] = c
    return u


def ansatz_unitary(theta):
    theta = np.asarray(theta, dtype=float)
    phase = np.exp(1j * theta[..., 0])[..., None, None]
    return phase * (rz(theta[..., 1]) @ rx(theta[..., 2]) @ rz(theta[..., 3]))


def ansatz_state(theta):
    """Amplitudes of C(theta)|0>, shape ``(..., 2)``.

    R_z(theta_4)|0> only contributes a phase, so the first column of the
    ansatz is written out directly.
    """
    theta = np.asarray(theta, dtype=float)
    t1, t2, t3, t4 = (theta[..., i] for i in range(4))
    phase = np.exp(1j * (t1 - 0.5 * t4))
    half3 = 0.5 * t3
    return np.stack([phase * np.exp(-0.5j * t2) * np.cos(half3),
                     -1j * phase * np.exp(0.5j * t2) * np.sin(half3)], axis=-1)


def apply_to_zero(theta) -> QubitState:
    return QubitState(ansatz_state(theta))


def check_unitary(u, tol: float = UNITARY_TOL) -> None:
    u = np.asarray(u)
    dev = np.abs(u @ np.conj(np.swapaxes(u, -1, -2)) - np.eye(2))
    if dev.size and np.max(dev) > tol:
        raise ValueError(f"step operator is not unitary (max deviation {np.max(dev):.3e})")


def overlap_target(theta_old, step_u):
    """U^dagger C(theta_old)|0>, the state every trial C(theta_new)|0> is projected on."""
    psi = ansatz_state(theta_old)
    u_dag = np.conj(np.swapaxes(step_u, -1, -2))
    return np.stack([u_dag[..., 0, 0] * psi[..., 0] + u_dag[..., 0, 1] * psi[..., 1],
                     u_dag[..., 1, 0] * psi[..., 0] + u_dag[..., 1, 1] * psi[..., 1]], axis=-1)


def fidelity_from_target(target, theta_new):
    """|<target|C(theta_new)|0>|^2, clipped into [0, 1]."""
    psi = ansatz_state(theta_new)
    amp = np.conj(target[..., 0]) * psi[..., 0] + np.conj(target[..., 1]) * psi[..., 1]
    return np.clip(amp.real**2 + amp.imag**2, 0.0, 1.0)


def infidelity_from_target(target, theta_new):
    """1 - |<target|C(theta_new)|0>|^2 without cancellation.

    For normalized two-component states 1 - |<a|b>|^2 = |a_0 b_1 - a_1 b_0|^2,
    which keeps full relative precision as the fidelity approaches one.
    """
    psi = ansatz_state(theta_new)
    cross = target[..., 0] * psi[..., 1] - target[..., 1] * psi[..., 0]
    return np.clip(cross.real**2 + cross.imag**2, 0.0, 1.0)


def fidelity(theta_old, step_u, theta_new):
    """|<0| C^dagger(theta_old) U C(theta_new) |0>|^2 from the exact statevector."""
    step_u = np.asarray(step_u, dtype=complex)
    check_unitary(step_u)
    return fidelity_from_target(overlap_target(theta_old, step_u), theta_new)


def sample_counts(p, shots: int, rng: np.random.Generator):
    """Fraction of ``shots`` compute-uncompute runs that return |0>."""
    if int(shots) != shots or shots < 1:
        raise ValueError(f"shots must be a positive integer, got {shots}")
    return rng.binomial(int(shots), p) / shots


def fidelity_shots(theta_old, step_u, theta_new, shots: int, rng: np.random.Generator):
    """Shot estimate of :func:`fidelity`.

    Prepares W|0> with W = C^dagger(theta_old) U C(theta_new), measures in
    the computational basis ``shots`` times and returns the frequency of 0.
    """
    return sample_counts(fidelity(theta_old, step_u, theta_new), shots, rng)


def zxz_decompose(u):
    """Angles theta with ansatz_unitary(theta) == u for a single 2x2 unitary.

    Uses u = exp(i a) [[e^{-i(b+d)/2} cos(g/2), -i e^{-i(b-d)/2} sin(g/2)],
                        [-i e^{i(b-d)/2} sin(g/2), e^{i(b+d)/2} cos(g/2)]].
    """
    u = np.asarray(u, dtype=complex)
    check_unitary(u)
    det = np.linalg.det(u)
    alpha = 0.5 * np.angle(det)
    v = u * np.exp(-1j * alpha)  # now in SU(2)
    gamma = 2.0 * np.arctan2(np.abs(v[1, 0]), np.abs(v[0, 0]))
    if np.abs(v[0, 0]) > 1e-12 and np.abs(v[1, 0]) > 1e-12:
        sum_bd = -2.0 * np.angle(v[0, 0])
        diff_bd = 2.0 * np.angle(1j * v[1, 0])
    elif np.abs(v[1, 0]) <= 1e-12:
        sum_bd, diff_bd = -2.0 * np.angle(v[0, 0]), 0.0
    else:
        sum_bd, diff_bd = 0.0, 2.0 * np.angle(1j * v[1, 0])
    beta = 0.5 * (sum_bd + diff_bd)
    delta = 0.5 * (sum_bd - diff_bd)
    theta = np.array([alpha, beta, gamma, delta])
    # SU(2) square-root ambiguity: fix the overall sign through the phase
    if not np.allclose(ansatz_unitary(theta), u, atol=1e-8):
        theta[0] += np.pi
    return theta
