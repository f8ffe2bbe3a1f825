"""Translational quadrotor model: rotation, dynamics, RK4 integration, sensing."""

from dataclasses import dataclass, field

import numpy as np


class IntegrationDiverged(RuntimeError):
    """Raised when an integration step produces a non-finite state."""


@dataclass(frozen=True)
class Attitude:
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        for name in ("phi", "theta", "psi"):
            a = getattr(self, name)
            if not (-np.pi < a <= np.pi):
                raise ValueError(f"{name}={a} outside (-pi, pi]")
        if abs(self.theta) >= np.pi / 2:
            raise ValueError("|theta| must be < pi/2")


@dataclass(frozen=True)
class PlantParams:
    m: float = 1.0
    g_vec: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    noise_std: float = 0.01
    dt: float = 0.01

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "g_vec", np.asarray(self.g_vec, dtype=float))


def rotation_matrix(att):
    """Body-to-world rotation for ZYX (yaw-pitch-roll) Euler angles."""
    cf, sf = np.cos(att.phi), np.sin(att.phi)
    ct, st = np.cos(att.theta), np.sin(att.theta)
    cp, sp = np.cos(att.psi), np.sin(att.psi)
    return np.array([
        [ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp],
        [ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp],
        [-st, sf * ct, cf * ct],
    ])


def dynamics_deriv(x, att, f_u, delta, params):
    """Return ``[v; g + R f_u / m + delta]`` for the stacked state ``x = [p; v]``."""
    x = np.asarray(x, dtype=float)
    R = rotation_matrix(att)
    acc = params.g_vec + R @ np.asarray(f_u, dtype=float) / params.m + np.asarray(delta, dtype=float)
    return np.concatenate([x[3:], acc])


def step(x, att, f_u, wind_fn, params, t=0.0):
    """Advance the state by one RK4 step of length ``params.dt``.

    ``wind_fn(t)`` is sampled at the stage times t, t+dt/2 and t+dt. The
    thrust and attitude are held constant across the step.
    """
    dt = params.dt
    x = np.asarray(x, dtype=float)
    d0 = wind_fn(t)
    dm = wind_fn(t + 0.5 * dt)
    d1 = wind_fn(t + dt)
    k1 = dynamics_deriv(x, att, f_u, d0, params)
    k2 = dynamics_deriv(x + 0.5 * dt * k1, att, f_u, dm, params)
    k3 = dynamics_deriv(x + 0.5 * dt * k2, att, f_u, dm, params)
    k4 = dynamics_deriv(x + dt * k3, att, f_u, d1, params)
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationDiverged(f"non-finite state after step at t={t:.4f}")
    return x_next


def measure(x, params, rng):
    """Noisy full-state measurement with i.i.d. Gaussian noise."""
    x = np.asarray(x, dtype=float)
    if params.noise_std == 0:
        return x.copy()
    return x + params.noise_std * rng.standard_normal(x.shape)


def measure_disturbance(v_prev, v_next, mu_applied, dt):
    """Finite-difference disturbance label: observed acceleration minus commanded."""
    return (np.asarray(v_next, dtype=float) - np.asarray(v_prev, dtype=float)) / dt - np.asarray(mu_applied, dtype=float)
