"""Condensed linear MPC on the feedback-linearized double integrator."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .qp import QpProblem, QpSettings, QpSolver, SOLVED

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    """Horizon ``K`` of prediction steps ``dt``; the loop runs every ``control_dt``."""

    K: int = 20
    dt: float = 0.1
    control_dt: float = 0.01
    Q_mpc: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 10.0, 0.5, 0.5, 0.5]))
    R_mpc: np.ndarray = field(default_factory=lambda: np.diag([0.5, 0.5, 0.5]))
    state_box: tuple = None
    input_box: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "Q_mpc", np.asarray(self.Q_mpc, dtype=float))
        object.__setattr__(self, "R_mpc", np.asarray(self.R_mpc, dtype=float))
        if self.K < 1 or self.dt <= 0 or self.control_dt <= 0:
            raise ValueError("need K >= 1, dt > 0 and control_dt > 0")
        if np.min(np.linalg.eigvalsh(self.Q_mpc)) < -1e-12:
            raise ValueError("Q_mpc must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.R_mpc)) <= 0:
            raise ValueError("R_mpc must be positive definite")


def discretize(dt):
    """Exact zero-order-hold discretization of the 3-axis double integrator."""
    I = np.eye(3)
    A = np.block([[I, dt * I], [np.zeros((3, 3)), I]])
    B = np.vstack([0.5 * dt**2 * I, dt * I])
    return A, B


def prediction_matrices(K, dt):
    """``X = Phi x0 + Gamma U`` for stacked states x_1..x_K and inputs u_0..u_{K-1}."""
    A, B = discretize(dt)
    Phi = np.zeros((6 * K, 6))
    Gamma = np.zeros((6 * K, 3 * K))
    Ai = np.eye(6)
    powers = [np.eye(6)]
    for i in range(K):
        Ai = A @ Ai
        Phi[6 * i:6 * i + 6] = Ai
        powers.append(Ai)
    for i in range(K):
        for j in range(i + 1):
            Gamma[6 * i:6 * i + 6, 3 * j:3 * j + 3] = powers[i - j] @ B
    return Phi, Gamma


def _constraint_rows(config, Phi, Gamma, x_now):
    K = config.K
    rows, rhs = [], []
    if config.input_box is not None:
        I = np.eye(3 * K)
        rows += [I, -I]
        rhs += [np.full(3 * K, config.input_box)] * 2
    if config.state_box is not None:
        lo, hi = (np.tile(np.asarray(v, dtype=float), K) for v in config.state_box)
        pred = Phi @ x_now
        rows += [Gamma, -Gamma]
        rhs += [hi - pred, pred - lo]
    if not rows:
        return np.zeros((0, 3 * K)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def build_ocp(x_now, ref_window, config):
    """Condensed QP in the 3K stacked inputs.

    Objective ``sum ||x_i - r_i||^2_Q + ||u_i||^2_R`` (constant term dropped),
    with optional input and state boxes.
    """
    x_now = np.asarray(x_now, dtype=float)
    ref = np.asarray(ref_window, dtype=float)
    if x_now.shape != (6,) or ref.shape != (config.K, 6):
        raise ValueError(f"expected x_now (6,) and ref_window ({config.K}, 6), got {x_now.shape}, {ref.shape}")
    Phi, Gamma = prediction_matrices(config.K, config.dt)
    Qb = np.kron(np.eye(config.K), config.Q_mpc)
    Rb = np.kron(np.eye(config.K), config.R_mpc)
    P = 2.0 * (Gamma.T @ Qb @ Gamma + Rb)
    P = 0.5 * (P + P.T)
    q = 2.0 * Gamma.T @ Qb @ (Phi @ x_now - ref.ravel())
    A, b = _constraint_rows(config, Phi, Gamma, x_now)
    return QpProblem(P, q, A, b)


class Mpc:
    """Per-run MPC with cached prediction matrices, solver setup and warm start."""

    def __init__(self, config, settings=None):
        self.config = config
        self.Phi, self.Gamma = prediction_matrices(config.K, config.dt)
        Qb = np.kron(np.eye(config.K), config.Q_mpc)
        self._GtQ = 2.0 * self.Gamma.T @ Qb
        P = 2.0 * (self.Gamma.T @ Qb @ self.Gamma + np.kron(np.eye(config.K), config.R_mpc))
        self.P = 0.5 * (P + P.T)
        A, _ = _constraint_rows(config, self.Phi, self.Gamma, np.zeros(6))
        self.solver = QpSolver(self.P, A, settings or QpSettings())
        self.Ac, self.Bc = discretize(config.control_dt)
        self.last = None

    def solve(self, x_now, ref_window, x_ref_now=None):
        """Return ``(x_d, mu_d, ok)``.

        ``mu_d`` is the first planned input and ``x_d`` the planned state one
        control period ahead. On solver failure returns the reference state
        with zero input.
        """
        x_now = np.asarray(x_now, dtype=float)
        ref = np.asarray(ref_window, dtype=float)
        q = self._GtQ @ (self.Phi @ x_now - ref.ravel())
        _, b = _constraint_rows(self.config, self.Phi, self.Gamma, x_now)
        sol = self.solver.solve(q, b)
        self.last = sol
        if sol.status != SOLVED:
            log.warning("MPC QP failed (%s); falling back to the reference", sol.status)
            fallback = ref[0] if x_ref_now is None else np.asarray(x_ref_now, dtype=float)
            return fallback.copy(), np.zeros(3), False
        mu_d = sol.z[:3].copy()
        x_d = self.Ac @ x_now + self.Bc @ mu_d
        return x_d, mu_d, True

    def plan_cost(self, x_now, ref_window, U):
        X = self.Phi @ np.asarray(x_now) + self.Gamma @ np.asarray(U)
        E = (X - np.asarray(ref_window).ravel()).reshape(-1, 6)
        Uu = np.asarray(U).reshape(-1, 3)
        return float(np.einsum("ij,jk,ik->", E, self.config.Q_mpc, E) + np.einsum("ij,jk,ik->", Uu, self.config.R_mpc, Uu))


def solve_mpc(x_now, ref_window, config, x_ref_now=None):
    """One-shot MPC solve: ``(x_d, mu_d)``."""
    x_d, mu_d, _ = Mpc(config).solve(x_now, ref_window, x_ref_now)
    return x_d, mu_d
