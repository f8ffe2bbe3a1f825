"""Feedback-linearizing tracking law with a probabilistic CLF-CBF quadratic program.

Pseudo-control: ``mu = mu_d + mu_pd + mu_qp - mu_gp``; thrust
``u = g^-1(x) (mu - f_hat)`` with ``g(x) = R / m``. The QP decision vector
is ``z = [mu_qp (3), d1, d2]``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .qp import QpProblem, QpSettings, QpSolver, SOLVED

log = logging.getLogger(__name__)

SLACK_CLF, SLACK_CBF = 0, 1


class BarrierViolated(ValueError):
    """The state is outside the safe set (h <= 0); the reciprocal barrier is undefined."""


def _is_spd(M):
    if not np.allclose(M, M.T, atol=1e-12):
        return False
    return bool(np.all(np.linalg.eigvalsh(0.5 * (M + M.T)) > 0))


@dataclass(frozen=True)
class Gains:
    K_P: np.ndarray = field(default_factory=lambda: np.eye(3))
    K_D: np.ndarray = field(default_factory=lambda: np.eye(3))
    Q_lyap: np.ndarray = field(default_factory=lambda: np.eye(6))
    epsilon: float = 100.0
    p1: float = 1e8
    p2: float = 1e12
    u_min: np.ndarray = field(default_factory=lambda: np.full(3, -30.0))
    u_max: np.ndarray = field(default_factory=lambda: np.full(3, 30.0))

    def __post_init__(self):
        for name in ("K_P", "K_D", "Q_lyap", "u_min", "u_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("K_P", "K_D", "Q_lyap"):
            if not _is_spd(getattr(self, name)):
                raise ValueError(f"{name} must be symmetric positive definite")
        if self.epsilon <= 0 or self.p1 <= 0 or self.p2 <= 0:
            raise ValueError("epsilon, p1 and p2 must be positive")
        if not np.all(self.u_min < self.u_max):
            raise ValueError("need u_min < u_max componentwise")

    @property
    def A(self):
        """Closed-loop error matrix [[0, I], [-K_P, -K_D]]."""
        return np.block([[np.zeros((3, 3)), np.eye(3)], [-self.K_P, -self.K_D]])


@dataclass(frozen=True)
class LyapunovCert:
    P: np.ndarray

    @property
    def PB(self):
        return self.P[:, 3:]


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class ConstraintRow:
    """``H . mu_qp + b <= d_slack`` (``slack=None`` means the right side is 0)."""

    H: np.ndarray
    b: float
    slack: int = None


@dataclass(frozen=True)
class QpOutcome:
    mu_qp: np.ndarray
    d1: float
    d2: float
    status: str
    iterations: int = 0
    duals: np.ndarray = None

    @property
    def warm(self):
        """``(z, y)`` pair for warm-starting the next tick's solve."""
        if self.duals is None:
            return None
        return np.concatenate([self.mu_qp, [self.d1, self.d2]]), self.duals


def lyapunov_solve(gains):
    A = gains.A
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise ValueError("error dynamics matrix is not Hurwitz")
    P = solve_continuous_lyapunov(A.T, -gains.Q_lyap)
    P = 0.5 * (P + P.T)
    if not np.all(np.linalg.eigvalsh(P) > 0):
        raise ValueError("Lyapunov solution is not positive definite")
    return LyapunovCert(P)


def pd_term(e, gains):
    e = np.asarray(e, dtype=float)
    return -gains.K_P @ e[:3] - gains.K_D @ e[3:]


def clf_value(e, cert, mu_qp, beta, sigma, epsilon):
    """Left side of the probabilistic CLF decrease condition (<= 0 certifies it)."""
    e = np.asarray(e, dtype=float)
    w = e @ cert.PB
    return 2.0 * w @ mu_qp + e @ cert.P @ e / epsilon + 2.0 * np.linalg.norm(w) * np.linalg.norm(beta) * np.linalg.norm(sigma)


def clf_constraint(e, cert, gains, beta, sigma):
    e = np.asarray(e, dtype=float)
    w = e @ cert.PB
    b = e @ cert.P @ e / gains.epsilon + 2.0 * np.linalg.norm(w) * np.linalg.norm(beta) * np.linalg.norm(sigma)
    return ConstraintRow(2.0 * w, float(b), SLACK_CLF)


def safety_function(x, obstacle, gamma_p=5.0):
    """Velocity-aware distance margin h and its gradient w.r.t. the 6-D state."""
    x = np.asarray(x, dtype=float)
    p, v = x[:3], x[3:]
    rel = p - obstacle.center
    d = np.linalg.norm(rel)
    n = rel / d
    vn = v @ n
    h = gamma_p * (d - obstacle.radius) + vn
    dh_dp = gamma_p * n + (v - vn * n) / d
    return float(h), np.concatenate([dh_dp, n])


def cbf_constraint(x, obstacle, mu_d, mu_pd, beta, sigma, gamma=0.08, gamma_p=5.0):
    """Reciprocal-barrier row for ``B = 1/h`` with class-K term ``gamma * h``."""
    x = np.asarray(x, dtype=float)
    h, grad_h = safety_function(x, obstacle, gamma_p)
    if h <= 0:
        raise BarrierViolated(f"h={h:.4g} <= 0")
    dB = -grad_h / h**2
    H = dB[3:]
    drift = dB[:3] @ x[3:] + H @ (np.asarray(mu_d) + np.asarray(mu_pd))
    b = -gamma * h + drift + np.linalg.norm(H) * np.linalg.norm(beta) * np.linalg.norm(sigma)
    return ConstraintRow(H, float(b), SLACK_CBF)


def cbf_value(x, obstacle, mu, beta, sigma, gamma=0.08, gamma_p=5.0):
    """Nominal B-dot minus gamma*h plus the uncertainty margin, for applied nominal ``mu``."""
    h, grad_h = safety_function(x, obstacle, gamma_p)
    dB = -grad_h / h**2
    return dB[:3] @ np.asarray(x)[3:] + dB[3:] @ mu - gamma * h + np.linalg.norm(dB[3:]) * np.linalg.norm(beta) * np.linalg.norm(sigma)


def control_constraint(x, mu_d, mu_pd, mu_gp, gains, nominal_f, R, m):
    """Six rows enforcing ``u_min <= g^-1 (mu - f_hat) <= u_max`` linearly in mu_qp."""
    g_inv = m * np.asarray(R).T
    if abs(np.linalg.det(g_inv)) < 1e-12:
        raise np.linalg.LinAlgError("input matrix g(x) is singular")
    base = g_inv @ (np.asarray(mu_d) + np.asarray(mu_pd) - np.asarray(mu_gp) - np.asarray(nominal_f))
    rows = [ConstraintRow(-g_inv[i], float(gains.u_min[i] - base[i])) for i in range(3)]
    rows += [ConstraintRow(g_inv[i], float(-gains.u_max[i] + base[i])) for i in range(3)]
    return rows


def build_safety_qp(rows, gains):
    P = np.diag([2.0, 2.0, 2.0, 2.0 * gains.p1, 2.0 * gains.p2])
    A = np.zeros((len(rows), 5))
    b = np.zeros(len(rows))
    for i, r in enumerate(rows):
        A[i, :3] = r.H
        if r.slack is not None:
            A[i, 3 + r.slack] = -1.0
        b[i] = -r.b
    return QpProblem(P, np.zeros(5), A, b)


def solve_safety_qp(rows_clf, rows_cbf, rows_u, gains, settings=None, warm_start=None):
    """Minimize ``mu'mu + p1 d1^2 + p2 d2^2`` over the assembled rows.

    On solver failure falls back to ``mu_qp = 0`` and logs the event.
    """
    rows = list(rows_clf) + list(rows_cbf) + list(rows_u)
    prob = build_safety_qp(rows, gains)
    solver = QpSolver(prob.P, prob.A, settings or QpSettings())
    if warm_start is not None:
        solver.warm_start(*warm_start)
    sol = solver.solve(prob.q, prob.b)
    if sol.status != SOLVED:
        log.warning("safety QP failed (%s); using mu_qp = 0", sol.status)
        return QpOutcome(np.zeros(3), 0.0, 0.0, sol.status, sol.iterations)
    z = sol.z
    return QpOutcome(z[:3].copy(), float(z[3]), float(z[4]), sol.status, sol.iterations, sol.y)


def compose_pseudo_control(mu_d, mu_pd, mu_qp, mu_gp):
    return np.asarray(mu_d) + np.asarray(mu_pd) + np.asarray(mu_qp) - np.asarray(mu_gp)


def feedback_linearize(x, mu, nominal_f, R, m):
    """Thrust ``u = m R^T (mu - f_hat)``; ``x`` is unused since g depends only on attitude here."""
    return m * np.asarray(R).T @ (np.asarray(mu, dtype=float) - np.asarray(nominal_f, dtype=float))
