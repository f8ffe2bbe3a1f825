"""Event-triggered GP model updates and the FIFO training buffer."""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import gp

log = logging.getLogger(__name__)

POLICIES = ("event", "periodic", "never")


@dataclass(frozen=True)
class UpdateEvent:
    tick: int
    trigger_value: float
    update_ms: float
    hyperparams_changed: bool


def check_trigger(e, cert, gains, mu_qp, beta, sigma, tol=0.0):
    """Evaluate the CLF condition at the solved ``mu_qp``; fire when it exceeds ``tol``."""
    e = np.asarray(e, dtype=float)
    w = e @ cert.PB
    value = (2.0 * w @ np.asarray(mu_qp) + e @ cert.P @ e / gains.epsilon
             + 2.0 * np.linalg.norm(w) * np.linalg.norm(beta) * np.linalg.norm(sigma))
    return bool(value > tol), float(value)


def record_sample(buffer, x, y):
    """Append ``(x, y)``; drop the oldest pair once capacity is exceeded."""
    X = np.vstack([buffer.inputs, np.asarray(x, dtype=float)[None, :]])
    Y = np.vstack([buffer.targets, np.asarray(y, dtype=float)[None, :]])
    if len(X) > buffer.capacity:
        X, Y = X[-buffer.capacity:], Y[-buffer.capacity:]
    return gp.Dataset(X, Y, buffer.capacity)


@dataclass(frozen=True)
class UpdatePolicy:
    kind: str = "event"
    interval: int = 1
    min_gap: int = 5
    hyperopt_iters: int = 100
    hyperopt_tol: float = 1e-5
    bounds: tuple = None

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"unknown update policy {self.kind!r}")
        if self.interval < 1 or self.min_gap < 0:
            raise ValueError("interval must be >= 1 and min_gap >= 0")


class UpdateScheduler:
    """Decides when to refit; remembers the last update tick for gap/period logic."""

    def __init__(self, policy):
        self.policy = policy
        self.last_tick = None

    def due(self, fired, tick):
        p = self.policy
        if p.kind == "never":
            return False
        if p.kind == "periodic":
            return self.last_tick is None or tick - self.last_tick >= p.interval
        if not fired:
            return False
        return self.last_tick is None or tick - self.last_tick >= p.min_gap

    def maybe_update(self, model, buffer, fired, tick, value=0.0):
        """Return ``(model, UpdateEvent | None)``; the input model is never mutated."""
        if len(buffer) == 0 or not self.due(fired, tick):
            return model, None
        t0 = time.perf_counter()
        try:
            new_model, changed = refit(model, buffer, self.policy)
        except gp.IllConditionedKernel as exc:
            log.warning("GP refit failed at tick %d: %s; keeping previous model", tick, exc)
            return model, None
        self.last_tick = tick
        ms = 1e3 * (time.perf_counter() - t0)
        return new_model, UpdateEvent(tick, float(value), ms, changed)


def refit(model, buffer, policy):
    """Re-optimize hyperparameters (warm-started) and refactor the Gram matrices."""
    results = gp.optimize_hyperparameters(buffer, list(model.hypers), policy.bounds,
                                          max_iter=policy.hyperopt_iters, tol=policy.hyperopt_tol)
    hypers = [r.hyper for r in results]
    changed = any(not np.array_equal(h.to_log(), o.to_log()) for h, o in zip(hypers, model.hypers))
    return gp.fit(buffer, hypers), changed


def maybe_update(model, buffer, fired, policy, tick=0, scheduler=None, value=0.0):
    """Functional form of :meth:`UpdateScheduler.maybe_update` (fresh scheduler by default)."""
    scheduler = scheduler or UpdateScheduler(policy)
    return scheduler.maybe_update(model, buffer, fired, tick, value)
