"""Independent per-output Gaussian-process regression with an ARD SE kernel."""

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri

log = logging.getLogger(__name__)

JITTER = 1e-9
LOG_2PI = np.log(2.0 * np.pi)


class IllConditionedKernel(RuntimeError):
    """Gram matrix plus noise could not be factorized reliably."""


@dataclass(frozen=True)
class Hyperparams:
    sigma_f: float
    length_scales: np.ndarray
    noise_var: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if self.sigma_f <= 0 or self.noise_var <= 0 or np.any(ls <= 0):
            raise ValueError("hyperparameters must be strictly positive")

    def to_log(self):
        """Log-parameter vector ``[log sigma_f, log l_1..l_D, log noise_var]``."""
        return np.concatenate([[np.log(self.sigma_f)], np.log(self.length_scales), [np.log(self.noise_var)]])

    @classmethod
    def from_log(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(float(np.exp(theta[0])), np.exp(theta[1:-1]), float(np.exp(theta[-1])))


@dataclass
class Dataset:
    """Training pairs (state, disturbance label) with a FIFO capacity."""

    inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    capacity: int = 60

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, 6) if np.size(self.inputs) else np.zeros((0, 6))
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 3) if np.size(self.targets) else np.zeros((0, 3))
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        if len(self.inputs) > self.capacity:
            raise ValueError("dataset exceeds capacity")

    def __len__(self):
        return len(self.inputs)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(6)] + [f"y{j}" for j in range(3)])
            for xi, yi in zip(self.inputs, self.targets):
                w.writerow([repr(float(v)) for v in np.concatenate([xi, yi])])

    @classmethod
    def from_csv(cls, path, capacity=60):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :6], data[:, 6:9], capacity=max(capacity, len(data)))


def kernel_eval(x, x2, hyper):
    d = (np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)) / hyper.length_scales
    return float(hyper.sigma_f**2 * np.exp(-0.5 * d @ d))


def kernel_matrix(X1, X2, hyper):
    A = np.asarray(X1, dtype=float) / hyper.length_scales
    B = np.asarray(X2, dtype=float) / hyper.length_scales
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return hyper.sigma_f**2 * np.exp(-0.5 * np.maximum(sq, 0.0))


def _factor(K, hyper):
    """Cholesky of K + (noise + jitter) I, rejecting jitter-only success."""
    jit = JITTER * hyper.sigma_f**2
    n = len(K)
    try:
        L = cholesky(K + (hyper.noise_var + jit) * np.eye(n), lower=True, check_finite=False)
    except LinAlgError as exc:
        raise IllConditionedKernel(str(exc)) from None
    # each squared pivot is a conditional variance >= noise_var in exact arithmetic
    if n and np.min(np.diag(L)) ** 2 < 10.0 * jit:
        raise IllConditionedKernel("Gram matrix numerically singular (duplicate inputs with tiny noise?)")
    return L


def _per_dim(hyper, n_out=3):
    if isinstance(hyper, Hyperparams):
        return [hyper] * n_out
    hyper = list(hyper)
    if len(hyper) != n_out:
        raise ValueError("need one Hyperparams per output dimension")
    return hyper


@dataclass(frozen=True)
class GpModel:
    """Fitted GP: per output dim j the hyperparameters, Cholesky factor and alpha_j."""

    X: np.ndarray
    Y: np.ndarray
    hypers: tuple
    chols: tuple
    alphas: tuple

    @property
    def n(self):
        return len(self.X)


def fit(dataset, hyper):
    X, Y = dataset.inputs, dataset.targets
    hypers = _per_dim(hyper, Y.shape[1] if Y.ndim == 2 else 3)
    chols, alphas = [], []
    for j, h in enumerate(hypers):
        if len(X) == 0:
            chols.append(np.zeros((0, 0)))
            alphas.append(np.zeros(0))
            continue
        L = _factor(kernel_matrix(X, X, h), h)
        chols.append(L)
        alphas.append(cho_solve((L, True), Y[:, j], check_finite=False))
    return GpModel(X.copy(), Y.copy(), tuple(hypers), tuple(chols), tuple(alphas))


def predict(model, x):
    """Posterior mean and standard deviation of the latent disturbance at ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    mu = np.zeros(len(model.hypers))
    sd = np.zeros(len(model.hypers))
    for j, h in enumerate(model.hypers):
        prior = h.sigma_f**2
        if model.n == 0:
            sd[j] = h.sigma_f
            continue
        k = kernel_matrix(model.X, x, h)[:, 0]
        mu[j] = k @ model.alphas[j]
        v = solve_triangular(model.chols[j], k, lower=True, check_finite=False)
        sd[j] = np.sqrt(max(prior - v @ v, 0.0))
    return mu, sd


class _SqDiff:
    """Per-input-dimension squared differences, reused across hyperparameter evaluations."""

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        self.X = X
        self.sq = (X.T[:, :, None] - X.T[:, None, :]) ** 2
        self.flat = self.sq.reshape(X.shape[1], -1)


def _lml_dim(sq, y, hyper):
    n = len(y)
    ls2 = hyper.length_scales**2
    Kf = hyper.sigma_f**2 * np.exp(-0.5 * (1.0 / ls2) @ sq.flat).reshape(n, n)
    L = _factor(Kf, hyper)
    alpha = cho_solve((L, True), y, check_finite=False)
    val = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI
    Kinv, info = dpotri(L, lower=1)
    if info != 0:
        raise IllConditionedKernel("inverse from Cholesky factor failed")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    jit = JITTER * hyper.sigma_f**2
    g = np.empty(len(ls2) + 2)
    g[0] = np.sum(W * Kf) + jit * np.trace(W)
    g[1:-1] = 0.5 * (sq.flat @ (W * Kf).ravel()) / ls2
    g[-1] = 0.5 * hyper.noise_var * np.trace(W)
    return val, g


def log_marginal_likelihood(dataset, hyper):
    """Summed LML over output dims and its gradient w.r.t. log-hyperparameters.

    Returns ``(value, grad)`` with ``grad`` of shape ``(n_out, D + 2)``; row j
    is the derivative w.r.t. ``Hyperparams.to_log()`` of dimension j.
    """
    hypers = _per_dim(hyper, dataset.targets.shape[1])
    sq = _SqDiff(dataset.inputs)
    total, grads = 0.0, []
    for j, h in enumerate(hypers):
        v, g = _lml_dim(sq, dataset.targets[:, j], h)
        total += v
        grads.append(g)
    return total, np.array(grads)


class HyperoptResult(NamedTuple):
    hyper: Hyperparams
    lml: float
    iterations: int
    warning: bool


def default_bounds(dim=6):
    lo = np.concatenate([[np.log(0.05)], np.full(dim, np.log(0.1)), [np.log(1e-4)]])
    hi = np.concatenate([[np.log(50.0)], np.full(dim, np.log(200.0)), [np.log(100.0)]])
    return lo, hi


def optimize_dim(X, y, init, bounds=None, max_iter=100, tol=1e-5, sq=None):
    """Projected gradient ascent with backtracking on one output's LML in log-space."""
    sq = sq if sq is not None else _SqDiff(X)
    lo, hi = bounds if bounds is not None else default_bounds(np.shape(X)[1])
    theta = np.clip(init.to_log(), lo, hi)

    def evaluate(th):
        try:
            return _lml_dim(sq, y, Hyperparams.from_log(th))
        except IllConditionedKernel:
            return -np.inf, None

    f, g = evaluate(theta)
    if g is None:
        return HyperoptResult(init, -np.inf, 0, True)
    step = 0.1 / max(1.0, np.linalg.norm(g))
    it = 0
    any_accepted = False
    for it in range(1, max_iter + 1):
        pg = np.clip(theta + g, lo, hi) - theta
        if np.linalg.norm(pg) < tol:
            it -= 1
            break
        accepted = False
        s = step
        for _ in range(30):
            cand = np.clip(theta + s * g, lo, hi)
            fc, gc = evaluate(cand)
            if gc is not None and fc >= f + 1e-4 * g @ (cand - theta):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        any_accepted = True
        moved = np.linalg.norm(cand - theta)
        theta, f, g = cand, fc, gc
        step = 2.0 * s
        if moved < 1e-12:
            break
    if not any_accepted and np.linalg.norm(np.clip(theta + g, lo, hi) - theta) >= tol:
        log.warning("hyperparameter line search failed; keeping initial values")
        return HyperoptResult(init, f, it, True)
    return HyperoptResult(Hyperparams.from_log(theta), f, it, False)


def optimize_hyperparameters(dataset, init, bounds=None, max_iter=100, tol=1e-5):
    """Optimize each output dimension's hyperparameters independently.

    Returns a list of :class:`HyperoptResult`, one per output dimension.
    """
    if len(dataset) == 0:
        raise ValueError("cannot optimize hyperparameters on an empty dataset")
    inits = _per_dim(init, dataset.targets.shape[1])
    sq = _SqDiff(dataset.inputs)
    return [optimize_dim(dataset.inputs, dataset.targets[:, j], inits[j], bounds, max_iter, tol, sq)
            for j in range(len(inits))]


@dataclass(frozen=True)
class Confidence:
    beta: np.ndarray
    varsigma: float


def information_gain(model, j):
    """0.5 * log det(I + K_j / noise_var) on the model's training inputs."""
    if model.n == 0:
        return 0.0
    h = model.hypers[j]
    K = kernel_matrix(model.X, model.X, h)
    L = cholesky(np.eye(model.n) + K / h.noise_var, lower=True, check_finite=False)
    return float(np.log(np.diag(L)).sum())


def confidence_beta(model, varsigma=0.05, mode="fixed", beta_fixed=1.0, rkhs_bound=1.0):
    """Confidence scaling for the GP error bound.

    ``fixed`` returns ``beta_fixed`` per dimension. ``info_gain`` evaluates
    sqrt(2 B^2 + 300 gamma_j ln^3((N+1)/varsigma)) with gamma_j the
    information gain and B the configured RKHS-norm bound.
    """
    if not 0 < varsigma < 1:
        raise ValueError("varsigma must lie in (0, 1)")
    n_out = len(model.hypers)
    if mode == "fixed":
        return Confidence(np.full(n_out, float(beta_fixed)), varsigma)
    if mode != "info_gain":
        raise ValueError(f"unknown confidence mode {mode!r}")
    rk = np.broadcast_to(np.asarray(rkhs_bound, dtype=float), (n_out,))
    logterm = np.log((model.n + 1) / varsigma) ** 3
    beta = np.array([np.sqrt(2.0 * rk[j] ** 2 + 300.0 * information_gain(model, j) * logterm) for j in range(n_out)])
    return Confidence(beta, varsigma)
