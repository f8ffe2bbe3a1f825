"""Dense convex QP solver (ADMM operator splitting) for ``min 1/2 z'Pz + q'z  s.t.  Az <= b``.

The iteration follows the OSQP scheme: Ruiz equilibration, a cached
Cholesky factor of ``P + sigma I + A' diag(rho) A``, over-relaxation,
residual-balancing rho updates and termination checks every
``check_every`` iterations. A converged iterate is polished by solving the
equality-constrained KKT system on the guessed active set. If ADMM stalls
and polishing cannot repair the iterate, a strictly convex problem is handed
to the Goldfarb-Idnani dual active-set method from ``quadprog``.
"""

from dataclasses import dataclass

import numpy as np
import quadprog
from numba import njit
from scipy.linalg import LinAlgError, cho_factor, cho_solve

SOLVED = "solved"
MAX_ITER = "max-iter"
PRIMAL_INFEASIBLE = "primal-infeasible"



@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = len(self.q)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.P.shape != (n, n) or len(self.b) != len(self.A):
            raise ValueError("inconsistent QP dimensions")
        if np.max(np.abs(self.P - self.P.T), initial=0.0) >= 1e-12 * max(1.0, np.max(np.abs(self.P), initial=0.0)):
            raise ValueError("P must be symmetric")

    @property
    def n(self):
        return len(self.q)

    @property
    def m(self):
        return len(self.b)

    def objective(self, z):
        return 0.5 * z @ self.P @ z + self.q @ z


@dataclass
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 10
    adaptive_rho: bool = True
    adaptive_rho_tolerance: float = 5.0
    check_every: int = 25
    eps_pinf: float = 1e-5
    polish: bool = True
    check_unconstrained: bool = True


@dataclass
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    iterations: int
    polished: bool = False
    fallback: bool = False

    @property
    def solved(self):
        return self.status == SOLVED


@njit(cache=True)
def _nmax(v):
    out = 0.0
    for a in v:
        if abs(a) > out:
            out = abs(a)
    return out


@njit(cache=True)
def _admm(kinv, Ps, As, qs, bs, D, E, c, x, z, y, rho, sigma, alpha, max_iter, check_every,
          eps_abs, eps_rel, eps_pinf, adaptive, rho_tol):
    """ADMM iterations on the scaled problem. Status code 0 solved, 1 max-iter, 2 infeasible."""
    n = len(x)
    m = len(z)
    code = 1
    prim = np.inf
    dual = np.inf
    it = 0
    y_prev = y.copy()
    AT = As.T.copy()
    for it in range(1, max_iter + 1):
        y_prev = y.copy()
        rhs = sigma * x - qs + AT @ (rho * z - y)
        xt = kinv @ rhs
        zt = As @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zh = alpha * zt + (1.0 - alpha) * z
        z_new = np.minimum(zh + y / rho, bs)
        y = y + rho * (zh - z_new)
        z = z_new
        if it % check_every != 0 and it != max_iter:
            continue
        Ax = As @ x
        Px = Ps @ x
        Aty = AT @ y
        prim = _nmax((Ax - z) / E)
        dual = _nmax((Px + qs + Aty) / D) / c
        eps_p = eps_abs + eps_rel * max(_nmax(Ax / E), _nmax(z / E))
        eps_d = eps_abs + eps_rel / c * max(_nmax(Px / D), _nmax(Aty / D), _nmax(qs / D))
        if prim <= eps_p and dual <= eps_d:
            code = 0
            break
        if m > 0:
            # primal infeasibility certificate from the dual increment
            dy = y - y_prev
            nrm = _nmax(E * dy)
            if nrm > 1e-30 and np.min(dy) >= -eps_pinf * nrm:
                dyp = np.maximum(dy, 0.0)
                if _nmax((AT @ dyp) / D) <= eps_pinf * nrm and bs @ dyp < -eps_pinf * nrm:
                    code = 2
                    break
        if adaptive and m > 0:
            num = prim / max(_nmax(Ax), _nmax(z), 1e-30)
            den = dual * c / max(_nmax(Px), _nmax(Aty), _nmax(qs), 1e-30)
            ratio = np.sqrt(num / max(den, 1e-30))
            new_rho = min(max(rho * ratio, 1e-6), 1e6)
            if new_rho > rho_tol * rho or new_rho < rho / rho_tol:
                rho = new_rho
                M = Ps + sigma * np.eye(n) + rho * (AT @ As)
                kinv = np.ascontiguousarray(np.linalg.inv(M))
    return code, it, x, z, y, y_prev, prim, dual, rho, kinv


@njit(cache=True)
def _limit(v, lo=1e-4, hi=1e4):
    out = v.copy()
    for i in range(len(out)):
        if out[i] < lo:
            out[i] = 1.0
        elif out[i] > hi:
            out[i] = hi
    return out


@njit(cache=True)
def _ruiz(P, A, iters):
    """Modified Ruiz equilibration; returns scaled P, A and the scalings D, E, c."""
    n, m = P.shape[0], A.shape[0]
    D, E, c = np.ones(n), np.ones(m), 1.0
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col = np.zeros(n)
        row = np.zeros(m)
        for j in range(n):
            for i in range(n):
                col[j] = max(col[j], abs(Ps[i, j]))
            for i in range(m):
                a = abs(As[i, j])
                col[j] = max(col[j], a)
                row[i] = max(row[i], a)
        d = 1.0 / np.sqrt(_limit(col))
        e = 1.0 / np.sqrt(_limit(row))
        for i in range(n):
            for j in range(n):
                Ps[i, j] *= d[i] * d[j]
        for i in range(m):
            for j in range(n):
                As[i, j] *= e[i] * d[j]
        D *= d
        E *= e
        cmax = 0.0
        for j in range(n):
            mx = 0.0
            for i in range(n):
                mx = max(mx, abs(Ps[i, j]))
            cmax += mx
        gamma = 1.0 / _limit(np.array([cmax / n]))[0]
        Ps *= gamma
        c *= gamma
    return Ps, As, D, E, c


class QpSolver:
    """ADMM solver with a fixed ``(P, A)`` pair; ``q`` and ``b`` vary per solve.

    Caching the scaling and factorization makes repeated solves (MPC ticks)
    cheap. Rows with ``b = +inf`` are dropped since they can never be active.
    """

    def __init__(self, P, A, settings=None):
        self.settings = settings or QpSettings()
        self.P = np.asarray(P, dtype=float)
        self.A_full = np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, len(self.P))
        self._setup_rows(np.ones(len(self.A_full), dtype=bool))
        self._x = None
        self._y = None
        try:
            self._p_chol = cho_factor(self.P, lower=True, check_finite=False)
        except LinAlgError:
            self._p_chol = None

    def _setup_rows(self, keep):
        self.keep = keep
        self.A = self.A_full[keep]
        s = self.settings
        self.Ps, self.As, self.D, self.E, self.c = _ruiz(self.P, np.ascontiguousarray(self.A), s.scaling_iters)
        self.rho = np.full(len(self.A), s.rho)
        self._factor()

    def _factor(self):
        s = self.settings
        n = len(self.Ps)
        M = self.Ps + s.sigma * np.eye(n) + self.As.T @ (self.rho[:, None] * self.As)
        # explicit inverse: the systems are tiny and a matvec beats a LAPACK call per iteration
        self._kkt_inv = np.ascontiguousarray(cho_solve(cho_factor(M, lower=True, check_finite=False), np.eye(n), check_finite=False))

    def warm_start(self, z=None, y=None):
        self._x = None if z is None else np.asarray(z, dtype=float).copy()
        self._y = None if y is None else np.asarray(y, dtype=float).copy()

    def solve(self, q, b):
        s = self.settings
        q = np.asarray(q, dtype=float)
        b_full = np.asarray(b, dtype=float)
        keep = np.isfinite(b_full)
        if not np.array_equal(keep, self.keep):
            self._setup_rows(keep)
        b = b_full[keep]
        n, m = len(q), len(b)
        A = self.A

        def full_y(yk):
            out = np.zeros(len(b_full))
            out[keep] = yk
            return out

        if s.check_unconstrained and self._p_chol is not None:
            z0 = -cho_solve(self._p_chol, q, check_finite=False)
            if m == 0 or np.all(A @ z0 - b <= s.eps_abs):
                dual = np.max(np.abs(self.P @ z0 + q), initial=0.0)
                sol = QpSolution(z0, np.zeros(len(b_full)), SOLVED, max(0.0, np.max(A @ z0 - b, initial=0.0)), dual, 0)
                self._x, self._y = sol.z.copy(), sol.y.copy()
                return sol

        D, E, c = self.D, self.E, self.c
        Ps, As = self.Ps, self.As
        qs = c * D * q
        bs = E * b
        if self._x is not None and len(self._x) == n:
            x = self._x / D
        else:
            x = np.zeros(n)
        if self._y is not None and len(self._y) == len(b_full):
            y = c * self._y[keep] / E
        else:
            y = np.zeros(m)
        z = np.minimum(As @ x, bs)
        code, it, x, z, y, y_prev, prim, dual, rho, kinv = _admm(
            self._kkt_inv, Ps, np.ascontiguousarray(As), qs, bs, D, E, c, x, z, y, self.rho[0] if m else s.rho,
            s.sigma, s.alpha, s.max_iter, s.check_every, s.eps_abs, s.eps_rel, s.eps_pinf,
            s.adaptive_rho, s.adaptive_rho_tolerance)
        if m and rho != self.rho[0]:
            self.rho[:] = rho
            self._kkt_inv = kinv
        status = (SOLVED, MAX_ITER, PRIMAL_INFEASIBLE)[code]

        z_u = D * x
        y_u = E * y / c
        if status == PRIMAL_INFEASIBLE:
            cert = E * (y - y_prev)
            return QpSolution(z_u, full_y(cert), status, prim, dual, it)
        sol = QpSolution(z_u, full_y(y_u), status, prim, dual, it)
        if s.polish and status == SOLVED:
            sol = self._polish(sol, q, b, keep, full_y) or sol
        elif s.polish and status == MAX_ITER:
            # badly scaled slack penalties can stall ADMM near the optimum; a polished
            # point is accepted only if it passes the KKT test on its own
            sol = self._polish(sol, q, b, keep, full_y, strict=True) or sol
            if not sol.solved:
                sol = self._active_set(sol, q, b, keep, full_y) or sol
        if sol.solved:
            self._x, self._y = sol.z.copy(), sol.y.copy()
        return sol

    def _polish(self, sol, q, b, keep, full_y, strict=False):
        """Solve the KKT system on the active set guessed from the ADMM iterate."""
        s = self.settings
        A, P = self.A, self.P
        y = sol.y[keep]
        slack = b - A @ sol.z
        tol = max(s.eps_abs, 1e-9)
        active = (y > tol) | (slack < tol)
        n = len(q)
        for _ in range(5):
            Aa = A[active]
            k = len(Aa)
            KKT = np.zeros((n + k, n + k))
            KKT[:n, :n] = P
            KKT[:n, n:] = Aa.T
            KKT[n:, :n] = Aa
            rhs = np.concatenate([-q, b[active]])
            try:
                sol_kkt = np.linalg.solve(KKT, rhs)
            except LinAlgError:
                sol_kkt = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
            z = sol_kkt[:n]
            lam = np.zeros(len(b))
            lam[active] = sol_kkt[n:]
            viol = A @ z - b
            bad_dual = active & (lam < -tol)
            bad_prim = (~active) & (viol > tol)
            if not bad_dual.any() and not bad_prim.any():
                lam = np.maximum(lam, 0.0)
                prim = max(0.0, np.max(viol, initial=0.0))
                dual = np.max(np.abs(P @ z + q + A.T @ lam), initial=0.0)
                if strict:
                    scale = max(np.max(np.abs(P @ z), initial=0.0), np.max(np.abs(q), initial=0.0),
                                np.max(np.abs(A.T @ lam), initial=0.0))
                    ok = prim <= s.eps_abs + s.eps_rel * np.max(np.abs(b), initial=0.0) and \
                        dual <= s.eps_abs + s.eps_rel * scale
                else:
                    ok = prim <= max(sol.primal_residual, s.eps_abs) and dual <= max(sol.dual_residual, s.eps_abs)
                if ok:
                    return QpSolution(z, full_y(lam), SOLVED, prim, dual, sol.iterations, True)
                return None
            active = (active & ~bad_dual) | bad_prim
        return None


    def _active_set(self, sol, q, b, keep, full_y):
        """Exact dual active-set solve; accepted only if it passes the strict KKT test."""
        s = self.settings
        A, P = self.A, self.P
        try:
            z, _, _, _, lam, _ = quadprog.solve_qp(P, -q, -A.T, -b, 0)
        except ValueError:
            # raised for indefinite P or inconsistent constraints
            return None
        lam = np.maximum(lam, 0.0)
        prim = max(0.0, np.max(A @ z - b, initial=0.0))
        dual = np.max(np.abs(P @ z + q + A.T @ lam), initial=0.0)
        scale = max(np.max(np.abs(P @ z), initial=0.0), np.max(np.abs(q), initial=0.0),
                    np.max(np.abs(A.T @ lam), initial=0.0))
        if prim > s.eps_abs + s.eps_rel * np.max(np.abs(b), initial=0.0) or dual > s.eps_abs + s.eps_rel * scale:
            return None
        return QpSolution(z, full_y(lam), SOLVED, prim, dual, sol.iterations, fallback=True)


def solve_qp(problem, settings=None, warm_start=None):
    """Solve ``problem`` from scratch; ``warm_start`` is an optional ``(z, y)`` pair."""
    solver = QpSolver(problem.P, problem.A, settings)
    if warm_start is not None:
        solver.warm_start(*warm_start)
    return solver.solve(problem.q, problem.b)


def kkt_residuals(problem, z, y):
    """Stationarity, primal violation, dual sign violation and complementarity."""
    stat = np.max(np.abs(problem.P @ z + problem.q + problem.A.T @ y), initial=0.0)
    slack = problem.A @ z - problem.b
    finite = np.isfinite(problem.b)
    prim = max(0.0, np.max(slack[finite], initial=0.0))
    dual = max(0.0, -np.min(y, initial=0.0))
    comp = abs(float(y[finite] @ slack[finite]))
    return stat, prim, dual, comp


def dump_problem(problem, path):
    """Text dump: header line ``n m``, then P, q, A, b row-major, one row per line."""
    with open(path, "w") as fh:
        fh.write(f"# qp n={problem.n} m={problem.m}; blocks P(n rows) q(1) A(m rows) b(1)\n")
        fh.write(f"{problem.n} {problem.m}\n")
        for row in problem.P:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(" ".join(repr(float(v)) for v in problem.q) + "\n")
        for row in problem.A:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(" ".join(repr(float(v)) for v in problem.b) + "\n")


def load_problem(path):
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    n, m = (int(v) for v in lines[0].split())
    rows = [np.array([float(v) for v in ln.split()]) for ln in lines[1:]]
    P = np.array(rows[:n]).reshape(n, n)
    q = rows[n]
    A = np.array(rows[n + 1:n + 1 + m]).reshape(m, n)
    b = rows[n + 1 + m] if m else np.zeros(0)
    return QpProblem(P, q, A, b)
