"""Closed-loop experiment runner, metrics and file export.

Tick order: measure -> record GP sample -> MPC -> PD term -> GP predict ->
safety QP -> trigger / model update -> feedback linearization -> plant step.
"""

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import gp, plant, trigger, wind
from .config import VARIANTS, as_dict, effective, gains_arrays, validate
from .controller import (BarrierViolated, Gains, cbf_constraint, clf_constraint, compose_pseudo_control,
                         control_constraint, feedback_linearize, lyapunov_solve, pd_term, safety_function,
                         solve_safety_qp)
from .mpc import Mpc, MpcConfig
from .qp import QpSettings
from .trajectories import KINDS, Reference, place_obstacles, reference_window

log = logging.getLogger(__name__)

_VEC = ("x", "y", "z")
BASE_COLUMNS = (
    ["t"] + [f"p{a}" for a in _VEC] + [f"v{a}" for a in _VEC]
    + [f"p{a}_ref" for a in _VEC] + [f"v{a}_ref" for a in _VEC]
    + [f"e{i}" for i in range(6)]
    + [f"{n}_{a}" for n in ("mu_d", "mu_pd", "mu_qp", "mu_gp", "sigma") for a in _VEC]
    + ["margin", "d1", "d2", "trigger_value", "fired", "updated"]
    + [f"u{a}" for a in _VEC] + ["qp_iters"]
)
TIMING_COLUMNS = ("t", "control_ms", "update_ms")


def log_columns(n_obstacles):
    return list(BASE_COLUMNS) + [f"h{i}" for i in range(n_obstacles)]


@dataclass
class SimLog:
    columns: list
    data: np.ndarray
    timing: np.ndarray
    events: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    barrier_violations: int = 0

    def col(self, name):
        return self.data[:, self.columns.index(name)]

    def cols(self, prefix, names=_VEC):
        return np.column_stack([self.col(f"{prefix}{a}") for a in names])

    @property
    def positions(self):
        return self.cols("p")

    @property
    def ref_positions(self):
        return np.column_stack([self.col(f"p{a}_ref") for a in _VEC])


@dataclass(frozen=True)
class Metrics:
    avg_tracking_error: float
    avg_surface_distance: float
    min_surface_distance: float
    avg_center_distance: float
    min_center_distance: float
    collided: bool
    avg_control_ms: float
    avg_update_ms: float
    update_count: int
    ticks: int
    status: str = "ok"


def build_wind(cfg):
    w = cfg.wind
    turb = wind.TurbulenceParams.low_altitude(w.altitude, w.w20, w.airspeed, n_modes=w.n_modes,
                                              max_freq=w.max_freq, clip_sigmas=w.clip_sigmas)
    params = wind.WindParams(c_mag_range=(w.c_mag_min, w.c_mag_max), planar=w.planar, turbulence=turb,
                             gust_start_range=(w.gust_start_min, w.gust_start_max),
                             gust_duration_range=(w.gust_duration_min, w.gust_duration_max),
                             gust_amp_range=(w.gust_amp_min, w.gust_amp_max), seed=cfg.run.seed)
    model = wind.WindModel.from_params(params)
    # disabled parts are zeroed after drawing so the enabled ones keep the same realization
    const = model.constant if w.constant else np.zeros(3)
    field_ = model.field if w.turbulence else wind.TurbulenceField.zero()
    g = model.gust if w.gust else wind.GustParams(model.gust.t_start, model.gust.duration)
    return wind.WindModel(const, field_, g)


def build_obstacles(cfg, ref):
    if not cfg.obstacles.enabled:
        return []
    return place_obstacles(ref, cfg.obstacles.times, cfg.obstacles.radius)


def _initial_model(g, capacity):
    h = gp.Hyperparams(g.sigma_f, np.full(6, g.length_scale), g.noise_var)
    return gp.fit(gp.Dataset(capacity=capacity), [h] * 3)


def run_experiment(cfg, wind_model=None):
    """Run one closed-loop episode; returns ``(SimLog, Metrics)``.

    ``wind_model`` overrides the seeded draw (used for scripted scenarios).
    """
    cfg = effective(validate(cfg))
    variant = cfg.run.variant
    dt, n = cfg.run.dt, cfg.n_ticks
    pp = plant.PlantParams(m=cfg.plant.mass, g_vec=np.array([0.0, 0.0, -cfg.plant.gravity]),
                           noise_std=cfg.plant.noise_std, dt=dt)
    R = np.eye(3)
    att = plant.Attitude()
    gains = Gains(**gains_arrays(cfg.controller))
    cert = lyapunov_solve(gains)
    c = cfg.controller
    ref = Reference(cfg.run.trajectory, 0.0, cfg.run.duration)
    obstacles = build_obstacles(cfg, ref)
    wmodel = wind_model if wind_model is not None else build_wind(cfg)
    qps = QpSettings(eps_abs=cfg.qp.eps_abs, eps_rel=cfg.qp.eps_rel, max_iter=cfg.qp.max_iter)
    m = cfg.mpc
    mpc = Mpc(MpcConfig(K=m.horizon, dt=m.dt, control_dt=dt,
                        Q_mpc=np.diag([m.q_pos] * 3 + [m.q_vel] * 3), R_mpc=m.r * np.eye(3),
                        input_box=m.input_box), qps)
    uses_gp = variant in ("CLBFET", "LB-FL-MPC", "LB-FL-QP")
    uses_qp = variant != "LB-FL-MPC"
    policy = trigger.UpdatePolicy(cfg.trigger.policy, cfg.trigger.interval, cfg.trigger.min_gap,
                                  cfg.gp.hyperopt_iters, cfg.gp.hyperopt_tol)
    sched = trigger.UpdateScheduler(policy)
    model = _initial_model(cfg.gp, cfg.gp.capacity)
    buffer = gp.Dataset(capacity=cfg.gp.capacity)
    beta = None

    rng = np.random.default_rng(cfg.run.noise_seed + cfg.run.seed)
    columns = log_columns(len(obstacles))
    data = np.full((n + 1, len(columns)), np.nan)
    timing = np.full((n + 1, 3), np.nan)
    events = []
    violations = 0
    status, message = "ok", ""

    x = ref.state(0.0)
    y_prev = mu_prev = x_d_next = None
    warm = None
    zeros = np.zeros(3)
    rows_done = 0
    for k in range(n + 1):
        t = k * dt
        y = plant.measure(x, pp, rng)
        if uses_gp and k > 0:
            label = plant.measure_disturbance(y_prev[3:], y[3:], mu_prev, dt)
            buffer = trigger.record_sample(buffer, y_prev, label)

        t0 = time.perf_counter()
        x_ref = ref.state(t)
        if variant == "LB-FL-QP":
            x_d, mu_d = x_ref, ref.acceleration(t)
        else:
            plan_xd, mu_d, _ = mpc.solve(y, reference_window(ref, t, m.horizon, m.dt), x_ref)
            x_d = y if x_d_next is None else x_d_next
            x_d_next = plan_xd
        e = y - x_d
        mu_pd = pd_term(e, gains)
        if uses_gp:
            mu_gp, sigma = gp.predict(model, y)
            if beta is None:
                beta = gp.confidence_beta(model, cfg.gp.varsigma, cfg.gp.beta_mode, cfg.gp.beta,
                                          cfg.gp.rkhs_bound).beta
            b_vec = beta
        else:
            mu_gp, sigma, b_vec = zeros, zeros, zeros
        if variant == "ROBUST":
            b_vec, s_vec = np.array([1.0, 0.0, 0.0]), np.array([c.delta_max, 0.0, 0.0])
        else:
            s_vec = sigma
        margin = float(np.linalg.norm(b_vec) * np.linalg.norm(s_vec))

        d1 = d2 = 0.0
        qp_iters = 0
        mu_qp = zeros
        if uses_qp:
            rows_cbf = []
            for ob in obstacles:
                try:
                    rows_cbf.append(cbf_constraint(y, ob, mu_d, mu_pd, b_vec, s_vec, c.gamma, c.gamma_p))
                except BarrierViolated as exc:
                    violations += 1
                    log.debug("barrier violated at t=%.2f: %s; row dropped", t, exc)
            rows = [clf_constraint(e, cert, gains, b_vec, s_vec)]
            rows_u = control_constraint(y, mu_d, mu_pd, mu_gp, gains, pp.g_vec, R, pp.m)
            nrows = 1 + len(rows_cbf) + len(rows_u)
            ws = warm if warm is not None and len(warm[1]) == nrows else None
            out = solve_safety_qp(rows, rows_cbf, rows_u, gains, qps, ws)
            warm = out.warm
            mu_qp, d1, d2, qp_iters = out.mu_qp, out.d1, out.d2, out.iterations
        mu = compose_pseudo_control(mu_d, mu_pd, mu_qp, mu_gp)
        u = feedback_linearize(y, mu, pp.g_vec, R, pp.m)
        u = np.clip(u, gains.u_min, gains.u_max)
        mu_applied = R @ u / pp.m + pp.g_vec
        fired, value = trigger.check_trigger(e, cert, gains, mu_qp, b_vec, s_vec, cfg.trigger.tol)
        control_ms = 1e3 * (time.perf_counter() - t0)

        update_ms = 0.0
        updated = False
        if uses_gp:
            model, ev = sched.maybe_update(model, buffer, fired, k, value)
            if ev is not None:
                events.append(ev)
                update_ms = ev.update_ms
                updated = True
                beta = None

        hs = [safety_function(x, ob, c.gamma_p)[0] for ob in obstacles]
        data[k] = np.concatenate([[t], x, x_ref, e, mu_d, mu_pd, mu_qp, mu_gp, sigma,
                                  [margin, d1, d2, value, float(fired), float(updated)], u, [qp_iters], hs])
        timing[k] = (t, control_ms, update_ms)
        rows_done = k + 1
        if k == n:
            break
        try:
            x = plant.step(x, att, u, wmodel, pp, t)
        except plant.IntegrationDiverged as exc:
            status, message = "diverged", str(exc)
            log.error("run aborted: %s", exc)
            break
        y_prev, mu_prev = y, mu_applied

    sim = SimLog(columns, data[:rows_done], timing[:rows_done], events, status, message, violations)
    return sim, compute_metrics(sim, obstacles)


def compute_metrics(sim, obstacles):
    if len(sim.data) == 0:
        raise ValueError("empty log")
    P = sim.positions
    err = float(np.mean(np.linalg.norm(P - sim.ref_positions, axis=1)))
    if obstacles:
        C = np.array([o.center for o in obstacles])
        r = np.array([o.radius for o in obstacles])
        D = np.linalg.norm(P[:, None, :] - C[None, :, :], axis=2)
        near = np.argmin(D - r, axis=1)
        dc = D[np.arange(len(P)), near]
        ds = dc - r[near]
        collided = bool(np.any(D < r))
        avg_s, min_s, avg_c, min_c = map(float, (ds.mean(), ds.min(), dc.mean(), D.min()))
    else:
        collided = False
        avg_s = min_s = avg_c = min_c = float("inf")
    ctrl = sim.timing[:, 1] if len(sim.timing) else np.zeros(1)
    upd = sim.timing[:, 2] if len(sim.timing) else np.zeros(1)
    return Metrics(err, avg_s, min_s, avg_c, min_c, collided, float(np.mean(ctrl)), float(np.mean(upd)),
                   len(sim.events), len(sim.data), sim.status)


def _fmt(v):
    return repr(float(v))


def export(sim, metrics, path, plot=False, obstacles=(), config=None):
    """Write log.csv, timing.csv, events.csv and metrics.json (plus SVG plots) into ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sim.columns)
        for row in sim.data:
            w.writerow([_fmt(v) for v in row])
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for row in sim.timing:
            w.writerow([_fmt(v) for v in row])
    with open(out / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tick", "trigger_value", "update_ms", "hyperparams_changed"])
        for ev in sim.events:
            w.writerow([ev.tick, _fmt(ev.trigger_value), _fmt(ev.update_ms), int(ev.hyperparams_changed)])
    summary = {"metrics": asdict(metrics), "status": sim.status, "message": sim.message,
               "barrier_violations": sim.barrier_violations}
    if config is not None:
        summary["config"] = as_dict(config)
    with open(out / "metrics.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
    files = [out / "log.csv", out / "timing.csv", out / "events.csv", out / "metrics.json"]
    if plot:
        files += plot_paths(sim, obstacles, out)
    return files


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def load_log(path):
    """Read a ``log.csv`` back into ``(columns, data)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def plot_paths(sim, obstacles, out):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    P, Pr = sim.positions, sim.ref_positions
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(Pr[:, 0], Pr[:, 1], "k--", lw=1, label="reference")
    ax.plot(P[:, 0], P[:, 1], "b", lw=1.2, label="actual")
    for ob in obstacles:
        ax.add_patch(plt.Circle(ob.center[:2], ob.radius, color="r", alpha=0.3))
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best")
    f2 = Path(out) / "path_xy.svg"
    fig.savefig(f2)
    plt.close(fig)

    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    ax.plot(*Pr.T, "k--", lw=1)
    ax.plot(*P.T, "b", lw=1.2)
    u, v = np.mgrid[0:2 * np.pi:20j, 0:np.pi:10j]
    for ob in obstacles:
        ax.plot_wireframe(ob.center[0] + ob.radius * np.cos(u) * np.sin(v),
                          ob.center[1] + ob.radius * np.sin(u) * np.sin(v),
                          ob.center[2] + ob.radius * np.cos(v), color="r", lw=0.3)
    f3 = Path(out) / "path_3d.svg"
    fig.savefig(f3)
    plt.close(fig)
    return [f2, f3]


def _sweep_one(args):
    cfg, out = args
    sim, met = run_experiment(cfg)
    ref = Reference(cfg.run.trajectory, 0.0, cfg.run.duration)
    export(sim, met, out, obstacles=build_obstacles(cfg, ref), config=cfg)
    return cfg.run.trajectory, cfg.run.variant, cfg.run.seed, met


def sweep(cfg, out, trajectories=KINDS, variants=VARIANTS, seeds=range(5), workers=None):
    """Run the trajectory x variant x seed grid; writes per-run folders and summary.csv."""
    out = Path(out)
    jobs = [(cfg.with_run(trajectory=tr, variant=v, seed=s), out / tr / v / f"seed{s}")
            for tr in trajectories for v in variants for s in seeds]
    workers = workers or os.cpu_count() or 1
    if workers == 1:
        results = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_sweep_one, jobs))
    out.mkdir(parents=True, exist_ok=True)
    names = [f for f in Metrics.__dataclass_fields__]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "variant", "seed"] + names)
        for tr, v, s, met in results:
            w.writerow([tr, v, s] + [getattr(met, f) for f in names])
    return results
