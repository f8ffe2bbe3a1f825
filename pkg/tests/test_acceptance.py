"""Acceptance criteria 1-11 at their stated tolerances.

Each test records a one-line verdict that ``conftest.py`` prints in the
terminal summary. Closed-loop runs are shared through ``_run`` so that the
5 x 5 grid is simulated once per session.
"""

import functools
import time

import numpy as np

from acceptance_report import record
from clbfet import controller as ctl, gp, mpc, trigger, wind
from clbfet.config import RunConfig
from clbfet.harness import build_wind, export, run_experiment
from clbfet.qp import QpProblem, kkt_residuals, solve_qp
from clbfet.trajectories import KINDS
from oracles import enumerate_qp, gp_posterior_explicit, lyapunov_closed_form, random_feasible_qp

SEEDS = range(5)


@functools.cache
def _run(trajectory, variant, seed):
    cfg = RunConfig().with_run(trajectory=trajectory, variant=variant, seed=seed)
    t0 = time.perf_counter()
    sim, met = run_experiment(cfg)
    return sim, met, time.perf_counter() - t0


def test_c01_lyapunov_certificate():
    t0 = time.perf_counter()
    g = ctl.Gains()
    P = ctl.lyapunov_solve(g).P
    res = np.linalg.norm(g.A.T @ P + P @ g.A + np.eye(6), "fro")
    dev = np.abs(P - lyapunov_closed_form()).max()
    dt = time.perf_counter() - t0
    ok = res < 1e-9 and dev < 1e-9 and dt < 1.0
    record(1, ok, f"residual {res:.1e}, max |P - closed form| {dev:.1e}, {dt:.3f} s")
    assert ok


def test_c02_gp_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_mu = worst_var = 0.0
    var_ok = True
    for _ in range(50):
        n = int(rng.integers(1, 31))
        X = rng.uniform(-3, 3, (n, 6))
        Y = rng.standard_normal((n, 3))
        h = gp.Hyperparams(rng.uniform(0.3, 3.0), rng.uniform(0.3, 5.0, 6), rng.uniform(1e-3, 1.0))
        model = gp.fit(gp.Dataset(X, Y, 30), h)
        # the model factorizes K + (noise + jitter) I; the oracle uses the same effective noise
        noise = h.noise_var + gp.JITTER * h.sigma_f**2
        for x in np.vstack([rng.uniform(-4, 4, (5, 6)), X[:2]]):
            mu, sd = gp.predict(model, x)
            mu_ref, var_ref = gp_posterior_explicit(X, Y, x, h.sigma_f, h.length_scales, noise)
            worst_mu = max(worst_mu, np.abs(mu - mu_ref).max())
            worst_var = max(worst_var, np.abs(sd**2 - var_ref).max())
            var_ok &= bool(np.all(sd**2 <= h.sigma_f**2 + 1e-12))
    dt = time.perf_counter() - t0
    ok = worst_mu < 1e-8 and worst_var < 1e-8 and var_ok and dt < 10
    record(2, ok, f"max mean err {worst_mu:.1e}, max var err {worst_var:.1e}, "
                  f"var <= prior: {var_ok}, {dt:.2f} s")
    assert ok


def test_c03_lml_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 31))
        ds = gp.Dataset(rng.uniform(-2, 2, (n, 6)), rng.standard_normal((n, 3)), 30)
        hs = [gp.Hyperparams(rng.uniform(0.5, 2), rng.uniform(0.5, 4, 6), rng.uniform(0.05, 1)) for _ in range(3)]
        _, grad = gp.log_marginal_likelihood(ds, hs)
        eps = 1e-5
        fd = np.zeros_like(grad)
        for j in range(3):
            th = hs[j].to_log()
            for i in range(len(th)):
                up, dn = th.copy(), th.copy()
                up[i] += eps
                dn[i] -= eps
                hu, hd = list(hs), list(hs)
                hu[j], hd[j] = gp.Hyperparams.from_log(up), gp.Hyperparams.from_log(dn)
                fd[j, i] = (gp.log_marginal_likelihood(ds, hu)[0] - gp.log_marginal_likelihood(ds, hd)[0]) / (2 * eps)
        worst = max(worst, np.linalg.norm(grad - fd) / np.linalg.norm(fd))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 10
    record(3, ok, f"max relative gradient error {worst:.1e}, {dt:.2f} s")
    assert ok


def test_c04_qp_solver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_z = worst_kkt = 0.0
    iters = []
    for _ in range(200):
        n, m = int(rng.integers(1, 7)), int(rng.integers(0, 11))
        P, q, A, b = random_feasible_qp(rng, n, m)
        prob = QpProblem(P, q, A, b)
        sol = solve_qp(prob)
        z_ref, _ = enumerate_qp(P, q, A, b)
        worst_z = max(worst_z, np.abs(sol.z - z_ref).max())
        worst_kkt = max(worst_kkt, max(kkt_residuals(prob, sol.z, sol.y)[:3]))
        iters.append(sol.iterations)
    dt = time.perf_counter() - t0
    sim, _, _ = _run("lemniscate", "CLBFET", 0)
    med_closed = float(np.median(sim.col("qp_iters")))
    ok = worst_z < 1e-6 and worst_kkt < 1e-6 and 25 <= med_closed <= 100 and dt < 30
    record(4, ok, f"max |z - oracle| {worst_z:.1e}, max KKT residual {worst_kkt:.1e}, "
                  f"median iters random {np.median(iters):.0f} / closed loop {med_closed:.0f}, {dt:.2f} s")
    assert ok


def test_c05_mpc():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    cfg = mpc.MpcConfig(K=20, input_box=None)
    solver = mpc.Mpc(cfg)
    Phi, Gam = mpc.prediction_matrices(cfg.K, cfg.dt)
    Wq = np.kron(np.eye(cfg.K), np.sqrt(cfg.Q_mpc))
    Wr = np.kron(np.eye(cfg.K), np.sqrt(cfg.R_mpc))
    M = np.vstack([Wq @ Gam, Wr])
    worst_ls = worst_eq = 0.0
    for _ in range(50):
        x0, ref = rng.standard_normal(6) * 3, rng.standard_normal((cfg.K, 6)) * 3
        solver.solve(x0, ref)
        U_ls = np.linalg.lstsq(M, np.concatenate([Wq @ (ref.ravel() - Phi @ x0), np.zeros(3 * cfg.K)]), rcond=None)[0]
        worst_ls = max(worst_ls, np.abs(solver.last.z - U_ls).max())
        shift = np.concatenate([rng.uniform(-20, 20, 3), np.zeros(3)])
        xa, ma = mpc.solve_mpc(x0, ref, cfg)
        xb, mb = mpc.solve_mpc(x0 + shift, ref + shift, cfg)
        worst_eq = max(worst_eq, np.abs(ma - mb).max(), np.abs(xb - xa - shift).max())
    dt = time.perf_counter() - t0
    ok = worst_ls < 1e-6 and worst_eq < 1e-9 and dt < 20
    record(5, ok, f"max |U - lstsq| {worst_ls:.1e}, translation error {worst_eq:.1e}, {dt:.2f} s")
    assert ok


def test_c06_clf_semantics():
    sim, _, _ = _run("lemniscate", "CLBFET", 0)
    cfg = RunConfig()
    g = ctl.Gains()
    cert = ctl.lyapunov_solve(g)
    E = np.column_stack([sim.col(f"e{i}") for i in range(6)])
    MQ = sim.cols("mu_qp_")
    margin = sim.col("margin")
    W = E @ cert.PB
    # direct substitution of the solved mu_qp into the CLF condition
    val = (2 * np.einsum("ij,ij->i", W, MQ) + np.einsum("ij,jk,ik->i", E, cert.P, E) / g.epsilon
           + 2 * np.linalg.norm(W, axis=1) * margin)
    d1 = sim.col("d1")
    scale = np.maximum.reduce([np.abs(2 * np.einsum("ij,ij->i", W, MQ)), np.abs(val), np.ones(len(val))])
    tol = cfg.qp.eps_abs + cfg.qp.eps_rel * scale
    unrelaxed = d1 <= 0
    viol = int(np.sum(val[unrelaxed] > tol[unrelaxed]))
    # the relaxed row itself must hold on every tick: condition <= d1
    viol_all = int(np.sum(val - d1 > tol))
    ok = len(d1) >= 3000 and viol == 0 and viol_all == 0
    record(6, ok, f"{len(d1)} ticks, {int(unrelaxed.sum())} with d1 <= 0, violations {viol}; "
                  f"condition <= d1 violated on {viol_all} ticks")
    assert ok


def test_c07_safety():
    t0 = time.perf_counter()
    lines, ok = [], True
    for variant in ("CLBFET", "FL-QP-MPC"):
        hits, wall = [], 0.0
        for tr in KINDS:
            for s in SEEDS:
                sim, met, w = _run(tr, variant, s)
                wall += w
                if met.collided or met.status != "ok":
                    hits.append(f"{tr}/s{s}({met.min_center_distance:.2f} m)")
        ok &= not hits and wall < 600
        lines.append(f"{variant} {25 - len(hits)}/25 collision-free in {wall:.0f} s"
                     + (f" [collided: {', '.join(hits)}]" if hits else ""))
    lbm = None
    for s in SEEDS:
        _, met, _ = _run("lemniscate", "LB-FL-MPC", s)
        if met.collided:
            lbm = s
            break
    ok &= lbm is not None
    lines.append(f"LB-FL-MPC lemniscate collides: {'seed ' + str(lbm) if lbm is not None else 'never'}")
    record(7, ok, "; ".join(lines) + f" ({time.perf_counter() - t0:.0f} s)")
    assert ok


def test_c08_tracking_ordering():
    rows, ordered = [], True
    clbfet = []
    for s in SEEDS:
        e = {v: _run("lemniscate", v, s)[1].avg_tracking_error for v in ("CLBFET", "FL-QP-MPC", "LB-FL-QP")}
        ordered &= e["CLBFET"] < e["FL-QP-MPC"] and e["CLBFET"] < e["LB-FL-QP"]
        clbfet.append(e["CLBFET"])
        rows.append(f"s{s} {e['CLBFET']:.3f}/{e['FL-QP-MPC']:.3f}/{e['LB-FL-QP']:.3f}")
    # the 0.6 m bound is compared against the average over the five wind draws
    mean = float(np.mean(clbfet))
    ok = ordered and mean < 0.6
    record(8, ok, f"ordering per seed: {ordered}; CLBFET mean {mean:.3f} m (max seed {max(clbfet):.3f}); "
                  "CLBFET/FL-QP-MPC/LB-FL-QP " + ", ".join(rows))
    assert ok


def test_c09_disturbance_learning():
    base = (RunConfig().with_run(trajectory="line", seed=0)
            .with_section("wind", turbulence=False, gust=False).with_section("obstacles", enabled=False))
    errs = {}
    for variant in ("CLBFET", "FL-QP-MPC"):
        sim, _ = run_experiment(base.with_run(variant=variant))
        t = sim.col("t")
        w = (t >= 15.0) & (t <= 30.0)
        errs[variant] = float(np.mean(np.linalg.norm(sim.positions[w] - sim.ref_positions[w], axis=1)))
    ratio = errs["CLBFET"] / errs["FL-QP-MPC"]
    ok = ratio < 0.2
    record(9, ok, f"steady-state error with GP {errs['CLBFET']:.4f} m vs without {errs['FL-QP-MPC']:.4f} m, "
                  f"ratio {ratio:.3f}")
    assert ok


def _periodic_count(n_ticks):
    # per-tick policy replayed over the same ticks; samples exist from tick 1 on
    sched = trigger.UpdateScheduler(trigger.UpdatePolicy("periodic", interval=1))
    count = 0
    for k in range(1, n_ticks):
        if sched.due(False, k):
            sched.last_tick = k
            count += 1
    return count


def test_c10_event_trigger():
    fewer, positive = True, True
    n_runs = 0
    for tr in KINDS:
        for s in SEEDS:
            sim, met, _ = _run(tr, "CLBFET", s)
            fewer &= met.update_count < _periodic_count(met.ticks)
            positive &= all(ev.trigger_value > 0 for ev in sim.events)
            n_runs += 1
    # the replayed count agrees with an actual per-tick run
    _, lbm, _ = _run("lemniscate", "LB-FL-MPC", 0)
    replay_ok = lbm.status != "ok" or lbm.update_count == _periodic_count(lbm.ticks)

    cfg = (RunConfig().with_run(trajectory="line", seed=0, duration=25.0)
           .with_section("obstacles", enabled=False))
    t_gust = 20.0
    drawn = build_wind(cfg)
    gusty = wind.WindModel(drawn.constant, drawn.field, wind.GustParams(t_gust, 2.0, (5.0, 0.0, 0.0)))
    sim, _ = run_experiment(cfg, wind_model=gusty)
    t = sim.col("t")
    win = (t >= t_gust) & (t <= t_gust + 1.0)
    fired = bool(np.any(sim.col("fired")[win] > 0))
    updated = any(t_gust <= ev.tick * cfg.run.dt <= t_gust + 1.0 for ev in sim.events)
    ok = fewer and positive and replay_ok and fired
    record(10, ok, f"{n_runs} runs: event < periodic on all: {fewer}; all trigger values > 0: {positive}; "
                   f"replay matches per-tick run: {replay_ok}; gust at {t_gust} s -> fire within 1 s: {fired}, "
                   f"update within 1 s: {updated}")
    assert ok


def test_c11_determinism(tmp_path):
    cfg = RunConfig()
    sim_a, met_a, _ = _run("lemniscate", "CLBFET", 0)
    sim_b, met_b = run_experiment(cfg)
    export(sim_a, met_a, tmp_path / "a")
    export(sim_b, met_b, tmp_path / "b")
    same = (tmp_path / "a" / "log.csv").read_bytes() == (tmp_path / "b" / "log.csv").read_bytes()
    record(11, same, f"log.csv byte-identical across two runs: {same}")
    assert same
