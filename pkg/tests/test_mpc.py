import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from clbfet import mpc


def test_discretization_is_exact():
    dt = 0.1
    A, B = mpc.discretize(dt)
    Ac = np.zeros((9, 9))
    Ac[:3, 3:6] = np.eye(3)
    Ac[3:6, 6:] = np.eye(3)
    E = expm(Ac * dt)
    assert np.allclose(A, E[:6, :6], atol=1e-14) and np.allclose(B, E[:6, 6:], atol=1e-14)


def test_prediction_matches_rollout():
    rng = np.random.default_rng(0)
    K, dt = 6, 0.1
    Phi, Gam = mpc.prediction_matrices(K, dt)
    A, B = mpc.discretize(dt)
    x0, U = rng.standard_normal(6), rng.standard_normal(3 * K)
    x, xs = x0, []
    for i in range(K):
        x = A @ x + B @ U[3 * i:3 * i + 3]
        xs.append(x)
    assert np.allclose(Phi @ x0 + Gam @ U, np.concatenate(xs), atol=1e-12)


def _lstsq_plan(cfg, x0, ref):
    Phi, Gam = mpc.prediction_matrices(cfg.K, cfg.dt)
    Wq = np.kron(np.eye(cfg.K), np.sqrt(cfg.Q_mpc))
    Wr = np.kron(np.eye(cfg.K), np.sqrt(cfg.R_mpc))
    M = np.vstack([Wq @ Gam, Wr])
    rhs = np.concatenate([Wq @ (ref.ravel() - Phi @ x0), np.zeros(3 * cfg.K)])
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_unconstrained_matches_least_squares(seed):
    rng = np.random.default_rng(seed)
    cfg = mpc.MpcConfig(input_box=None)
    x0, ref = rng.standard_normal(6), rng.standard_normal((cfg.K, 6))
    m = mpc.Mpc(cfg)
    m.solve(x0, ref)
    assert np.allclose(m.last.z, _lstsq_plan(cfg, x0, ref), atol=1e-6)


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_translation_equivariance(seed):
    rng = np.random.default_rng(seed)
    cfg = mpc.MpcConfig(input_box=None)
    x0, ref = rng.standard_normal(6), rng.standard_normal((cfg.K, 6))
    shift = np.concatenate([rng.uniform(-50, 50, 3), np.zeros(3)])
    xa, ma = mpc.solve_mpc(x0, ref, cfg)
    xb, mb = mpc.solve_mpc(x0 + shift, ref + shift, cfg)
    assert np.allclose(ma, mb, atol=1e-9) and np.allclose(xb - xa, shift, atol=1e-9)


def test_input_box_respected():
    cfg = mpc.MpcConfig(input_box=2.0)
    ref = np.tile([20.0, 0, 0, 0, 0, 0], (cfg.K, 1))
    m = mpc.Mpc(cfg)
    _, mu, ok = m.solve(np.zeros(6), ref)
    assert ok and np.all(np.abs(m.last.z) <= 2.0 + 1e-5)


def test_horizon_monotonicity():
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal(6)
    ref_long = rng.standard_normal((25, 6))
    short = mpc.Mpc(mpc.MpcConfig(K=20, input_box=None))
    long = mpc.Mpc(mpc.MpcConfig(K=25, input_box=None))
    short.solve(x0, ref_long[:20])
    long.solve(x0, ref_long)
    c_short = short.plan_cost(x0, ref_long[:20], short.last.z)
    c_trunc = short.plan_cost(x0, ref_long[:20], long.last.z[:60])
    assert c_short <= c_trunc + 1e-9


def test_build_ocp_matches_solver_objective():
    rng = np.random.default_rng(2)
    cfg = mpc.MpcConfig(K=5, input_box=None)
    x0, ref = rng.standard_normal(6), rng.standard_normal((5, 6))
    prob = mpc.build_ocp(x0, ref, cfg)
    U = rng.standard_normal(15)
    m = mpc.Mpc(cfg)
    const = m.plan_cost(x0, ref, np.zeros(15))
    assert prob.objective(U) + const == pytest.approx(m.plan_cost(x0, ref, U), rel=1e-10)


def test_config_validation():
    with pytest.raises(ValueError):
        mpc.MpcConfig(K=0)
    with pytest.raises(ValueError):
        mpc.MpcConfig(R_mpc=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        mpc.build_ocp(np.zeros(5), np.zeros((20, 6)), mpc.MpcConfig())


def test_zoh_position_block():
    _, B = mpc.discretize(0.01)
    assert np.allclose(B[:3], 5e-5 * np.eye(3), atol=1e-18)


def test_step_reference_pulls_forward():
    cfg = mpc.MpcConfig()
    direction = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    ref = np.tile(np.concatenate([3 * direction, np.zeros(3)]), (cfg.K, 1))
    _, mu, ok = mpc.Mpc(cfg).solve(np.zeros(6), ref)
    assert ok and mu @ direction > 0


def test_solve_time_under_a_millisecond():
    import time
    cfg = mpc.MpcConfig()
    m = mpc.Mpc(cfg)
    rng = np.random.default_rng(3)
    m.solve(np.zeros(6), np.zeros((cfg.K, 6)))
    times = []
    for _ in range(50):
        x0, ref = rng.standard_normal(6), rng.standard_normal((cfg.K, 6))
        t0 = time.perf_counter()
        m.solve(x0, ref)
        times.append(time.perf_counter() - t0)
    assert np.median(times) < 1e-3
