import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermoform_mpc.mpc import (
    MpcConfig, MpcController, assemble_qp, build_prediction, control_step, log_columns, write_log,
)
from thermoform_mpc.narx import LinearizedPlant, NarxModel, RegressorLayout, WaveletChannel
from thermoform_mpc.qp import solve_qp
from thermoform_mpc.thermal_sim import ConfigError


def scalar_plant(a=0.5, b=1.0, c=1.0) -> LinearizedPlant:
    one = np.ones((1, 1))
    return LinearizedPlant(A=a * one, B1=0 * one, B2=b * one, C=c * one, D=0 * one,
                           X_op=np.zeros(1), u_op=np.zeros(1), y_op=np.zeros(1))


def linear_model(a=0.9, b=0.1, Z=2) -> NarxModel:
    """``y_{t+1} = a y_t + b u_t`` per channel, written as a unit-free network."""
    lay = RegressorLayout(n=2, m=2, Z=Z, H=Z)
    chans = []
    for j in range(Z):
        L = np.zeros(lay.dim)
        L[j] = a
        L[2 * Z + j] = b
        chans.append(WaveletChannel(P=np.eye(lay.dim), L=L, offset=0.0, q=1))
    return NarxModel(lay, chans, np.zeros(lay.dim), np.ones(lay.dim))


# --- prediction matrices ------------------------------------------------------------

def test_single_step_stack():
    pl = scalar_plant(0.7, 2.0, 3.0)
    pred = build_prediction(pl, 1, 1)
    np.testing.assert_allclose(pred.Phi, [[3.0 * 0.7]])
    np.testing.assert_allclose(pred.Gamma, [[3.0 * 2.0]])


def test_scalar_powers():
    pred = build_prediction(scalar_plant(), 3, 1)
    np.testing.assert_allclose(pred.Phi.ravel(), [0.5, 0.25, 0.125])


def test_gamma_holds_last_move():
    a, b = 0.5, 1.0
    pred = build_prediction(scalar_plant(a, b), 3, 2)
    expected = np.array([[b, 0.0], [a * b, b], [a * a * b, a * b + b]])
    np.testing.assert_allclose(pred.Gamma, expected)


def test_prediction_matches_simulation():
    rng = np.random.default_rng(0)
    n, H, Z = 4, 2, 3
    A = 0.3 * rng.normal(size=(n, n))
    pl = LinearizedPlant(A=A, B1=np.zeros((n, Z)), B2=rng.normal(size=(n, H)),
                         C=rng.normal(size=(Z, n)), D=np.zeros((Z, H)),
                         X_op=np.zeros(n), u_op=np.zeros(H), y_op=np.zeros(Z))
    Np, Nc = 6, 3
    pred = build_prediction(pl, Np, Nc)
    x0 = rng.normal(size=n)
    du = rng.normal(size=(Nc, H))
    x, ys = x0.copy(), []
    for k in range(Np):
        x = A @ x + pl.B2 @ du[min(k, Nc - 1)]
        ys.append(pl.C @ x)
    np.testing.assert_allclose(pred.Phi @ x0 + pred.Gamma @ du.ravel(), np.concatenate(ys),
                               rtol=1e-12, atol=1e-12)


def test_bad_horizons_rejected():
    with pytest.raises(ConfigError):
        build_prediction(scalar_plant(), 2, 3)
    with pytest.raises(ConfigError):
        MpcConfig(Np=5, Nc=6).validate()
    with pytest.raises(ConfigError):
        MpcConfig(alpha=0.01, beta=1.0).validate()
    with pytest.raises(ConfigError):
        MpcConfig(u_min=5, u_max=1).validate()


# --- QP assembly ------------------------------------------------------------------------

def test_unconstrained_scalar_closed_form():
    cfg = MpcConfig(Np=1, Nc=1, alpha=1.0, beta=0.1, u_min=-1e6, u_max=1e6, T_over=1e6)
    pl = scalar_plant(0.5, 2.0)
    pred = build_prediction(pl, 1, 1)
    y_op, dX0, r = 1.0, np.array([0.4]), 3.0
    qp, lay = assemble_qp(pred, dX0, np.array([r]), np.array([y_op]), np.zeros(1), cfg)
    res = solve_qp(qp)
    Gam, Phi = 2.0, 0.5
    expected = cfg.alpha * Gam * (r - y_op - Phi * dX0[0]) / (cfg.alpha * Gam ** 2 + cfg.beta)
    assert res.x[0] == pytest.approx(expected, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_hessian_symmetric_positive_definite(seed):
    rng = np.random.default_rng(seed)
    pl = scalar_plant(rng.uniform(-0.9, 0.9), rng.normal())
    pred = build_prediction(pl, 5, 3)
    qp, _ = assemble_qp(pred, np.zeros(1), np.ones(1), np.zeros(1), np.zeros(1),
                        MpcConfig(Np=5, Nc=3))
    np.testing.assert_array_equal(qp.H, qp.H.T)
    assert np.min(np.linalg.eigvalsh(qp.H)) > 0


def hard_grid_search(pred, y0, r, cfg, n=2001):
    """Best single move (Nc = 1) on a grid, subject to the hard output bound."""
    du = np.linspace(cfg.u_min, cfg.u_max, n)
    y = y0 + np.outer(du, pred.Gamma[:, 0])
    ok = np.all(y <= r + cfg.T_over + 1e-12, axis=1)
    J = cfg.alpha * np.sum((r - y) ** 2, axis=1) + cfg.beta * du ** 2
    J[~ok] = np.inf
    return du[np.argmin(J)]


def test_large_slack_weight_recovers_hard_constraint():
    pl = scalar_plant(0.8, 1.0)
    pred = build_prediction(pl, 4, 1)
    r, y0 = 2.0, 0.0
    base = dict(Np=4, Nc=1, u_min=0.0, u_max=5.0, T_over=0.0)
    exact = hard_grid_search(pred, y0, r, MpcConfig(**base))
    prev = None
    for rho in (1e2, 1e4, 1e6, 1e8):
        cfg = MpcConfig(**base, slack_weight=rho)
        qp, _ = assemble_qp(pred, np.zeros(1), np.array([r]), np.array([y0]), np.zeros(1), cfg)
        x = solve_qp(qp, tol=1e-9).x[0]
        if prev is not None:
            assert abs(x - exact) <= abs(prev - exact) + 1e-12
        prev = x
    assert prev == pytest.approx(exact, abs=5e-3)


def test_no_active_slack_means_bound_holds():
    pl = scalar_plant(0.6, 1.0)
    pred = build_prediction(pl, 8, 3)
    cfg = MpcConfig(Np=8, Nc=3, u_min=0.0, u_max=1.0, T_over=0.5)
    qp, lay = assemble_qp(pred, np.zeros(1), np.array([2.0]), np.array([0.0]), np.zeros(1), cfg)
    res = solve_qp(qp)
    s = res.x[lay.n_u:]
    assert np.max(s) < 1e-9
    y = lay.y_free + pred.Gamma @ (lay.S @ res.x[:lay.n_u])
    assert np.all(y <= 2.0 + 0.5 + 1e-9)
    u = np.cumsum(res.x[:lay.n_u])
    assert np.all(u >= -1e-12) and np.all(u <= 1.0 + 1e-12)


def test_out_of_bounds_previous_input_is_clamped():
    pred = build_prediction(scalar_plant(), 3, 1)
    warns = []
    qp, _ = assemble_qp(pred, np.zeros(1), np.ones(1), np.zeros(1), np.array([7.0]),
                        MpcConfig(Np=3, Nc=1, u_max=5.0), warnings=warns)
    assert warns and "clamped" in warns[0]


# --- controller ---------------------------------------------------------------------------

def run_linear_loop(model, plant_a, plant_b, ref, steps=150, cfg=None):
    cfg = cfg or MpcConfig(Np=20, Nc=5, u_max=50.0)
    ctl = MpcController(model, cfg)
    y = np.zeros(2)
    for k in range(steps):
        u = ctl.step(y, ref, 6.0 * k)
        y = plant_a * y + plant_b * u
    return y, ctl


def test_tracks_reference_on_matched_linear_plant():
    ref = np.array([5.0, 8.0])
    y, ctl = run_linear_loop(linear_model(), 0.9, 0.1, ref)
    np.testing.assert_allclose(y, ref, atol=1e-3)
    assert all(not r.fallback for r in ctl.log)


def test_bias_correction_removes_gain_mismatch_offset():
    ref = np.array([5.0, 8.0])
    y, _ = run_linear_loop(linear_model(), 0.9, 0.13, ref, steps=300)
    np.testing.assert_allclose(y, ref, atol=1e-2)


def test_overshoot_bounded_by_reported_slack_on_matched_plant():
    # the output bound is soft: any excess must be accounted for by the slack
    ref = np.array([5.0, 8.0])
    cfg = MpcConfig(Np=20, Nc=5, u_max=50.0, alpha=1.0, beta=1e-4)
    ctl = MpcController(linear_model(), cfg)
    y = np.zeros(2)
    for k in range(100):
        u = ctl.step(y, ref, 6.0 * k)
        y = 0.9 * y + 0.1 * u
        assert np.all(y <= ref + ctl.log[-1].slack_max + 1e-6)
        assert ctl.log[-1].slack_max < 1e-3


def test_reference_at_equilibrium_keeps_inputs():
    ref = np.array([2.0, 3.0])
    model = linear_model()
    u_eq = ref * (1 - 0.9) / 0.1
    ctl = MpcController(model, MpcConfig(Np=10, Nc=3, u_max=50.0))
    ctl.reset([ref, ref, ref], [u_eq, u_eq])
    u = ctl.step(ref, ref)
    np.testing.assert_allclose(u, u_eq, atol=1e-6)
    u2 = ctl.step(ref, ref)
    # the re-solved plan continues the previous one (shift property at rest)
    np.testing.assert_allclose(u2, u, atol=1e-6)


def test_solver_failure_falls_back_to_previous_input():
    model = linear_model()
    cfg = MpcConfig(Np=5, Nc=2, u_max=50.0, qp_tol=1e-300)
    Y = [np.zeros(2)] * 3
    U = [np.full(2, 3.0)] * 2
    u, rec = control_step(model, cfg, Y, U, np.full(2, 3.0), np.array([5.0, 5.0]))
    assert rec.fallback
    np.testing.assert_array_equal(u, [3.0, 3.0])


def test_inputs_stay_in_bounds():
    y, ctl = run_linear_loop(linear_model(), 0.9, 0.1, np.array([100.0, 100.0]), steps=40)
    U = np.array([r.u for r in ctl.log])
    assert np.all(U >= 0) and np.all(U <= 50.0)


def test_log_format(tmp_path):
    _, ctl = run_linear_loop(linear_model(), 0.9, 0.1, np.array([1.0, 2.0]), steps=3)
    path = tmp_path / "log.csv"
    text = write_log(ctl.log, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#") and "deg C" in lines[0]
    assert lines[1].split(",") == log_columns(2, 2)
    assert lines[1] == "t,y1,y2,r1,r2,u1,u2,qp_iters,qp_residual,slack_max"
    assert len(lines) == 5 and "\r" not in text
    assert log_columns()[:2] == ["t", "y1"] and len(log_columns()) == 1 + 45 + 3
