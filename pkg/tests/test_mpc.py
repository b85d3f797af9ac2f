import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stirk.dynamics import SystemSpec
from stirk.errors import UnsupportedConstraintError
from stirk.lifting import identity_dictionary, output_matrix
from stirk.mpc import (Condenser, CondensedQP, KoopmanMPC, MPCProblem, closed_loop, condense, kkt_residual,
                       mpc_cost, mpc_step, prediction_matrices, solve_box_qp, write_episode)
from stirk.operator import KoopmanModel

from oracles import exhaustive_box_qp


def linear_model(A, B, dt=0.1):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = identity_dictionary(A.shape[0])
    return KoopmanModel(A, np.asarray(B, dtype=float).reshape(A.shape[0], -1), output_matrix(d), d, dt)


def random_problem(seed, N=3, m=1, horizon=5, R_w=0.1):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(N, N))
    A *= 0.9 / np.abs(np.linalg.eigvals(A)).max()
    G = rng.normal(size=(N, N))
    return MPCProblem(A, rng.normal(size=(N, m)), np.eye(N), horizon, G @ G.T, np.eye(N), R_w * np.eye(m),
                      -1.0, 1.0)


def rk4_linear(F, G, h):
    """Exact RK4 map of ``x' = F x + G u`` with the input held constant."""
    n = len(F)
    hF = h * F
    Ad = np.eye(n) + hF + hF @ hF / 2 + hF @ hF @ hF / 6 + hF @ hF @ hF @ hF / 24
    Bd = h * (np.eye(n) + hF / 2 + hF @ hF / 6 + hF @ hF @ hF / 24) @ G
    return Ad, Bd


def linear_plant(F, G, dt):
    return SystemSpec("linear", len(F), G.shape[1], lambda x, u: F @ x + G @ u, dt)


DI_F = np.array([[0.0, 1.0], [0.0, 0.0]])
DI_G = np.array([[0.0], [1.0]])


# --- condensation ----------------------------------------------------------------

def test_scalar_condensation():
    p = MPCProblem(np.eye(1), np.eye(1), np.eye(1), 1, 0.0, 1.0, 0.0, -10, 10)
    qp = condense(p, np.array([1.0]))
    np.testing.assert_allclose(qp.H, [[2.0]])
    np.testing.assert_allclose(qp.g, [2.0])
    assert solve_box_qp(qp).U[0] == pytest.approx(-1.0, abs=1e-9)
    assert qp.objective(np.array([-1.0])) == pytest.approx(0.0, abs=1e-15)


def test_free_response_reference_gives_zero_input():
    p = random_problem(0, R_w=0.0)
    z0 = np.array([0.5, -0.2, 0.1])
    M, _ = prediction_matrices(p.A, p.B, p.horizon)
    ref = np.vstack([z0, (M @ z0).reshape(p.horizon, 3)])
    qp = condense(p, z0, ref)
    np.testing.assert_allclose(qp.g, 0.0, atol=1e-14)
    assert np.abs(solve_box_qp(qp).U).max() < 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_condensed_objective_matches_rollout(seed):
    p = random_problem(seed)
    rng = np.random.default_rng(seed + 50)
    z0 = rng.normal(size=3)
    ref = rng.normal(size=(p.horizon + 1, 3))
    qp = condense(p, z0, ref)
    for _ in range(100):
        U = rng.normal(size=p.horizon)
        J = mpc_cost(p, z0, U, ref)
        assert abs(qp.objective(U) - J) <= 1e-9 * abs(J)


def test_prediction_matrices_closed_form():
    p = random_problem(4)
    M, S = prediction_matrices(p.A, p.B, 4)
    np.testing.assert_allclose(M[6:9], np.linalg.matrix_power(p.A, 3), rtol=1e-12)
    np.testing.assert_allclose(S[9:12, 1:2], np.linalg.matrix_power(p.A, 2) @ p.B, rtol=1e-12)
    assert np.all(S[0:3, 1:] == 0)


def test_state_bounds_rejected():
    p = random_problem(0)
    p.z_max = np.full(3, 5.0)
    with pytest.raises(UnsupportedConstraintError):
        Condenser(p)
    p.z_max = np.full(3, np.inf)
    Condenser(p)


def test_weights_validated():
    with pytest.raises(ValueError):
        MPCProblem(np.eye(1), np.eye(1), np.eye(1), 1, -1.0, 1.0, 0.0, -1, 1)
    with pytest.raises(ValueError):
        MPCProblem(np.eye(1), np.eye(1), np.eye(1), 1, 1.0, 1.0, 0.0, 1, -1)


# --- box QP ----------------------------------------------------------------------

def test_scalar_clip():
    qp = CondensedQP(np.eye(1), np.array([-2.0]), np.array([-1.0]), np.array([1.0]))
    assert solve_box_qp(qp).U[0] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(3))
def test_inactive_bounds_match_linear_solve(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(6, 6))
    H = M @ M.T + 0.5 * np.eye(6)
    g = rng.normal(size=6)
    qp = CondensedQP(H, g, np.full(6, -1e6), np.full(6, 1e6))
    np.testing.assert_allclose(solve_box_qp(qp).U, -np.linalg.solve(H, g), atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_box_qp_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(5, 5))
    H = M @ M.T + 0.1 * np.eye(5)
    g = 3.0 * rng.normal(size=5)
    lb, ub = -np.ones(5), np.ones(5)
    res = solve_box_qp(CondensedQP(H, g, lb, ub))
    assert res.converged
    np.testing.assert_allclose(res.U, exhaustive_box_qp(H, g, lb, ub), atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 12), st.floats(0.0, 1.0))
def test_kkt_conditions_hold(seed, n, ridge):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    H = M @ M.T + ridge * np.eye(n)
    g = 5.0 * rng.normal(size=n)
    lb = -rng.uniform(0.1, 2.0, n)
    ub = rng.uniform(0.1, 2.0, n)
    qp = CondensedQP(H, g, lb, ub)
    res = solve_box_qp(qp, max_iter=50000)
    grad = qp.gradient(res.U)
    assert np.all(res.U >= lb) and np.all(res.U <= ub)
    if res.converged:
        for i in range(n):
            at_lb = res.U[i] - lb[i] < 1e-9 and grad[i] > -1e-6
            at_ub = ub[i] - res.U[i] < 1e-9 and grad[i] < 1e-6
            assert at_lb or at_ub or abs(grad[i]) < 1e-6
        assert kkt_residual(qp, res.U) < 1e-8


def test_degenerate_box_and_empty_problem():
    qp = CondensedQP(np.eye(3), np.ones(3), np.zeros(3), np.zeros(3))
    np.testing.assert_array_equal(solve_box_qp(qp).U, np.zeros(3))
    assert solve_box_qp(CondensedQP(np.zeros((0, 0)), np.zeros(0), np.zeros(0), np.zeros(0))).converged
    with pytest.raises(ValueError):
        solve_box_qp(CondensedQP(np.eye(1), np.zeros(1), np.ones(1), np.zeros(1)))


# --- receding horizon ------------------------------------------------------------

def di_model(dt=0.1):
    return linear_model(*rk4_linear(DI_F, DI_G, dt), dt=dt)


def test_at_reference_gives_zero_input():
    u0 = mpc_step(di_model(), np.zeros(2), horizon=10, u_min=-1.0, u_max=1.0)
    np.testing.assert_array_equal(u0, [0.0])


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_zero_box_gives_zero_input(a, b):
    u0 = mpc_step(di_model(), np.array([a, b]), horizon=5, u_min=0.0, u_max=0.0)
    assert u0[0] == 0.0


def test_double_integrator_saturates():
    model = di_model()
    ctrl = KoopmanMPC(model, horizon=3, R_w=0.01, u_min=-1.0, u_max=1.0, warm_start=False)
    x = np.array([50.0, 0.0])
    u0, res = ctrl.step(x)
    assert u0[0] == -1.0
    qp = ctrl.condenser.condense(model.lift(x))
    np.testing.assert_allclose(res.U, exhaustive_box_qp(qp.H, qp.g, qp.lb, qp.ub), atol=1e-6)


def test_tracking_error_decays_on_own_dynamics():
    dt = 0.1
    plant = linear_plant(DI_F, DI_G, dt)
    ctrl = KoopmanMPC(di_model(dt), horizon=20, R_w=0.0, u_min=-1e3, u_max=1e3)
    ref = np.tile([1.0, 0.0], (81, 1))
    out = closed_loop(plant, ctrl, np.array([-1.0, 0.5]), 60, ref)
    err = np.linalg.norm(out.states - 1.0 * np.array([1.0, 0.0]), axis=1)
    tail = err[20:]
    assert np.all(np.diff(tail) <= 1e-9)
    assert err[-1] < 0.01 * err[0]


def test_closed_loop_inputs_within_bounds_and_origin_default():
    plant = linear_plant(DI_F, DI_G, 0.1)
    ctrl = KoopmanMPC(di_model(), horizon=10, u_min=-0.5, u_max=0.3)
    a = closed_loop(plant, ctrl, np.array([2.0, -1.0]), 40)
    b = closed_loop(plant, ctrl, np.array([2.0, -1.0]), 40, reference=np.zeros((0, 2)))
    assert np.all(a.inputs >= -0.5) and np.all(a.inputs <= 0.3)
    assert np.array_equal(a.states, b.states)
    assert a.total_cost == pytest.approx(a.stage_costs.sum() + a.terminal_cost)
    assert len(a.states) == 41 and len(a.inputs) == 40


def test_plant_divergence_truncates_and_flags():
    blow = SystemSpec("blow", 1, 1, lambda x, u: x ** 9, 1.0)
    ctrl = KoopmanMPC(linear_model([[1.0]], [[1.0]]), horizon=2, u_min=0.0, u_max=0.0)
    with np.errstate(all="ignore"):
        out = closed_loop(blow, ctrl, np.array([1e40]), 5)
    assert out.failed and out.flags == ["plant-divergence@0"]
    assert len(out.states) == 1 and len(out.inputs) == 0


def test_warm_start_does_not_increase_iterations():
    plant = linear_plant(DI_F, DI_G, 0.1)
    rng = np.random.default_rng(0)
    warm, cold = [], []
    for _ in range(20):
        x0 = rng.uniform(-3, 3, 2)
        for flag, store in ((True, warm), (False, cold)):
            ctrl = KoopmanMPC(di_model(), horizon=20, R_w=0.01, u_min=-1.0, u_max=1.0, warm_start=flag)
            store.append(closed_loop(plant, ctrl, x0, 40).qp_iterations.mean())
    assert np.mean(warm) <= np.mean(cold)


def test_episode_files(tmp_path):
    plant = linear_plant(DI_F, DI_G, 0.1)
    out = closed_loop(plant, KoopmanMPC(di_model(), horizon=5), np.array([0.3, 0.0]), 3)
    write_episode(out, tmp_path / "ep" / "ic000", ic_index=0)
    lines = (tmp_path / "ep" / "ic000.csv").read_text().splitlines()
    assert lines[0] == "step,x1,x2,u1,stage_cost,qp_iters,qp_residual"
    assert len(lines) == 5
    import json
    summary = json.loads((tmp_path / "ep" / "ic000.json").read_text())
    assert set(summary) == {"total_cost", "success", "flags", "ic_index"}
