import numpy as np
from hypothesis import given, settings, strategies as st

from stirk.baselines import SnapshotPairs, dmd_fit, edmd_fit, evaluate_baseline, fit_edmd_model, lstsq_svd
from stirk.dynamics import Trajectory, generate_trajectories, simulate, vanderpol
from stirk.lifting import identity_dictionary, polyflow_dictionary


def linear_trajs(A, B, count=4, steps=30, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        U = rng.normal(size=(steps, B.shape[1]))
        x = [rng.normal(size=A.shape[0])]
        for u in U:
            x.append(A @ x[-1] + B @ u)
        out.append(Trajectory(np.array(x), U, 0.1))
    return out


def test_edmd_exact_recovery():
    rng = np.random.default_rng(0)
    A = 0.95 * np.linalg.qr(rng.normal(size=(4, 4)))[0]
    B = rng.normal(size=(4, 2))
    model = fit_edmd_model(linear_trajs(A, B), identity_dictionary(4))
    assert np.abs(model.A - A).max() < 1e-8
    assert np.abs(model.B - B).max() < 1e-8


def test_zero_inputs_give_zero_b():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(50, 3))
    A, B = edmd_fit(SnapshotPairs(Z, Z @ (0.5 * np.eye(3)).T, np.zeros((50, 1))))
    np.testing.assert_array_equal(B, np.zeros((3, 1)))
    np.testing.assert_allclose(A, 0.5 * np.eye(3), atol=1e-12)


def test_single_snapshot_has_minimum_norm_solution():
    z, zn, u = np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]]), np.array([[0.5]])
    A, B = edmd_fit(SnapshotPairs(z, zn, u))
    np.testing.assert_allclose(A @ z[0] + B @ u[0], zn[0], atol=1e-12)
    # minimum-norm: each row of [A B] is parallel to [z u]
    theta = np.concatenate([z[0], u[0]])
    G = np.hstack([A, B])
    for row in G:
        assert abs(np.linalg.det(np.vstack([row, theta])[:, :2])) < 1e-12


def test_dmd_scaled_identity():
    X = np.random.default_rng(2).normal(size=(20, 3))
    np.testing.assert_allclose(dmd_fit(X, 0.5 * X), 0.5 * np.eye(3), atol=1e-12)


def test_dmd_rotation_is_orthogonal():
    t = 0.3
    R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    x = [np.array([1.0, 0.2])]
    for _ in range(30):
        x.append(R @ x[-1])
    x = np.array(x)
    A = dmd_fit(x[:-1], x[1:])
    np.testing.assert_allclose(A @ A.T, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(A, R, atol=1e-10)


def test_dmd_rank_one_data():
    v = np.array([1.0, 2.0, -1.0])
    X = np.outer(np.arange(1.0, 6.0), v)
    A = dmd_fit(X, 0.8 * X)
    np.testing.assert_allclose(A @ v, 0.8 * v, atol=1e-12)
    assert np.linalg.matrix_rank(A, tol=1e-10) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_lstsq_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    T = rng.normal(size=(30, 5))
    Y = rng.normal(size=(30, 2))
    G, info = lstsq_svd(T, Y)
    assert info.rank == 5
    np.testing.assert_allclose(G, np.linalg.solve(T.T @ T, T.T @ Y), rtol=1e-8, atol=1e-10)


def test_dmd_model_ignores_inputs():
    trajs = generate_trajectories(vanderpol(), "vdp-multi", 3, 20, 0)
    m = fit_edmd_model(trajs, polyflow_dictionary(vanderpol(), 4), method="dmd")
    assert m.A.shape == (2, 2) and np.all(m.B == 0)


def test_evaluation_includes_initial_row():
    sysm = vanderpol()
    trajs = [simulate(sysm, np.array([0.5, -0.5]), np.zeros((10, 1)))]
    model = fit_edmd_model(trajs, identity_dictionary(2))
    errs, mse = evaluate_baseline(model, trajs)
    assert mse.shape == (1, 11) and mse[0, 0] == 0.0
    assert errs[0] < 0.1
    shifted, _ = evaluate_baseline(model, trajs, initial_states=[np.array([0.6, -0.5])])
    assert shifted[0] > errs[0]
