import numpy as np
from hypothesis import given, settings, strategies as st

from stirk.optim import AdamState, LBFGSState, adam_step, lbfgs_step, pack, unpack


def test_pack_unpack_round_trip():
    arrays = [np.arange(6.0).reshape(2, 3), np.array([7.0]), np.ones((1, 2))]
    vec = pack(arrays)
    assert vec.shape == (9,)
    for a, b in zip(unpack(vec, arrays), arrays):
        np.testing.assert_array_equal(a, b)


def test_adam_zero_gradient_is_fixed_point():
    w = np.array([1.0, -2.0])
    s = AdamState()
    for _ in range(5):
        w2 = adam_step(s, w, np.zeros(2), 0.1)
        np.testing.assert_array_equal(w2, w)


def test_adam_first_step_is_signed_lr():
    # bias correction makes the first update lr * sign(g) up to eps
    g = np.array([3.0, -0.01, 1e3])
    w = adam_step(AdamState(), np.zeros(3), g, 0.01)
    np.testing.assert_allclose(w, -0.01 * np.sign(g), rtol=1e-5)


def test_adam_bowl_converges():
    w = np.array([3.0, -4.0, 1.0])
    s = AdamState()
    for _ in range(3000):
        w = adam_step(s, w, 2 * w, 0.01)
    assert np.linalg.norm(w) < 1e-3


def run_lbfgs(fg, w, iters):
    s = LBFGSState()
    f, g = fg(w)
    trace = [f]
    for _ in range(iters):
        w, f, g = lbfgs_step(s, w, fg, f, g)
        trace.append(f)
    return w, np.array(trace), s


def test_lbfgs_spd_quadratic():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(10, 10))
    H = M @ M.T + np.eye(10)
    b = rng.normal(size=10)
    fg = lambda w: (0.5 * w @ H @ w - b @ w, H @ w - b)
    w, trace, _ = run_lbfgs(fg, np.zeros(10), 30)
    np.testing.assert_allclose(w, np.linalg.solve(H, b), atol=1e-8)
    assert np.all(np.diff(trace) <= 1e-15)


def rosenbrock(w):
    x, y = w
    f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
    g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
    return f, g


def test_lbfgs_rosenbrock():
    w, trace, _ = run_lbfgs(rosenbrock, np.array([-1.2, 1.0]), 200)
    assert trace[-1] < 1e-8
    np.testing.assert_allclose(w, [1.0, 1.0], atol=1e-4)


def test_lbfgs_zero_gradient_no_move():
    fg = lambda w: (float(w @ w), 2 * w)
    w0 = np.zeros(3)
    s = LBFGSState()
    w, f, g = lbfgs_step(s, w0, fg)
    np.testing.assert_array_equal(w, w0)
    assert s.iterations == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_lbfgs_never_increases(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 20, 4)
    fg = lambda w: (float(np.sum(a * w ** 4) + np.sum(w ** 2)), 4 * a * w ** 3 + 2 * w)
    _, trace, _ = run_lbfgs(fg, rng.normal(size=4), 15)
    assert np.all(np.diff(trace) <= 0)
