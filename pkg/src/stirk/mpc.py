"""Condensed linear MPC on a lifted Koopman predictor.

The predicted lifted states are eliminated, so each receding-horizon problem
becomes a dense box-constrained QP over the stacked input sequence::

    J(U) = 1/2 U^T H U + g^T U + c0,   u_min <= u_k <= u_max

solved by projected accelerated gradient with adaptive restart.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SystemSpec, rk4_step
from .errors import DimensionError, DivergenceError, InvalidStateError, UnsupportedConstraintError
from .operator import KoopmanModel

log = logging.getLogger(__name__)


@dataclass
class MPCProblem:
    """Tracking problem for ``z+ = A z + B u`` with output ``x = C z``.

    ``Q``, ``Q_N`` weight the output error ``e_k = r_k - C z_k`` (shape ``n x n``),
    ``R_w`` the inputs. ``reference`` is ``(N_p + 1, n)`` or ``None`` for the origin.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    horizon: int
    Q: np.ndarray
    Q_N: np.ndarray
    R_w: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    reference: np.ndarray | None = None
    z_min: np.ndarray | None = None
    z_max: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.C.shape[0], self.B.shape[1]
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.Q_N = np.atleast_2d(np.asarray(self.Q_N, dtype=float))
        self.R_w = np.atleast_2d(np.asarray(self.R_w, dtype=float))
        self.u_min = np.broadcast_to(np.asarray(self.u_min, dtype=float), (m,)).copy()
        self.u_max = np.broadcast_to(np.asarray(self.u_max, dtype=float), (m,)).copy()
        if self.Q.shape != (n, n) or self.Q_N.shape != (n, n) or self.R_w.shape != (m, m):
            raise DimensionError(f"weights must be {n}x{n} (Q, Q_N) and {m}x{m} (R_w)")
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min must not exceed u_max")
        for name in ("Q", "Q_N", "R_w"):
            W = getattr(self, name)
            if not np.allclose(W, W.T) or np.linalg.eigvalsh(W).min() < -1e-12:
                raise ValueError(f"{name} must be symmetric positive semidefinite")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @classmethod
    def from_model(cls, model: KoopmanModel, horizon=20, Q=None, Q_N=None, R_w=0.0,
                   u_min=-20.0, u_max=20.0, reference=None):
        n, m = model.n, model.m
        Q = np.eye(n) if Q is None else Q
        Q_N = np.eye(n) if Q_N is None else Q_N
        R_w = np.eye(m) * R_w if np.isscalar(R_w) else R_w
        return cls(model.A, model.B, model.C, horizon, Q, Q_N, R_w, u_min, u_max, reference)


@dataclass
class CondensedQP:
    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0

    def objective(self, U):
        U = np.asarray(U, dtype=float)
        return float(0.5 * U @ self.H @ U + self.g @ U + self.c0)

    def gradient(self, U):
        return self.H @ U + self.g


@dataclass
class QPResult:
    U: np.ndarray
    iterations: int
    residual: float
    converged: bool


def prediction_matrices(A, B, horizon):
    """Stacked ``M`` (``z_k = A^k z0`` part) and block lower-triangular ``S`` for ``k = 1..N_p``."""
    N, m = B.shape
    M = np.empty((horizon * N, N))
    S = np.zeros((horizon * N, horizon * m))
    powers = [np.eye(N)]
    for k in range(horizon):
        powers.append(A @ powers[-1])
    AB = [P @ B for P in powers[:-1]]
    for k in range(horizon):
        M[k * N:(k + 1) * N] = powers[k + 1]
        for j in range(k + 1):
            S[k * N:(k + 1) * N, j * m:(j + 1) * m] = AB[k - j]
    return M, S


def _reference_window(reference, n, horizon):
    if reference is None or len(reference) == 0:
        return np.zeros((horizon + 1, n))
    r = np.atleast_2d(np.asarray(reference, dtype=float)).reshape(-1, n)
    if len(r) < horizon + 1:
        r = np.vstack([r, np.repeat(r[-1:], horizon + 1 - len(r), axis=0)])
    return r[:horizon + 1]


class Condenser:
    """Caches the z0-independent parts of the condensed QP for one model and weight set."""

    def __init__(self, problem: MPCProblem):
        p = problem
        if (p.z_min is not None and np.any(np.isfinite(p.z_min))) or \
                (p.z_max is not None and np.any(np.isfinite(p.z_max))):
            raise UnsupportedConstraintError("lifted-state bounds are not supported")
        self.problem = p
        n, m, Np = p.C.shape[0], p.B.shape[1], p.horizon
        M, S = prediction_matrices(p.A, p.B, Np)
        Cbar = np.kron(np.eye(Np), p.C)
        self.F = Cbar @ S                       # outputs from inputs
        self.G = Cbar @ M                       # outputs from z0
        Qbar = np.zeros((Np * n, Np * n))
        for k in range(Np):
            Qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = p.Q if k < Np - 1 else p.Q_N
        self.Qbar = Qbar
        Rbar = np.kron(np.eye(Np), p.R_w)
        self.H = 2.0 * (self.F.T @ Qbar @ self.F + Rbar)
        self.H = 0.5 * (self.H + self.H.T)
        self.FtQ = self.F.T @ Qbar
        self.lb = np.tile(p.u_min, Np)
        self.ub = np.tile(p.u_max, Np)
        self.n, self.m = n, m

    def condense(self, z0, reference=None) -> CondensedQP:
        p = self.problem
        r = _reference_window(p.reference if reference is None else reference, self.n, p.horizon)
        f = self.G @ z0 - r[1:].ravel()
        e0 = r[0] - p.C @ z0
        c0 = float(f @ self.Qbar @ f + e0 @ p.Q @ e0)
        return CondensedQP(self.H, 2.0 * self.FtQ @ f, self.lb, self.ub, c0)


def condense(problem: MPCProblem, z0, reference=None) -> CondensedQP:
    return Condenser(problem).condense(np.asarray(z0, dtype=float), reference)


def mpc_cost(problem: MPCProblem, z0, U, reference=None) -> float:
    """Explicit roll-out of the tracking cost for the input sequence ``U``."""
    p = problem
    n, m = p.C.shape[0], p.B.shape[1]
    r = _reference_window(p.reference if reference is None else reference, n, p.horizon)
    U = np.asarray(U, dtype=float).reshape(p.horizon, m)
    z = np.asarray(z0, dtype=float)
    J = 0.0
    for k in range(p.horizon):
        e = r[k] - p.C @ z
        J += e @ p.Q @ e + U[k] @ p.R_w @ U[k]
        z = p.A @ z + p.B @ U[k]
    e = r[p.horizon] - p.C @ z
    return float(J + e @ p.Q_N @ e)


def kkt_residual(qp: CondensedQP, U) -> float:
    """Natural residual ``||U - clip(U - grad)||_inf``; zero exactly at the box-QP optimum."""
    return float(np.abs(U - np.clip(U - qp.gradient(U), qp.lb, qp.ub)).max()) if len(U) else 0.0


def solve_box_qp(qp: CondensedQP, U0=None, tol=1e-8, max_iter=10000, lipschitz=None) -> QPResult:
    """Projected accelerated gradient with gradient-based restart.

    The variables are Jacobi-scaled first (``U = D V`` with ``D = diag(H)^-1/2``),
    which keeps the feasible set a box and evens out the curvature.
    """
    H, g, lb, ub = qp.H, qp.g, qp.lb, qp.ub
    nv = len(g)
    if np.any(lb > ub):
        raise ValueError("lower bound exceeds upper bound")
    if nv == 0:
        return QPResult(np.zeros(0), 0, 0.0, True)
    dH = np.diag(H).copy()
    D = np.where(dH > 1e-300, 1.0 / np.sqrt(np.maximum(dH, 1e-300)), 1.0)
    Hs = H * D[:, None] * D[None, :]
    gs = g * D
    lbs, ubs = lb / D, ub / D
    L = lipschitz if lipschitz is not None else float(np.linalg.eigvalsh(Hs)[-1])
    if L <= 0.0:
        # linear objective: go to the bound opposite the gradient
        U = np.where(g > 0, lb, np.where(g < 0, ub, np.clip(0.0, lb, ub)))
        return QPResult(U, 0, kkt_residual(qp, U), True)
    step = 1.0 / L
    v = np.clip((np.zeros(nv) if U0 is None else np.asarray(U0, dtype=float)) / D, lbs, ubs)
    y, t = v.copy(), 1.0
    it = 0
    res = np.inf
    for it in range(1, max_iter + 1):
        v_new = np.clip(y - step * (Hs @ y + gs), lbs, ubs)
        # gradient restart: drop momentum when it points uphill
        if (y - v_new) @ (v_new - v) > 0.0:
            t = 1.0
            y = v_new
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = v_new + ((t - 1.0) / t_new) * (v_new - v)
            t = t_new
        v = v_new
        if it % 5 == 0 or it == max_iter:
            res = kkt_residual(qp, v * D)
            if res < tol:
                break
    U = np.clip(v * D, lb, ub)
    res = kkt_residual(qp, U)
    return QPResult(U, it, res, res < tol)


class KoopmanMPC:
    """Receding-horizon controller around a fixed Koopman model."""

    def __init__(self, model: KoopmanModel, horizon=20, Q=None, Q_N=None, R_w=0.0,
                 u_min=-20.0, u_max=20.0, warm_start=True, tol=1e-8, max_iter=10000):
        self.model = model
        self.problem = MPCProblem.from_model(model, horizon, Q, Q_N, R_w, u_min, u_max)
        self.condenser = Condenser(self.problem)
        self.warm_start = warm_start
        self.tol, self.max_iter = tol, max_iter
        dH = np.diag(self.condenser.H)
        D = np.where(dH > 1e-300, 1.0 / np.sqrt(np.maximum(dH, 1e-300)), 1.0)
        self._L = float(np.linalg.eigvalsh(self.condenser.H * D[:, None] * D[None, :])[-1])
        self._prev = None

    def reset(self):
        self._prev = None

    def solve(self, x, reference=None) -> QPResult:
        z0 = self.model.lift(np.asarray(x, dtype=float))
        qp = self.condenser.condense(z0, reference)
        U0 = None
        if self.warm_start and self._prev is not None:
            m = self.model.m
            U0 = np.concatenate([self._prev[m:], self._prev[-m:]])
        res = solve_box_qp(qp, U0, self.tol, self.max_iter, lipschitz=self._L)
        self._prev = res.U
        return res

    def step(self, x, reference=None):
        """First input block of the optimal sequence, plus the solver report."""
        res = self.solve(x, reference)
        return res.U[:self.model.m].copy(), res


def mpc_step(model: KoopmanModel, x, reference=None, **settings):
    u0, _ = KoopmanMPC(model, warm_start=False, **settings).step(x, reference)
    return u0


@dataclass
class ClosedLoopResult:
    states: np.ndarray
    inputs: np.ndarray
    stage_costs: np.ndarray
    terminal_cost: float
    qp_iterations: np.ndarray
    qp_residuals: np.ndarray
    failed: bool = False
    solver_warning: bool = False
    flags: list = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return float(self.stage_costs.sum() + self.terminal_cost)

    def success(self, angle_index=1, tol=0.1) -> bool:
        return bool((not self.failed) and len(self.states) > 1 and abs(self.states[-1, angle_index]) < tol)

    def episode_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n, m = self.states.shape[1], self.inputs.shape[1]
        w.writerow(["step"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
                   + ["stage_cost", "qp_iters", "qp_residual"])
        for k, x in enumerate(self.states):
            if k < len(self.inputs):
                tail = [repr(float(v)) for v in self.inputs[k]] + [
                    repr(float(self.stage_costs[k])), int(self.qp_iterations[k]), repr(float(self.qp_residuals[k]))]
            else:
                tail = [""] * m + [repr(float(self.terminal_cost)), "", ""]
            w.writerow([k] + [repr(float(v)) for v in x] + tail)
        return buf.getvalue()

    def summary(self, **extra) -> dict:
        return {"total_cost": self.total_cost, "success": self.success(), "flags": list(self.flags), **extra}


def closed_loop(plant: SystemSpec, controller: KoopmanMPC, x0, steps, reference=None) -> ClosedLoopResult:
    """Run the controller on the true plant for ``steps`` steps.

    The realized cost sums ``e^T Q e + u^T R u`` over the applied steps and adds
    ``e^T Q_N e`` on the final state; ``e = r - x`` with the measured plant state.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p = controller.problem
    n, m = plant.n, plant.m
    if reference is None or len(reference) == 0:
        ref = np.zeros((steps + 1 + p.horizon, n))
    else:
        ref = _reference_window(reference, n, steps + p.horizon)
    controller.reset()
    x = np.asarray(x0, dtype=float).copy()
    states, inputs, costs, iters, resid = [x.copy()], [], [], [], []
    flags = []
    failed = warning = False
    for k in range(steps):
        u, res = controller.step(x, ref[k:k + p.horizon + 1])
        u = np.clip(u, p.u_min, p.u_max)
        if not res.converged:
            warning = True
        e = ref[k] - x
        costs.append(float(e @ p.Q @ e + u @ p.R_w @ u))
        iters.append(res.iterations)
        resid.append(res.residual)
        inputs.append(u)
        try:
            x = rk4_step(plant, x, u, step_index=k)
        except (DivergenceError, InvalidStateError):
            failed = True
            flags.append(f"plant-divergence@{k}")
            break
        states.append(x.copy())
    if warning:
        flags.append("qp-iteration-cap")
    states = np.array(states)
    inputs = np.array(inputs).reshape(-1, m)
    if failed:
        states = states[:len(inputs)]
        inputs = inputs[:len(states) - 1]
        costs = costs[:len(inputs)]
        iters, resid = iters[:len(inputs)], resid[:len(inputs)]
    eT = ref[len(states) - 1] - states[-1]
    return ClosedLoopResult(states, inputs, np.array(costs), float(eT @ p.Q_N @ eT),
                            np.array(iters), np.array(resid), failed, warning, flags)


def write_episode(result: ClosedLoopResult, stem, **extra) -> None:
    from pathlib import Path

    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".csv").write_text(result.episode_csv())
    stem.with_suffix(".json").write_text(json.dumps(result.summary(**extra), indent=1, sort_keys=True))
