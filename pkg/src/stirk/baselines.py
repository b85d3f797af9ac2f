"""One-step least-squares baselines (DMD and eDMD with control) and trajectory evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import Trajectory
from .lifting import Dictionary, identity_dictionary, lift, output_matrix
from .operator import KoopmanModel, rollout_predict
from .training import mse_per_timestep, normalized_error

RCOND = 1e-10


@dataclass
class SnapshotPairs:
    """Lifted pairs ``(z, z+)`` with the input applied in between."""

    Z: np.ndarray
    Z_next: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        if not len(self.Z) == len(self.Z_next) == len(self.U):
            raise ValueError("snapshot arrays must have equal row counts")

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory], dictionary: Dictionary, inputs=True):
        Z, Zn, U = [], [], []
        for t in trajectories:
            z = lift(t.states, dictionary)
            Z.append(z[:-1])
            Zn.append(z[1:])
            U.append(t.inputs if inputs else np.zeros((t.steps, 0)))
        return cls(np.concatenate(Z), np.concatenate(Zn), np.concatenate(U))


@dataclass
class FitInfo:
    rank: int
    singular_values: np.ndarray = field(repr=False)


def lstsq_svd(Theta, Y, rcond=RCOND):
    """Minimum-norm least squares via a truncated SVD."""
    Uo, s, Vt = np.linalg.svd(Theta, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((Theta.shape[1], Y.shape[1])), FitInfo(0, s)
    keep = s > rcond * s[0]
    G = Vt[keep].T @ ((Uo[:, keep].T @ Y) / s[keep, None])
    return G, FitInfo(int(keep.sum()), s)


def edmd_fit(pairs: SnapshotPairs, return_info=False):
    """Minimize ``sum ||z+ - A z - B u||^2`` over ``(A, B)``."""
    N = pairs.Z.shape[1]
    Theta = np.hstack([pairs.Z, pairs.U])
    G, info = lstsq_svd(Theta, pairs.Z_next)
    A, B = G[:N].T.copy(), G[N:].T.copy()
    return (A, B, info) if return_info else (A, B)


def dmd_fit(X, X_next) -> np.ndarray:
    """Autonomous DMD: eDMD with the identity lift and no inputs."""
    X = np.asarray(X, dtype=float)
    A, _ = edmd_fit(SnapshotPairs(X, np.asarray(X_next, dtype=float), np.zeros((len(X), 0))))
    return A


def fit_edmd_model(trajectories, dictionary: Dictionary, method="edmd") -> KoopmanModel:
    """Fit a baseline model; ``method='dmd'`` ignores inputs and uses the identity lift."""
    if method == "dmd":
        d = identity_dictionary(trajectories[0].n)
        pairs = SnapshotPairs.from_trajectories(trajectories, d, inputs=False)
        A = dmd_fit(pairs.Z, pairs.Z_next)
        B = np.zeros((d.n, trajectories[0].m))
    else:
        d = dictionary
        pairs = SnapshotPairs.from_trajectories(trajectories, d)
        A, B = edmd_fit(pairs)
    return KoopmanModel(A, B, output_matrix(d), d, trajectories[0].dt, {"method": method})


def predict_trajectory(model: KoopmanModel, truth: Trajectory, x0=None):
    """Predicted states ``x_1..x_T`` from ``x0`` (default: the first recorded state)."""
    x0 = truth.states[0] if x0 is None else x0
    return rollout_predict(model, x0, truth.inputs)[1]


def evaluate_baseline(model: KoopmanModel, trajectories: Sequence[Trajectory], initial_states=None):
    """Normalized error of full-horizon roll-outs against each trajectory.

    ``trajectories`` are the ground truth; ``initial_states`` optionally gives
    the state each roll-out starts from. The compared matrices cover
    ``x_0..x_T`` with the roll-out's own starting state in the first row.
    Returns ``(errors, mse)`` where ``mse`` has one row per trajectory.
    Blow-ups become NaN.
    """
    errs, mses = [], []
    for i, t in enumerate(trajectories):
        x0 = t.states[0] if initial_states is None else np.asarray(initial_states[i], dtype=float)
        X_hat = np.vstack([x0[None], predict_trajectory(model, t, x0)])
        errs.append(normalized_error(X_hat, t.states))
        with np.errstate(over="ignore", invalid="ignore"):
            mses.append(mse_per_timestep(X_hat, t.states))
    return np.array(errs), np.array(mses)
