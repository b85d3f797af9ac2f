"""Observable dictionaries and roll-out window datasets.

Every dictionary keeps the raw state as its leading block, so the output
matrix is the constant selector ``C = [I 0]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import SystemSpec, Trajectory, child_rng, system_from_description
from .errors import DivergenceError, SchemaError

log = logging.getLogger(__name__)

KINDS = ("polyflow", "rbf", "identity")


@dataclass(frozen=True)
class Dictionary:
    """Lifting map ``x -> z``.

    Parameters
    ----------
    kind : {"polyflow", "rbf", "identity"}
    n : int
        Original state dimension.
    order : int
        Polyflow order ``N``; the lift stacks ``x`` and ``N - 1`` zero-input iterates.
    centers : ndarray of shape (K, n)
        RBF centers.
    bandwidth : float
        RBF kernel width.
    system : SystemSpec
        Plant whose zero-input RK4 map drives the Polyflow iterates.
    """

    kind: str
    n: int
    order: int = 1
    centers: np.ndarray | None = field(default=None, compare=False)
    bandwidth: float = 1.0
    system: SystemSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dictionary kind {self.kind!r}")
        if self.kind == "polyflow":
            if self.order < 1:
                raise ValueError("Polyflow order must be >= 1")
            if self.system is None:
                raise ValueError("Polyflow dictionary needs the plant's zero-input map")
        if self.kind == "rbf":
            c = np.zeros((0, self.n)) if self.centers is None else np.asarray(self.centers, dtype=float)
            object.__setattr__(self, "centers", c.reshape(-1, self.n))
            if self.bandwidth <= 0:
                raise ValueError("RBF bandwidth must be positive")

    @property
    def lifted_dim(self) -> int:
        if self.kind == "polyflow":
            return self.n * self.order
        if self.kind == "rbf":
            return self.n + len(self.centers)
        return self.n

    def __call__(self, x):
        return lift(x, self)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.kind == "polyflow":
            d["order"] = self.order
            d["system"] = self.system.describe()
        elif self.kind == "rbf":
            d["centers"] = self.centers.tolist()
            d["bandwidth"] = self.bandwidth
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Dictionary":
        try:
            kind, n = d["kind"], int(d["n"])
            if kind == "polyflow":
                return cls(kind, n, order=int(d["order"]), system=system_from_description(d["system"]))
            if kind == "rbf":
                return cls(kind, n, centers=np.array(d["centers"], dtype=float).reshape(-1, n),
                           bandwidth=float(d["bandwidth"]))
            return cls(kind, n)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad dictionary record: {exc}") from exc


def identity_dictionary(n: int) -> Dictionary:
    return Dictionary("identity", n)


def polyflow_dictionary(system: SystemSpec, order: int = 4) -> Dictionary:
    return Dictionary("polyflow", system.n, order=order, system=system)


def rbf_dictionary(states, count: int = 100, seed: int = 0) -> Dictionary:
    """Gaussian RBF dictionary with centers uniform in the bounding box of ``states``.

    The bandwidth is the mean pairwise distance between centers.
    """
    states = np.asarray(states, dtype=float)
    n = states.shape[-1]
    states = states.reshape(-1, n)
    rng = child_rng(seed, 7)
    centers = rng.uniform(states.min(axis=0), states.max(axis=0), size=(count, n))
    if count >= 2:
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        bandwidth = dist[np.triu_indices(count, 1)].mean()
    else:
        bandwidth = 1.0
    return Dictionary("rbf", n, centers=centers, bandwidth=float(bandwidth))


def polyflow_lift(x, d: Dictionary):
    x = np.asarray(x, dtype=float)
    blocks = [x]
    for i in range(1, d.order):
        try:
            blocks.append(d.system.zero_input_map(blocks[-1]))
        except DivergenceError as exc:
            raise DivergenceError(f"Polyflow iterate {i} diverged", step=i) from exc
    return np.concatenate(blocks, axis=-1)


def rbf_lift(x, d: Dictionary):
    x = np.asarray(x, dtype=float)
    sq = ((x[..., None, :] - d.centers) ** 2).sum(-1)
    return np.concatenate([x, np.exp(-sq / (2.0 * d.bandwidth ** 2))], axis=-1)


def lift(x, d: Dictionary):
    """Apply the dictionary to states of shape ``(..., n)``."""
    if d.kind == "polyflow":
        return polyflow_lift(x, d)
    if d.kind == "rbf":
        return rbf_lift(x, d)
    return np.array(x, dtype=float)


def output_matrix(d: Dictionary) -> np.ndarray:
    C = np.zeros((d.n, d.lifted_dim))
    C[:, :d.n] = np.eye(d.n)
    return C


@dataclass
class WindowSet:
    """Stride-1 roll-out windows cut from individual trajectories.

    ``states`` has shape ``(W, R_max + 1, n)``, ``inputs`` ``(W, R_max, m)`` and
    ``lifted`` ``(W, R_max + 1, N_phi)``. ``origin`` holds ``(trajectory id, offset)``.
    """

    states: np.ndarray
    inputs: np.ndarray
    lifted: np.ndarray
    origin: np.ndarray
    r_max: int
    dictionary: Dictionary
    skipped: int = 0

    def __len__(self):
        return len(self.states)

    def time_major(self):
        """Cached ``(lifted, inputs)`` transposed to ``(time, window, dim)``."""
        tm = self.__dict__.get("_tm")
        if tm is None:
            tm = (np.ascontiguousarray(self.lifted.transpose(1, 0, 2)),
                  np.ascontiguousarray(self.inputs.transpose(1, 0, 2)))
            self.__dict__["_tm"] = tm
        return tm

    def subset(self, idx) -> "WindowBatch":
        idx = np.asarray(idx)
        if len(idx) == len(self) and np.array_equal(np.sort(idx), np.arange(len(self))):
            # the loss is a sum over windows, so a full permutation needs no copy
            return WindowBatch(*self.time_major(), self.r_max, self.dictionary, self.origin)
        Y, U = self.time_major()
        return WindowBatch(Y[:, idx], U[:, idx], self.r_max, self.dictionary, self.origin[idx])


@dataclass
class WindowBatch:
    """Minibatch view used by the trainer; stores only time-major arrays."""

    Y_tm: np.ndarray
    U_tm: np.ndarray
    r_max: int
    dictionary: Dictionary
    origin: np.ndarray

    def __len__(self):
        return self.Y_tm.shape[1]

    def time_major(self):
        return self.Y_tm, self.U_tm

    @property
    def lifted(self):
        return self.Y_tm.transpose(1, 0, 2)

    @property
    def inputs(self):
        return self.U_tm.transpose(1, 0, 2)


def make_windows(trajectories: Sequence[Trajectory], r_max: int, dictionary: Dictionary) -> WindowSet:
    """Cut every trajectory into sliding windows of ``r_max + 1`` states.

    Trajectories shorter than ``r_max + 1`` are skipped (counted in ``skipped``).
    Each trajectory is lifted once and windows index into the lifted array.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    s_list, u_list, z_list, origin = [], [], [], []
    skipped = 0
    offsets = np.arange(r_max + 1)
    for tid, traj in enumerate(trajectories):
        count = len(traj.states) - r_max
        if count < 1:
            skipped += 1
            continue
        z = lift(traj.states, dictionary)
        starts = np.arange(count)
        s_list.append(traj.states[starts[:, None] + offsets])
        z_list.append(z[starts[:, None] + offsets])
        u_list.append(traj.inputs[starts[:, None] + offsets[:-1]])
        origin.append(np.stack([np.full(count, tid), starts], axis=1))
    if skipped:
        log.warning("skipped %d trajectories shorter than %d states", skipped, r_max + 1)
    if not s_list:
        n, m = (trajectories[0].n, trajectories[0].m) if trajectories else (dictionary.n, 1)
        return WindowSet(np.zeros((0, r_max + 1, n)), np.zeros((0, r_max, m)),
                         np.zeros((0, r_max + 1, dictionary.lifted_dim)), np.zeros((0, 2), int),
                         r_max, dictionary, skipped)
    return WindowSet(np.concatenate(s_list), np.concatenate(u_list), np.concatenate(z_list),
                     np.concatenate(origin), r_max, dictionary, skipped)
