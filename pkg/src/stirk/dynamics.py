"""Benchmark plants, fixed-step RK4 integration and dataset sampling.

All vector fields accept batched arrays: ``x`` of shape ``(..., n)`` and ``u``
of shape ``(..., m)`` (or broadcastable). The Polyflow lifting relies on this
to lift many states in one call.

Random streams
--------------
Every random draw goes through :func:`child_rng`, which builds a PCG64
generator from ``SeedSequence(seed, spawn_key=keys)``. One child stream per
trajectory index (and per noise cell) keeps parallel and serial generation
bit-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from dataclasses import field as dataclass_field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DivergenceError, InvalidStateError, SchemaError

TASKS = ("vdp-single", "vdp-multi", "cartpole")

CARTPOLE_DEFAULTS = {"m_c": 1.0, "m_p": 0.1, "l": 0.5, "g": 9.81}

# decaying-sine excitation ranges: amplitude, angular frequency, decay rate, phase
SINE_RANGES = {"a": (1.0, 20.0), "omega": (0.5, 5.0), "lam": (0.05, 0.5), "phi": (0.0, 2 * math.pi)}


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidStateError("non-finite state or input")


def vdp_field(x, u=None, mu=1.0):
    """Van der Pol vector field ``[-x2, mu*(x1**2 - 1)*x2 + x1]``; ``u`` is ignored."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    if x.shape[-1] != 2:
        raise InvalidStateError(f"Van der Pol state must have length 2, got {x.shape[-1]}")
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([-x2, mu * (-1.0 + x1 * x1) * x2 + x1], axis=-1)


def cartpole_field(x, u, m_c=1.0, m_p=0.1, l=0.5, g=9.81):
    """CartPole vector field; state is (position, angle, velocity, angular rate)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_finite(x, u)
    if x.shape[-1] != 4:
        raise InvalidStateError(f"CartPole state must have length 4, got {x.shape[-1]}")
    f = u[..., 0] if u.ndim and u.shape[-1] == 1 else u
    s, c = np.sin(x[..., 1]), np.cos(x[..., 1])
    w = x[..., 3]
    den = m_c + m_p * s * s
    acc = (f + m_p * s * (l * w * w - g * c)) / den
    alpha = (f * c + m_p * l * w * w * c * s - (m_c + m_p) * g * s) / (l * den)
    return np.stack([x[..., 2], w, acc, alpha], axis=-1)


@dataclass(frozen=True)
class SystemSpec:
    """A continuous-time plant sampled with a fixed step ``dt``."""

    name: str
    n: int
    m: int
    vector_field: Callable = dataclass_field(repr=False, compare=False)
    dt: float
    params: Mapping[str, float] = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def f(self, x, u):
        return self.vector_field(x, u, **self.params)

    def step(self, x, u):
        return rk4_step(self, x, u)

    def zero_input_map(self, x):
        """One RK4 step with ``u = 0``."""
        x = np.asarray(x, dtype=float)
        return rk4_step(self, x, np.zeros(x.shape[:-1] + (self.m,)))

    def describe(self) -> dict:
        return {"system": self.name, "dt": self.dt, "params": dict(self.params)}


def vanderpol(mu: float = 1.0, dt: float = 0.1) -> SystemSpec:
    return SystemSpec("vanderpol", 2, 1, vdp_field, dt, {"mu": mu})


def cartpole(dt: float = 0.05, **params) -> SystemSpec:
    p = dict(CARTPOLE_DEFAULTS)
    p.update(params)
    if any(v <= 0 for v in p.values()):
        raise ValueError("CartPole parameters must be positive")
    return SystemSpec("cartpole", 4, 1, cartpole_field, dt, p)


def system_from_description(desc: Mapping) -> SystemSpec:
    name = desc["system"]
    if name == "vanderpol":
        return vanderpol(dt=desc["dt"], **desc.get("params", {}))
    if name == "cartpole":
        return cartpole(dt=desc["dt"], **desc.get("params", {}))
    raise SchemaError(f"unknown system {name!r}")


def rk4_step(system: SystemSpec, x, u, step_index: int | None = None):
    """Classical RK4 step with ``u`` held constant over the interval."""
    h = system.dt
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = system.f(x, u)
    try:
        k2 = system.f(x + 0.5 * h * k1, u)
        k3 = system.f(x + 0.5 * h * k2, u)
        k4 = system.f(x + h * k3, u)
    except InvalidStateError as exc:
        raise DivergenceError(f"non-finite RK4 stage at step {step_index}", step=step_index) from exc
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite RK4 update at step {step_index}", step=step_index)
    return out


@dataclass
class Trajectory:
    """States ``(R+1, n)`` and inputs ``(R, m)`` recorded at a fixed step."""

    states: np.ndarray
    inputs: np.ndarray
    dt: float
    seed: int = 0
    noise_sigma: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(len(self.states) - 1, -1)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def steps(self) -> int:
        return len(self.inputs)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt


def simulate(system: SystemSpec, x0, inputs) -> Trajectory:
    """Roll the plant forward from ``x0`` under the given input sequence."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1, system.m)
    if len(inputs) < 1:
        raise ValueError("need at least one input")
    x = np.asarray(x0, dtype=float).reshape(system.n)
    _check_finite(x)
    states = np.empty((len(inputs) + 1, system.n))
    states[0] = x
    for k, u in enumerate(inputs):
        states[k + 1] = x = rk4_step(system, x, u, step_index=k)
    return Trajectory(states, inputs, system.dt)


def add_noise(traj: Trajectory, sigma: float, seed: int) -> Trajectory:
    """Additive i.i.d. Gaussian measurement noise on the states only."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    noisy = traj.states + sigma * rng.standard_normal(traj.states.shape)
    return replace(traj, states=noisy, inputs=traj.inputs.copy(), seed=int(seed),
                   noise_sigma=float(sigma), meta=dict(traj.meta))


def noise_levels() -> np.ndarray:
    return np.logspace(-3, -1, 10)


def decaying_sine(steps, dt, a, omega, lam, phi):
    t = np.arange(steps) * dt
    return (a * np.exp(-lam * t) * np.sin(omega * t + phi)).reshape(-1, 1)


def decaying_sine_inputs(rng: np.random.Generator, steps: int, dt: float, ranges=SINE_RANGES):
    """Exponentially decaying sine with uniformly sampled amplitude, frequency, decay and phase."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    a, omega, lam, phi = (rng.uniform(*ranges[k]) for k in ("a", "omega", "lam", "phi"))
    return decaying_sine(steps, dt, a, omega, lam, phi)


def sample_initial_conditions(task: str, count: int, rng: np.random.Generator) -> np.ndarray:
    if task == "vdp-single":
        return rng.normal(loc=[-1.0, -1.0], scale=[0.05, 0.05], size=(count, 2))
    if task == "vdp-multi":
        return rng.uniform(-1.0, 1.0, size=(count, 2))
    if task == "cartpole":
        lo = np.array([-1.0, -np.pi / 2, -0.1, -0.1])
        return rng.uniform(lo, -lo, size=(count, 4))
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


# --- trajectory files -------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(traj.n)] + [f"u{j + 1}" for j in range(traj.m)])
    for k, x in enumerate(traj.states):
        u = [repr(float(v)) for v in traj.inputs[k]] if k < traj.steps else [""] * traj.m
        w.writerow([repr(k * traj.dt)] + [repr(float(v)) for v in x] + u)
    return buf.getvalue()


def save_trajectory(traj: Trajectory, path, system: SystemSpec | None = None) -> None:
    """Write ``<path>.csv`` plus a ``<path>.json`` sidecar."""
    path = Path(path).with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.with_suffix(".csv").write_text(trajectory_to_csv(traj))
    side = {"dt": traj.dt, "seed": traj.seed, "noise_sigma": traj.noise_sigma}
    if system is not None:
        side.update(system=system.name, params=dict(system.params))
    side.update(traj.meta)
    path.with_suffix(".json").write_text(json.dumps(side, indent=1, sort_keys=True))


def load_trajectory(path) -> Trajectory:
    path = Path(path).with_suffix("")
    try:
        side = json.loads(path.with_suffix(".json").read_text())
        rows = list(csv.reader(io.StringIO(path.with_suffix(".csv").read_text())))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read trajectory {path}: {exc}") from exc
    header, body = rows[0], rows[1:]
    n = sum(h.startswith("x") for h in header)
    m = sum(h.startswith("u") for h in header)
    if not body or any(len(r) != 1 + n + m for r in body):
        raise SchemaError(f"malformed trajectory file {path}")
    states = np.array([[float(v) for v in r[1:1 + n]] for r in body])
    inputs = np.array([[float(v) for v in r[1 + n:]] for r in body[:-1]]).reshape(-1, m)
    meta = {k: v for k, v in side.items() if k not in ("dt", "seed", "noise_sigma")}
    return Trajectory(states, inputs, side["dt"], side.get("seed", 0), side.get("noise_sigma", 0.0), meta)


def generate_trajectories(system: SystemSpec, task: str, count: int, steps: int, seed: int,
                          stream: int = 0) -> list[Trajectory]:
    """Clean trajectories for ``task``; trajectory ``i`` draws from ``child_rng(seed, stream, i)``."""
    out = []
    for i in range(count):
        rng = child_rng(seed, stream, i)
        x0 = sample_initial_conditions(task, 1, rng)[0]
        if task == "cartpole":
            u = decaying_sine_inputs(rng, steps, system.dt)
        else:
            u = np.zeros((steps, system.m))
        traj = simulate(system, x0, u)
        traj.seed = seed
        traj.meta = {"index": i, "stream": stream}
        out.append(traj)
    return out


def noisy_copies(trajs: Sequence[Trajectory], sigma: float, seed: int, cell: int = 0) -> list[Trajectory]:
    """Noise each trajectory from its own child seed so order and parallelism do not matter."""
    out = []
    for i, t in enumerate(trajs):
        ss = np.random.SeedSequence(int(seed), spawn_key=(1000 + cell, i))
        noise_seed = int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
        noisy = add_noise(t, sigma, noise_seed)
        noisy.seed = seed
        noisy.meta["noise_seed"] = noise_seed
        out.append(noisy)
    return out
