"""Closed-loop data collection, dataset augmentation and retraining rounds."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import SystemSpec, Trajectory, add_noise, child_rng, sample_initial_conditions
from .lifting import make_windows
from .mpc import ClosedLoopResult, KoopmanMPC, closed_loop
from .operator import KoopmanModel
from .training import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlTask:
    """Input-bound setting an MPC episode runs under."""

    name: str
    u_min: float
    u_max: float

    def to_dict(self):
        return dataclasses.asdict(self)


SEEN_TASK = ControlTask("seen", -20.0, 20.0)
UNSEEN_TASK = ControlTask("unseen", -10.0, 10.0)


@dataclass
class MPCSettings:
    horizon: int = 20
    steps: int = 200
    R_w: float = 0.0
    warm_start: bool = True
    success_tol: float = 0.1
    angle_index: int = 1


@dataclass
class IterateSpec:
    """Outer-loop settings.

    ``rounds`` counts trained models, so ``rounds=3`` means the base model plus
    two augmentation rounds. ``cost_threshold`` keeps only collected episodes
    whose realized cost exceeds it (``None`` keeps all).
    """

    rounds: int = 3
    collect_count: int = 20
    eval_count: int = 20
    noise_sigma: float = 0.1
    cost_threshold: float | None = None
    collect_on_eval_ics: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass
class EpisodeRecord:
    ic_index: int
    x0: np.ndarray
    task: str
    cost: float
    success: bool
    failed: bool
    flags: list


@dataclass
class IterationRound:
    index: int
    model: KoopmanModel
    collected: list = field(default_factory=list)
    evaluation: dict = field(default_factory=dict)   # task name -> list[EpisodeRecord]
    n_windows: int = 0
    history: object = None

    def mean_cost(self, task: str) -> float:
        recs = self.evaluation.get(task, [])
        return float(np.mean([r.cost for r in recs])) if recs else float("nan")

    def failure_count(self, task: str = "seen") -> int:
        return sum(not r.success for r in self.evaluation.get(task, []))

    def summary(self) -> dict:
        return {"round": self.index, "n_windows": self.n_windows,
                "mean_cost_seen": self.mean_cost(SEEN_TASK.name),
                "mean_cost_unseen": self.mean_cost(UNSEEN_TASK.name),
                "failure_count": self.failure_count(SEEN_TASK.name)}

    def cost_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "task", "ic", "cost", "success", "failed"])
        for task, recs in self.evaluation.items():
            for r in recs:
                w.writerow([self.index, task, r.ic_index, repr(r.cost), int(r.success), int(r.failed)])
        return buf.getvalue()


def _episode(args):
    model, plant, x0, task, settings = args
    ctrl = KoopmanMPC(model, settings.horizon, R_w=settings.R_w, u_min=task.u_min, u_max=task.u_max,
                      warm_start=settings.warm_start)
    return closed_loop(plant, ctrl, x0, settings.steps)


def run_episodes(model: KoopmanModel, plant: SystemSpec, ics, task: ControlTask,
                 settings: MPCSettings | None = None, workers: int = 1) -> list[ClosedLoopResult]:
    """Closed-loop episodes from each initial condition; order matches ``ics``."""
    settings = settings or MPCSettings()
    jobs = [(model, plant, np.asarray(x0, dtype=float), task, settings) for x0 in ics]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_episode, jobs))
    return [_episode(j) for j in jobs]


def _records(results, ics, task, settings):
    return [EpisodeRecord(i, np.asarray(x0), task.name, r.total_cost,
                          r.success(settings.angle_index, settings.success_tol), r.failed, list(r.flags))
            for i, (r, x0) in enumerate(zip(results, ics))]


def collect_closed_loop(model: KoopmanModel, plant: SystemSpec, ics, task: ControlTask,
                        noise_sigma: float, seed: int, round_index: int = 0,
                        settings: MPCSettings | None = None, workers: int = 1):
    """Run one episode per IC and turn each into a measured training trajectory.

    Returns ``(trajectories, records)``. Measurement noise uses its own child
    seed per episode; diverged episodes are kept truncated with ``meta['failed']``.
    """
    settings = settings or MPCSettings()
    results = run_episodes(model, plant, ics, task, settings, workers)
    records = _records(results, ics, task, settings)
    trajs = []
    for i, (res, rec) in enumerate(zip(results, records)):
        clean = Trajectory(res.states, res.inputs, plant.dt, seed=seed)
        noise_seed = int(np.random.SeedSequence(seed, spawn_key=(2000 + round_index, i)).generate_state(1)[0])
        t = add_noise(clean, noise_sigma, noise_seed) if noise_sigma > 0 else clean
        t.seed = seed
        t.meta = {"round": round_index, "ic_index": i, "x0": rec.x0.tolist(), "task": task.to_dict(),
                  "cost": rec.cost, "failed": rec.failed, "noise_seed": noise_seed}
        trajs.append(t)
    return trajs, records


def augment_and_retrain(train_set: Sequence[Trajectory], val_set: Sequence[Trajectory],
                        new_trajectories: Sequence[Trajectory], config: TrainConfig, dictionary,
                        round_index: int = 1, cost_threshold: float | None = None):
    """Retrain from a fresh initialization on ``train_set`` plus the collected trajectories.

    Every round reuses ``config.seed``, so rounds share the initial parameters
    and differ only in their data.

    Returns ``(model, history, union, windows)``.
    """
    extra = [t for t in new_trajectories
             if cost_threshold is None or t.meta.get("cost", np.inf) > cost_threshold]
    union = list(train_set) + extra
    windows = make_windows(union, config.r_max, dictionary)
    val = make_windows(val_set, config.r_max, dictionary) if val_set else None
    model, history = train(config, windows, val)
    model.provenance["round"] = round_index
    return model, history, union, windows


def evaluation_ics(seed: int, count: int, task: str = "cartpole") -> np.ndarray:
    return sample_initial_conditions(task, count, child_rng(seed, 29))


def collection_ics(seed: int, round_index: int, count: int, task: str = "cartpole") -> np.ndarray:
    return sample_initial_conditions(task, count, child_rng(seed, 31, round_index))


def iterate(train_set, val_set, config: TrainConfig, plant: SystemSpec, dictionary,
            spec: IterateSpec | None = None, settings: MPCSettings | None = None,
            seed: int | None = None, workers: int = 1, eval_ics=None, tasks=(SEEN_TASK, UNSEEN_TASK),
            callback=None) -> list[IterationRound]:
    """Base training followed by ``spec.rounds - 1`` collect/augment/retrain rounds.

    Every round's model is evaluated on the same ICs under each task. Collection
    always runs on the seen task with the previous round's model.
    """
    spec = spec or IterateSpec()
    settings = settings or MPCSettings()
    seed = config.seed if seed is None else seed
    eval_ics = evaluation_ics(seed, spec.eval_count) if eval_ics is None else np.asarray(eval_ics)
    rounds = []
    data = list(train_set)
    val = make_windows(val_set, config.r_max, dictionary) if val_set else None
    windows = make_windows(data, config.r_max, dictionary)
    model, history = train(config, windows, val)
    model.provenance["round"] = 0
    collected = []
    for r in range(spec.rounds):
        if r > 0:
            ics = eval_ics if spec.collect_on_eval_ics else collection_ics(seed, r, spec.collect_count)
            new, _ = collect_closed_loop(rounds[-1].model, plant, ics, SEEN_TASK, spec.noise_sigma, seed, r,
                                         settings, workers)
            collected = new
            model, history, data, windows = augment_and_retrain(data, val_set, new, config, dictionary, r,
                                                                spec.cost_threshold)
        rnd = IterationRound(r, model, collected, {}, len(windows), history)
        for task in tasks:
            res = run_episodes(model, plant, eval_ics, task, settings, workers)
            rnd.evaluation[task.name] = _records(res, eval_ics, task, settings)
        log.info("round %d: %s", r, rnd.summary())
        rounds.append(rnd)
        if callback is not None:
            callback(rnd)
    return rounds
