"""Declarative experiment configs and the runners behind the CLI commands.

Every random draw descends from the master seed through per-cell child seeds,
so a cell computed in a worker process matches the serial result bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import iterative as it
from .baselines import evaluate_baseline, fit_edmd_model
from .dynamics import (TASKS, cartpole, generate_trajectories, load_trajectory, noise_levels,
                       noisy_copies, save_trajectory, vanderpol)
from .errors import ConfigError
from .lifting import Dictionary, make_windows, polyflow_dictionary, rbf_dictionary
from .operator import deserialize_model, serialize_model
from .training import TrainConfig, config_hash, train

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("dis-pf", "std-pf", "edmd-pf", "edmd-rbf", "dmd")
HEADLINE_NOISE_INDICES = (0, 8, 9)   # 0.001, 0.0599, 0.1 on the logspace grid


@dataclass
class DatasetSpec:
    """Trajectory generation.

    ``noise_indices`` index into ``noise_levels()`` (ten log-spaced levels from
    1e-3 to 1e-1). Seeds are ``seed + k`` for ``k < seed_count``.
    """

    count: int = 50
    steps: int = 100
    dt: float = 0.1
    noise_indices: list = field(default_factory=lambda: list(HEADLINE_NOISE_INDICES))
    seed_count: int = 10
    val_fraction: float = 0.1
    test_count: int = 20


@dataclass
class DictionarySpec:
    kind: str = "polyflow"
    order: int = 4
    rbf_count: int = 100


@dataclass
class MPCSpec:
    horizon: int = 20
    steps: int = 200
    u_min: float = -20.0
    u_max: float = 20.0
    R_w: float = 0.0
    ic_count: int = 20
    warm_start: bool = True


@dataclass
class IterSpec:
    rounds: int = 3
    collect_count: int = 20
    noise_sigma: float = 0.1
    cost_threshold: float | None = None
    collect_on_eval_ics: bool = False


@dataclass
class ExperimentConfig:
    task: str = "vdp-multi"
    seed: int = 0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    dictionary: DictionarySpec = field(default_factory=DictionarySpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    mpc: MPCSpec = field(default_factory=MPCSpec)
    iterate: IterSpec = field(default_factory=IterSpec)
    methods: list = field(default_factory=lambda: ["dis-pf", "edmd-pf"])
    output_dir: str = "runs/out"
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return config_hash(self.to_dict())

    @property
    def seeds(self) -> list:
        return [self.seed + k for k in range(self.dataset.seed_count)]

    def system(self):
        if self.task == "cartpole":
            return cartpole(dt=self.dataset.dt)
        return vanderpol(dt=self.dataset.dt)


def default_config(task: str) -> ExperimentConfig:
    """Protocol defaults for a task at the reduced desk-scale budget."""
    if task == "cartpole":
        return ExperimentConfig(
            task=task,
            dataset=DatasetSpec(count=50, steps=200, dt=0.05, noise_indices=[9], seed_count=1),
            train=TrainConfig(epochs=2000, batch_size=2000, base_lr=0.001, lr_schedule="constant",
                              curriculum_period=300, r_max=32, optimizer_switch_epoch=None),
            methods=["dis-pf"])
    if task == "vdp-single":
        return ExperimentConfig(
            task=task,
            dataset=DatasetSpec(count=1, steps=100, dt=0.1, noise_indices=list(range(10)), seed_count=10,
                                val_fraction=0.0, test_count=0),
            methods=["dis-pf", "edmd-pf", "dmd"])
    if task == "vdp-multi":
        return ExperimentConfig(task=task)
    raise ConfigError("task", f"unknown task {task!r}; expected one of {list(TASKS)}")


# --- parsing and validation ---------------------------------------------------------

def _check_type(value, default, path, optional=False):
    """Reject values whose JSON type differs from the field's default."""
    if value is None:
        if not (optional or default is None):
            raise ConfigError(path, "must not be null")
        return
    if default is None:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(path, f"expected a number or null, got {type(value).__name__}")
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = _is_int(value)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(path, f"expected {type(default).__name__}, got {type(value).__name__}")


def _build(cls, data, path, defaults=None):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    kwargs = {}
    for key, value in data.items():
        if defaults is not None and key in defaults:
            _check_type(value, defaults[key], f"{path}.{key}" if path else key, "None" in str(names[key].type))
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "config", str(exc)) from exc


def _check(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a raw JSON object; errors name the offending field path."""
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    task = data.get("task", "vdp-multi")
    _check(task in TASKS, "task", f"unknown task {task!r}; expected one of {list(TASKS)}")
    base = default_config(task)
    version = data.get("schema_version", SCHEMA_VERSION)
    _check(version == SCHEMA_VERSION, "schema_version", f"unsupported version {version!r}")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in data:
        _check(key in top, key, "unknown field")

    def merged(name, cls):
        raw = data.get(name, {})
        _check(isinstance(raw, dict), name, "expected an object")
        d = dataclasses.asdict(getattr(base, name))
        defaults = dict(d)
        d.update(raw)
        return _build(cls, d, name, defaults)

    cfg = ExperimentConfig(
        task=task,
        seed=data.get("seed", base.seed),
        dataset=merged("dataset", DatasetSpec),
        dictionary=merged("dictionary", DictionarySpec),
        train=merged("train", TrainConfig),
        mpc=merged("mpc", MPCSpec),
        iterate=merged("iterate", IterSpec),
        methods=data.get("methods", base.methods),
        output_dir=data.get("output_dir", base.output_dir),
    )
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    _check(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    ds = cfg.dataset
    _check(_is_int(ds.count) and ds.count >= 1, "dataset.count", "must be a positive integer")
    _check(_is_int(ds.steps) and ds.steps >= 1, "dataset.steps", "must be a positive integer")
    _check(isinstance(ds.dt, (int, float)) and ds.dt > 0, "dataset.dt", "must be positive")
    _check(isinstance(ds.noise_indices, list) and ds.noise_indices, "dataset.noise_indices", "must be a non-empty list")
    for i, k in enumerate(ds.noise_indices):
        _check(_is_int(k) and 0 <= k < 10, f"dataset.noise_indices[{i}]", "must be an integer in 0..9")
    _check(_is_int(ds.seed_count) and ds.seed_count >= 1, "dataset.seed_count", "must be a positive integer")
    _check(0.0 <= ds.val_fraction < 1.0, "dataset.val_fraction", "must be in [0, 1)")
    _check(_is_int(ds.test_count) and ds.test_count >= 0, "dataset.test_count", "must be a non-negative integer")
    d = cfg.dictionary
    _check(d.kind in ("polyflow", "rbf", "identity"), "dictionary.kind", f"unknown kind {d.kind!r}")
    _check(_is_int(d.order) and d.order >= 1, "dictionary.order", "must be a positive integer")
    _check(_is_int(d.rbf_count) and d.rbf_count >= 1, "dictionary.rbf_count", "must be a positive integer")
    _check(cfg.train.r_max <= ds.steps, "train.r_max", f"exceeds dataset.steps ({ds.steps})")
    _check(cfg.train.polyflow_order == d.order or d.kind != "polyflow", "train.polyflow_order",
           "must match dictionary.order")
    m = cfg.mpc
    _check(_is_int(m.horizon) and m.horizon >= 1, "mpc.horizon", "must be a positive integer")
    _check(_is_int(m.steps) and m.steps >= 1, "mpc.steps", "must be a positive integer")
    _check(m.u_min <= m.u_max, "mpc.u_min", "must not exceed mpc.u_max")
    _check(m.R_w >= 0, "mpc.R_w", "must be non-negative")
    _check(_is_int(m.ic_count) and m.ic_count >= 1, "mpc.ic_count", "must be a positive integer")
    _check(_is_int(cfg.iterate.rounds) and cfg.iterate.rounds >= 1, "iterate.rounds", "must be >= 1")
    _check(isinstance(cfg.methods, list) and cfg.methods, "methods", "must be a non-empty list")
    for i, name in enumerate(cfg.methods):
        _check(name in METHODS, f"methods[{i}]", f"unknown method {name!r}; expected one of {list(METHODS)}")


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    cfg = config_from_dict(raw)
    if seed_override is not None:
        cfg.seed = seed_override
    cfg.train.seed = cfg.seed
    return cfg


# --- data cells ---------------------------------------------------------------------

@dataclass
class Cell:
    """Data for one (seed, noise level) combination."""

    seed: int
    noise_index: int
    clean: list
    noisy: list
    test: list

    @property
    def sigma(self) -> float:
        return float(noise_levels()[self.noise_index])

    def split(self, val_fraction: float):
        n_val = int(round(val_fraction * len(self.noisy)))
        if n_val == 0:
            return self.noisy, [], self.clean
        return self.noisy[:-n_val], self.noisy[-n_val:], self.clean[:-n_val]


def make_cell(cfg: ExperimentConfig, seed: int, noise_index: int) -> Cell:
    sysm = cfg.system()
    clean = generate_trajectories(sysm, cfg.task, cfg.dataset.count, cfg.dataset.steps, seed, stream=0)
    noisy = noisy_copies(clean, float(noise_levels()[noise_index]), seed, cell=noise_index)
    test = generate_trajectories(sysm, cfg.task, cfg.dataset.test_count, cfg.dataset.steps, seed, stream=1)
    return Cell(seed, noise_index, clean, noisy, test)


def make_dictionary(cfg: ExperimentConfig, train_states=None, seed: int = 0, kind: str | None = None) -> Dictionary:
    kind = kind or cfg.dictionary.kind
    if kind == "polyflow":
        return polyflow_dictionary(cfg.system(), cfg.dictionary.order)
    if kind == "rbf":
        return rbf_dictionary(train_states, cfg.dictionary.rbf_count, seed)
    from .lifting import identity_dictionary
    return identity_dictionary(cfg.system().n)


def cell_tag(seed, noise_index) -> str:
    return f"seed{seed:03d}_noise{noise_index}"


def _meta(cfg, seed, **extra) -> dict:
    return {"config_hash": cfg.digest(), "seed": seed, **extra}


def _csv(rows, header, meta=None) -> str:
    buf = io.StringIO()
    if meta is not None:
        buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# --- generate -----------------------------------------------------------------------

def run_generate(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict:
    """Write the noisy training trajectories for every (seed, noise) cell."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sysm = cfg.system()
    count = 0
    for seed in cfg.seeds:
        for k in cfg.dataset.noise_indices:
            cell = make_cell(cfg, seed, k)
            for i, t in enumerate(cell.noisy):
                t.meta = {**t.meta, "config_hash": cfg.digest(), "noise_index": k}
                save_trajectory(t, out / "data" / cell_tag(seed, k) / f"traj{i:03d}", sysm)
                count += 1
    return {"trajectory_files": count}


def _load_cell(cfg, seed, k, data_dir: Path | None):
    cell = make_cell(cfg, seed, k)
    if data_dir is not None:
        d = data_dir / cell_tag(seed, k)
        if d.is_dir():
            files = sorted(d.glob("traj*.csv"))
            if len(files) == len(cell.noisy):
                cell.noisy = [load_trajectory(f) for f in files]
    return cell


# --- train / evaluate ---------------------------------------------------------------

def _train_cell(args):
    cfg, seed, k, parameterization, data_dir = args
    cell = _load_cell(cfg, seed, k, data_dir)
    train_set, val_set, _ = cell.split(cfg.dataset.val_fraction)
    tc = dataclasses.replace(cfg.train, seed=seed, parameterization=parameterization)
    d = make_dictionary(cfg, seed=seed)
    model, history = train(tc, make_windows(train_set, tc.r_max, d),
                           make_windows(val_set, tc.r_max, d) if val_set else None)
    model.provenance["noise_index"] = k
    return seed, k, model, history


def run_train(cfg: ExperimentConfig, out: Path, workers: int = 1, parameterization=None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    par = parameterization or cfg.train.parameterization
    data_dir = out / "data"
    jobs = [(cfg, s, k, par, data_dir if data_dir.is_dir() else None)
            for s in cfg.seeds for k in cfg.dataset.noise_indices]
    for seed, k, model, history in _map(_train_cell, jobs, workers):
        tag = cell_tag(seed, k)
        serialize_model(model, out / "models" / f"{par}_{tag}.json")
        (out / "histories").mkdir(parents=True, exist_ok=True)
        (out / "histories" / f"{par}_{tag}.csv").write_text(history.to_csv(_meta(cfg, seed, noise_index=k)))
    return {"models": len(jobs)}


def trajectory_errors(model, truths):
    """Mean normalized error and mean per-step MSE of roll-outs from the clean ICs."""
    if not truths:
        return float("nan"), np.zeros(0)
    errs, mse = evaluate_baseline(model, truths)
    return float(np.mean(errs)), np.mean(mse, axis=0)


def _fit_method(cfg, method, cell, train_set, val_set, seed, models_dir):
    par = {"dis-pf": "dissipative", "std-pf": "standard"}.get(method)
    if par is not None:
        path = None if models_dir is None else models_dir / f"{par}_{cell_tag(seed, cell.noise_index)}.json"
        if path is not None and path.exists():
            return deserialize_model(path)
        tc = dataclasses.replace(cfg.train, seed=seed, parameterization=par)
        d = make_dictionary(cfg, seed=seed, kind="polyflow")
        model, _ = train(tc, make_windows(train_set, tc.r_max, d),
                         make_windows(val_set, tc.r_max, d) if val_set else None)
        return model
    if method == "edmd-pf":
        return fit_edmd_model(train_set + val_set, make_dictionary(cfg, seed=seed, kind="polyflow"))
    if method == "edmd-rbf":
        states = np.concatenate([t.states for t in train_set + val_set])
        return fit_edmd_model(train_set + val_set, make_dictionary(cfg, states, seed, kind="rbf"))
    return fit_edmd_model(train_set + val_set, None, method="dmd")


def _evaluate_cell(args):
    cfg, seed, k, methods, models_dir, data_dir = args
    cell = _load_cell(cfg, seed, k, data_dir)
    train_set, val_set, train_clean = cell.split(cfg.dataset.val_fraction)
    rows, mse_rows = [], []
    for method in methods:
        t0 = time.perf_counter()
        model = _fit_method(cfg, method, cell, train_set, val_set, seed, models_dir)
        fit_time = time.perf_counter() - t0
        tr_err, tr_mse = trajectory_errors(model, train_clean)
        te_err, _ = trajectory_errors(model, cell.test)
        rows.append((method, k, cell.sigma, seed, tr_err, te_err, fit_time))
        mse_rows.extend((method, k, seed, step, float(v)) for step, v in enumerate(tr_mse))
    return rows, mse_rows


def run_evaluate(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict:
    """Per-seed errors, method-by-noise means and per-step MSE curves."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    models_dir = out / "models" if (out / "models").is_dir() else None
    data_dir = out / "data" if (out / "data").is_dir() else None
    jobs = [(cfg, s, k, list(cfg.methods), models_dir, data_dir) for s in cfg.seeds for k in cfg.dataset.noise_indices]
    rows, mse_rows = [], []
    for r, m in _map(_evaluate_cell, jobs, workers):
        rows.extend(r)
        mse_rows.extend(m)
    meta = _meta(cfg, cfg.seed, seeds=cfg.seeds)
    header = ["method", "noise_index", "noise_sigma", "seed", "train_error", "test_error", "fit_time_s"]
    (out / "per_seed_errors.csv").write_text(_csv(rows, header, meta))
    (out / "mse_per_step.csv").write_text(_csv(mse_rows, ["method", "noise_index", "seed", "step", "mse"], meta))
    table = summarize(rows)
    (out / "summary.csv").write_text(_csv(table, ["method", "noise_sigma", "mean_train_error", "mean_test_error"], meta))
    return {"rows": len(rows), "summary": [list(r) for r in table]}


def summarize(rows):
    """Mean train/test error per (method, noise); any NaN seed makes the cell NaN."""
    groups = {}
    for method, _, sigma, _, tr, te, _ in rows:
        groups.setdefault((method, sigma), []).append((tr, te))
    out = []
    for (method, sigma), vals in groups.items():
        v = np.array(vals, dtype=float)
        out.append((method, sigma, float(v[:, 0].mean()), float(v[:, 1].mean())))
    return out


# --- MPC and iteration --------------------------------------------------------------

def cartpole_model(cfg: ExperimentConfig, out: Path | None = None):
    """The trained model for the first seed and noise cell (loaded when already on disk)."""
    seed, k = cfg.seeds[0], cfg.dataset.noise_indices[0]
    par = cfg.train.parameterization
    if out is not None:
        path = out / "models" / f"{par}_{cell_tag(seed, k)}.json"
        if path.exists():
            return deserialize_model(path)
    data_dir = out / "data" if out is not None and (out / "data").is_dir() else None
    _, _, model, _ = _train_cell((cfg, seed, k, par, data_dir))
    return model


def mpc_settings(cfg: ExperimentConfig) -> it.MPCSettings:
    return it.MPCSettings(horizon=cfg.mpc.horizon, steps=cfg.mpc.steps, R_w=cfg.mpc.R_w,
                          warm_start=cfg.mpc.warm_start)


def run_mpc(cfg: ExperimentConfig, out: Path, workers: int = 1, model=None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = model if model is not None else cartpole_model(cfg, out)
    plant = cfg.system()
    ics = it.evaluation_ics(cfg.seed, cfg.mpc.ic_count, cfg.task)
    task = it.ControlTask("configured", cfg.mpc.u_min, cfg.mpc.u_max)
    results = it.run_episodes(model, plant, ics, task, mpc_settings(cfg), workers)
    meta = _meta(cfg, cfg.seed)
    rows = []
    for i, (x0, r) in enumerate(zip(ics, results)):
        stem = out / "episodes" / f"ic{i:03d}"
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".csv").write_text("# " + json.dumps(meta, sort_keys=True) + "\n" + r.episode_csv())
        stem.with_suffix(".json").write_text(json.dumps(r.summary(ic=x0.tolist(), **meta), indent=1, sort_keys=True))
        rows.append((i, r.total_cost, int(r.success()), int(r.failed), int(r.solver_warning)))
    (out / "mpc_costs.csv").write_text(_csv(rows, ["ic", "cost", "success", "failed", "solver_warning"], meta))
    success = sum(r[2] for r in rows)
    summary = {"success_count": success, "episodes": len(rows), "success_rate": success / len(rows),
               "mean_cost": float(np.mean([r[1] for r in rows])), **meta}
    (out / "mpc_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def run_iterate(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed, k = cfg.seeds[0], cfg.dataset.noise_indices[0]
    data_dir = out / "data" if (out / "data").is_dir() else None
    cell = _load_cell(cfg, seed, k, data_dir)
    train_set, val_set, _ = cell.split(cfg.dataset.val_fraction)
    spec = it.IterateSpec(rounds=cfg.iterate.rounds, collect_count=cfg.iterate.collect_count,
                          eval_count=cfg.mpc.ic_count, noise_sigma=cfg.iterate.noise_sigma,
                          cost_threshold=cfg.iterate.cost_threshold,
                          collect_on_eval_ics=cfg.iterate.collect_on_eval_ics)
    meta = _meta(cfg, seed)
    d = make_dictionary(cfg, seed=seed)
    tc = dataclasses.replace(cfg.train, seed=seed)
    summaries = []

    def record(rnd):
        s = {**rnd.summary(), **meta}
        summaries.append(s)
        (out / "rounds").mkdir(parents=True, exist_ok=True)
        (out / "rounds" / f"round{rnd.index}.json").write_text(json.dumps(s, indent=1, sort_keys=True))
        (out / "rounds" / f"round{rnd.index}_costs.csv").write_text(
            "# " + json.dumps(meta, sort_keys=True) + "\n" + rnd.cost_csv())
        serialize_model(rnd.model, out / "rounds" / f"round{rnd.index}_model.json")
        for t in rnd.collected:
            t.meta = {**t.meta, "config_hash": cfg.digest()}
            save_trajectory(t, out / "rounds" / f"round{rnd.index}_collected" / f"traj{t.meta['ic_index']:03d}",
                            cfg.system())

    it.iterate(train_set, val_set, tc, cfg.system(), d, spec, mpc_settings(cfg), seed, workers,
               callback=record)
    return {"rounds": summaries}


# --- ablation -----------------------------------------------------------------------

ABLATION_AXES = {
    "parameterization": ("dissipative", "standard"),
    "lr_schedule": ("constant", "cyclic"),
    "optimizer": ("adam", "adam+lbfgs"),
    "rollout_schedule": ("constant", "progressive"),
}


def ablation_grid():
    keys = list(ABLATION_AXES)
    combos = [[]]
    for k in keys:
        combos = [c + [v] for c in combos for v in ABLATION_AXES[k]]
    return [dict(zip(keys, c)) for c in combos]


def _ablation_cell(args):
    cfg, seed, k, combo = args
    cell = make_cell(cfg, seed, k)
    train_set, val_set, train_clean = cell.split(cfg.dataset.val_fraction)
    switch = cfg.train.optimizer_switch_epoch if combo["optimizer"] == "adam+lbfgs" else None
    if combo["optimizer"] == "adam+lbfgs" and switch is None:
        switch = max(0, cfg.train.epochs - max(1, cfg.train.epochs // 15))
    tc = dataclasses.replace(cfg.train, seed=seed, parameterization=combo["parameterization"],
                             lr_schedule=combo["lr_schedule"], rollout_schedule=combo["rollout_schedule"],
                             optimizer_switch_epoch=switch)
    d = make_dictionary(cfg, seed=seed, kind="polyflow")
    t0 = time.perf_counter()
    model, _ = train(tc, make_windows(train_set, tc.r_max, d), make_windows(val_set, tc.r_max, d) if val_set else None)
    wall = time.perf_counter() - t0
    tr, _ = trajectory_errors(model, train_clean)
    te, _ = trajectory_errors(model, cell.test)
    return (k, cell.sigma, seed, combo["parameterization"], combo["lr_schedule"], combo["optimizer"],
            combo["rollout_schedule"], tr, te, wall)


def run_ablation(cfg: ExperimentConfig, out: Path, workers: int = 1) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s, k, combo) for k in cfg.dataset.noise_indices for s in cfg.seeds for combo in ablation_grid()]
    rows = _map(_ablation_cell, jobs, workers)
    header = ["noise_index", "noise_sigma", "seed", "parameterization", "lr_schedule", "optimizer",
              "rollout_schedule", "train_error", "test_error", "wall_time_s"]
    (out / "ablation.csv").write_text(_csv(rows, header, _meta(cfg, cfg.seed, seeds=cfg.seeds)))
    return {"rows": len(rows)}


COMMANDS = {"generate": run_generate, "train": run_train, "evaluate": run_evaluate,
            "mpc": run_mpc, "iterate": run_iterate, "ablation": run_ablation}
