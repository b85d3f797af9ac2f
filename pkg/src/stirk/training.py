"""Roll-out training loop, schedules and prediction metrics."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import child_rng
from .errors import ConditioningError, UndefinedMetricError
from .lifting import WindowSet, output_matrix
from .loss import loss_and_gradient, loss_from_matrices
from .operator import DissipativeParams, KoopmanModel, StandardParams, operator_matrices, spectral_radius
from .optim import AdamState, LBFGSState, adam_step, lbfgs_step, pack, unpack

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyper-parameters of one training run.

    Defaults follow the Van der Pol protocol except ``epochs`` and
    ``optimizer_switch_epoch``, which are scaled down to a 3000-epoch budget.
    ``optimizer_switch_epoch=None`` disables L-BFGS fine-tuning.
    """

    epochs: int = 3000
    batch_size: int = 1000
    base_lr: float = 0.01
    max_lr: float = 0.1
    lr_schedule: str = "cyclic"            # cyclic | constant
    lr_cycle_half_period: int = 500
    rollout_schedule: str = "progressive"  # progressive | constant
    curriculum_period: int = 200
    r_max: int = 90
    optimizer_switch_epoch: int | None = 2800
    lbfgs_lr: float = 0.01
    lbfgs_memory: int = 10
    lbfgs_iters_per_epoch: int = 1
    parameterization: str = "dissipative"  # dissipative | standard
    freeze_p: bool = False
    init_scale: float = 0.01
    model_selection: str = "best"          # best (lowest selection loss) | last
    seed: int = 0
    polyflow_order: int = 4
    loss_reduction: str = "mean"

    def __post_init__(self):
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        if self.curriculum_period < 1:
            raise ValueError("curriculum_period must be >= 1")
        if self.lr_schedule not in ("cyclic", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.rollout_schedule not in ("progressive", "constant"):
            raise ValueError(f"unknown rollout_schedule {self.rollout_schedule!r}")
        if self.parameterization not in ("dissipative", "standard"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.model_selection not in ("best", "last"):
            raise ValueError(f"unknown model_selection {self.model_selection!r}")
        if self.loss_reduction != "mean":
            raise ValueError("only mean loss reduction is supported")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig fields {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return config_hash(self.to_dict())


def config_hash(d) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def cyclic_lr(epoch: int, config: TrainConfig) -> float:
    """Triangular cyclic rate whose amplitude halves each full cycle."""
    if config.lr_schedule == "constant":
        return config.base_lr
    half = config.lr_cycle_half_period
    cycle = epoch // (2 * half)
    x = abs(epoch / half - 2 * cycle - 1)
    return config.base_lr + (config.max_lr - config.base_lr) * max(0.0, 1.0 - x) / 2.0 ** cycle


def curriculum_R(epoch: int, config: TrainConfig) -> int:
    """Roll-out length doubling every ``curriculum_period`` epochs, capped at ``r_max``."""
    if config.rollout_schedule == "constant":
        return config.r_max
    k = epoch // config.curriculum_period
    return config.r_max if k >= math.log2(config.r_max) else min(config.r_max, 2 ** k)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)
    best_epoch: int | None = None

    COLUMNS = ("epoch", "R", "lr", "train_loss", "val_loss", "spectral_radius", "wall_time_s")

    def append(self, **rec):
        self.records.append(rec)

    def column(self, name):
        return np.array([r[name] for r in self.records], dtype=float)

    def to_csv(self, meta: dict | None = None) -> str:
        buf = io.StringIO()
        if meta:
            buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.records:
            w.writerow([r["epoch"], r["R"], repr(r["lr"]), repr(r["train_loss"]), repr(r["val_loss"]),
                        repr(r["spectral_radius"]), f"{r['wall_time_s']:.6f}"])
        return buf.getvalue()


class StabilityViolation(AssertionError):
    pass


def init_params(config: TrainConfig, n_phi: int, m: int, dt: float):
    rng = child_rng(config.seed, 11)
    cls = DissipativeParams if config.parameterization == "dissipative" else StandardParams
    return cls.initialize(n_phi, m, dt, rng, config.init_scale)


def build_model(params, windows: WindowSet, dt: float, provenance=None) -> KoopmanModel:
    A, B = operator_matrices(params)
    d = windows.dictionary
    return KoopmanModel(A, B, output_matrix(d), d, dt, dict(provenance or {}))


class _Objective:
    """Flat-vector view of the loss for the optimizers, honouring ``freeze_p``."""

    def __init__(self, template, trainable):
        self.template = template
        self.trainable = trainable

    def vector(self, params):
        return pack([a for a, t in zip(params.arrays(), self.trainable) if t])

    def params(self, vec, base):
        arrays = base.arrays()
        live = unpack(vec, [a for a, t in zip(arrays, self.trainable) if t])
        it = iter(live)
        return base.replace_arrays([next(it) if t else a for a, t in zip(arrays, self.trainable)])

    def grad_vector(self, grads):
        return pack([g for g, t in zip(grads, self.trainable) if t])


def train(config: TrainConfig, windows: WindowSet, val_windows: WindowSet | None = None,
          dt: float | None = None, params=None):
    """Minimize the roll-out loss.

    Adam on shuffled minibatches with the cyclic rate and curriculum roll-out
    length, then full-batch L-BFGS at ``R = r_max`` from
    ``optimizer_switch_epoch`` on. The model with the lowest selection loss
    (validation windows if given, else training windows, always at ``r_max``)
    is returned.
    """
    if windows.r_max < config.r_max:
        raise ValueError(f"windows support R <= {windows.r_max}, config asks for {config.r_max}")
    if dt is None:
        sysd = windows.dictionary.system
        dt = sysd.dt if sysd is not None else 1.0
    n_phi, m = windows.dictionary.lifted_dim, windows.inputs.shape[-1]
    if params is None:
        params = init_params(config, n_phi, m, dt)
    dissipative = isinstance(params, DissipativeParams)
    trainable = [not (config.freeze_p and name == "P") for name in params.names]
    obj = _Objective(params, trainable)
    provenance = {"config_hash": config.digest(), "seed": config.seed,
                  "parameterization": config.parameterization}
    sel_windows = val_windows if val_windows is not None and len(val_windows) else windows
    R_sel = config.r_max
    history = TrainHistory()

    def selection_loss(p):
        A, B = operator_matrices(p)
        return loss_from_matrices(A, B, sel_windows, R_sel)

    best_params, best_loss = params, selection_loss(params)
    if config.epochs <= 0:
        return build_model(params, windows, dt, provenance), history

    rng = child_rng(config.seed, 23)
    adam = AdamState()
    lbfgs = LBFGSState(memory=config.lbfgs_memory, lr=config.lbfgs_lr)
    switch = config.optimizer_switch_epoch
    fg_cache = None
    t0 = time.perf_counter()
    W = len(windows)

    def check(p):
        if dissipative:
            rho = spectral_radius(operator_matrices(p)[0])
            if not rho < 1.0:
                raise StabilityViolation(f"dissipative operator lost stability (rho={rho})")
            return rho
        return spectral_radius(p.A)

    for epoch in range(config.epochs):
        use_lbfgs = switch is not None and epoch >= switch
        try:
            if use_lbfgs:
                R, lr = config.r_max, config.lbfgs_lr

                def fg(vec, _base=params):
                    try:
                        f, g = loss_and_gradient(obj.params(vec, _base), windows, R)
                    except ConditioningError:
                        return np.inf, np.zeros_like(vec)
                    return f, obj.grad_vector(g)

                vec = obj.vector(params)
                f, g = fg_cache if fg_cache is not None else (None, None)
                for _ in range(config.lbfgs_iters_per_epoch):
                    vec, f, g = lbfgs_step(lbfgs, vec, fg, f, g)
                fg_cache = (f, g)
                params = obj.params(vec, params)
                rho = check(params)
                train_loss = f
            else:
                R, lr = curriculum_R(epoch, config), cyclic_lr(epoch, config)
                perm = rng.permutation(W)
                losses, sizes = [], []
                for lo in range(0, W, config.batch_size):
                    batch = windows.subset(perm[lo:lo + config.batch_size])
                    f, grads = loss_and_gradient(params, batch, R)
                    if not np.isfinite(f):
                        raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                    vec = adam_step(adam, obj.vector(params), obj.grad_vector(grads), lr)
                    params = obj.params(vec, params)
                    rho = check(params)
                    losses.append(f)
                    sizes.append(len(batch))
                train_loss = float(np.dot(losses, sizes) / np.sum(sizes))
            val = selection_loss(params)
        except (FloatingPointError, ConditioningError) as exc:
            log.warning("aborting training: %s", exc)
            history.events.append({"epoch": epoch, "event": "divergence", "detail": str(exc)})
            break
        if not np.isfinite(val):
            history.events.append({"epoch": epoch, "event": "divergence", "detail": "non-finite selection loss"})
            break
        history.append(epoch=epoch, R=R, lr=lr, train_loss=train_loss, val_loss=val,
                       spectral_radius=rho, wall_time_s=time.perf_counter() - t0)
        if val < best_loss or config.model_selection == "last":
            best_loss, best_params, history.best_epoch = val, params, epoch
    history.events.extend({"epoch": None, **e} for e in lbfgs.events)
    provenance["best_epoch"] = history.best_epoch
    provenance["selection_loss"] = best_loss
    return build_model(best_params, windows, dt, provenance), history


# --- metrics -------------------------------------------------------------------------

def normalized_error(X_hat, X) -> float:
    """``||X_hat - X||_F / ||X||_F``; non-finite predictions give NaN."""
    X_hat = np.asarray(X_hat, dtype=float)
    X = np.asarray(X, dtype=float)
    if X_hat.shape != X.shape:
        raise ValueError(f"shape mismatch {X_hat.shape} vs {X.shape}")
    ref = np.linalg.norm(X)
    if ref == 0.0:
        raise UndefinedMetricError("reference trajectory has zero norm")
    with np.errstate(over="ignore", invalid="ignore"):
        err = float(np.linalg.norm(X_hat - X) / ref)
    return err if np.isfinite(err) else float("nan")


def mse_per_timestep(X_hat, X) -> np.ndarray:
    X_hat = np.asarray(X_hat, dtype=float)
    X = np.asarray(X, dtype=float)
    if X_hat.shape != X.shape:
        raise ValueError(f"shape mismatch {X_hat.shape} vs {X.shape}")
    return np.mean((X_hat - X) ** 2, axis=-1)
