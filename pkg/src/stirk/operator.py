"""Koopman operator parameterizations, matrix exponential and lifted roll-outs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConditioningError, DimensionError, InvalidStateError, SchemaError
from .lifting import Dictionary, lift

SCHEMA_VERSION = 1
DECAY_FLOOR = 1e-6
MAX_COND = 1e12

# degree-13 Pade coefficients and the matching scaling threshold (Higham 2005)
_PADE13 = (64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
           129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
           40840800.0, 960960.0, 16380.0, 182.0, 1.0)
_THETA13 = 5.371920351148152


def matrix_exp(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a [13/13] Pade approximant."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"matrix_exp needs a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidStateError("matrix_exp input has non-finite entries")
    n = M.shape[0]
    norm = np.abs(M).sum(axis=0).max() if n else 0.0
    s = max(0, int(math.ceil(math.log2(norm / _THETA13)))) if norm > _THETA13 else 0
    A = M / (2.0 ** s)
    b = _PADE13
    I = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def matrix_exp_directional(M, E) -> np.ndarray:
    """Frechet derivative ``d/ds exp(M + sE)`` at ``s = 0``.

    Read off the upper-right block of ``exp([[M, E], [0, M]])``. ``E`` is
    normalised first so its size does not inflate the scaling exponent.
    """
    M = np.asarray(M, dtype=float)
    E = np.asarray(E, dtype=float)
    if M.shape != E.shape:
        raise DimensionError(f"shape mismatch {M.shape} vs {E.shape}")
    n = M.shape[0]
    scale = np.abs(E).max()
    if scale == 0.0:
        return np.zeros_like(M)
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = M
    block[n:, n:] = M
    block[:n, n:] = E / scale
    return matrix_exp(block)[:n, n:] * scale


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(A)).max())


@dataclass
class DissipativeParams:
    """Raw parameters of the stable operator ``P exp((Q - Q^T + D) dt) P^-1``.

    The diagonal ``D`` is ``-softplus(theta_d) - 1e-6`` so every entry is
    strictly negative for any finite ``theta_d``.
    """

    Q_raw: np.ndarray
    theta_d: np.ndarray
    P: np.ndarray
    B: np.ndarray
    dt: float

    names = ("Q_raw", "theta_d", "P", "B")

    @classmethod
    def initialize(cls, n_phi: int, m: int, dt: float, rng: np.random.Generator, scale: float = 0.01):
        Q = scale * rng.standard_normal((n_phi, n_phi))
        P = np.eye(n_phi) + scale * rng.standard_normal((n_phi, n_phi))
        B = scale * rng.standard_normal((n_phi, m))
        return cls(Q, np.zeros(n_phi), P, B, dt)

    @property
    def decay(self) -> np.ndarray:
        return -softplus(self.theta_d) - DECAY_FLOOR

    def arrays(self):
        return [self.Q_raw, self.theta_d, self.P, self.B]

    def replace_arrays(self, arrays) -> "DissipativeParams":
        return DissipativeParams(*arrays, dt=self.dt)


@dataclass
class StandardParams:
    """Unconstrained ``(A, B)``; no stability guarantee."""

    A: np.ndarray
    B: np.ndarray
    dt: float = 0.0

    names = ("A", "B")

    @classmethod
    def initialize(cls, n_phi: int, m: int, dt: float, rng: np.random.Generator, scale: float = 0.01):
        # start from exp(-dt) I so the initial operator is stable like the dissipative one
        A = math.exp(-dt) * np.eye(n_phi) + scale * rng.standard_normal((n_phi, n_phi))
        return cls(A, scale * rng.standard_normal((n_phi, m)), dt)

    def arrays(self):
        return [self.A, self.B]

    def replace_arrays(self, arrays) -> "StandardParams":
        return StandardParams(*arrays, dt=self.dt)


def assemble_continuous(params: DissipativeParams) -> np.ndarray:
    """Generator ``Q - Q^T + diag(d)``: skew part plus a strictly negative diagonal."""
    return params.Q_raw - params.Q_raw.T + np.diag(params.decay)


def similarity(P, Ahat) -> np.ndarray:
    """``P @ Ahat @ inv(P)`` through a linear solve."""
    PA = P @ Ahat
    return np.linalg.solve(P.T, PA.T).T


def check_conditioning(P) -> float:
    cond = float(np.linalg.cond(P))
    if not np.isfinite(cond) or cond >= MAX_COND:
        raise ConditioningError(f"similarity transform is ill-conditioned (cond={cond:.3e})", cond)
    return cond


def discrete_operator(params: DissipativeParams):
    """Return ``(Ahat, A)`` with ``Ahat = exp(Atilde dt)`` and ``A = P Ahat P^-1``."""
    check_conditioning(params.P)
    Ahat = matrix_exp(assemble_continuous(params) * params.dt)
    return Ahat, similarity(params.P, Ahat)


def operator_matrices(params):
    """``(A, B)`` for either parameterization."""
    if isinstance(params, DissipativeParams):
        return discrete_operator(params)[1], params.B
    return params.A, params.B


@dataclass
class KoopmanModel:
    """Lifted linear predictor ``z+ = A z + B u``, ``x = C z``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dictionary: Dictionary
    dt: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.dictionary.lifted_dim
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B[:, None]
        self.C = np.asarray(self.C, dtype=float)
        if self.A.shape != (N, N) or self.B.shape[0] != N or self.C.shape != (self.dictionary.n, N):
            raise DimensionError(
                f"inconsistent model: A {self.A.shape}, B {self.B.shape}, C {self.C.shape}, N_phi={N}")

    @property
    def n(self):
        return self.C.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def lifted_dim(self):
        return self.A.shape[0]

    def lift(self, x):
        return lift(x, self.dictionary)

    def predict(self, x0, inputs, R=None):
        return rollout_predict(self, x0, inputs, R)


def rollout_predict(model: KoopmanModel, x0, inputs, R=None):
    """Recursive lifted roll-out from ``x0``.

    Returns ``(Z, X)`` with shapes ``(R, N_phi)`` and ``(R, n)`` holding
    ``z_1..z_R`` and ``x_1..x_R``. Overflow yields non-finite entries rather
    than an exception.
    """
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.m)
    R = len(inputs) if R is None else int(R)
    if len(inputs) < R:
        raise ValueError(f"need {R} inputs, got {len(inputs)}")
    z = model.lift(np.asarray(x0, dtype=float))
    Z = np.empty((R, model.lifted_dim))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(R):
            z = model.A @ z + model.B @ inputs[k]
            Z[k] = z
        X = Z @ model.C.T
    return Z, X


# --- model files ---------------------------------------------------------------------

def model_to_dict(model: KoopmanModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "n": model.n,
        "m": model.m,
        "N_phi": model.lifted_dim,
        "dt": model.dt,
        "dictionary": model.dictionary.to_dict(),
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "provenance": model.provenance,
    }


def model_from_dict(d: dict) -> KoopmanModel:
    try:
        if d["schema_version"] != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {d['schema_version']}")
        N, n, m = int(d["N_phi"]), int(d["n"]), int(d["m"])
        A = np.array(d["A"], dtype=float)
        B = np.array(d["B"], dtype=float)
        C = np.array(d["C"], dtype=float)
        dictionary = Dictionary.from_dict(d["dictionary"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"bad model record: {exc}") from exc
    if A.shape != (N, N) or B.shape != (N, m) or C.shape != (n, N) or dictionary.lifted_dim != N:
        raise DimensionError(f"model dimensions disagree with N_phi={N}, n={n}, m={m}")
    return KoopmanModel(A, B, C, dictionary, float(d["dt"]), d.get("provenance", {}))


def serialize_model(model: KoopmanModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)))


def deserialize_model(path) -> KoopmanModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"cannot parse model file {path}: {exc}") from exc
    return model_from_dict(d)
