"""Koopman lifted linear predictors trained with multi-step roll-out losses.

Submodules: ``dynamics`` (plants, RK4, datasets), ``lifting`` (dictionaries,
windows), ``operator`` (dissipative and standard parameterizations, model
files), ``loss`` and ``optim`` (roll-out loss, Adam, L-BFGS), ``training``,
``baselines`` (DMD/eDMD), ``mpc``, ``iterative`` and ``experiments``/``cli``.
"""

from .dynamics import SystemSpec, Trajectory, cartpole, simulate, vanderpol
from .lifting import Dictionary, make_windows, polyflow_dictionary, rbf_dictionary
from .operator import DissipativeParams, KoopmanModel, StandardParams, deserialize_model, serialize_model
from .training import TrainConfig, normalized_error, train

__all__ = ["SystemSpec", "Trajectory", "cartpole", "simulate", "vanderpol", "Dictionary", "make_windows",
           "polyflow_dictionary", "rbf_dictionary", "DissipativeParams", "KoopmanModel", "StandardParams",
           "deserialize_model", "serialize_model", "TrainConfig", "normalized_error", "train"]

__version__ = "0.1.0"
