from .base import CapabilityError, ConvergenceError, ModelError, NotFittedError, SurvivalModel
from .cox import CoxPH
from .deepsurv import DeepSurv
from .forest import RandomSurvivalForest, RegressionForest
from .mlp import MLP, Adam
from .serialization import ModelFormatError, load_model, save_model

MODEL_KINDS = {"cox": CoxPH, "deepsurv": DeepSurv, "rsf": RandomSurvivalForest}


def make_model(kind, **params):
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODEL_KINDS)}")
    return MODEL_KINDS[kind](**params)


__all__ = [
    "Adam",
    "CapabilityError",
    "ConvergenceError",
    "CoxPH",
    "DeepSurv",
    "MLP",
    "MODEL_KINDS",
    "ModelError",
    "ModelFormatError",
    "NotFittedError",
    "RandomSurvivalForest",
    "RegressionForest",
    "SurvivalModel",
    "load_model",
    "make_model",
    "save_model",
]
