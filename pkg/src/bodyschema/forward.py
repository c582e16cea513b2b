"""Analytic forward models sharing the GP predictor interface.

Anything with predict(x) -> (D,) and predict_gradient(x) -> (D, M) can back a
sensor channel: a trained GPModel, the identity map used for joint sensing,
a selection of joint components, or the elementwise square used in the
nonlinear-sensor experiment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class ForwardModel(Protocol):
    def predict(self, x: np.ndarray) -> np.ndarray: ...

    def predict_gradient(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class IdentityModel:
    """g(x) = x with unit Jacobian (latent state lives in sensor space)."""

    dim: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def predict_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.eye(self.dim)


@dataclass(frozen=True)
class SelectionModel:
    """g(x) = x[indices]; Jacobian is the corresponding selection rows."""

    indices: tuple[int, ...]
    dim: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[list(self.indices)]

    def predict_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.eye(self.dim)[list(self.indices)]


@dataclass(frozen=True)
class QuadraticModel:
    """g(x) = x^2 elementwise; Jacobian diag(2x).  Sign of x is unobservable."""

    dim: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x * x

    def predict_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.diag(2.0 * np.asarray(x, dtype=float))
