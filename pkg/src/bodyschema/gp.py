"""Gaussian process regression with analytic input gradients.

Learns sensor forward models s = g(x) from exploration samples and predicts
both the mean g(x) and its Jacobian dg/dx at query points.  The kernel is a
squared exponential with per-dimension length scales (Mahalanobis distance);
training solves the noise-regularized system through a Cholesky factorization
and caches the weight matrix alpha, one column per output dimension.

All output dimensions share the training inputs X and are regressed
independently (alpha is linear in the targets).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class GPTrainingError(RuntimeError):
    """Raised when the regularized covariance matrix cannot be factorized."""


@dataclass(frozen=True)
class GPHyperparams:
    """Kernel and noise hyperparameters.

    noise_variance is the observation noise variance added to the diagonal
    of the training covariance (sensor-output units squared).  length_scales
    holds one positive scale per input dimension; signal_variance is the
    kernel output scale.
    """

    noise_variance: float
    length_scales: np.ndarray
    signal_variance: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if not (np.isfinite(self.noise_variance) and self.noise_variance > 0):
            raise ValueError("noise_variance must be strictly positive")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise ValueError("signal_variance must be strictly positive")
        if ls.ndim != 1 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("length_scales must be a vector of positive reals")

    @property
    def input_dim(self) -> int:
        return self.length_scales.shape[0]


def default_hyperparams(input_dim: int) -> GPHyperparams:
    """Experiment defaults: noise std exp(0.02), length scale exp(0.1), unit signal."""
    return GPHyperparams(
        noise_variance=float(np.exp(0.02) ** 2),
        length_scales=np.full(input_dim, np.exp(0.1)),
        signal_variance=1.0,
    )


@dataclass
class SampleSet:
    """Paired exploration samples: inputs (N, M) and sensor targets (N, D)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"row count mismatch: {self.inputs.shape[0]} inputs vs "
                f"{self.targets.shape[0]} targets"
            )
        if not np.all(np.isfinite(self.inputs)) or not np.all(np.isfinite(self.targets)):
            raise ValueError("sample set contains non-finite entries")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def save_csv(self, path: str | Path) -> None:
        """Write as CSV with header x_1..x_M, s_1..s_D, one sample per line."""
        m = self.inputs.shape[1]
        d = self.targets.shape[1]
        header = [f"x_{i + 1}" for i in range(m)] + [f"s_{j + 1}" for j in range(d)]
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(header)
            for x, s in zip(self.inputs, self.targets):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in s])

    @classmethod
    def load_csv(cls, path: str | Path) -> "SampleSet":
        with open(path, newline="", encoding="utf-8") as f:
            r = csv.reader(f)
            header = next(r)
            m = sum(1 for h in header if h.startswith("x_"))
            d = sum(1 for h in header if h.startswith("s_"))
            if m == 0 or d == 0 or m + d != len(header):
                raise ValueError(f"malformed sample CSV header: {header}")
            rows = [[float(v) for v in row] for row in r if row]
        arr = np.asarray(rows, dtype=float)
        return cls(inputs=arr[:, :m], targets=arr[:, m:])


def kernel(xi: np.ndarray, xj: np.ndarray, hyper: GPHyperparams) -> float:
    """Squared-exponential covariance between two input points.

    k(xi, xj) = sv * exp(-1/2 (xi-xj)^T diag(1/l^2) (xi-xj)); symmetric, and
    equals signal_variance at zero distance.
    """
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    m = hyper.input_dim
    if xi.shape != (m,) or xj.shape != (m,):
        raise ValueError(f"kernel inputs must be vectors of dimension {m}")
    if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(xj))):
        raise ValueError("kernel inputs must be finite")
    z = (xi - xj) / hyper.length_scales
    return float(hyper.signal_variance * np.exp(-0.5 * z @ z))


def kernel_matrix(a: np.ndarray, b: np.ndarray, hyper: GPHyperparams) -> np.ndarray:
    """Cross-covariance matrix k(a, b), shape (len(a), len(b))."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    z = (a[:, None, :] - b[None, :, :]) / hyper.length_scales
    return hyper.signal_variance * np.exp(-0.5 * np.einsum("ijk,ijk->ij", z, z))


@dataclass
class GPModel:
    """Trained GP: inputs X (N, M), weights alpha (N, D), hyperparameters.

    Immutable after training; predict and predict_gradient are pure and safe
    for concurrent callers.
    """

    X: np.ndarray
    alpha: np.ndarray
    hyper: GPHyperparams
    output_dim: int = field(default=0)

    def __post_init__(self):
        # contiguity normalized so persisted and in-memory models take the
        # same BLAS paths (bit-identical predictions after a round-trip)
        self.X = np.ascontiguousarray(np.atleast_2d(np.asarray(self.X, dtype=float)))
        self.alpha = np.ascontiguousarray(
            np.atleast_2d(np.asarray(self.alpha, dtype=float)))
        if self.output_dim == 0:
            self.output_dim = self.alpha.shape[1]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def _query(self, xq: np.ndarray) -> np.ndarray:
        xq = np.asarray(xq, dtype=float)
        if xq.shape != (self.input_dim,):
            raise ValueError(f"query must be a vector of dimension {self.input_dim}")
        if not np.all(np.isfinite(xq)):
            raise ValueError("query must be finite")
        return xq

    def predict(self, xq: np.ndarray) -> np.ndarray:
        """Posterior mean k(xq, X) alpha, one value per output dimension."""
        xq = self._query(xq)
        k = kernel_matrix(xq[None, :], self.X, self.hyper)[0]
        return k @ self.alpha

    def predict_gradient(self, xq: np.ndarray) -> np.ndarray:
        """Analytic Jacobian of predict, shape (D, M).

        Row d, column m holds d predict_d / d xq_m, from differentiating the
        kernel row: -diag(1/l^2) (xq - X)^T (k(xq, X) elementwise alpha).
        """
        xq = self._query(xq)
        k = kernel_matrix(xq[None, :], self.X, self.hyper)[0]          # (N,)
        diff = xq[None, :] - self.X                                     # (N, M)
        lam_inv = 1.0 / self.hyper.length_scales**2
        # (D, M): for each output column, sum_n alpha[n, d] k[n] diff[n, m]
        return -(self.alpha.T @ (diff * k[:, None])) * lam_inv[None, :]

    # -- persistence: JSON round-trip exact to float repr precision --

    def to_json_dict(self) -> dict:
        return {
            "X": self.X.tolist(),
            "alpha": self.alpha.tolist(),
            "hyperparams": {
                "noise_variance": self.hyper.noise_variance,
                "length_scales": self.hyper.length_scales.tolist(),
                "signal_variance": self.hyper.signal_variance,
            },
            "output_dim": self.output_dim,
        }

    def save_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True, indent=1)

    @classmethod
    def from_json_dict(cls, d: dict) -> "GPModel":
        hyper = GPHyperparams(
            noise_variance=d["hyperparams"]["noise_variance"],
            length_scales=np.asarray(d["hyperparams"]["length_scales"]),
            signal_variance=d["hyperparams"]["signal_variance"],
        )
        return cls(
            X=np.asarray(d["X"]),
            alpha=np.asarray(d["alpha"]),
            hyper=hyper,
            output_dim=int(d["output_dim"]),
        )

    @classmethod
    def load_json(cls, path: str | Path) -> "GPModel":
        with open(path, encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))


def train(samples: SampleSet, hyper: GPHyperparams) -> GPModel:
    """Fit GP weights by Cholesky-factorizing K(X, X) + noise_variance * I.

    The noise variance is added to the diagonal only (standard GP form;
    full-matrix addition would break interpolation).  Training inputs are
    retained verbatim.  Raises GPTrainingError if the regularized covariance
    is not positive definite.
    """
    x = samples.inputs
    if x.shape[1] != hyper.input_dim:
        raise ValueError(
            f"sample input dimension {x.shape[1]} does not match "
            f"{hyper.input_dim} length scales"
        )
    k = kernel_matrix(x, x, hyper)
    k[np.diag_indices_from(k)] += hyper.noise_variance
    try:
        chol = cho_factor(k, lower=True)
    except np.linalg.LinAlgError as exc:
        raise GPTrainingError(
            "covariance matrix plus noise diagonal is not positive definite "
            f"(N={len(samples)}, noise_variance={hyper.noise_variance:g}): {exc}"
        ) from exc
    alpha = cho_solve(chol, samples.targets)
    return GPModel(X=x.copy(), alpha=alpha, hyper=hyper)
