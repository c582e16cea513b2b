"""Kalman filter baseline over joint angles with a static transition model.

The transition is fixed to identity (the belief does not move except through
evidence), matching the estimator's static assumption for a fair
proprioception-only comparison.  The covariance update uses the Joseph form
and is symmetrized explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimator import TrajectoryLog


@dataclass(frozen=True)
class KFState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, float)))
        object.__setattr__(self, "covariance",
                           np.atleast_2d(np.asarray(self.covariance, float)))


@dataclass(frozen=True)
class KFConfig:
    """Identity transition; process noise defaults to diag(0.001); the
    measurement noise matches the estimator's proprioceptive variance."""

    process_noise: np.ndarray = field(default_factory=lambda: np.eye(3) * 0.001)
    measurement_noise: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "process_noise",
                           np.atleast_2d(np.asarray(self.process_noise, float)))
        object.__setattr__(self, "measurement_noise",
                           np.atleast_2d(np.asarray(self.measurement_noise, float)))


def kf_step(state: KFState, z: np.ndarray, cfg: KFConfig) -> KFState:
    """Predict with identity transition plus process noise, then the standard
    gain update with identity measurement matrix (Joseph form)."""
    z = np.asarray(z, float)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    n = state.mean.shape[0]
    p_pred = state.covariance + cfg.process_noise
    s = p_pred + cfg.measurement_noise
    gain = np.linalg.solve(s.T, p_pred.T).T          # P S^-1
    mean = state.mean + gain @ (z - state.mean)
    ik = np.eye(n) - gain
    cov = ik @ p_pred @ ik.T + gain @ cfg.measurement_noise @ gain.T
    cov = 0.5 * (cov + cov.T)
    return KFState(mean=mean, covariance=cov)


def run_kf(measurements: np.ndarray, initial: KFState, cfg: KFConfig,
           dt: float, truth: np.ndarray | None = None) -> TrajectoryLog:
    """Filter a measurement stream and emit the shared trajectory-log schema.

    Error columns are zeroed; x_hat and mu_x both carry the posterior mean
    and pred_p echoes it (identity measurement model), so the log overlays
    directly on estimator runs.
    """
    z = np.atleast_2d(np.asarray(measurements, float))
    n, m = z.shape
    rows = n + 1
    log = TrajectoryLog(
        t=np.arange(rows) * dt,
        x_hat=np.zeros((rows, m)),
        mu_x=np.zeros((rows, m)),
        truth=np.full((rows, m), np.nan),
        e_x=np.zeros((rows, m)),
        errors={"p": np.zeros((rows, m))},
        preds={"p": np.zeros((rows, m))},
        free_energy=np.zeros(rows),
    )
    state = initial
    log.x_hat[0] = state.mean
    log.mu_x[0] = state.mean
    log.preds["p"][0] = state.mean
    for k in range(n):
        state = kf_step(state, z[k], cfg)
        log.x_hat[k + 1] = state.mean
        log.mu_x[k + 1] = state.mean
        log.preds["p"][k + 1] = state.mean
        if truth is not None:
            log.truth[k + 1] = truth[k]
    return log
