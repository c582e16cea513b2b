"""Body-configuration estimation by prediction-error dynamics.

The believed configuration x_hat, a slowly adapting prior mu_x, and one error
state per sensor channel are integrated jointly with forward Euler:

    dx_hat/dt = -e_x + sum_i J_i(x_hat)^T e_i
    de_i/dt   = s_i - g_i(x_hat) - sigma_i * e_i     (per channel)
    de_x/dt   = x_hat - mu_x - sigma_x * e_x
    dmu_x/dt  = lambda * e_x

At stationarity each e_i reaches the precision-weighted prediction error
(s_i - g_i) / sigma_i, and x_hat settles where the weighted sensor evidence
and the prior balance.  Channels whose reading is absent in a frame
contribute nothing to dx_hat and their stale error decays to zero.

States are immutable: step returns a new EstimatorState, so a run is
sequential but states can be handed freely between threads.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .forward import ForwardModel

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """Integration produced a non-finite or out-of-range state entry."""

    def __init__(self, message: str, component: str, last_state: "EstimatorState",
                 step_index: int | None = None):
        super().__init__(message)
        self.component = component
        self.last_state = last_state
        self.step_index = step_index


@dataclass(frozen=True)
class EstimatorConfig:
    """Integration step, prior learning rate, and prior error variance."""

    dt: float = 0.05
    lam: float = 1.0
    sigma_x: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "sigma_x", np.atleast_1d(np.asarray(self.sigma_x, float)))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if np.any(self.sigma_x <= 0):
            raise ValueError("sigma_x entries must be positive")


@dataclass(frozen=True)
class BodyState:
    """Believed joint configuration and its prior belief (sensor space)."""

    x_hat: np.ndarray
    mu_x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_hat", np.atleast_1d(np.asarray(self.x_hat, float)))
        object.__setattr__(self, "mu_x", np.atleast_1d(np.asarray(self.mu_x, float)))
        if self.x_hat.shape != self.mu_x.shape:
            raise ValueError("x_hat and mu_x must have the same dimension")


@dataclass(frozen=True)
class SensorChannel:
    """One sensory modality: label, output dimension, per-component variance,
    and a forward model with predict / predict_gradient.

    A forward model may expose at_time(t) -> model-or-None to schedule itself
    (the visuo-tactile likelihood is only defined during an active event).
    """

    id: str
    dim: int
    variance: np.ndarray
    forward_model: ForwardModel

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.variance, float))
        object.__setattr__(self, "variance", v)
        if v.shape != (self.dim,):
            raise ValueError(f"channel {self.id}: variance must have dim {self.dim}")
        if np.any(v <= 0):
            raise ValueError(f"channel {self.id}: variance entries must be positive")

    def resolve(self, t: float) -> ForwardModel | None:
        """Forward model effective at time t (None when unscheduled)."""
        at_time = getattr(self.forward_model, "at_time", None)
        if at_time is None:
            return self.forward_model
        return at_time(t)


@dataclass(frozen=True)
class SensorFrame:
    """Time-stamped readings per channel id; a missing or None entry means
    the modality is absent this frame."""

    t: float
    readings: Mapping[str, np.ndarray | None]

    def get(self, channel_id: str) -> np.ndarray | None:
        r = self.readings.get(channel_id)
        if r is None:
            return None
        return np.atleast_1d(np.asarray(r, float))


@dataclass(frozen=True)
class EstimatorState:
    """Body belief plus all error states, integrated as dynamic variables."""

    body: BodyState
    errors: Mapping[str, np.ndarray]
    e_x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "e_x", np.atleast_1d(np.asarray(self.e_x, float)))
        object.__setattr__(self, "errors", dict(self.errors))


def init_state(mu_x: np.ndarray, channels: Sequence[SensorChannel],
               x_hat: np.ndarray | None = None, t: float = 0.0) -> EstimatorState:
    """Fresh state: x_hat defaults to the prior, all errors zero."""
    mu_x = np.atleast_1d(np.asarray(mu_x, float))
    x0 = mu_x.copy() if x_hat is None else np.atleast_1d(np.asarray(x_hat, float))
    errors = {ch.id: np.zeros(ch.dim) for ch in channels}
    return EstimatorState(body=BodyState(x_hat=x0, mu_x=mu_x), errors=errors,
                          e_x=np.zeros(mu_x.shape[0]), t=t)


class ErrorDerivatives(NamedTuple):
    channels: dict[str, np.ndarray]
    prior: np.ndarray
    faults: tuple[str, ...]


def compute_prediction_errors(state: EstimatorState, frame: SensorFrame,
                              channels: Sequence[SensorChannel],
                              cfg: EstimatorConfig | None = None) -> ErrorDerivatives:
    """Error-state derivatives for one frame.

    Available channels get de_i = s_i - g_i(x_hat) - sigma_i * e_i; absent
    ones decay with de_i = -sigma_i * e_i.  A channel whose forward model
    returns non-finite values is faulted: masked for this step and reported.
    """
    cfg = cfg or EstimatorConfig(sigma_x=np.ones(state.body.x_hat.shape[0]))
    x = state.body.x_hat
    derivs: dict[str, np.ndarray] = {}
    faults: list[str] = []
    for ch in channels:
        e = state.errors[ch.id]
        s = frame.get(ch.id)
        model = ch.resolve(frame.t)
        if s is not None and model is not None:
            if s.shape != (ch.dim,):
                raise ValueError(f"channel {ch.id}: reading has shape {s.shape}, "
                                 f"expected ({ch.dim},)")
            g = np.atleast_1d(np.asarray(model.predict(x), float))
            if not np.all(np.isfinite(g)):
                warnings.warn(f"channel {ch.id}: non-finite forward-model output, "
                              "masked for this step")
                faults.append(ch.id)
                derivs[ch.id] = -ch.variance * e
                continue
            derivs[ch.id] = s - g - ch.variance * e
        else:
            derivs[ch.id] = -ch.variance * e
    prior = x - state.body.mu_x - cfg.sigma_x * state.e_x
    return ErrorDerivatives(channels=derivs, prior=prior, faults=tuple(faults))


def compute_state_derivative(state: EstimatorState, channels: Sequence[SensorChannel],
                             t: float | None = None) -> np.ndarray:
    """dx_hat/dt = -e_x + sum_i J_i(x_hat)^T e_i over resolvable channels."""
    x = state.body.x_hat
    dx = -state.e_x.copy()
    when = state.t if t is None else t
    for ch in channels:
        model = ch.resolve(when)
        if model is None:
            continue
        jac = np.atleast_2d(np.asarray(model.predict_gradient(x), float))
        if not np.all(np.isfinite(jac)):
            warnings.warn(f"channel {ch.id}: non-finite Jacobian, skipped")
            continue
        dx += jac.T @ state.errors[ch.id]
    return dx


def step(state: EstimatorState, frame: SensorFrame,
         channels: Sequence[SensorChannel], cfg: EstimatorConfig) -> EstimatorState:
    """One forward-Euler transition; the input state is not modified.

    Raises DivergenceError (carrying the last finite state and the offending
    component) if any updated entry is non-finite or exceeds 1e6.
    """
    derivs = compute_prediction_errors(state, frame, channels, cfg)
    dx = compute_state_derivative(state, channels, t=frame.t)

    dt = cfg.dt
    new_x = state.body.x_hat + dt * dx
    new_mu = state.body.mu_x + dt * cfg.lam * state.e_x
    new_ex = state.e_x + dt * derivs.prior
    new_errors = {ch.id: state.errors[ch.id] + dt * derivs.channels[ch.id]
                  for ch in channels}

    def _check(name: str, arr: np.ndarray):
        if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > DIVERGENCE_LIMIT):
            raise DivergenceError(
                f"estimator diverged in '{name}' at t={state.t + dt:.3f}",
                component=name, last_state=state)

    _check("x_hat", new_x)
    _check("mu_x", new_mu)
    _check("e_x", new_ex)
    for cid, e in new_errors.items():
        _check(f"e_{cid}", e)

    return EstimatorState(body=BodyState(x_hat=new_x, mu_x=new_mu),
                          errors=new_errors, e_x=new_ex, t=state.t + dt)


def free_energy(state: EstimatorState, frame: SensorFrame | None,
                channels: Sequence[SensorChannel], cfg: EstimatorConfig) -> float:
    """Quadratic diagnostic: precision-weighted squared prediction errors.

    Sum over available channels of (s_i - g_i)^2 / (2 sigma_i) plus the prior
    term (x_hat - mu_x)^2 / (2 sigma_x).  Constant and log-variance terms of
    the underlying bound are omitted (they do not affect the dynamics).
    """
    x = state.body.x_hat
    f = float(np.sum((x - state.body.mu_x) ** 2 / (2.0 * cfg.sigma_x)))
    if frame is None:
        return f
    for ch in channels:
        s = frame.get(ch.id)
        model = ch.resolve(frame.t)
        if s is None or model is None:
            continue
        g = np.atleast_1d(np.asarray(model.predict(x), float))
        if np.all(np.isfinite(g)):
            f += float(np.sum((s - g) ** 2 / (2.0 * ch.variance)))
    return f


# ---------------------------------------------------------------------------
# trajectory logging
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    """Per-step record of a run; the CSV form is the contract consumed by
    the plotting component and by golden-file tests."""

    t: np.ndarray                      # (R,)
    x_hat: np.ndarray                  # (R, M)
    mu_x: np.ndarray                   # (R, M)
    truth: np.ndarray                  # (R, M), NaN where unavailable
    e_x: np.ndarray                    # (R, M)
    errors: dict[str, np.ndarray]      # id -> (R, dim)
    preds: dict[str, np.ndarray]       # id -> (R, dim), NaN where undefined
    free_energy: np.ndarray            # (R,)

    @property
    def m(self) -> int:
        return self.x_hat.shape[1]

    def columns(self) -> list[str]:
        cols = ["t"]
        cols += [f"x_hat_{j + 1}" for j in range(self.m)]
        cols += [f"mu_x_{j + 1}" for j in range(self.m)]
        cols += [f"truth_{j + 1}" for j in range(self.m)]
        cols += [f"e_x_{j + 1}" for j in range(self.m)]
        for cid, arr in self.errors.items():
            cols += [f"e_{cid}_{j + 1}" for j in range(arr.shape[1])]
        for cid, arr in self.preds.items():
            cols += [f"pred_{cid}_{j + 1}" for j in range(arr.shape[1])]
        cols.append("free_energy")
        return cols

    def to_csv(self, path: str | Path) -> None:
        rows = np.column_stack(
            [self.t, self.x_hat, self.mu_x, self.truth, self.e_x]
            + [arr for arr in self.errors.values()]
            + [arr for arr in self.preds.values()]
            + [self.free_energy]
        )
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(self.columns())
            for row in rows:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrajectoryLog":
        with open(path, newline="", encoding="utf-8") as f:
            r = csv.reader(f)
            header = next(r)
            data = np.asarray([[float(v) for v in row] for row in r if row])
        col = {name: i for i, name in enumerate(header)}
        m = sum(1 for h in header if h.startswith("x_hat_"))

        def block(prefix: str) -> np.ndarray:
            names = [h for h in header if h.startswith(prefix)]
            names.sort(key=lambda h: int(h.rsplit("_", 1)[1]))
            return data[:, [col[n] for n in names]]

        channel_ids: list[str] = []
        for h in header:
            if h.startswith("e_") and not h.startswith("e_x_"):
                cid = h[2:].rsplit("_", 1)[0]
                if cid not in channel_ids:
                    channel_ids.append(cid)
        return cls(
            t=data[:, col["t"]],
            x_hat=block("x_hat_"),
            mu_x=block("mu_x_"),
            truth=block("truth_"),
            e_x=block("e_x_"),
            errors={cid: block(f"e_{cid}_") for cid in channel_ids},
            preds={cid: block(f"pred_{cid}_") for cid in channel_ids},
            free_energy=data[:, col["free_energy"]],
        )


def run(frames: Sequence[SensorFrame], initial: EstimatorState,
        channels: Sequence[SensorChannel], cfg: EstimatorConfig,
        truth: np.ndarray | None = None) -> TrajectoryLog:
    """Apply step per frame and collect the full per-step log.

    The log's first row is the initial state (its truth entry is NaN);
    row k >= 1 is the state after consuming frames[k-1], with the
    free-energy diagnostic evaluated on that frame.  truth, when given,
    must have one row per frame.  A DivergenceError gains the step index.
    """
    m = initial.body.x_hat.shape[0]
    n = len(frames)
    if truth is not None:
        truth = np.atleast_2d(np.asarray(truth, float))
        if truth.shape != (n, m):
            raise ValueError(f"truth must have shape ({n}, {m})")

    rows = n + 1
    log = TrajectoryLog(
        t=np.zeros(rows),
        x_hat=np.zeros((rows, m)),
        mu_x=np.zeros((rows, m)),
        truth=np.full((rows, m), np.nan),
        e_x=np.zeros((rows, m)),
        errors={ch.id: np.zeros((rows, ch.dim)) for ch in channels},
        preds={ch.id: np.full((rows, ch.dim), np.nan) for ch in channels},
        free_energy=np.zeros(rows),
    )

    def record(k: int, state: EstimatorState, frame: SensorFrame | None):
        log.t[k] = state.t
        log.x_hat[k] = state.body.x_hat
        log.mu_x[k] = state.body.mu_x
        log.e_x[k] = state.e_x
        for ch in channels:
            log.errors[ch.id][k] = state.errors[ch.id]
            model = ch.resolve(state.t if frame is None else frame.t)
            if model is not None:
                g = np.atleast_1d(np.asarray(model.predict(state.body.x_hat), float))
                log.preds[ch.id][k] = g
        log.free_energy[k] = free_energy(state, frame, channels, cfg)

    state = initial
    record(0, state, None)
    for k, frame in enumerate(frames):
        try:
            state = step(state, frame, channels, cfg)
        except DivergenceError as exc:
            exc.step_index = k
            raise
        record(k + 1, state, frame)
        if truth is not None:
            log.truth[k + 1] = truth[k]
    return log
