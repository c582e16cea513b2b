"""Visuo-tactile coincidence detection and the intermodal touch likelihood.

Tactile events come from thresholding skin proximity signals; visual events
are dwells of the other agent's hand (speed below a stop threshold).  A
tactile event paired with a nearby visual onset yields a TouchEvent with a
synchrony offset delta and the other's location o_v.  During an active event
the likelihood

    g_t(x) = a1 exp(-b1 ||g_v(x) - o_v||^2) * a2 exp(-b2 delta^2)

and its gradient (chain rule through the visual forward model) feed the
estimator as a one-dimensional channel.  o_v must be expressed in the same
units as the visual model's output.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .forward import ForwardModel

SKIN_CELLS = 117


@dataclass(frozen=True)
class TouchParams:
    """Likelihood shape, proximity threshold, and event-timing settings.

    a1, b1 come from fitting the proximity-sensor response; a2, b2 shape the
    temporal synchrony factor (default: halves at 0.3 s offset).  stop_speed
    and stop_window define the other-hand dwell detector.
    """

    a1: float = 0.001
    b1: float = 1.0
    a2: float = 1.0
    b2: float = float(np.log(2) / 0.3**2)
    prox_threshold: float = 0.7
    sync_window: float = 0.5
    stop_speed: float = 5.0     # px/s; dwell when slower
    stop_window: float = 0.25   # s; speed smoothing window

    def __post_init__(self):
        for name in ("a1", "b1", "a2", "b2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.prox_threshold < 1.0:
            raise ValueError("prox_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class SkinFrame:
    """One time-stamped vector of per-cell proximity values, clamped to [0, 1]."""

    t: float
    proximities: np.ndarray

    def __post_init__(self):
        p = np.clip(np.asarray(self.proximities, float), 0.0, 1.0)
        object.__setattr__(self, "proximities", p)


@dataclass(frozen=True)
class Interval:
    """Half-open-ish event window at frame resolution."""

    t_onset: float
    t_offset: float


@dataclass(frozen=True)
class VisualEvent:
    """Dwell of the other agent's hand: window plus position at onset."""

    t_onset: float
    t_offset: float
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float))


@dataclass(frozen=True)
class TouchEvent:
    """Paired visuo-tactile coincidence.

    delta = tactile onset - visual onset; active iff |delta| <= sync_window.
    o_v is the other's hand position at the visual onset.
    """

    o_v: np.ndarray
    delta: float
    active: bool
    t_onset: float
    t_offset: float

    def __post_init__(self):
        object.__setattr__(self, "o_v", np.asarray(self.o_v, float))


def detect_tactile_events(frames: Sequence[SkinFrame],
                          params: TouchParams) -> list[Interval]:
    """Threshold the skin: an event opens when any cell rises above
    prox_threshold and closes when all cells fall below again."""
    events: list[Interval] = []
    onset = None
    last_t = None
    for fr in frames:
        hot = bool(np.any(fr.proximities > params.prox_threshold))
        if hot and onset is None:
            onset = fr.t
        elif not hot and onset is not None:
            events.append(Interval(onset, fr.t))
            onset = None
        last_t = fr.t
    if onset is not None:
        events.append(Interval(onset, last_t))
    return events


def detect_visual_events(trajectory: Sequence[tuple[float, np.ndarray]] | np.ndarray,
                         params: TouchParams) -> list[VisualEvent]:
    """Dwell detection on the other hand's trajectory.

    trajectory rows are (t, position...); speeds come from finite
    differences, smoothed over stop_window.  An event opens while the
    smoothed speed stays below stop_speed.  Fewer than 2 samples -> [].
    """
    arr = np.asarray([[t, *np.atleast_1d(p)] for t, p in trajectory]) \
        if not isinstance(trajectory, np.ndarray) else np.asarray(trajectory, float)
    if arr.shape[0] < 2:
        return []
    t = arr[:, 0]
    pos = arr[:, 1:]
    dt = np.diff(t)
    dt[dt <= 0] = np.finfo(float).eps
    speed = np.linalg.norm(np.diff(pos, axis=0), axis=1) / dt     # between samples
    speed = np.append(speed, speed[-1])                           # per-sample
    # moving average over stop_window
    width = max(1, int(round(params.stop_window / np.median(dt))))
    if width > 1:
        kernel = np.ones(width) / width
        speed = np.convolve(speed, kernel, mode="same")

    events: list[VisualEvent] = []
    onset_idx = None
    for i, v in enumerate(speed):
        if v < params.stop_speed and onset_idx is None:
            onset_idx = i
        elif v >= params.stop_speed and onset_idx is not None:
            events.append(VisualEvent(t[onset_idx], t[i], pos[onset_idx]))
            onset_idx = None
    if onset_idx is not None:
        events.append(VisualEvent(t[onset_idx], t[-1], pos[onset_idx]))
    return events


def pair_events(tactile_events: Sequence[Interval],
                visual_events: Sequence[VisualEvent],
                params: TouchParams) -> list[TouchEvent]:
    """Pair each tactile event with the nearest visual onset.

    delta = tactile onset - visual onset; the event is active iff
    |delta| <= sync_window.  Without visual events the tactile events pair
    to nothing and are returned inactive with infinite offset.
    """
    out: list[TouchEvent] = []
    for te in tactile_events:
        if not visual_events:
            out.append(TouchEvent(o_v=np.full(2, np.nan), delta=np.inf,
                                  active=False, t_onset=te.t_onset,
                                  t_offset=te.t_offset))
            continue
        nearest = min(visual_events, key=lambda ve: abs(te.t_onset - ve.t_onset))
        delta = te.t_onset - nearest.t_onset
        out.append(TouchEvent(
            o_v=nearest.position,
            delta=float(delta),
            active=bool(abs(delta) <= params.sync_window),
            t_onset=te.t_onset,
            t_offset=te.t_offset,
        ))
    return out


def touch_likelihood(x_hat: np.ndarray, event: TouchEvent,
                     visual_model: ForwardModel, params: TouchParams) -> float:
    """Spatio-temporal likelihood g_t(x); 0 for an inactive event.

    Maximum a1*a2 is attained exactly when g_v(x) = o_v and delta = 0;
    it decreases monotonically in both the visual offset and |delta|.
    """
    if not event.active:
        return 0.0
    gv = np.asarray(visual_model.predict(np.asarray(x_hat, float)), float)
    d2 = float(np.sum((gv - event.o_v) ** 2))
    f_s = params.a1 * np.exp(-params.b1 * d2)
    f_t = params.a2 * np.exp(-params.b2 * event.delta**2)
    return float(f_s * f_t)


def touch_likelihood_gradient(x_hat: np.ndarray, event: TouchEvent,
                              visual_model: ForwardModel,
                              params: TouchParams) -> np.ndarray:
    """Analytic gradient of touch_likelihood w.r.t. x_hat (chain rule):

        g_t'(x) = g_t(x) * (-2 b1) (g_v(x) - o_v)^T J_v(x)
    """
    x_hat = np.asarray(x_hat, float)
    if not event.active:
        return np.zeros(x_hat.shape[0])
    g_t = touch_likelihood(x_hat, event, visual_model, params)
    gv = np.asarray(visual_model.predict(x_hat), float)
    jv = np.atleast_2d(np.asarray(visual_model.predict_gradient(x_hat), float))
    return g_t * (-2.0 * params.b1) * ((gv - event.o_v) @ jv)


def tactile_observation(event: TouchEvent, params: TouchParams) -> float | None:
    """Observed channel value s_t during an active event.

    The reading asserts the touch is exactly at o_v: the maximum spatial
    likelihood at the measured synchrony, a1*a2*exp(-b2 delta^2).  Inactive
    events mask the channel (None).
    """
    if not event.active:
        return None
    return float(params.a1 * params.a2 * np.exp(-params.b2 * event.delta**2))


@dataclass(frozen=True)
class BoundTouchModel:
    """Touch likelihood bound to one event: a 1-output forward model."""

    event: TouchEvent
    visual_model: ForwardModel
    params: TouchParams

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.array([touch_likelihood(x, self.event, self.visual_model, self.params)])

    def predict_gradient(self, x: np.ndarray) -> np.ndarray:
        return touch_likelihood_gradient(x, self.event, self.visual_model,
                                         self.params)[None, :]


@dataclass(frozen=True)
class TouchChannelModel:
    """Schedules the touch likelihood over a list of events.

    at_time(t) returns a BoundTouchModel while t lies inside an active
    event's window, else None (channel masked).
    """

    events: tuple[TouchEvent, ...]
    visual_model: ForwardModel
    params: TouchParams

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def event_at(self, t: float) -> TouchEvent | None:
        for ev in self.events:
            if ev.active and ev.t_onset <= t <= ev.t_offset:
                return ev
        return None

    def at_time(self, t: float) -> BoundTouchModel | None:
        ev = self.event_at(t)
        if ev is None:
            return None
        return BoundTouchModel(ev, self.visual_model, self.params)

    def observation_at(self, t: float) -> float | None:
        ev = self.event_at(t)
        if ev is None:
            return None
        return tactile_observation(ev, self.params)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def save_skin_csv(frames: Sequence[SkinFrame], path: str | Path) -> None:
    """CSV with columns t, prox_1..prox_117."""
    n_cells = frames[0].proximities.shape[0] if frames else SKIN_CELLS
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t"] + [f"prox_{i + 1}" for i in range(n_cells)])
        for fr in frames:
            w.writerow([repr(float(fr.t))] + [repr(float(v)) for v in fr.proximities])


def load_skin_csv(path: str | Path) -> list[SkinFrame]:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        next(r)
        return [SkinFrame(t=float(row[0]),
                          proximities=np.asarray([float(v) for v in row[1:]]))
                for row in r if row]


def save_other_csv(trajectory: np.ndarray, path: str | Path) -> None:
    """CSV with columns t, u, v (other hand pixel trajectory)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "u", "v"])
        for row in trajectory:
            w.writerow([repr(float(v)) for v in row])


def load_other_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        next(r)
        return np.asarray([[float(v) for v in row] for row in r if row])


def events_to_json(events: Sequence[TouchEvent], path: str | Path) -> None:
    recs = [{"t_onset": ev.t_onset, "t_offset": ev.t_offset, "delta": ev.delta,
             "o_v": ev.o_v.tolist(), "active": ev.active} for ev in events]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(recs, f, sort_keys=True, indent=1)


def events_from_json(path: str | Path) -> list[TouchEvent]:
    with open(path, encoding="utf-8") as f:
        recs = json.load(f)
    return [TouchEvent(o_v=np.asarray(r["o_v"], float), delta=r["delta"],
                       active=r["active"], t_onset=r["t_onset"],
                       t_offset=r["t_offset"]) for r in recs]
