"""Desk-scale stand-in for the physical arm: ground-truth 3-DOF kinematics,
a pinhole camera, noisy sensor synthesis, exploration trajectories, and the
scripted other agent that produces visuo-tactile stimulation.

Every generator is deterministic under its seed.  All kinematic and camera
constants are simulator choices (tuned so the workspace fills roughly two
thirds of the 640x480 frame); they are not measured values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimator import SensorFrame
from .gp import SampleSet
from .touch import SKIN_CELLS, SkinFrame

RESOLUTION = (640, 480)


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class ArmModel:
    """3-DOF arm: vertical riser, then shoulder (yaw + pitch) and elbow (pitch)."""

    link_lengths: np.ndarray = field(default_factory=lambda: np.array([0.30, 0.25, 0.20]))
    base_pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    joint_limits: np.ndarray = field(
        default_factory=lambda: np.array([[-3.0, 3.0], [-3.0, 3.0], [-3.0, 3.0]]))

    def __post_init__(self):
        object.__setattr__(self, "link_lengths", np.asarray(self.link_lengths, float))
        object.__setattr__(self, "base_pose", np.asarray(self.base_pose, float))
        object.__setattr__(self, "joint_limits", np.asarray(self.joint_limits, float))
        if np.any(self.link_lengths <= 0):
            raise ValueError("link lengths must be positive")


def forward_kinematics(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """End-effector position for joint angles q = (yaw, pitch, elbow).

    p = base + [0,0,L1] + Rz(q1)Ry(q2)[L2,0,0] + Rz(q1)Ry(q2+q3)[L3,0,0].
    Raises ValueError when q violates the joint limits.
    """
    q = np.asarray(q, float)
    if q.shape != (3,):
        raise ValueError("q must be a 3-vector")
    lo, hi = arm.joint_limits[:, 0], arm.joint_limits[:, 1]
    if np.any(q < lo) or np.any(q > hi):
        raise ValueError(f"joint angles {q} outside limits")
    l1, l2, l3 = arm.link_lengths
    p = np.array([0.0, 0.0, l1])
    p = p + _rot_z(q[0]) @ _rot_y(q[1]) @ np.array([l2, 0.0, 0.0])
    p = p + _rot_z(q[0]) @ _rot_y(q[1] + q[2]) @ np.array([l3, 0.0, 0.0])
    return (arm.base_pose[:3, :3] @ p) + arm.base_pose[:3, 3]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; pose maps world points into camera coordinates
    (x right, y down, z forward).  Projections outside the frame or behind
    the camera are reported as not visible."""

    fx: float = 520.0
    fy: float = 520.0
    cx: float = 320.0
    cy: float = 240.0
    rotation: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, -1.0, 0.0],
                                          [0.0, 0.0, -1.0],
                                          [-1.0, 0.0, 0.0]]))
    position: np.ndarray = field(default_factory=lambda: np.array([1.2, 0.0, 0.50]))
    resolution: tuple[int, int] = RESOLUTION

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, float))
        object.__setattr__(self, "position", np.asarray(self.position, float))

    def project(self, p_world: np.ndarray) -> np.ndarray | None:
        pc = self.rotation @ (np.asarray(p_world, float) - self.position)
        if pc[2] <= 1e-6:
            return None
        u = self.cx + self.fx * pc[0] / pc[2]
        v = self.cy + self.fy * pc[1] / pc[2]
        w, h = self.resolution
        if not (0.0 <= u < w and 0.0 <= v < h):
            return None
        return np.array([u, v])


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian sensor noise; identical seed gives identical streams."""

    proprio_std: np.ndarray = field(default_factory=lambda: np.full(3, 0.02))
    visual_std: np.ndarray = field(default_factory=lambda: np.full(2, 2.0))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "proprio_std", np.asarray(self.proprio_std, float))
        object.__setattr__(self, "visual_std", np.asarray(self.visual_std, float))
        if np.any(self.proprio_std < 0) or np.any(self.visual_std < 0):
            raise ValueError("noise stds must be nonnegative")

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


@dataclass(frozen=True)
class ProprioceptionMap:
    """Joint-angle to sensor-reading map: linear, quadratic (x^2), or biased."""

    mode: str = "linear"
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.mode not in ("linear", "quadratic", "biased"):
            raise ValueError(f"unknown proprioception mode {self.mode!r}")
        object.__setattr__(self, "bias", np.asarray(self.bias, float))

    def apply(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, float)
        if self.mode == "quadratic":
            return q * q
        if self.mode == "biased":
            return q + self.bias
        return q.copy()


@dataclass(frozen=True)
class TruthRecord:
    """Exact state behind one observation: joint angles and pixel location."""

    t: float
    q: np.ndarray
    pixel: np.ndarray | None


def observe(arm: ArmModel, camera: CameraModel, noise: NoiseSpec,
            pmap: ProprioceptionMap, q: np.ndarray, t: float,
            rng: np.random.Generator) -> tuple[SensorFrame, TruthRecord]:
    """One noisy sensor tuple plus its ground truth.

    s_p = pmap(q) + noise; s_v = project(FK(q)) + noise in raw pixels when
    the end-effector is visible, else the visual channel is absent.
    """
    s_p = pmap.apply(q) + rng.normal(0.0, 1.0, 3) * noise.proprio_std
    pixel = camera.project(forward_kinematics(arm, q))
    s_v = None
    if pixel is not None:
        s_v = pixel + rng.normal(0.0, 1.0, 2) * noise.visual_std
    frame = SensorFrame(t=t, readings={"p": s_p, "v": s_v})
    return frame, TruthRecord(t=t, q=np.asarray(q, float), pixel=pixel)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    """Smooth random joint sweeps resembling horizontal displacements.

    Waypoints are drawn per joint from the given ranges and joined with
    cosine easing.  With elbow_amp = 0 the elbow stays near elbow_center
    (the 'learning trajectory that is uninformative about the elbow');
    with elbow_amp > 0 waypoints alternate +-elbow_amp so every draw has
    genuine elbow motion.
    """

    q1_range: tuple[float, float] = (-0.8, 0.8)
    q2_range: tuple[float, float] = (-0.7, 0.1)
    elbow_center: float = 0.35
    elbow_amp: float = 0.0
    elbow_jitter: float = 0.04
    n_waypoints: int = 12
    seed: int = 1

    def sample(self, n: int) -> np.ndarray:
        """n poses along the sweep, shape (n, 3)."""
        r = np.random.default_rng([self.seed, 17])
        nw = self.n_waypoints
        w1 = r.uniform(*self.q1_range, nw)
        w2 = r.uniform(*self.q2_range, nw)
        if self.elbow_amp > 0:
            signs = np.where(np.arange(nw) % 2 == 0, 1.0, -1.0)
            w3 = self.elbow_center + signs * self.elbow_amp * r.uniform(0.7, 1.0, nw)
        else:
            w3 = self.elbow_center + r.uniform(-self.elbow_jitter, self.elbow_jitter, nw)
        way = np.stack([w1, w2, w3], axis=1)
        ts = np.linspace(0.0, nw - 1.0, n)
        out = np.zeros((n, 3))
        for k, tt in enumerate(ts):
            i = min(int(tt), nw - 2)
            f = tt - i
            w = 0.5 - 0.5 * np.cos(np.pi * f)
            out[k] = way[i] * (1.0 - w) + way[i + 1] * w
        return out


def generate_exploration(arm: ArmModel, camera: CameraModel, noise: NoiseSpec,
                         pmap: ProprioceptionMap, spec: TrajectorySpec,
                         n: int = 46) -> SampleSet:
    """n (proprioceptive reading, visual pixel) training pairs along a sweep.

    Inputs are the noisy proprioceptive readings (the latent space the
    forward models are conditioned on); targets are noisy raw pixels.
    Raises if any pose projects outside the frame: exploration must be
    designed visible.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = noise.rng(stream=1)
    poses = spec.sample(n)
    inputs = np.zeros((n, 3))
    targets = np.zeros((n, 2))
    for i, q in enumerate(poses):
        frame, truth = observe(arm, camera, noise, pmap, q, t=float(i), rng=rng)
        if frame.get("v") is None:
            raise ValueError(f"exploration pose {q} is not visible to the camera")
        inputs[i] = frame.get("p")
        targets[i] = frame.get("v")
    return SampleSet(inputs=inputs, targets=targets)


# ---------------------------------------------------------------------------
# other agent + skin
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OtherAgentScript:
    """Approach-dwell-retreat script for the other agent's hand.

    The hand moves in pixel space from start_px to the dwell target, holds
    through each (dwell_start, dwell_duration) window, and retreats.  The
    dwell target is target_px + perturbation_px.  Skin contact is synthesized
    during the dwells, shifted by tactile_shift (asynchronous stimulation
    when the shift exceeds the pairing window).
    """

    target_px: np.ndarray
    start_px: np.ndarray = field(default_factory=lambda: np.array([40.0, 60.0]))
    dwells: tuple[tuple[float, float], ...] = ((6.0, 3.0),)
    perturbation_px: np.ndarray = field(default_factory=lambda: np.zeros(2))
    tactile_shift: float = 0.0
    travel_time: float = 1.5
    dt: float = 0.05
    duration: float = 30.0
    contact_cells: tuple[int, ...] = (40, 41, 42, 55, 56)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target_px", np.asarray(self.target_px, float))
        object.__setattr__(self, "start_px", np.asarray(self.start_px, float))
        object.__setattr__(self, "perturbation_px", np.asarray(self.perturbation_px, float))


def simulate_other_agent(script: OtherAgentScript) -> tuple[np.ndarray, list[SkinFrame]]:
    """Other-hand pixel trajectory plus the synchronized skin recording.

    Returns (trajectory rows (t, u, v), skin frames).  Proximities rest near
    0.05 and rise above 0.9 during contact, with cosine ramps so the dwell
    detector sees a clean stop.
    """
    r = np.random.default_rng([script.seed, 23])
    n = int(round(script.duration / script.dt)) + 1
    ts = np.arange(n) * script.dt
    goal = script.target_px + script.perturbation_px

    pos = np.tile(script.start_px, (n, 1)).astype(float)
    for t_on, dur in script.dwells:
        t_arrive = t_on
        t_leave = t_on + dur
        for i, t in enumerate(ts):
            if t_arrive - script.travel_time <= t < t_arrive:
                f = (t - (t_arrive - script.travel_time)) / script.travel_time
                w = 0.5 - 0.5 * np.cos(np.pi * f)
                pos[i] = script.start_px * (1 - w) + goal * w
            elif t_arrive <= t <= t_leave:
                pos[i] = goal
            elif t_leave < t <= t_leave + script.travel_time:
                f = (t - t_leave) / script.travel_time
                w = 0.5 - 0.5 * np.cos(np.pi * f)
                pos[i] = goal * (1 - w) + script.start_px * w

    base = 0.05 + 0.01 * r.standard_normal((n, SKIN_CELLS))
    prox = np.clip(base, 0.0, 0.3)
    ramp = 0.2
    for t_on, dur in script.dwells:
        c_on = t_on + script.tactile_shift
        c_off = c_on + dur
        for i, t in enumerate(ts):
            if c_on <= t <= c_off:
                edge = min(t - c_on, c_off - t)
                level = 0.95 * min(1.0, edge / ramp + 0.5)
                for cell in script.contact_cells:
                    prox[i, cell] = max(prox[i, cell], level)

    traj = np.column_stack([ts, pos])
    frames = [SkinFrame(t=float(t), proximities=prox[i]) for i, t in enumerate(ts)]
    return traj, frames


# ---------------------------------------------------------------------------
# ground-truth file format
# ---------------------------------------------------------------------------

def save_truth_csv(records: Sequence[TruthRecord], path: str | Path) -> None:
    """CSV with columns t, q_1..q_3, u, v (pixels NaN when not visible)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "q_1", "q_2", "q_3", "u", "v"])
        for rec in records:
            px = rec.pixel if rec.pixel is not None else np.array([np.nan, np.nan])
            w.writerow([repr(float(rec.t))] + [repr(float(v)) for v in rec.q]
                       + [repr(float(v)) for v in px])


def load_truth_csv(path: str | Path) -> np.ndarray:
    """Rows (t, q1, q2, q3, u, v)."""
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        next(r)
        return np.asarray([[float(v) for v in row] for row in r if row])
