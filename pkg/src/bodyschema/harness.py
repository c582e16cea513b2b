"""Experiment orchestration: dataset generation, model training, estimation
runs, baselines, and metric reports for the five desk-scale experiments.

A run directory is self-describing: spec.json pins the fully resolved
experiment configuration, manifest.json pins seeds and file hashes, and every
stage refuses to consume artifacts whose hashes disagree with the manifest.
The whole generate -> train -> run -> report pipeline is byte-reproducible
under a fixed seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import touch as touchmod
from .estimator import (DivergenceError, EstimatorConfig, SensorChannel,
                        SensorFrame, TrajectoryLog, init_state, run)
from .forward import IdentityModel, QuadraticModel, SelectionModel
from .gp import GPModel, SampleSet, default_hyperparams, train
from .kalman import KFConfig, KFState, run_kf
from .simulator import (ArmModel, CameraModel, NoiseSpec, OtherAgentScript,
                        ProprioceptionMap, TrajectorySpec, TruthRecord,
                        forward_kinematics, generate_exploration, load_truth_csv,
                        observe, save_truth_csv, simulate_other_agent)

VISUAL_UNIT_PX = 100.0   # pixels per visual channel unit


class UsageError(Exception):
    """Invalid spec or arguments; maps to exit code 2."""


class MissingArtifactError(Exception):
    """Required file absent or hash mismatch; maps to exit code 4."""


@dataclass(frozen=True)
class PixelMap:
    """Affine map between raw pixels and the visual channel's working units.

    The channel operates on (pixel - offset) / scale; the scale keeps the
    learned model's Jacobians of order one so the fixed-step integration of
    the visual loop stays stable at the default error variance.
    """

    offset: np.ndarray
    scale: float = VISUAL_UNIT_PX

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, float))

    def to_units(self, px: np.ndarray) -> np.ndarray:
        return (np.asarray(px, float) - self.offset) / self.scale

    def to_pixels(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, float) * self.scale + self.offset

    def to_json_dict(self) -> dict:
        return {"offset": self.offset.tolist(), "scale": self.scale}

    @classmethod
    def from_json_dict(cls, d: dict) -> "PixelMap":
        return cls(offset=np.asarray(d["offset"], float), scale=float(d["scale"]))


@dataclass(frozen=True)
class RunArm:
    """One estimation run within an experiment.

    kind is 'estimator' or 'kf'; channels use the vocabulary p (all joints),
    p13 (joints 1 and 3), v (visual), t (tactile).  touch_variant selects
    which generated stimulation files feed the tactile channel.
    """

    label: str
    channels: tuple[str, ...] = ()
    kind: str = "estimator"
    touch_variant: str | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully resolved experiment configuration (the checked-in defaults)."""

    name: str = "custom"
    seed: int = 0
    duration: float = 30.0
    n_samples: int = 46

    # training sweep (elbow_amp 0 reproduces the elbow-uninformative learning)
    train_q1_range: tuple[float, float] = (-0.8, 0.8)
    train_q2_range: tuple[float, float] = (-0.7, 0.1)
    train_elbow_amp: float = 0.0

    # scenario
    scenario: str = "sweep"                    # sweep | constant | hold_then_sweep
    scenario_elbow_amp: float = 0.45
    constant_pose: tuple[float, float, float] | None = None
    hold_s: float = 5.0
    motion_amp: tuple[float, float, float] = (0.15, 0.15, 0.1)
    prior_offset: tuple[float, float, float] = (0.2, -0.2, 0.15)
    prior_pose: tuple[float, float, float] | None = None

    # sensor noise
    proprio_std: tuple[float, float, float] = (0.02, 0.02, 0.02)
    visual_std: tuple[float, float] = (2.0, 2.0)

    # estimator parameters
    dt: float = 0.05
    lam: float = 1.0
    sigma_p: tuple[float, float, float] = (1.0, 1.0, 1.0)
    sigma_v: tuple[float, float] = (5.0, 5.0)
    sigma_x: tuple[float, float, float] = (1.0, 1.0, 1.0)
    sigma_t: float = 1.0

    # proprioception map used for the estimation scenario
    run_proprio_mode: str = "linear"           # linear | quadratic | biased
    run_proprio_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)

    # visuo-tactile stimulation (dwell runs to the end of the scenario so the
    # drift is measured under active stimulation)
    touch_variants: tuple[str, ...] = ()       # subset of {sync, async}
    touch_dwell_start: float = 6.0
    touch_dwell_duration: float = 24.0
    async_shift: float = 2.0
    perturbation_px: tuple[float, float] = (50.0, 0.0)
    tactile_gain: float = 2.0                  # a1*a2/sigma_t knob

    # metrics
    post_transient_s: float = 5.0

    arms: tuple[RunArm, ...] = (RunArm("pv", ("p", "v")),)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["arms"] = [asdict(a) for a in self.arms]
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        d["arms"] = tuple(
            RunArm(label=a["label"], channels=tuple(a.get("channels", ())),
                   kind=a.get("kind", "estimator"),
                   touch_variant=a.get("touch_variant"))
            for a in d.get("arms", []))
        for key, val in list(d.items()):
            if isinstance(val, list):
                d[key] = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        return cls(**d)

    # derived pieces -------------------------------------------------------

    def noise(self) -> NoiseSpec:
        return NoiseSpec(proprio_std=np.asarray(self.proprio_std),
                         visual_std=np.asarray(self.visual_std), seed=self.seed)

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(dt=self.dt, lam=self.lam,
                               sigma_x=np.asarray(self.sigma_x))

    def train_trajectory(self) -> TrajectorySpec:
        return TrajectorySpec(q1_range=self.train_q1_range,
                              q2_range=self.train_q2_range,
                              elbow_amp=self.train_elbow_amp,
                              seed=self.seed)

    def run_pmap(self) -> ProprioceptionMap:
        return ProprioceptionMap(mode=self.run_proprio_mode,
                                 bias=np.asarray(self.run_proprio_bias))

    def learning_pmap(self) -> ProprioceptionMap:
        # the damaged-sensor drift is injected after learning
        mode = "linear" if self.run_proprio_mode == "biased" else self.run_proprio_mode
        return ProprioceptionMap(mode=mode)

    def touch_params(self) -> touchmod.TouchParams:
        base = touchmod.TouchParams()
        a2 = self.tactile_gain * self.sigma_t / base.a1
        return replace(base, a2=a2) if a2 != base.a2 else base

    def proprio_model(self):
        if self.run_proprio_mode == "quadratic":
            return QuadraticModel(3)
        return IdentityModel(3)   # bias, if any, is unknown to the estimator


def _fig6a() -> tuple[tuple, tuple]:
    truth = (-0.9550, -0.8692, 0.7532)
    prior = (-0.8, 0.70, 0.60)
    return truth, prior


def preset(name: str, seed: int = 0) -> ExperimentSpec:
    """Built-in experiment specs by name."""
    if name == "ablation":
        return ExperimentSpec(
            name=name, seed=seed, duration=30.0,
            arms=(RunArm("pv", ("p", "v")), RunArm("p13v", ("p13", "v")),
                  RunArm("v", ("v",)), RunArm("kf", kind="kf")),
        )
    if name == "nonlinear_proprio":
        truth, prior = _fig6a()
        return ExperimentSpec(
            name=name, seed=seed, duration=20.0,
            scenario="hold_then_sweep", constant_pose=truth, prior_pose=prior,
            motion_amp=(0.12, 0.12, 0.08),
            run_proprio_mode="quadratic",
            arms=(RunArm("p", ("p",)),),
        )
    if name == "damaged_sensor":
        return ExperimentSpec(
            name=name, seed=seed, duration=30.0,
            scenario="sweep", scenario_elbow_amp=0.0,
            prior_offset=(0.1, -0.1, 0.05),
            run_proprio_mode="biased", run_proprio_bias=(0.3, 0.0, 0.0),
            arms=(RunArm("p", ("p",)), RunArm("pv", ("p", "v"))),
        )
    if name == "prior_bias":
        truth, prior = _fig6a()
        return ExperimentSpec(
            name=name, seed=seed, duration=15.0,
            scenario="constant", constant_pose=truth, prior_pose=prior,
            train_q1_range=(-1.1, 1.1), train_q2_range=(-1.0, 0.15),
            train_elbow_amp=0.45,
            arms=(RunArm("p", ("p",)), RunArm("pv", ("p", "v"))),
        )
    if name == "rubber_hand":
        return ExperimentSpec(
            name=name, seed=seed, duration=30.0,
            scenario="constant", constant_pose=(0.2, -0.3, 0.35),
            prior_offset=(0.05, -0.05, 0.03),
            touch_variants=("sync", "async"),
            arms=(RunArm("sync", ("p", "t"), touch_variant="sync"),
                  RunArm("async", ("p", "t"), touch_variant="async"),
                  RunArm("control", ("p",))),
        )
    if name == "custom":
        return ExperimentSpec(name=name, seed=seed)
    raise UsageError(f"unknown experiment preset {name!r}")


def resolve_spec(spec_arg: str, seed: int | None = None,
                 overrides: dict | None = None) -> ExperimentSpec:
    """Resolve --spec (preset name or JSON file) plus overrides into a spec."""
    path = Path(spec_arg)
    if path.suffix == ".json" or path.is_file():
        if not path.is_file():
            raise MissingArtifactError(f"spec file not found: {path}")
        with open(path, encoding="utf-8") as f:
            spec = ExperimentSpec.from_json_dict(json.load(f))
    else:
        spec = preset(spec_arg, seed=seed if seed is not None else 0)
    if seed is not None:
        spec = replace(spec, seed=seed)
    if overrides:
        valid = set(spec.to_json_dict().keys())
        clean = {}
        for key, val in overrides.items():
            if key not in valid or key == "arms":
                raise UsageError(f"unknown override key {key!r}")
            current = getattr(spec, key)
            if isinstance(current, tuple):
                val = tuple(val) if isinstance(val, (list, tuple)) else (val,)
            clean[key] = val
        spec = replace(spec, **clean)
    return spec


# ---------------------------------------------------------------------------
# file plumbing
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=1)


def _load_manifest(outdir: Path) -> dict:
    path = outdir / "manifest.json"
    if not path.is_file():
        raise MissingArtifactError(f"manifest not found in {outdir}")
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _update_manifest(outdir: Path, manifest: dict, names: Sequence[str]) -> None:
    files = manifest.setdefault("files", {})
    for name in names:
        files[name] = _sha256(outdir / name)
    _write_json(manifest, outdir / "manifest.json")


def _check_artifact(outdir: Path, manifest: dict, name: str) -> Path:
    path = outdir / name
    if not path.is_file():
        raise MissingArtifactError(f"missing artifact {name} in {outdir}")
    recorded = manifest.get("files", {}).get(name)
    if recorded is None:
        raise MissingArtifactError(f"{name} not recorded in manifest of {outdir}")
    if _sha256(path) != recorded:
        raise MissingArtifactError(f"hash mismatch for {name} in {outdir}")
    return path


def save_frames_csv(frames: Sequence[SensorFrame], path: Path) -> None:
    """Scenario sensor stream: t, s_p_1..3, s_v_1..2 (pixels; NaN when the
    visual channel is absent), v_avail flag."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["t", "s_p_1", "s_p_2", "s_p_3", "s_v_1", "s_v_2", "v_avail"])
        for fr in frames:
            sp = fr.get("p")
            sv = fr.get("v")
            row = [repr(float(fr.t))] + [repr(float(v)) for v in sp]
            if sv is None:
                row += ["nan", "nan", "0"]
            else:
                row += [repr(float(v)) for v in sv] + ["1"]
            w.writerow(row)


def load_frames_csv(path: Path) -> list[SensorFrame]:
    frames = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        next(r)
        for row in r:
            if not row:
                continue
            t = float(row[0])
            sp = np.asarray([float(v) for v in row[1:4]])
            sv = np.asarray([float(row[4]), float(row[5])]) if row[6] == "1" else None
            frames.append(SensorFrame(t=t, readings={"p": sp, "v": sv}))
    return frames


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def scenario_truth(spec: ExperimentSpec) -> np.ndarray:
    """Ground-truth joint trajectory for the scenario, one row per frame."""
    n = int(round(spec.duration / spec.dt))
    if n == 0:
        return np.zeros((0, 3))
    if spec.scenario == "constant":
        if spec.constant_pose is None:
            raise UsageError("constant scenario requires constant_pose")
        return np.tile(np.asarray(spec.constant_pose, float), (n, 1))
    if spec.scenario == "sweep":
        traj = TrajectorySpec(q1_range=spec.train_q1_range,
                              q2_range=spec.train_q2_range,
                              elbow_amp=spec.scenario_elbow_amp,
                              seed=spec.seed + 1)
        return traj.sample(n)
    if spec.scenario == "hold_then_sweep":
        if spec.constant_pose is None:
            raise UsageError("hold_then_sweep scenario requires constant_pose")
        pose = np.asarray(spec.constant_pose, float)
        n_hold = min(n, int(round(spec.hold_s / spec.dt)))
        out = np.tile(pose, (n, 1))
        n_move = n - n_hold
        if n_move > 0:
            r = np.random.default_rng([spec.seed, 29])
            amp = np.asarray(spec.motion_amp, float)
            nw = 6
            way = pose + r.uniform(-amp, amp, (nw, 3))
            way[0] = pose
            ts = np.linspace(0.0, nw - 1.0, n_move)
            for k, tt in enumerate(ts):
                i = min(int(tt), nw - 2)
                ff = tt - i
                w = 0.5 - 0.5 * np.cos(np.pi * ff)
                out[n_hold + k] = way[i] * (1.0 - w) + way[i + 1] * w
        return out
    raise UsageError(f"unknown scenario {spec.scenario!r}")


def cmd_generate(spec: ExperimentSpec, outdir: str | Path) -> Path:
    """Write the dataset for an experiment under a fresh run directory."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    arm = ArmModel()
    camera = CameraModel()
    noise = spec.noise()

    samples = generate_exploration(arm, camera, noise, spec.learning_pmap(),
                                   spec.train_trajectory(), n=spec.n_samples)
    samples.save_csv(outdir / "samples.csv")

    truth_q = scenario_truth(spec)
    rng = noise.rng(stream=2)
    pmap = spec.run_pmap()
    frames: list[SensorFrame] = []
    records: list[TruthRecord] = []
    for k, q in enumerate(truth_q):
        t = (k + 1) * spec.dt
        frame, rec = observe(arm, camera, noise, pmap, q, t=t, rng=rng)
        frames.append(frame)
        records.append(rec)
    save_frames_csv(frames, outdir / "frames.csv")
    save_truth_csv(records, outdir / "truth.csv")

    names = ["samples.csv", "frames.csv", "truth.csv"]
    if spec.touch_variants:
        if spec.scenario != "constant":
            raise UsageError("touch stimulation requires a constant-pose scenario")
        true_px = camera.project(forward_kinematics(arm, np.asarray(spec.constant_pose)))
        if true_px is None:
            raise UsageError("constant pose not visible to the camera")
        for variant in spec.touch_variants:
            script = OtherAgentScript(
                target_px=true_px,
                dwells=((spec.touch_dwell_start, spec.touch_dwell_duration),),
                perturbation_px=np.asarray(spec.perturbation_px),
                tactile_shift=spec.async_shift if variant == "async" else 0.0,
                dt=spec.dt, duration=spec.duration, seed=spec.seed,
            )
            other, skin = simulate_other_agent(script)
            touchmod.save_other_csv(other, outdir / f"other_{variant}.csv")
            touchmod.save_skin_csv(skin, outdir / f"skin_{variant}.csv")
            names += [f"other_{variant}.csv", f"skin_{variant}.csv"]

    _write_json(spec.to_json_dict(), outdir / "spec.json")
    manifest = {"seed": spec.seed, "spec_name": spec.name, "files": {}}
    _write_json(manifest, outdir / "manifest.json")
    _update_manifest(outdir, manifest, names + ["spec.json"])
    return outdir


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(outdir: str | Path) -> GPModel:
    """Train the visual forward model on the run directory's samples.

    Targets are centered on their mean and scaled to visual channel units
    before regression; the transform is stored next to the model so every
    consumer normalizes identically.
    """
    outdir = Path(outdir)
    manifest = _load_manifest(outdir)
    samples_path = _check_artifact(outdir, manifest, "samples.csv")
    samples = SampleSet.load_csv(samples_path)

    pixel_map = PixelMap(offset=samples.targets.mean(axis=0))
    normalized = SampleSet(inputs=samples.inputs,
                           targets=pixel_map.to_units(samples.targets))
    hyper = default_hyperparams(samples.inputs.shape[1])
    model = train(normalized, hyper)

    doc = {"gp": model.to_json_dict(), "pixel_map": pixel_map.to_json_dict()}
    _write_json(doc, outdir / "visual_model.json")

    residuals = np.asarray([model.predict(x) for x in normalized.inputs]) \
        - normalized.targets
    sigma_n = float(np.sqrt(hyper.noise_variance))
    summary = {
        "n_samples": len(samples),
        "noise_std": sigma_n,
        "length_scales": hyper.length_scales.tolist(),
        "signal_variance": hyper.signal_variance,
        "residual_rms": float(np.sqrt(np.mean(residuals**2))),
        "residual_max_abs": float(np.max(np.abs(residuals))),
        "frac_within_3_sigma_n": float(np.mean(np.abs(residuals) <= 3 * sigma_n)),
    }
    _write_json(summary, outdir / "train_summary.json")
    _update_manifest(outdir, manifest, ["visual_model.json", "train_summary.json"])
    return model


def load_visual_model(outdir: Path, manifest: dict) -> tuple[GPModel, PixelMap]:
    path = _check_artifact(outdir, manifest, "visual_model.json")
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return GPModel.from_json_dict(doc["gp"]), PixelMap.from_json_dict(doc["pixel_map"])


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Post-transient scores for one run arm."""

    arm: str
    rmse_per_joint: list[float]
    rmse_total: float
    convergence_time_s: float | None
    final_pred_v: list[float] | None
    channel_mean_abs_error: dict[str, float]
    post_transient_s: float

    def to_json_dict(self) -> dict:
        return asdict(self)


def compute_metrics(log: TrajectoryLog, spec: ExperimentSpec, arm_label: str,
                    visual_model: GPModel | None = None) -> MetricsReport:
    """Per-joint RMSE vs truth, convergence time into the 3x-noise band,
    the final believed visual location, and per-channel mean absolute
    precision-weighted errors.

    When a visual model is supplied, final_pred_v is evaluated through it for
    every arm (so drift is comparable between touch and control runs that do
    not carry a visual channel)."""
    have_truth = ~np.isnan(log.truth).all(axis=1)
    post = (log.t > spec.post_transient_s) & have_truth
    err = log.x_hat[post] - log.truth[post]
    if err.size:
        rmse_j = np.sqrt(np.mean(err**2, axis=0))
        rmse_total = float(np.sqrt(np.mean(err**2)))
    else:
        rmse_j = np.full(log.x_hat.shape[1], np.nan)
        rmse_total = float("nan")

    band = 3.0 * np.asarray(spec.proprio_std, float)
    conv: float | None = None
    ok = have_truth & np.all(np.abs(log.x_hat - np.nan_to_num(log.truth, nan=np.inf))
                             <= band, axis=1)
    for k in range(len(ok)):
        if have_truth[k] and ok[k:][have_truth[k:]].all():
            conv = float(log.t[k])
            break

    final_pred_v = None
    tail = log.t >= log.t[-1] - 2.0
    if visual_model is not None:
        preds = np.asarray([visual_model.predict(x) for x in log.x_hat[tail]])
        final_pred_v = preds.mean(axis=0).tolist()
    elif "v" in log.preds:
        final_pred_v = np.nanmean(log.preds["v"][tail], axis=0).tolist()

    sigma = {"p": np.asarray(spec.sigma_p), "v": np.asarray(spec.sigma_v),
             "t": np.asarray([spec.sigma_t])}
    ch_err = {}
    for cid, e in log.errors.items():
        s = sigma.get(cid, np.ones(e.shape[1]))
        if s.shape[0] != e.shape[1]:      # partial proprioception
            s = np.full(e.shape[1], float(s.flat[0]))
        ch_err[cid] = float(np.mean(np.abs(e[post] * s))) if err.size else float("nan")

    return MetricsReport(arm=arm_label, rmse_per_joint=rmse_j.tolist(),
                         rmse_total=rmse_total, convergence_time_s=conv,
                         final_pred_v=final_pred_v, channel_mean_abs_error=ch_err,
                         post_transient_s=spec.post_transient_s)


def _build_channels(arm: RunArm, spec: ExperimentSpec, model: GPModel | None,
                    pixel_map: PixelMap | None, outdir: Path,
                    manifest: dict) -> tuple[list[SensorChannel], touchmod.TouchChannelModel | None]:
    channels: list[SensorChannel] = []
    touch_model = None
    for name in arm.channels:
        if name == "p":
            channels.append(SensorChannel("p", 3, np.asarray(spec.sigma_p),
                                          spec.proprio_model()))
        elif name == "p13":
            if spec.run_proprio_mode == "quadratic":
                raise UsageError("p13 channel assumes linear joint sensing")
            channels.append(SensorChannel("p", 2,
                                          np.asarray(spec.sigma_p)[[0, 2]],
                                          SelectionModel((0, 2), 3)))
        elif name == "v":
            if model is None:
                raise MissingArtifactError("visual channel requires a trained model")
            channels.append(SensorChannel("v", 2, np.asarray(spec.sigma_v), model))
        elif name == "t":
            if model is None or pixel_map is None:
                raise MissingArtifactError("tactile channel requires a trained model")
            variant = arm.touch_variant or "sync"
            skin = touchmod.load_skin_csv(
                _check_artifact(outdir, manifest, f"skin_{variant}.csv"))
            other = touchmod.load_other_csv(
                _check_artifact(outdir, manifest, f"other_{variant}.csv"))
            params = spec.touch_params()
            tactile = touchmod.detect_tactile_events(skin, params)
            visual = touchmod.detect_visual_events(other, params)
            events_px = touchmod.pair_events(tactile, visual, params)
            touchmod.events_to_json(events_px, outdir / f"events_{variant}.json")
            events = [replace(ev, o_v=pixel_map.to_units(ev.o_v))
                      if np.all(np.isfinite(ev.o_v)) else ev for ev in events_px]
            touch_model = touchmod.TouchChannelModel(tuple(events), model, params)
            channels.append(SensorChannel("t", 1, np.asarray([spec.sigma_t]),
                                          touch_model))
        else:
            raise UsageError(f"unknown channel {name!r} in arm {arm.label!r}")
    return channels, touch_model


def _arm_frames(base: list[SensorFrame], arm: RunArm, spec: ExperimentSpec,
                pixel_map: PixelMap | None,
                touch_model: touchmod.TouchChannelModel | None) -> list[SensorFrame]:
    """Per-arm sensor stream: slice/normalize the shared readings."""
    uses_p13 = "p13" in arm.channels
    uses_v = "v" in arm.channels
    uses_t = "t" in arm.channels
    out = []
    for fr in base:
        readings: dict[str, np.ndarray | None] = {}
        sp = fr.get("p")
        if "p" in arm.channels:
            readings["p"] = sp
        elif uses_p13:
            readings["p"] = sp[[0, 2]]
        if uses_v:
            sv = fr.get("v")
            readings["v"] = None if sv is None else pixel_map.to_units(sv)
        if uses_t and touch_model is not None:
            obs = touch_model.observation_at(fr.t)
            readings["t"] = None if obs is None else np.array([obs])
        out.append(SensorFrame(t=fr.t, readings=readings))
    return out


def cmd_run(outdir: str | Path, arms: Sequence[str] | None = None) -> dict[str, MetricsReport]:
    """Execute the spec's run arms over the generated frame stream.

    Writes log_<arm>.csv and metrics_<arm>.json per arm.  DivergenceError
    propagates with its step index (exit code 3 at the CLI).
    """
    outdir = Path(outdir)
    manifest = _load_manifest(outdir)
    spec_path = _check_artifact(outdir, manifest, "spec.json")
    with open(spec_path, encoding="utf-8") as f:
        spec = ExperimentSpec.from_json_dict(json.load(f))

    frames = load_frames_csv(_check_artifact(outdir, manifest, "frames.csv"))
    truth_rows = load_truth_csv(_check_artifact(outdir, manifest, "truth.csv"))
    truth_q = truth_rows[:, 1:4] if truth_rows.size else np.zeros((0, 3))

    selected = list(spec.arms)
    if arms is not None:
        wanted = set(arms)
        unknown = wanted - {a.label for a in spec.arms}
        if unknown:
            raise UsageError(f"unknown arm labels: {sorted(unknown)}")
        selected = [a for a in spec.arms if a.label in wanted]

    needs_model = any(set(a.channels) & {"v", "t"} for a in selected)
    model = pixel_map = None
    if needs_model:
        model, pixel_map = load_visual_model(outdir, manifest)

    truth0 = truth_q[0] if len(truth_q) else np.zeros(3)
    mu0 = np.asarray(spec.prior_pose, float) if spec.prior_pose is not None \
        else truth0 + np.asarray(spec.prior_offset, float)

    cfg = spec.estimator_config()
    reports: dict[str, MetricsReport] = {}
    written: list[str] = []
    for arm in selected:
        if arm.kind == "kf":
            z = np.asarray([fr.get("p") for fr in frames]) if frames else np.zeros((0, 3))
            kf_cfg = KFConfig(process_noise=np.eye(3) * 0.001,
                              measurement_noise=np.diag(np.asarray(spec.sigma_p)))
            log = run_kf(z, KFState(mean=mu0, covariance=np.eye(3)), kf_cfg,
                         dt=spec.dt, truth=truth_q if len(truth_q) else None)
        else:
            channels, touch_model = _build_channels(arm, spec, model, pixel_map,
                                                    outdir, manifest)
            arm_frames = _arm_frames(frames, arm, spec, pixel_map, touch_model)
            initial = init_state(mu0, channels)
            log = run(arm_frames, initial, channels, cfg,
                      truth=truth_q if len(truth_q) else None)
        log.to_csv(outdir / f"log_{arm.label}.csv")
        rep = compute_metrics(log, spec, arm.label, visual_model=model)
        _write_json(rep.to_json_dict(), outdir / f"metrics_{arm.label}.json")
        reports[arm.label] = rep
        written += [f"log_{arm.label}.csv", f"metrics_{arm.label}.json"]
    for events_file in sorted(outdir.glob("events_*.json")):
        if events_file.name not in written:
            written.append(events_file.name)
    _update_manifest(outdir, manifest, written)
    return reports


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(run_dirs: Sequence[str | Path], outdir: str | Path,
               render_figures: bool = True) -> Path:
    """Aggregate metrics across runs into a comparison table and figures.

    Writes report.csv (one row per run arm, keyed by channel set) plus
    error-comparison and trace figures rendered from the trajectory logs.
    Re-reporting over the same inputs is idempotent.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise UsageError("report requires at least one run directory")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    rows = []
    curve_specs = []
    for rd in run_dirs:
        if not (rd / "manifest.json").is_file():
            raise MissingArtifactError(f"{rd} is not a run directory")
        manifest = _load_manifest(rd)
        for metrics_path in sorted(rd.glob("metrics_*.json")):
            with open(metrics_path, encoding="utf-8") as f:
                m = json.load(f)
            rows.append({
                "run_dir": rd.name,
                "arm": m["arm"],
                "rmse_1": m["rmse_per_joint"][0],
                "rmse_2": m["rmse_per_joint"][1],
                "rmse_3": m["rmse_per_joint"][2],
                "rmse_total": m["rmse_total"],
                "convergence_time_s": m["convergence_time_s"],
                "manifest_seed": manifest.get("seed"),
            })
            log_path = rd / f"log_{m['arm']}.csv"
            if log_path.is_file():
                curve_specs.append((f"{rd.name}/{m['arm']}", log_path))

    rows.sort(key=lambda r: (r["run_dir"], r["arm"]))
    report_path = outdir / "report.csv"
    with open(report_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        header = ["run_dir", "arm", "rmse_1", "rmse_2", "rmse_3", "rmse_total",
                  "convergence_time_s", "manifest_seed"]
        w.writerow(header)
        for r in rows:
            w.writerow([r[h] if r[h] is not None else "" for h in header])

    if render_figures and curve_specs:
        from .plots import render_error_compare, render_trace
        logs = {label: TrajectoryLog.from_csv(p) for label, p in curve_specs}
        render_error_compare(logs, outdir / "error_compare.png")
        for label, log in logs.items():
            safe = label.replace("/", "_")
            render_trace(log, outdir / f"trace_{safe}.png", title=label)
    return report_path
