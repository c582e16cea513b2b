import numpy as np
import pytest

from bodyschema.gp import SampleSet, default_hyperparams, train
from bodyschema.harness import PixelMap
from bodyschema.simulator import (ArmModel, CameraModel, NoiseSpec,
                                  ProprioceptionMap, TrajectorySpec,
                                  generate_exploration)


def make_visual_model(seed=0, n=46, elbow_amp=0.0, noise=True,
                      noise_variance=None):
    """Train a visual forward model from simulated exploration.

    Returns (model, pixel_map, samples) with targets in visual channel units.
    """
    arm = ArmModel()
    camera = CameraModel()
    stds = NoiseSpec(seed=seed) if noise else NoiseSpec(
        proprio_std=np.zeros(3), visual_std=np.zeros(2), seed=seed)
    traj = TrajectorySpec(elbow_amp=elbow_amp, seed=seed)
    samples = generate_exploration(arm, camera, stds, ProprioceptionMap(),
                                   traj, n=n)
    pixel_map = PixelMap(offset=samples.targets.mean(axis=0))
    normalized = SampleSet(inputs=samples.inputs,
                           targets=pixel_map.to_units(samples.targets))
    hyper = default_hyperparams(3)
    if noise_variance is not None:
        from dataclasses import replace
        hyper = replace(hyper, noise_variance=noise_variance)
    return train(normalized, hyper), pixel_map, normalized


@pytest.fixture(scope="session")
def visual_model():
    model, pixel_map, samples = make_visual_model(seed=0)
    return model


@pytest.fixture(scope="session")
def visual_setup():
    return make_visual_model(seed=0)
