"""Multisensory body estimation for a simulated robot arm.

Sensor forward models are learned by Gaussian process regression; the body
configuration is inferred by integrating precision-weighted prediction
errors.  See the harness module for the end-to-end experiments.
"""

from .estimator import (BodyState, DivergenceError, EstimatorConfig,
                        EstimatorState, SensorChannel, SensorFrame,
                        TrajectoryLog, compute_prediction_errors,
                        compute_state_derivative, free_energy, init_state,
                        run, step)
from .forward import ForwardModel, IdentityModel, QuadraticModel, SelectionModel
from .gp import (GPHyperparams, GPModel, GPTrainingError, SampleSet,
                 default_hyperparams, kernel, kernel_matrix, train)
from .kalman import KFConfig, KFState, kf_step, run_kf
from .simulator import (ArmModel, CameraModel, NoiseSpec, OtherAgentScript,
                        ProprioceptionMap, TrajectorySpec, forward_kinematics,
                        generate_exploration, observe, simulate_other_agent)
from .touch import (SkinFrame, TouchChannelModel, TouchEvent, TouchParams,
                    detect_tactile_events, detect_visual_events, pair_events,
                    tactile_observation, touch_likelihood,
                    touch_likelihood_gradient)

__version__ = "0.1.0"
