"""Sidelink multipath simulation, channel estimation, bounds and RTT positioning.

Modules:

* :mod:`geometry`: poses, paths, arrays, band plans and signal energetics.
* :mod:`scene`: image-method multipath for simple scenes and trajectories.
* :mod:`waveform`: steering vectors and noisy observation synthesis.
* :mod:`estimators`: MF, CPD / CPD-SA and ESPRIT-type estimators.
* :mod:`bounds`: resolution cells, path merging, FIMs and position error bounds.
* :mod:`positioning`: RTT protocol, measurement assembly and ML positioning.
* :mod:`harness`: Monte Carlo experiments, results CSV and summaries.
"""

from . import bounds, estimators, geometry, harness, positioning, scene, waveform
from .bounds import BoundReport, bound_report, position_bound
from .geometry import ArrayConfig, BandPlan, PathParam, Pose, SignalConfig
from .harness import ExperimentConfig, run_experiment, summarize
from .positioning import RttMeasurement, ml_position
from .scene import generate_paths
from .waveform import Observation, synthesize

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig", "BandPlan", "BoundReport", "ExperimentConfig", "Observation", "PathParam",
    "Pose", "RttMeasurement", "SignalConfig", "bound_report", "bounds", "estimators",
    "generate_paths", "geometry", "harness", "ml_position", "position_bound", "positioning",
    "run_experiment", "scene", "summarize", "synthesize", "waveform",
]
