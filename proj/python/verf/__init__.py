"""Pose-estimate verification against rendered views."""

import json as _json

from ._core import (
    CameraIntrinsics,
    Pose,
    Scene,
    VerfError,
    disparity_confidence,
    essential_from_poses,
    generate_scene,
    normal_cdf,
    pnp_confidence,
    read_flo,
    render,
    sampson_distance,
    triangulate,
    verify,
)
from ._core import run_experiment as _run_experiment


def run_experiment(config):
    """Run a batch experiment. `config` is a dict or a JSON string."""
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _run_experiment(config)


__all__ = [
    "CameraIntrinsics",
    "Pose",
    "Scene",
    "VerfError",
    "disparity_confidence",
    "essential_from_poses",
    "generate_scene",
    "normal_cdf",
    "pnp_confidence",
    "read_flo",
    "render",
    "run_experiment",
    "sampson_distance",
    "triangulate",
    "verify",
]
