"""Logistic regression under known class-conditional label noise."""

import json

from . import _core
from ._core import (
    Error,
    __version__,
    case_control_gamma,
    fit,
    h,
    infer,
    info_matrices,
    loss,
    observed_auc,
    pu_noise_rates,
)


def run_study(config):
    """Run a Monte-Carlo study. `config` is a dict or JSON text."""
    if not isinstance(config, str):
        config = json.dumps(config)
    return _core.run_study(config)


__all__ = [
    "Error",
    "__version__",
    "case_control_gamma",
    "fit",
    "h",
    "infer",
    "info_matrices",
    "loss",
    "observed_auc",
    "pu_noise_rates",
    "run_study",
]
