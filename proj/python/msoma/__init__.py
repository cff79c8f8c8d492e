"""Multi-setup Bayesian FFT operational modal analysis."""

import json
import os

from ._msoma import (
    ConfigError,
    InputError,
    NumericalError,
    frf,
    mac,
    scaled_fft,
    shear_frame_preset,
    shear_frame_records,
    theta_size,
)
from . import _msoma

__all__ = [
    "ConfigError",
    "InputError",
    "NumericalError",
    "frf",
    "identify",
    "mac",
    "pcm",
    "scaled_fft",
    "shear_frame_preset",
    "shear_frame_records",
    "theta_size",
]


def identify(config, accelerate=True):
    """Run EM on the setups described by an analysis config; returns the MPV as a dict."""
    return json.loads(_msoma.identify_json(os.fspath(config), accelerate))


def pcm(config, mpv):
    """Posterior covariance summary at a written MPV file."""
    return json.loads(_msoma.pcm_json(os.fspath(config), os.fspath(mpv)))
