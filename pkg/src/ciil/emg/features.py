"""Time-domain power spectral descriptors (TDPSD)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import N_CHANNELS
from ..errors import MalformedInputError
from ..kernels import tdpsd_batch
from .stream import WINDOW_LENGTH, EmgWindow

N_FEATURES = 6
LAMBDA = 0.1
EPS = 1e-10
FEATURE_NAMES = ("m0", "m0_m2", "m0_m4", "sparseness", "irregularity", "wl_ratio")


@dataclass
class FeatureFrame:
    """6 x 8 feature matrix (feature, channel)."""

    values: np.ndarray
    source_start_index: int = 0


def _as_window_array(window) -> tuple[np.ndarray, int]:
    if isinstance(window, EmgWindow):
        data, start = window.data, window.start_index
    else:
        data, start = window, 0
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.shape != (N_CHANNELS, WINDOW_LENGTH):
        raise MalformedInputError(
            f"window must be {N_CHANNELS}x{WINDOW_LENGTH}, got {data.shape}"
        )
    return data, start


def extract_tdpsd(window) -> FeatureFrame:
    data, start = _as_window_array(window)
    return FeatureFrame(tdpsd_batch(data[None], LAMBDA, EPS)[0], start)


def extract_tdpsd_batch(windows: np.ndarray) -> np.ndarray:
    """(k, 8, 400) windows -> (k, 6, 8) features."""
    arr = np.ascontiguousarray(windows, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != (N_CHANNELS, WINDOW_LENGTH):
        raise MalformedInputError(f"expected (k, 8, 400) windows, got {arr.shape}")
    if arr.shape[0] == 0:
        return np.zeros((0, N_FEATURES, N_CHANNELS))
    return tdpsd_batch(arr, LAMBDA, EPS)
