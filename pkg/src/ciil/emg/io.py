"""CSV replay streams and feature dumps."""

from __future__ import annotations

import csv

import numpy as np

from .. import N_CHANNELS
from ..errors import MalformedInputError
from .features import N_FEATURES

STREAM_HEADER = ["index"] + [f"ch{k}" for k in range(N_CHANNELS)]
FEATURE_HEADER = ["start_index"] + [
    f"f{f + 1}_ch{c}" for f in range(N_FEATURES) for c in range(N_CHANNELS)
]


def write_stream_csv(path, data: np.ndarray, start_index: int = 0):
    data = np.asarray(data)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STREAM_HEADER)
        for i in range(data.shape[1]):
            w.writerow([start_index + i] + [repr(float(v)) for v in data[:, i]])


def read_stream_csv(path) -> tuple[np.ndarray, int]:
    """Returns (8 x n samples, first index)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != STREAM_HEADER:
            raise MalformedInputError(f"bad stream header: {header}")
        rows = [r for r in reader if r]
    if not rows:
        return np.zeros((N_CHANNELS, 0)), 0
    arr = np.array(rows, dtype=np.float64)
    idx = arr[:, 0].astype(np.int64)
    if np.any(np.diff(idx) != 1):
        raise MalformedInputError("stream indices must be consecutive")
    return np.ascontiguousarray(arr[:, 1:].T), int(idx[0])


def write_feature_csv(path, frames: np.ndarray, start_indices):
    frames = np.asarray(frames)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_HEADER)
        for start, frame in zip(start_indices, frames):
            w.writerow([int(start)] + [repr(float(v)) for v in frame.reshape(-1)])


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FEATURE_HEADER:
            raise MalformedInputError("bad feature header")
        rows = [r for r in reader if r]
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), 1 + N_FEATURES * N_CHANNELS)
    return arr[:, 1:].reshape(-1, N_FEATURES, N_CHANNELS), arr[:, 0].astype(np.int64)
