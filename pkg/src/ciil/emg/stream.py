"""Streaming windowing and causal pre-filtering of 8-channel EMG."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .. import N_CHANNELS, SAMPLE_RATE
from ..errors import ConfigError, MalformedInputError
from ..kernels import sosfilt_inplace

WINDOW_LENGTH = 400  # 200 ms at 2 kHz
WINDOW_STRIDE = 100  # 50 ms


@dataclass
class SampleBlock:
    """A contiguous chunk of samples, shape (8, n)."""

    channels: np.ndarray
    start_index: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        data = np.asarray(self.channels, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != N_CHANNELS:
            raise MalformedInputError(
                f"expected {N_CHANNELS} equal-length channels, got shape {data.shape}"
            )
        if self.sample_rate != SAMPLE_RATE:
            raise MalformedInputError(f"sample_rate must be {SAMPLE_RATE}")
        self.channels = data

    @classmethod
    def from_channels(cls, channels, start_index=0):
        lengths = {len(ch) for ch in channels}
        if len(lengths) > 1:
            raise MalformedInputError(f"channel length mismatch: {sorted(lengths)}")
        return cls(np.array([np.asarray(ch, dtype=np.float64) for ch in channels]), start_index)

    def __len__(self):
        return self.channels.shape[1]


@dataclass
class EmgWindow:
    data: np.ndarray
    start_index: int


@dataclass
class WindowAccumulator:
    """Residual samples carried between calls to :func:`push_samples`."""

    residual: np.ndarray = field(default_factory=lambda: np.zeros((N_CHANNELS, 0)))
    next_start: int = 0
    expected_index: int | None = None

    @property
    def n_residual(self):
        return self.residual.shape[1]


def push_samples(block: SampleBlock, state: WindowAccumulator) -> list[EmgWindow]:
    """Append ``block`` to the accumulator and emit every completed window."""
    if not isinstance(block, SampleBlock):
        block = SampleBlock.from_channels(block)
    if state.expected_index is not None and block.start_index != state.expected_index:
        raise MalformedInputError(
            f"non-contiguous block: expected start {state.expected_index}, got {block.start_index}"
        )
    if state.expected_index is None:
        state.next_start = block.start_index
    state.expected_index = block.start_index + len(block)

    buf = np.concatenate([state.residual, block.channels], axis=1)
    buf_start = state.expected_index - buf.shape[1]
    windows = []
    offset = state.next_start - buf_start
    while offset + WINDOW_LENGTH <= buf.shape[1]:
        windows.append(
            EmgWindow(buf[:, offset : offset + WINDOW_LENGTH].copy(), buf_start + offset)
        )
        offset += WINDOW_STRIDE
    state.next_start = buf_start + offset
    # keep only what a future window can still use
    state.residual = buf[:, offset:].copy()
    return windows


def window_count(n_samples: int) -> int:
    if n_samples < WINDOW_LENGTH:
        return 0
    return (n_samples - WINDOW_LENGTH) // WINDOW_STRIDE + 1


def batch_windows(data: np.ndarray) -> np.ndarray:
    """All windows of a finite (8, n) recording as a (k, 8, 400) array."""
    data = np.asarray(data, dtype=np.float64)
    k = window_count(data.shape[1])
    if k == 0:
        return np.zeros((0, data.shape[0], WINDOW_LENGTH))
    view = np.lib.stride_tricks.sliding_window_view(data, WINDOW_LENGTH, axis=1)
    return np.ascontiguousarray(view[:, ::WINDOW_STRIDE][:, :k].transpose(1, 0, 2))


@dataclass(frozen=True)
class FilterConfig:
    band_lo: float = 20.0
    band_hi: float = 450.0
    notch: float | None = 60.0
    notch_q: float = 30.0
    enabled: bool = True
    sample_rate: int = SAMPLE_RATE

    def validate(self):
        nyq = self.sample_rate / 2
        if not (0 < self.band_lo < self.band_hi < nyq):
            raise ConfigError(
                f"band edges must satisfy 0 < lo < hi < {nyq}: got {self.band_lo}, {self.band_hi}"
            )
        if self.notch is not None and not (0 < self.notch < nyq):
            raise ConfigError(f"notch frequency {self.notch} outside (0, {nyq})")

    def sos(self) -> np.ndarray:
        """Second-order sections: 4th-order Butterworth band-pass, then the notch."""
        self.validate()
        sos = signal.butter(
            2, [self.band_lo, self.band_hi], btype="bandpass", fs=self.sample_rate, output="sos"
        )
        if self.notch is not None:
            b, a = signal.iirnotch(self.notch, self.notch_q, fs=self.sample_rate)
            sos = np.vstack([sos, np.concatenate([b, a])[None, :]])
        return np.ascontiguousarray(sos, dtype=np.float64)


class StreamFilter:
    """Per-channel filter memory for one stream."""

    def __init__(self, cfg: FilterConfig | None = None, n_channels: int = N_CHANNELS):
        self.cfg = cfg or FilterConfig()
        self.sos = self.cfg.sos()
        self.n_channels = n_channels
        self.zi = np.zeros((self.sos.shape[0], n_channels, 2))

    def reset(self):
        self.zi[...] = 0.0

    def process(self, data: np.ndarray) -> np.ndarray:
        out = np.array(data, dtype=np.float64, order="C", copy=True)
        if out.shape[0] != self.n_channels:
            raise MalformedInputError(
                f"filter state has {self.n_channels} channels, data has {out.shape[0]}"
            )
        sosfilt_inplace(self.sos, out, self.zi)
        return out


def apply_filter(block: SampleBlock, cfg: FilterConfig, state: StreamFilter | None = None):
    """Filter one block; ``state`` carries memory across calls.

    Returns ``(filtered_block, state)``. A disabled config passes samples through.
    """
    cfg.validate()
    if not cfg.enabled:
        return SampleBlock(block.channels.copy(), block.start_index), state
    if state is None:
        state = StreamFilter(cfg, block.channels.shape[0])
    return SampleBlock(state.process(block.channels), block.start_index), state
