"""Synthetic EMG: class-dependent channel gains on band-limited noise."""

from __future__ import annotations

import numpy as np
from scipy import signal

from .. import N_CHANNELS, SAMPLE_RATE
from ..emg.stream import FilterConfig, SampleBlock, StreamFilter
from .config import ShiftParams, UserProfile

_BAND = FilterConfig(band_lo=20.0, band_hi=450.0, notch=None)
_WARMUP = 500  # samples discarded to reach filter steady state


def _noise_gain(sos) -> float:
    impulse = np.zeros(8000)
    impulse[0] = 1.0
    h = signal.sosfilt(sos, impulse)
    return float(np.sqrt(np.sum(h * h)))


_NORM = _noise_gain(_BAND.sos())


def rotate_gains(row: np.ndarray, rotation: float) -> np.ndarray:
    """Circular shift by a possibly fractional number of channels (linear blend)."""
    n = row.shape[0]
    whole = int(np.floor(rotation))
    frac = rotation - whole
    a = np.roll(row, whole)
    if frac == 0:
        return a
    return (1.0 - frac) * a + frac * np.roll(row, whole + 1)


def shifted_gains(profile: UserProfile, shift: ShiftParams | None) -> np.ndarray:
    g = np.asarray(profile.gain_matrix, dtype=np.float64)
    if shift is None:
        return g.copy()
    out = np.stack([rotate_gains(row, shift.channel_rotation) for row in g]) * shift.gain_scale
    drift = np.asarray(shift.bias_drift, dtype=np.float64)
    out = out + (drift[:, None] if drift.ndim == 1 else drift)
    return np.maximum(out, 0.0)


class SyntheticEmg:
    """Stateful generator; filter memory carries across blocks so the noise is continuous."""

    def __init__(self, profile: UserProfile, shift: ShiftParams | None = None, seed=0):
        self.profile = profile
        self.shift = shift
        self.gains = shifted_gains(profile, shift)
        self.noise_floor = shift.noise_floor if shift is not None else profile.noise_floor
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.filter = StreamFilter(_BAND, N_CHANNELS)
        self.index = 0
        self.filter.process(self.rng.standard_normal((N_CHANNELS, _WARMUP)))

    def samples(self, intent: int, n: int) -> np.ndarray:
        band = self.filter.process(self.rng.standard_normal((N_CHANNELS, n))) / _NORM
        gain = self.gains[intent]
        sigma = self.profile.class_sigma[intent]
        if sigma > 0:
            gain = gain * max(0.0, 1.0 + sigma * self.rng.standard_normal())
        out = gain[:, None] * band
        if self.noise_floor > 0:
            out += self.noise_floor * self.rng.standard_normal((N_CHANNELS, n))
        return out

    def block(self, intent: int, dt: float) -> SampleBlock:
        n = int(round(dt * SAMPLE_RATE))
        data = self.samples(intent, n)
        blk = SampleBlock(data, self.index)
        self.index += n
        return blk


def synth_emg(intent, profile, shift=None, dt=0.05, rng=None, state: SyntheticEmg | None = None):
    """One block of ``round(dt * 2000)`` samples for ``intent``.

    Pass ``state`` to continue a stream; without it a fresh generator seeded
    from ``rng`` is used.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    gen = state if state is not None else SyntheticEmg(profile, shift, rng if rng is not None else 0)
    return gen.block(intent, dt)
