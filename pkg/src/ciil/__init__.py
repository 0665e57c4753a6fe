"""Context-informed incremental learning for EMG gesture control."""

from .kernels import BACKEND

N_CHANNELS = 8
N_CLASSES = 8
SAMPLE_RATE = 2000

__version__ = "0.1.0"
__all__ = ["BACKEND", "N_CHANNELS", "N_CLASSES", "SAMPLE_RATE"]
