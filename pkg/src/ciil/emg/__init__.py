from .features import FeatureFrame, extract_tdpsd, extract_tdpsd_batch
from .stream import (
    WINDOW_LENGTH,
    WINDOW_STRIDE,
    EmgWindow,
    FilterConfig,
    SampleBlock,
    StreamFilter,
    WindowAccumulator,
    apply_filter,
    batch_windows,
    push_samples,
    window_count,
)

__all__ = [
    "WINDOW_LENGTH",
    "WINDOW_STRIDE",
    "EmgWindow",
    "FeatureFrame",
    "FilterConfig",
    "SampleBlock",
    "StreamFilter",
    "WindowAccumulator",
    "apply_filter",
    "batch_windows",
    "extract_tdpsd",
    "extract_tdpsd_batch",
    "push_samples",
    "window_count",
]
