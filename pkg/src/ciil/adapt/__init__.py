from .context import GRASP_RADIUS, ContextSnapshot, Suitability, assess_context, make_pseudo_label
from .engine import AdaptBuffer, AdaptConfig, Adapter, AdaptReport, AdaptSample, adapt_step
from .spreading import build_affinity, label_spread, spread

__all__ = [
    "GRASP_RADIUS",
    "AdaptBuffer",
    "AdaptConfig",
    "AdaptReport",
    "AdaptSample",
    "Adapter",
    "ContextSnapshot",
    "Suitability",
    "adapt_step",
    "assess_context",
    "build_affinity",
    "label_spread",
    "make_pseudo_label",
    "spread",
]
