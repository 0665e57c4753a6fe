"""Context suitability and pseudo-label construction."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .. import N_CLASSES
from ..errors import UsageError

GRASP_RADIUS = 0.10


class Suitability(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NONE = "none"


@dataclass
class ContextSnapshot:
    time: float
    hand_pos: tuple[float, float, float]
    distance: float
    prediction: int
    probs: np.ndarray | None = None
    object_id: str | None = None
    allowed_grasps: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.distance < 0:
            raise ValueError("distance must be non-negative")
        if self.object_id is not None and not self.allowed_grasps:
            raise ValueError("an object in context needs at least one allowed grasp")


def assess_context(prediction: int, distance: float, allowed, radius: float = GRASP_RADIUS) -> Suitability:
    """Positive if the prediction is an allowed grasp within the radius (inclusive)."""
    if distance is None or distance > radius:
        return Suitability.NONE
    if not allowed:
        raise UsageError("allowed grasp set is empty inside the grasp radius")
    return Suitability.POSITIVE if prediction in allowed else Suitability.NEGATIVE


def make_pseudo_label(suitability: Suitability, prediction: int, allowed, n_classes: int = N_CLASSES):
    label = np.zeros(n_classes)
    if suitability == Suitability.POSITIVE:
        label[prediction] = 1.0
    elif suitability == Suitability.NEGATIVE:
        if not allowed:
            raise UsageError("negative context needs a non-empty allowed set")
        idx = sorted(allowed)
        label[idx] = 1.0 / len(idx)
    else:
        raise UsageError("no pseudo-label for windows outside every grasp radius")
    return label
