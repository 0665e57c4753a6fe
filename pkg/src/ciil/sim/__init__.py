from .agent import Agent, agent_policy
from .config import (
    GestureSet,
    SceneConfig,
    SceneObject,
    ShiftParams,
    TrialConfig,
    UserProfile,
    digest,
    load_scene_config,
)
from .metrics import compute_metrics
from .scene import Scene, SceneEvent, load_scene
from .synth import SyntheticEmg, rotate_gains, shifted_gains, synth_emg

__all__ = [
    "Agent",
    "GestureSet",
    "Scene",
    "SceneConfig",
    "SceneEvent",
    "SceneObject",
    "ShiftParams",
    "SyntheticEmg",
    "TrialConfig",
    "UserProfile",
    "agent_policy",
    "compute_metrics",
    "digest",
    "load_scene",
    "load_scene_config",
    "rotate_gains",
    "shifted_gains",
    "synth_emg",
]
