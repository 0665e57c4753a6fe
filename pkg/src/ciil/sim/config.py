"""Scene, user, shift and trial configuration, loaded from JSON documents."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .. import N_CHANNELS, N_CLASSES
from ..errors import ConfigError


def _schema(name):
    return json.loads(resources.files("ciil.data").joinpath("schemas").joinpath(f"{name}.schema.json").read_text())


def load_json(source, kind: str | None = None) -> dict:
    """Read a config from a path, a JSON string, or pass a dict through.

    ``None`` loads the shipped default for ``kind``.
    """
    if source is None:
        if kind is None:
            raise ConfigError("no config given")
        return json.loads(resources.files("ciil.data").joinpath(f"default_{kind}.json").read_text())
    if isinstance(source, dict):
        return source
    try:
        return json.loads(Path(source).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {source}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {source}: {exc}") from exc


def validate(doc: dict, kind: str) -> None:
    try:
        jsonschema.validate(doc, _schema(kind))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{kind} config invalid at {where}: {exc.message}") from exc


def digest(doc) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class GestureSet:
    names: tuple[str, ...]
    grasp_classes: frozenset[int]
    unmapped_classes: frozenset[int]
    rest_class: int

    def __post_init__(self):
        everything = set(range(len(self.names)))
        if len(self.names) != N_CLASSES:
            raise ConfigError(f"gesture set must have {N_CLASSES} classes")
        if self.grasp_classes & self.unmapped_classes:
            raise ConfigError("a class cannot be both mapped and unmapped")
        if (self.grasp_classes | self.unmapped_classes) != everything:
            raise ConfigError("every class must be either mapped or unmapped")
        if self.rest_class not in self.unmapped_classes:
            raise ConfigError("the rest class must be unmapped")


@dataclass
class SceneObject:
    id: str
    position: np.ndarray
    target: np.ndarray
    allowed_grasps: tuple[int, ...]
    state: str = "on_source"  # on_source | held | dropped | completed


@dataclass
class SceneConfig:
    gestures: GestureSet
    objects: list[dict]
    hand_rest: tuple[float, float, float] = (0.0, 0.5, 0.2)
    target_radius: float = 0.10
    doc: dict = field(default_factory=dict, repr=False)


def load_scene_config(source=None) -> SceneConfig:
    doc = load_json(source, "scene")
    validate(doc, "scene")
    gest = sorted(doc["gestures"], key=lambda g: g["id"])
    if [g["id"] for g in gest] != list(range(N_CLASSES)):
        raise ConfigError("gesture ids must be exactly 0..7")
    gs = GestureSet(
        tuple(g["name"] for g in gest),
        frozenset(g["id"] for g in gest if g["mapped"]),
        frozenset(g["id"] for g in gest if not g["mapped"]),
        int(doc["rest_class"]),
    )
    seen = set()
    for obj in doc["objects"]:
        if obj["id"] in seen:
            raise ConfigError(f"duplicate object id {obj['id']!r}")
        seen.add(obj["id"])
        bad = [g for g in obj["allowed_grasps"] if g not in gs.grasp_classes]
        if bad:
            raise ConfigError(
                f"object {obj['id']!r} references unmapped or unknown grasp(s) {bad}"
            )
    return SceneConfig(
        gs,
        doc["objects"],
        tuple(doc.get("hand_rest", (0.0, 0.5, 0.2))),
        float(doc.get("target_radius", 0.10)),
        doc,
    )


@dataclass(frozen=True)
class TrialConfig:
    duration: float = 300.0
    grasp_radius: float = 0.10
    n_objects: int = 6
    hand_speed: float = 0.6
    hold_debounce: int = 3
    seed: int = 0
    stride: float = 0.05

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.n_objects < 1:
            raise ConfigError("need at least one object")
        if self.hold_debounce < 1:
            raise ConfigError("hold_debounce must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ShiftParams:
    channel_rotation: float = 0.5
    gain_scale: float = 0.8
    bias_drift: float | tuple[float, ...] = 0.0
    noise_floor: float = 0.05

    def __post_init__(self):
        if self.gain_scale <= 0:
            raise ConfigError("gain_scale must be positive")

    @classmethod
    def from_doc(cls, source=None) -> "ShiftParams":
        doc = load_json(source, "shift")
        validate(doc, "shift")
        drift = doc.get("bias_drift", 0.0)
        return cls(
            float(doc.get("channel_rotation", 0.5)),
            float(doc.get("gain_scale", 0.8)),
            tuple(drift) if isinstance(drift, list) else float(drift),
            float(doc.get("noise_floor", 0.05)),
        )

    def to_dict(self):
        d = asdict(self)
        if isinstance(self.bias_drift, tuple):
            d["bias_drift"] = list(self.bias_drift)
        return d


@dataclass(frozen=True)
class UserProfile:
    gain_matrix: np.ndarray
    class_sigma: np.ndarray
    noise_floor: float = 0.05
    reattempt_delay: int = 20
    relax_windows: int = 4
    preshape_distance: float = 0.25

    def __post_init__(self):
        g = np.asarray(self.gain_matrix, dtype=np.float64)
        if g.shape != (N_CLASSES, N_CHANNELS):
            raise ConfigError(f"gain_matrix must be {N_CLASSES}x{N_CHANNELS}")
        if np.any(g < 0):
            raise ConfigError("gains must be non-negative")
        for i in range(N_CLASSES):
            for j in range(i + 1, N_CLASSES):
                if np.array_equal(g[i], g[j]):
                    raise ConfigError(f"classes {i} and {j} have identical gain rows")

    @classmethod
    def from_doc(cls, source=None) -> "UserProfile":
        doc = load_json(source, "profile")
        validate(doc, "profile")
        return cls(
            np.asarray(doc["gain_matrix"], dtype=np.float64),
            np.asarray(doc.get("class_sigma", [0.0] * N_CLASSES), dtype=np.float64),
            float(doc.get("noise_floor", 0.05)),
            int(doc.get("reattempt_delay", 20)),
            int(doc.get("relax_windows", 4)),
            float(doc.get("preshape_distance", 0.25)),
        )

    def to_dict(self):
        return {
            "gain_matrix": self.gain_matrix.tolist(),
            "class_sigma": self.class_sigma.tolist(),
            "noise_floor": self.noise_floor,
            "reattempt_delay": self.reattempt_delay,
            "relax_windows": self.relax_windows,
            "preshape_distance": self.preshape_distance,
        }
