"""Object-transport scene: grasp, hold, drop and release mechanics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SceneConfig, SceneObject, TrialConfig, load_scene_config


@dataclass
class SceneEvent:
    sim_time: float
    event_type: str
    object_id: str | None
    hand_pos: list

    def to_dict(self):
        return {
            "sim_time": round(self.sim_time, 6),
            "event_type": self.event_type,
            "object_id": self.object_id,
            "hand_pos": [round(float(v), 6) for v in self.hand_pos],
        }


class Scene:
    def __init__(self, config: SceneConfig, trial: TrialConfig | None = None):
        self.config = config
        self.trial = trial or TrialConfig()
        self.gestures = config.gestures
        self.rest_class = config.gestures.rest_class
        self.target_radius = config.target_radius
        objs = config.objects[: self.trial.n_objects]
        self.objects = [
            SceneObject(
                o["id"],
                np.asarray(o["position"], dtype=np.float64),
                np.asarray(o["target"], dtype=np.float64),
                tuple(o["allowed_grasps"]),
            )
            for o in objs
        ]
        self.hand = np.asarray(config.hand_rest, dtype=np.float64).copy()
        self.time = 0.0
        self.held: SceneObject | None = None
        self.grasp_class: int | None = None
        self.mismatches = 0
        self.approached: set[str] = set()

    # queries ---------------------------------------------------------------

    @property
    def objects_completed(self) -> int:
        return sum(o.state == "completed" for o in self.objects)

    @property
    def all_completed(self) -> bool:
        return self.objects_completed == len(self.objects)

    def by_id(self, oid) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def nearest_free(self, pos=None):
        """Nearest object that is neither held nor completed, and its distance."""
        pos = self.hand if pos is None else pos
        best, best_d = None, np.inf
        for o in self.objects:
            if o.state in ("on_source", "dropped"):
                d = float(np.linalg.norm(o.position - pos))
                if d < best_d:
                    best, best_d = o, d
        return best, best_d

    def in_target_zone(self, pos=None) -> bool:
        if self.held is None:
            return False
        pos = self.hand if pos is None else pos
        return float(np.linalg.norm(self.held.target - pos)) <= self.target_radius

    def context(self):
        """(object_id, distance, allowed) for context assessment, or None when nothing applies.

        While holding, the held object supplies the context with the grasp in use
        as the only acceptable class; inside the target zone context is withheld
        because the user is expected to release.
        """
        if self.held is not None:
            if self.in_target_zone():
                return None
            return self.held.id, 0.0, frozenset({self.grasp_class})
        obj, d = self.nearest_free()
        if obj is None:
            return None
        return obj.id, d, frozenset(obj.allowed_grasps)

    # dynamics --------------------------------------------------------------

    def step(self, dt: float, hand_pos, predicted: int) -> list[SceneEvent]:
        self.time += dt
        self.hand = np.asarray(hand_pos, dtype=np.float64).copy()
        events: list[SceneEvent] = []

        def emit(kind, obj):
            events.append(SceneEvent(self.time, kind, obj.id if obj else None, self.hand.tolist()))

        if self.held is not None:
            obj = self.held
            obj.position = self.hand.copy()
            in_zone = self.in_target_zone()
            if in_zone and predicted == self.rest_class:
                emit("release", obj)
                self._complete(obj)
                emit("completed", obj)
            elif predicted == self.grasp_class:
                self.mismatches = 0
            else:
                self.mismatches += 1
                if self.mismatches >= self.trial.hold_debounce:
                    emit("hold_break", obj)
                    if in_zone:
                        self._complete(obj)
                        emit("completed", obj)
                    else:
                        obj.state = "dropped"
                        self._clear_hold()
                        emit("drop", obj)
            return events

        obj, d = self.nearest_free()
        if obj is None:
            return events
        if d <= self.trial.grasp_radius:
            if obj.id not in self.approached:
                self.approached.add(obj.id)
                emit("approach", obj)
            if predicted in obj.allowed_grasps:
                obj.state = "held"
                self.held = obj
                self.grasp_class = int(predicted)
                self.mismatches = 0
                emit("grasp_begin", obj)
        return events

    def _complete(self, obj):
        obj.state = "completed"
        obj.position = obj.target.copy()
        self._clear_hold()

    def _clear_hold(self):
        self.held = None
        self.grasp_class = None
        self.mismatches = 0


def load_scene(source=None, trial: TrialConfig | None = None) -> Scene:
    return Scene(load_scene_config(source), trial)
