"""Scripted user: reach, attempt a grasp, carry, release."""

from __future__ import annotations

import numpy as np

from .config import UserProfile
from .scene import Scene


def _toward(pos, goal, speed, dt):
    delta = goal - pos
    dist = float(np.linalg.norm(delta))
    if dist < 1e-12:
        return np.zeros(3)
    # never overshoot the goal within one step
    return delta / dist * min(speed, dist / dt)


class Agent:
    """Stateful policy. ``act`` returns (intent, hand velocity) for the next stride.

    The grip is pre-shaped from ``profile.preshape_distance`` so windows inside
    the grasp radius already carry the intended grasp. Inside the radius, after
    ``reattempt_delay`` consecutive misclassified windows the agent optionally
    relaxes for ``relax_windows`` strides and then moves on to the object's next
    allowed grasp.
    """

    def __init__(self, scene: Scene, profile: UserProfile, rng=None):
        self.scene = scene
        self.profile = profile
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.speed = scene.trial.hand_speed
        self.target_id = None
        self.attempt_idx = 0
        self.misses = 0
        self.relax_left = 0
        self.attempting = False
        self.last_intent = scene.rest_class

    def _select(self, oid):
        if oid != self.target_id:
            self.target_id = oid
            self.attempt_idx = 0
            self.misses = 0
            self.relax_left = 0

    def observe(self, predicted, intent):
        """Feedback from the last stride: count consecutive misses while attempting a grasp."""
        if not self.attempting:
            self.misses = 0
            return
        self.misses = self.misses + 1 if predicted != intent else 0

    def _next_grasp(self, obj):
        self.attempt_idx = (self.attempt_idx + 1) % len(obj.allowed_grasps)

    def _grasp_intent(self, obj, inside):
        rest = self.scene.rest_class
        if not inside:
            return obj.allowed_grasps[self.attempt_idx]
        if self.relax_left > 0:
            self.relax_left -= 1
            if self.relax_left == 0:
                self._next_grasp(obj)
            return rest
        if self.misses >= self.profile.reattempt_delay:
            self.misses = 0
            if self.profile.relax_windows > 0:
                self.relax_left = self.profile.relax_windows - 1
                if self.relax_left == 0:
                    self._next_grasp(obj)
                return rest
            self._next_grasp(obj)
        return obj.allowed_grasps[self.attempt_idx]

    def act(self, dt: float):
        sc = self.scene
        rest = sc.rest_class
        pos = sc.hand
        self.attempting = False
        if sc.held is not None:
            obj = sc.held
            self._select(obj.id)
            vel = _toward(pos, obj.target, self.speed, dt)
            near = np.linalg.norm(obj.target - pos) <= sc.target_radius / 2
            intent = rest if near else sc.grasp_class
        else:
            obj, d = sc.nearest_free()
            if obj is None:
                self.target_id = None
                vel = _toward(pos, np.asarray(sc.config.hand_rest, dtype=np.float64), self.speed, dt)
                intent = rest
            else:
                self._select(obj.id)
                vel = _toward(pos, obj.position, self.speed, dt)
                inside = d <= sc.trial.grasp_radius
                if inside or d <= self.profile.preshape_distance:
                    intent = self._grasp_intent(obj, inside)
                    self.attempting = inside and intent != rest
                else:
                    intent = rest
        self.last_intent = int(intent)
        return int(intent), vel


def agent_policy(scene: Scene, feedback, profile: UserProfile, rng=None, agent: Agent | None = None, dt=0.05):
    """Functional form of :class:`Agent`; pass ``agent`` to keep re-attempt state across calls."""
    agent = agent or Agent(scene, profile, rng)
    if feedback is not None:
        agent.observe(*feedback)
    return agent.act(dt)
