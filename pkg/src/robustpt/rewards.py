"""Dense reward composer for the synthetic goal-reaching environments.

Components (all weighted, defaults from the reference reward table):

=============  ===================================  ======
name           value                                weight
=============  ===================================  ======
proximity      exp(-MSE(s, g))                      0.01
progress       milestones crossed / milestones      0.01
velocity       -|a_{t-1} - a_t|^2                   0.001
acceleration   -|a_{t-2} - 2 a_{t-1} + a_t|^2       0.001
success        1 if the goal was reached            1
=============  ===================================  ======
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError

COMPONENTS = ("proximity", "progress", "velocity", "acceleration", "success")


@dataclass(frozen=True)
class RewardConfig:
    w_proximity: float = 0.1 / 10
    w_progress: float = 0.1 / 10
    w_velocity: float = 0.01 / 10
    w_acceleration: float = 0.01 / 10
    w_success: float = 1.0
    milestones: int = 4

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ConfigError(f"reward.{f.name}", "must be finite")
        if int(self.milestones) != self.milestones or self.milestones < 1:
            raise ConfigError("reward.milestones", "must be an integer >= 1")

    def weight(self, name: str) -> float:
        return getattr(self, f"w_{name}")

    @classmethod
    def sparse(cls) -> "RewardConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class RewardTerms:
    proximity: float
    progress: float
    velocity: float
    acceleration: float
    success: float
    total: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def progress_fraction(state, goal, start_distance: float, milestones: int) -> float:
    """Fraction of the evenly spaced distance milestones already inside.

    Milestone ``k`` of ``n`` sits at ``start_distance * (1 - k/(n+1))``.
    """
    if start_distance <= 0:
        return 1.0
    dist = float(np.linalg.norm(np.asarray(state) - np.asarray(goal)))
    k = np.arange(1, milestones + 1)
    thresholds = start_distance * (1.0 - k / (milestones + 1))
    return float(np.count_nonzero(dist <= thresholds)) / milestones


def dense_reward(
    prev_state,
    state,
    prev_action,
    prev_prev_action,
    action,
    goal,
    config: RewardConfig,
    *,
    success: bool = False,
    start_distance: float | None = None,
    prev_progress: float = 0.0,
) -> RewardTerms:
    """Compose the weighted reward for one transition ``prev_state -> state``.

    Progress is monotone: it is the max of ``prev_progress`` and the milestone
    fraction at either endpoint.  ``start_distance`` defaults to the distance of
    ``prev_state`` from the goal.
    """
    s = np.asarray(state, dtype=np.float64)
    g = np.asarray(goal, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64)
    a1 = np.asarray(prev_action, dtype=np.float64)
    a2 = np.asarray(prev_prev_action, dtype=np.float64)

    proximity = float(np.exp(-np.mean((s - g) ** 2)))
    if start_distance is None:
        start_distance = float(np.linalg.norm(np.asarray(prev_state) - g))
    progress = max(
        float(prev_progress),
        progress_fraction(prev_state, g, start_distance, config.milestones),
        progress_fraction(s, g, start_distance, config.milestones),
    )
    velocity = -float(np.sum((a1 - a) ** 2))
    acceleration = -float(np.sum((a2 - 2.0 * a1 + a) ** 2))
    succ = 1.0 if success else 0.0

    total = (
        config.w_proximity * proximity
        + config.w_progress * progress
        + config.w_velocity * velocity
        + config.w_acceleration * acceleration
        + config.w_success * succ
    )
    return RewardTerms(proximity, progress, velocity, acceleration, succ, total)
