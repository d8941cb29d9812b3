"""Time and energy costs between viewpoints and viewpoint groups.

Travel time is the max of the translation time at the modality's top speed
and the yaw slew time; energy is average power times travel time. The
synthetic average modality (mean speed, mean power) prices legs whose
eventual locomotion mode is still undecided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from bimodal_explorer.geometry import Modality, dyaw, euclid


@dataclass
class CostParams:
    v_terrestrial: float = 0.5
    v_aerial: float = 1.0
    w_terrestrial: float = math.pi
    w_aerial: float = math.pi
    p_terrestrial: float = 1.0
    p_aerial: float = 7.0

    def __post_init__(self):
        vals = (self.v_terrestrial, self.v_aerial, self.w_terrestrial,
                self.w_aerial, self.p_terrestrial, self.p_aerial)
        if any(v <= 0 for v in vals):
            raise ValueError("all cost parameters must be positive")
        if self.p_aerial <= self.p_terrestrial:
            raise ValueError("aerial power must exceed terrestrial power")
        if self.v_aerial < self.v_terrestrial:
            raise ValueError("aerial top speed must be >= terrestrial top speed")

    @property
    def v_average(self) -> float:
        return (self.v_terrestrial + self.v_aerial) / 2.0

    @property
    def w_average(self) -> float:
        return (self.w_terrestrial + self.w_aerial) / 2.0

    @property
    def p_average(self) -> float:
        return (self.p_terrestrial + self.p_aerial) / 2.0

    def v(self, m: Modality) -> float:
        if m is Modality.TERRESTRIAL:
            return self.v_terrestrial
        if m is Modality.AERIAL:
            return self.v_aerial
        return self.v_average

    def w(self, m: Modality) -> float:
        if m is Modality.TERRESTRIAL:
            return self.w_terrestrial
        if m is Modality.AERIAL:
            return self.w_aerial
        return self.w_average

    def p(self, m: Modality) -> float:
        if m is Modality.TERRESTRIAL:
            return self.p_terrestrial
        if m is Modality.AERIAL:
            return self.p_aerial
        return self.p_average

    @classmethod
    def from_header(cls, header: dict) -> "CostParams":
        cfg = header.get("cost", {})
        return cls(**{k: float(v) for k, v in cfg.items()})


def path_length(a, b, estimator) -> float:
    """Estimated travel distance between two points, never below straight line.

    The estimator (topo-graph or grid search) may shortcut slightly through
    its entry segments; clamping to the Euclidean distance keeps this
    module's guarantee. Unreachable pairs come back as +inf.
    """
    est = estimator(a, b)
    if math.isinf(est):
        return math.inf
    return max(est, euclid(a, b))


def time_cost(vp_i, vp_j, m: Modality, params: CostParams, estimator) -> float:
    """Travel time between two posed viewpoints under modality m."""
    length = path_length(vp_i.position, vp_j.position, estimator)
    if math.isinf(length):
        return math.inf
    return max(length / params.v(m), dyaw(vp_i.yaw, vp_j.yaw) / params.w(m))


def energy_cost(vp_i, vp_j, m: Modality, params: CostParams, estimator) -> float:
    t = time_cost(vp_i, vp_j, m, params, estimator)
    if math.isinf(t):
        return math.inf
    return params.p(m) * t


@dataclass
class PosedPoint:
    """Minimal pose (position + yaw) usable anywhere a viewpoint pose is needed."""

    position: object
    yaw: float = 0.0
    uid: int = -1


def group_cost(group_i, group_j, m: Modality, params: CostParams, estimator):
    """(time, energy) between two viewpoint groups via their average viewpoints."""
    a = PosedPoint(group_i.avg_position, group_i.avg_yaw)
    b = PosedPoint(group_j.avg_position, group_j.avg_yaw)
    t = time_cost(a, b, m, params, estimator)
    if math.isinf(t):
        return math.inf, math.inf
    return t, params.p(m) * t
