"""Intelligent Driver Model.

The tracker uses only the interaction (braking) term; the simulator also
needs the free-road term, provided by :func:`idm_acceleration`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidGapError(ValueError):
    pass


@dataclass(frozen=True)
class IdmParams:
    min_gap_s0: float = 2.0
    time_gap_T: float = 1.6
    max_accel_a: float = 0.73
    comfort_decel_b: float = 1.67

    def __post_init__(self):
        for name in ("min_gap_s0", "time_gap_T", "max_accel_a", "comfort_decel_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "IdmParams":
        return cls(
            min_gap_s0=float(d.get("s0", cls.min_gap_s0)),
            time_gap_T=float(d.get("T", cls.time_gap_T)),
            max_accel_a=float(d.get("a", cls.max_accel_a)),
            comfort_decel_b=float(d.get("b", cls.comfort_decel_b)),
        )

    def to_dict(self) -> dict:
        return {"s0": self.min_gap_s0, "T": self.time_gap_T, "a": self.max_accel_a, "b": self.comfort_decel_b}


def desired_gap(v, dv, params: IdmParams):
    """s0 + v*T + v*dv / (2*sqrt(a*b)), never below s0.

    ``dv`` is follower speed minus leader speed. Works elementwise on arrays.
    """
    p = params
    s = p.min_gap_s0 + v * p.time_gap_T + v * dv / (2.0 * np.sqrt(p.max_accel_a * p.comfort_decel_b))
    return np.maximum(s, p.min_gap_s0)


def interaction_accel(v, dv, gap_s, params: IdmParams):
    """Braking term -a * (s*/s)^2; always negative."""
    gap = np.asarray(gap_s, dtype=float)
    if np.any(gap <= 0):
        raise InvalidGapError("gap to the leader must be positive")
    out = -params.max_accel_a * (desired_gap(v, dv, params) / gap) ** 2
    return float(out) if np.ndim(out) == 0 else out


def idm_acceleration(v, dv, gap_s, desired_speed: float, params: IdmParams, delta: float = 4.0):
    """Full IDM acceleration; pass ``gap_s=np.inf`` for a free road."""
    free = params.max_accel_a * (1.0 - (np.maximum(v, 0.0) / desired_speed) ** delta)
    if np.isinf(gap_s):
        return free
    return free + interaction_accel(v, dv, gap_s, params)
