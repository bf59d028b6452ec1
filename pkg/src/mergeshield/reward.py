"""Per-vehicle and fleet reward functions.

Two reward flavours share the same component forms: the default one adds a
collision penalty, the custom one drops it entirely (a safety shield makes
collision penalties pointless) and re-weights toward speed and merging.
Headway enters through the log-ratio of the actual gap to the desired
``tau * v`` gap, so the reward is zero exactly at the desired headway,
positive closer in, negative farther out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from mergeshield.world import Vehicle, World

__all__ = [
    "RewardWeights",
    "V_FLOOR",
    "headway_reward",
    "speed_reward",
    "merge_reward",
    "custom_reward",
    "default_reward",
    "overall_reward",
    "fleet_rewards",
]

#: speed floor keeping the headway ratio defined near standstill [m/s]
V_FLOOR = 1.0


@dataclass(frozen=True)
class RewardWeights:
    """Weights and scales for both reward flavours.

    ``w_c`` only enters the default flavour.  The custom flavour uses
    ``w_h = 1, w_s = 4, w_m = 8``: merging is prioritised, speed second,
    small headway third.
    """

    w_c: float = 200.0
    w_s: float = 4.0
    w_h: float = 1.0
    w_m: float = 8.0
    v_min: float = 10.0
    v_max: float = 30.0
    tau: float = 0.5
    merge_length: float = 100.0

    def __post_init__(self):
        if not (0.0 < self.v_min < self.v_max):
            raise ValueError(f"need 0 < v_min < v_max, got [{self.v_min}, {self.v_max}]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.merge_length > 0:
            raise ValueError("merge_length must be positive")


def headway_reward(dx_ol: float, v_e: float, tau: float) -> float:
    """-log of the gap over the desired gap ``tau * v_e``.

    Zero at the desired headway, positive when closer, negative when
    farther.  Speeds below ``V_FLOOR`` clamp to the floor value.
    """
    if not dx_ol > 0:
        raise ValueError(f"leader gap must be positive, got {dx_ol}")
    v = max(v_e, V_FLOOR)
    return -math.log(dx_ol / (tau * v))


def speed_reward(v_e: float, v_min: float, v_max: float) -> float:
    """Linear ramp between the desired speed band, saturated at 1."""
    return min((v_e - v_min) / (v_max - v_min), 1.0)


def merge_reward(x_m: float, merge_length: float) -> float:
    """Penalty for lingering on the merge lane, growing toward its end."""
    d = x_m - merge_length
    return -math.exp(-(d * d) / (10.0 * merge_length))


def _leader_gap(world: "World", vehicle: "Vehicle") -> float | None:
    from mergeshield.world import bumper_gap, neighbors

    c_ol = neighbors(world, vehicle).c_ol
    if c_ol is None:
        return None
    gap = bumper_gap(vehicle, c_ol)
    return gap if gap > 0 else None


def custom_reward(vehicle: "Vehicle", weights: RewardWeights, world: "World") -> float:
    """Shielded-driving reward: no collision term by design."""
    gap = _leader_gap(world, vehicle)
    r_h = 0.0 if gap is None else headway_reward(gap, vehicle.state.speed, weights.tau)
    r_s = speed_reward(vehicle.state.speed, weights.v_min, weights.v_max)
    r_m = 0.0
    if vehicle.lane == world.road.ramp_lane:
        r_m = merge_reward(vehicle.x_m(world.road), weights.merge_length)
    return weights.w_h * r_h + weights.w_s * r_s + weights.w_m * r_m


def default_reward(vehicle: "Vehicle", weights: RewardWeights, world: "World") -> float:
    """Baseline reward with a collision term: ``r_c = -1`` when crashed."""
    r_c = -1.0 if vehicle.crashed else 0.0
    return weights.w_c * r_c + custom_reward(vehicle, weights, world)


def _observed_set(world: "World", ego: "Vehicle") -> list:
    import math as _math

    comm = world.scenario.comm_range
    others = [
        (_math.hypot(o.state.x - ego.state.x, o.state.y - ego.state.y), o.vid, o)
        for o in world.vehicles
        if o.vid != ego.vid
    ]
    others = [t for t in others if t[0] <= comm]
    others.sort(key=lambda t: (t[0], t[1]))
    return [o for _, _, o in others[: world.scenario.perception_n]]


def overall_reward(ego: "Vehicle", world: "World", reward_fn, weights: RewardWeights) -> float:
    """Mean individual reward over the ego and its observed vehicles."""
    group = [ego] + _observed_set(world, ego)
    return sum(reward_fn(v, weights, world) for v in group) / len(group)


def fleet_rewards(world: "World", weights: RewardWeights, kind: str = "custom") -> dict:
    """Per-vehicle (individual, neighbourhood-averaged) rewards.

    ``kind`` selects the reward flavour: ``default`` or ``custom``.
    """
    fn = {"default": default_reward, "custom": custom_reward}[kind]
    individual = {v.vid: fn(v, weights, world) for v in world.vehicles}
    out = {}
    for v in world.vehicles:
        group = [v.vid] + [o.vid for o in _observed_set(world, v)]
        out[v.vid] = (individual[v.vid], sum(individual[g] for g in group) / len(group))
    return out
