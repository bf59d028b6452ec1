"""Vehicle population, perception queries and the per-step simulation loop.

``step_world`` composes, per step: behavioural planning, interaction
topology, the joint safety-shield pass, low-level tracking, simultaneous
integration of all vehicles from the same pre-step snapshot, collision
detection and merge bookkeeping.

Lateral maneuvers: the bicycle integrator evolves velocity components only
through acceleration, so holding speed leaves the lateral velocity frozen.
Lane transitions are therefore executed by the maneuver layer as a
speed-preserving rotation of the velocity vector (bounded lateral speed
toward the target centreline) applied before integration; the integrator
itself stays untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from mergeshield.dynamics import ControlInput, VehicleParams, VehicleState, step
from mergeshield.policy import BehaviorAction
from mergeshield.road import RoadNetwork
from mergeshield.shield import ShieldConfig, brake_cap, joint_safe_control

__all__ = [
    "ScenarioConfig",
    "Vehicle",
    "MotionPlan",
    "Neighborhood",
    "World",
    "spawn",
    "neighbors",
    "observe",
    "plan_motion",
    "step_world",
    "is_ahead",
    "bumper_gap",
]

#: lateral speed of a lane-change maneuver [m/s]
LANE_CHANGE_LATERAL_SPEED = 2.0
#: lateral speed used to recentre on the lane after a maneuver [m/s]
RECENTER_LATERAL_SPEED = 0.5
#: fraction of the lane width below which a lane change counts as complete
LANE_CHANGE_DONE_FRACTION = 0.1


@dataclass(frozen=True)
class ScenarioConfig:
    """Episode geometry-independent scenario knobs.

    The reference scenario runs 7 to 11 connected vehicles through a 100 m
    merge section with a 0.5 s headway threshold and 180 m communication
    range; other values are permitted but flagged by config validation.
    """

    n_vehicles: int = 9
    n_ramp: int | None = None
    comm_range: float = 180.0
    perception_n: int = 5
    tau: float = 0.5
    dt: float = 0.1
    episode_steps: int = 150
    spawn_spacing_min: float = 10.0
    initial_speed_range: tuple = (15.0, 25.0)
    rng_seed: int = 0
    dv_step: float = 2.0

    def __post_init__(self):
        if self.n_vehicles < 1:
            raise ValueError("n_vehicles must be >= 1")
        if not self.comm_range > 0:
            raise ValueError("comm_range must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        lo, hi = self.initial_speed_range
        if not (0 <= lo <= hi):
            raise ValueError(f"bad initial_speed_range {self.initial_speed_range}")

    def resolved_n_ramp(self) -> int:
        if self.n_ramp is not None:
            return self.n_ramp
        return max(1, self.n_vehicles // 3)


@dataclass
class Vehicle:
    """One simulated vehicle and its maneuver bookkeeping."""

    vid: int
    state: VehicleState
    params: VehicleParams
    lane: int
    target_lane: int
    behavior: BehaviorAction = BehaviorAction.FOLLOW_LANE
    spawned_on_ramp: bool = False
    merged: bool = False
    merge_failed: bool = False
    crashed: bool = False

    @property
    def lc_phase(self) -> str:
        return "changing" if self.target_lane != self.lane else "not_changing"

    @property
    def front(self) -> float:
        return self.state.x + 0.5 * self.params.length

    @property
    def rear(self) -> float:
        return self.state.x - 0.5 * self.params.length

    def x_m(self, road: RoadNetwork) -> float:
        """Distance travelled inside the merge section while on the ramp."""
        if self.lane != road.ramp_lane:
            return 0.0
        return min(max(self.state.x - road.merge_start, 0.0), road.merge_length)


@dataclass(frozen=True)
class MotionPlan:
    """Nominal control target produced from one behavioural action."""

    v_target: float
    target_lane: int
    lane_request: bool = False


@dataclass(frozen=True)
class Neighborhood:
    c_ol: Vehicle | None = None
    c_oal: Vehicle | None = None
    c_oar: Vehicle | None = None


@dataclass
class World:
    road: RoadNetwork
    scenario: ScenarioConfig
    shield: ShieldConfig
    vehicles: list
    step_index: int = 0
    #: most recent per-vehicle shield outcomes, refreshed by step_world
    last_outcomes: dict = field(default_factory=dict)
    last_topology: dict = field(default_factory=dict)

    def vehicle(self, vid: int) -> Vehicle:
        for v in self.vehicles:
            if v.vid == vid:
                return v
        raise KeyError(f"no vehicle with id {vid}")

    def live_vehicles(self) -> list:
        return [v for v in self.vehicles if not v.crashed]


def is_ahead(a: Vehicle, b: Vehicle) -> bool:
    """Total longitudinal order: greater arc x, ties broken by smaller id."""
    if a.state.x != b.state.x:
        return a.state.x > b.state.x
    return a.vid < b.vid


def bumper_gap(follower: Vehicle, leader: Vehicle) -> float:
    """Front-of-follower to rear-of-leader distance along the arc."""
    return leader.rear - follower.front


def _euclid(a: Vehicle, b: Vehicle) -> float:
    return math.hypot(a.state.x - b.state.x, a.state.y - b.state.y)


def spawn(config: ScenarioConfig, road: RoadNetwork, rng: np.random.Generator,
          params: VehicleParams | None = None) -> list:
    """Place vehicles on highway and ramp behind the merge section.

    Same-lane bumper gaps respect ``spawn_spacing_min`` and the follower
    headway threshold; follower speeds are additionally capped so every
    pair starts inside the shield's braking-feasibility envelope, otherwise
    no runtime filter could honour the headway guarantee.
    Deterministic for a given generator state.
    """
    params = params or VehicleParams()
    n_ramp = min(config.resolved_n_ramp(), config.n_vehicles)
    n_highway = config.n_vehicles - n_ramp
    lo, hi = config.initial_speed_range

    regions = {
        "highway": (road.merge_start - 10.0, 20.0),
        "ramp": (road.merge_start - 30.0, 60.0),
    }
    vehicles: list = []
    vid = 0
    for lane_name, count, lane in (
        ("highway", n_highway, road.highway_lanes - 1),
        ("ramp", n_ramp, road.ramp_lane),
    ):
        front_x, back_limit = regions[lane_name]
        x = front_x
        lead_speed = None
        for i in range(count):
            speed = float(rng.uniform(lo, hi))
            if i > 0:
                gap = max(config.spawn_spacing_min, config.tau * speed) + float(rng.uniform(0.0, 8.0))
                gap = max(gap, config.tau * speed)
                x = x - gap - params.length
                # spawn a metre inside the braking-feasibility envelope so
                # the first shield step starts with margin, not on the edge
                speed = min(speed, brake_cap(gap - 1.0, speed, lead_speed,
                                             -params.a_min, config.tau, config.dt))
            if x < back_limit - 1e-9:
                raise ValueError(
                    f"geometry too short: cannot place {count} vehicles on the {lane_name} "
                    f"spawn region [{back_limit}, {front_x}]"
                )
            y = road.centerline_y(lane)
            vehicles.append(
                Vehicle(
                    vid=vid,
                    state=VehicleState(x=x, y=y, v_x=speed, v_y=0.0, psi=0.0),
                    params=params,
                    lane=lane,
                    target_lane=lane,
                    spawned_on_ramp=(lane == road.ramp_lane),
                )
            )
            lead_speed = speed
            vid += 1
    return vehicles


def _perception_adjacent(road: RoadNetwork, vehicle: Vehicle) -> int | None:
    """Lane scanned for adjacent leaders/rears.

    The target lane while changing; otherwise the physically neighbouring
    lane (ramp for the rightmost through lane and vice versa).  Perception
    is not gated by the merge window: a merging vehicle ahead matters to a
    highway follower before the follower reaches the window.
    """
    if vehicle.lc_phase == "changing":
        return vehicle.target_lane
    lane = vehicle.lane
    if lane == road.ramp_lane:
        return road.highway_lanes - 1
    if lane == road.highway_lanes - 1:
        return road.ramp_lane
    return lane + 1


def neighbors(world: World, ego: Vehicle) -> Neighborhood:
    """Nearest same-lane leader plus adjacent-lane leader and rear vehicle,
    all within communication range."""
    comm = world.scenario.comm_range
    adj = _perception_adjacent(world.road, ego)
    c_ol = c_oal = c_oar = None
    for other in world.vehicles:
        if other.vid == ego.vid:
            continue
        if _euclid(ego, other) > comm:
            continue
        if other.lane == ego.lane and is_ahead(other, ego):
            if c_ol is None or is_ahead(c_ol, other):
                c_ol = other
        elif adj is not None and other.lane == adj:
            if is_ahead(other, ego):
                if c_oal is None or is_ahead(c_oal, other):
                    c_oal = other
            else:
                if c_oar is None or is_ahead(other, c_oar):
                    c_oar = other
    return Neighborhood(c_ol=c_ol, c_oal=c_oal, c_oar=c_oar)


def observe(world: World, ego: Vehicle) -> list:
    """Fixed-width observation: the ego row followed by the nearest
    ``perception_n`` vehicles in range, nearest first, zero padded.

    The ego row carries absolute positions; neighbour rows report positions
    relative to the ego.  Velocities and heading stay absolute.
    """
    n = world.scenario.perception_n
    comm = world.scenario.comm_range
    s = ego.state
    rows = [[s.x, s.y, s.v_x, s.v_y, s.psi]]
    others = [
        (_euclid(ego, o), o.vid, o)
        for o in world.vehicles
        if o.vid != ego.vid and _euclid(ego, o) <= comm
    ]
    others.sort(key=lambda t: (t[0], t[1]))
    for _, _, o in others[:n]:
        os = o.state
        rows.append([os.x - s.x, os.y - s.y, os.v_x, os.v_y, os.psi])
    while len(rows) < n + 1:
        rows.append([0.0, 0.0, 0.0, 0.0, 0.0])
    return rows


def plan_motion(ego: Vehicle, action: BehaviorAction, road: RoadNetwork,
                dv_step: float = 2.0) -> MotionPlan:
    """Translate a behavioural action into a nominal speed and lane target.

    Lane actions degrade to follow when no adjacent lane is reachable at the
    vehicle's position; an ongoing maneuver ignores new lane requests.
    """
    v = ego.state.speed
    v_target = v
    if action == BehaviorAction.SPEED_UP:
        v_target = v + dv_step
    elif action == BehaviorAction.SLOW_DOWN:
        v_target = v - dv_step
    v_target = min(max(v_target, 0.0), ego.params.v_cap)

    target_lane = ego.target_lane
    lane_request = False
    if ego.lc_phase != "changing" and action in (BehaviorAction.LANE_LEFT, BehaviorAction.LANE_RIGHT):
        if not ego.merge_failed:
            direction = -1 if action == BehaviorAction.LANE_LEFT else 1
            shifted = road.shift_lane(ego.lane, direction, ego.state.x)
            if shifted is not None:
                target_lane = shifted
                lane_request = True
    return MotionPlan(v_target=v_target, target_lane=target_lane, lane_request=lane_request)


def _maneuver_overlay(world: World, vehicle: Vehicle) -> VehicleState:
    """Rotate the velocity vector toward the lane target, preserving speed.

    Changing vehicles head for the target centreline at the maneuver
    lateral speed; settled vehicles recentre gently and snap exactly onto
    the centreline once close, keeping states bit-stable.
    """
    s = vehicle.state
    road = world.road
    dt = world.scenario.dt
    speed = s.speed
    target_y = road.centerline_y(vehicle.target_lane)
    dy = target_y - s.y

    if vehicle.lc_phase == "changing":
        v_lat_mag = min(LANE_CHANGE_LATERAL_SPEED, 0.7 * speed, abs(dy) / dt)
    else:
        if abs(dy) < 0.02:
            if s.y == target_y and s.v_y == 0.0 and s.psi == 0.0:
                return s
            return replace(s, y=target_y, v_y=0.0, v_x=speed, psi=0.0)
        v_lat_mag = min(RECENTER_LATERAL_SPEED, 0.7 * speed, abs(dy) / dt)

    v_y = math.copysign(v_lat_mag, dy) if dy != 0.0 else 0.0
    v_x = math.sqrt(max(speed * speed - v_y * v_y, 0.0))
    psi = math.atan2(v_y, v_x) if speed > 0.0 else 0.0
    return replace(s, v_x=v_x, v_y=v_y, psi=psi)


def _rect_overlap(a: Vehicle, b: Vehicle) -> bool:
    return (
        abs(a.state.x - b.state.x) < 0.5 * (a.params.length + b.params.length)
        and abs(a.state.y - b.state.y) < 0.5 * (a.params.width + b.params.width)
    )


def step_world(world: World, joint_actions: dict) -> World:
    """Advance the world one step under the given behavioural actions.

    Pipeline: plan -> topology -> joint shield -> tracking -> simultaneous
    integration -> collision flags -> merge bookkeeping.  All vehicles
    integrate from the same pre-step snapshot, so the vehicle iteration
    order cannot leak into the result.
    """
    from mergeshield.topology import build_topology

    road = world.road
    cfg = world.scenario
    dt = cfg.dt

    live = world.live_vehicles()
    plans = {}
    for vehicle in live:
        action = joint_actions.get(vehicle.vid, BehaviorAction.FOLLOW_LANE)
        vehicle.behavior = action
        plans[vehicle.vid] = plan_motion(vehicle, action, road, cfg.dv_step)

    topology = build_topology(world.vehicles, world)
    outcomes = joint_safe_control(world, topology, plans)

    # apply lane-change permissions before integration
    for vehicle in live:
        plan = plans[vehicle.vid]
        out = outcomes[vehicle.vid]
        if plan.lane_request and out.lane_change_allowed:
            vehicle.target_lane = plan.target_lane

    # tracking + simultaneous integration from the pre-step snapshot
    new_states = {}
    controls = {}
    for vehicle in live:
        out = outcomes[vehicle.vid]
        staged = _maneuver_overlay(world, vehicle)
        speed = staged.speed
        a = (out.v_safe - speed) / dt
        a = min(max(a, vehicle.params.a_min), vehicle.params.a_max)
        u = ControlInput(a=a, delta=0.0)
        controls[vehicle.vid] = u
        new_states[vehicle.vid] = step(staged, vehicle.params, u, dt)

    for vehicle in live:
        vehicle.state = new_states[vehicle.vid]

    # collisions: axis-aligned rectangle overlap on the post-step snapshot
    ordered = sorted(world.vehicles, key=lambda v: v.vid)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            if a.crashed and b.crashed:
                continue
            if _rect_overlap(a, b):
                a.crashed = True
                b.crashed = True

    # merge bookkeeping
    for vehicle in live:
        if vehicle.crashed:
            continue
        if vehicle.lc_phase == "changing":
            target_y = road.centerline_y(vehicle.target_lane)
            if abs(vehicle.state.y - target_y) < LANE_CHANGE_DONE_FRACTION * road.lane_width:
                was_ramp = vehicle.lane == road.ramp_lane
                vehicle.lane = vehicle.target_lane
                if was_ramp and vehicle.lane != road.ramp_lane and vehicle.spawned_on_ramp:
                    vehicle.merged = True
        elif (
            vehicle.lane == road.ramp_lane
            and not vehicle.merge_failed
            and vehicle.rear > road.merge_end
        ):
            vehicle.merge_failed = True

    world.step_index += 1
    world.last_outcomes = outcomes
    world.last_topology = topology.entries
    return world
