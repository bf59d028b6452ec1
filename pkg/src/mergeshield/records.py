"""Episode records: per-step world snapshots with shield audit data.

One episode serialises to line-delimited JSON: a header line (schema,
seed, resolved config, initial snapshot), one line per step, and a final
summary line.  Construction order of every dict is fixed and floats use
the default full-precision repr, so identical runs serialise to identical
bytes.  The record deliberately excludes the policy kind: a replayed
action stream must reproduce the file bit for bit regardless of who
produced the actions (the summary carries the policy as metadata).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from mergeshield.world import World

__all__ = ["SCHEMA", "VehicleRow", "StepRecord", "EpisodeRecord",
           "snapshot_vehicle", "snapshot_step", "write_episode", "read_episode"]

SCHEMA = "mergeshield.episode/1"


@dataclass(frozen=True)
class VehicleRow:
    """One vehicle at one step (post-step state plus what produced it)."""

    vid: int
    lane: int
    target_lane: int
    x: float
    y: float
    v_x: float
    v_y: float
    psi: float
    speed: float
    x_m: float
    length: float
    width: float
    spawned_on_ramp: bool
    merged: bool
    merge_failed: bool
    crashed: bool
    action: int | None = None
    v_nominal: float | None = None
    v_safe: float | None = None
    v_cbf: float | None = None
    lane_change_allowed: bool | None = None
    slack: float | None = None
    active: tuple = ()
    fault: bool | None = None
    reward: float | None = None
    reward_overall: float | None = None

    def to_dict(self) -> dict:
        d = {
            "vid": self.vid,
            "lane": self.lane,
            "target_lane": self.target_lane,
            "x": self.x,
            "y": self.y,
            "v_x": self.v_x,
            "v_y": self.v_y,
            "psi": self.psi,
            "speed": self.speed,
            "x_m": self.x_m,
            "length": self.length,
            "width": self.width,
            "spawned_on_ramp": self.spawned_on_ramp,
            "merged": self.merged,
            "merge_failed": self.merge_failed,
            "crashed": self.crashed,
        }
        if self.action is not None:
            d["action"] = self.action
            d["shield"] = {
                "v_nominal": self.v_nominal,
                "v_safe": self.v_safe,
                "v_cbf": self.v_cbf,
                "lane_change_allowed": self.lane_change_allowed,
                "slack": self.slack,
                "active": list(self.active),
                "fault": self.fault,
            }
            d["reward"] = self.reward
            d["reward_overall"] = self.reward_overall
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleRow":
        shield = d.get("shield") or {}
        return cls(
            vid=d["vid"], lane=d["lane"], target_lane=d["target_lane"],
            x=d["x"], y=d["y"], v_x=d["v_x"], v_y=d["v_y"], psi=d["psi"],
            speed=d["speed"], x_m=d["x_m"], length=d["length"], width=d["width"],
            spawned_on_ramp=d["spawned_on_ramp"], merged=d["merged"],
            merge_failed=d["merge_failed"], crashed=d["crashed"],
            action=d.get("action"),
            v_nominal=shield.get("v_nominal"), v_safe=shield.get("v_safe"),
            v_cbf=shield.get("v_cbf"),
            lane_change_allowed=shield.get("lane_change_allowed"),
            slack=shield.get("slack"), active=tuple(shield.get("active", ())),
            fault=shield.get("fault"),
            reward=d.get("reward"), reward_overall=d.get("reward_overall"),
        )


@dataclass(frozen=True)
class StepRecord:
    step: int
    vehicles: tuple
    topology: dict

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "vehicles": [v.to_dict() for v in self.vehicles],
            "topology": {str(vid): list(p) for vid, p in sorted(self.topology.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            step=d["step"],
            vehicles=tuple(VehicleRow.from_dict(v) for v in d["vehicles"]),
            topology={int(k): tuple(v) for k, v in d["topology"].items()},
        )


@dataclass
class EpisodeRecord:
    seed: int
    config: dict
    initial: tuple = ()
    steps: list = field(default_factory=list)
    summary: dict | None = None

    def header_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "header",
            "seed": self.seed,
            "config": self.config,
            "initial": [v.to_dict() for v in self.initial],
        }


def snapshot_vehicle(world: "World", vehicle, action=None, outcome=None,
                     reward=None, reward_overall=None) -> VehicleRow:
    s = vehicle.state
    return VehicleRow(
        vid=vehicle.vid, lane=vehicle.lane, target_lane=vehicle.target_lane,
        x=s.x, y=s.y, v_x=s.v_x, v_y=s.v_y, psi=s.psi, speed=s.speed,
        x_m=vehicle.x_m(world.road), length=vehicle.params.length,
        width=vehicle.params.width, spawned_on_ramp=vehicle.spawned_on_ramp,
        merged=vehicle.merged, merge_failed=vehicle.merge_failed,
        crashed=vehicle.crashed,
        action=None if action is None else int(action),
        v_nominal=outcome.v_nominal if outcome else None,
        v_safe=outcome.v_safe if outcome else None,
        v_cbf=outcome.v_cbf if outcome else None,
        lane_change_allowed=outcome.lane_change_allowed if outcome else None,
        slack=outcome.slack_used if outcome else None,
        active=outcome.active_constraints if outcome else (),
        fault=outcome.fault if outcome else None,
        reward=reward, reward_overall=reward_overall,
    )


def snapshot_step(world: "World", step_index: int, actions: dict, outcomes: dict,
                  rewards: dict) -> StepRecord:
    rows = []
    for vehicle in sorted(world.vehicles, key=lambda v: v.vid):
        action = actions.get(vehicle.vid)
        outcome = outcomes.get(vehicle.vid)
        pair = rewards.get(vehicle.vid)
        rows.append(
            snapshot_vehicle(
                world, vehicle, action=action, outcome=outcome,
                reward=None if pair is None else pair[0],
                reward_overall=None if pair is None else pair[1],
            )
        )
    return StepRecord(step=step_index, vehicles=tuple(rows),
                      topology=dict(world.last_topology))


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def episode_lines(record: EpisodeRecord) -> list:
    lines = [_dump(record.header_dict())]
    for step in record.steps:
        d = step.to_dict()
        d = {"kind": "step", **d}
        lines.append(_dump(d))
    if record.summary is not None:
        lines.append(_dump({"kind": "summary", **record.summary}))
    return lines


def write_episode(record: EpisodeRecord, path) -> None:
    import os

    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write("\n".join(episode_lines(record)) + "\n")
    os.replace(tmp, path)


def read_episode(path) -> EpisodeRecord:
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"{path}: not an episode record (missing header line)")
    header = lines[0]
    if header.get("schema") != SCHEMA:
        raise ValueError(f"{path}: unsupported schema {header.get('schema')!r}")
    record = EpisodeRecord(
        seed=header["seed"],
        config=header["config"],
        initial=tuple(VehicleRow.from_dict(v) for v in header["initial"]),
    )
    for d in lines[1:]:
        if d.get("kind") == "step":
            record.steps.append(StepRecord.from_dict(d))
        elif d.get("kind") == "summary":
            record.summary = {k: v for k, v in d.items() if k != "kind"}
    return record
