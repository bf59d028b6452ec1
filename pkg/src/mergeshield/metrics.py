"""Evaluation metrics over episode records.

Headway pairs a vehicle with the nearest leader in its metric lane, the
lane whose centreline is closest to its lateral position (a lane-changing
vehicle counts toward the lane it physically occupies most).  All metrics
are pure functions of the record, so re-reading an exported file and
recomputing reproduces the stored summary exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

from mergeshield.records import EpisodeRecord
from mergeshield.reward import V_FLOOR

__all__ = [
    "EpisodeSummary",
    "UndefinedMetricError",
    "min_time_headway",
    "average_speed",
    "merging_percentage",
    "summarize_episode",
    "aggregate_summaries",
    "write_summaries",
    "read_summaries",
    "write_aggregate_csv",
]


class UndefinedMetricError(ValueError):
    """The requested metric has no value on this record set."""


@dataclass(frozen=True)
class EpisodeSummary:
    """Headline evaluation quantities of one episode.

    ``min_headway`` is +inf when the episode never produced a same-lane
    leader pair (serialised as null).
    """

    seed: int
    steps: int
    shield_mode: str
    policy: str
    min_headway: float
    avg_speed: float
    merging_pct: float | None
    collisions: int
    merged_count: int
    ramp_count: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "steps": self.steps,
            "shield_mode": self.shield_mode,
            "policy": self.policy,
            "min_headway": None if math.isinf(self.min_headway) else self.min_headway,
            "avg_speed": self.avg_speed,
            "merging_pct": self.merging_pct,
            "collisions": self.collisions,
            "merged_count": self.merged_count,
            "ramp_count": self.ramp_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSummary":
        keep = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in keep}
        if d.get("min_headway") is None:
            d["min_headway"] = math.inf
        return cls(**d)


def _lane_width(record: EpisodeRecord) -> float:
    return record.config["road"]["lane_width"]


def _n_lanes(record: EpisodeRecord) -> int:
    return record.config["road"]["highway_lanes"] + 1


def _metric_lane(row, lane_width: float, n_lanes: int) -> int:
    idx = round(row.y / lane_width)
    return min(max(idx, 0), n_lanes - 1)


def _rows_iter(record: EpisodeRecord):
    yield record.initial
    for step in record.steps:
        yield step.vehicles


def _had_collision(record: EpisodeRecord) -> bool:
    return any(any(r.crashed for r in rows) for rows in _rows_iter(record))


def min_time_headway(record: EpisodeRecord) -> float:
    """Min over steps and same-lane leader pairs of gap / ego speed.

    Egos below the speed floor are excluded; a collision anywhere in the
    episode yields 0.0; +inf reports an episode without any interaction.
    """
    if not record.steps and not record.initial:
        raise ValueError("empty record")
    if _had_collision(record):
        return 0.0
    lane_width = _lane_width(record)
    n_lanes = _n_lanes(record)
    best = math.inf
    for rows in _rows_iter(record):
        lanes: dict = {}
        for r in rows:
            if r.crashed:
                continue
            lanes.setdefault(_metric_lane(r, lane_width, n_lanes), []).append(r)
        for members in lanes.values():
            members.sort(key=lambda r: (-r.x, r.vid))
            for leader, follower in zip(members, members[1:]):
                if follower.speed < V_FLOOR:
                    continue
                gap = (leader.x - 0.5 * leader.length) - (follower.x + 0.5 * follower.length)
                best = min(best, gap / follower.speed)
    return best


def average_speed(record: EpisodeRecord) -> float:
    """Mean speed over all alive vehicle-steps."""
    total = 0.0
    count = 0
    for step in record.steps:
        for r in step.vehicles:
            if not r.crashed:
                total += r.speed
                count += 1
    if count == 0:
        raise ValueError("record has no alive vehicle-steps")
    return total / count


def _final_rows(record: EpisodeRecord):
    return record.steps[-1].vehicles if record.steps else record.initial


def merging_percentage(records: list) -> float:
    """Share of ramp-spawned vehicles that merged, over the record set."""
    merged = 0
    spawned = 0
    for record in records:
        for r in _final_rows(record):
            if r.spawned_on_ramp:
                spawned += 1
                if r.merged:
                    merged += 1
    if spawned == 0:
        raise UndefinedMetricError("no ramp-spawned vehicles in the record set")
    return 100.0 * merged / spawned


def summarize_episode(record: EpisodeRecord, shield_mode: str, policy: str) -> EpisodeSummary:
    final = _final_rows(record)
    collisions = sum(1 for r in final if r.crashed)
    ramp = sum(1 for r in final if r.spawned_on_ramp)
    merged = sum(1 for r in final if r.spawned_on_ramp and r.merged)
    try:
        pct = merging_percentage([record])
    except UndefinedMetricError:
        pct = None
    return EpisodeSummary(
        seed=record.seed,
        steps=len(record.steps),
        shield_mode=shield_mode,
        policy=policy,
        min_headway=min_time_headway(record),
        avg_speed=average_speed(record),
        merging_pct=pct,
        collisions=collisions,
        merged_count=merged,
        ramp_count=ramp,
    )


def _mean_se(values: list) -> tuple:
    n = len(values)
    if n == 0:
        return None, None
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate_summaries(summaries: list) -> dict:
    """Batch aggregate: mean and standard error per metric, plus extremes
    and pooled merge counts."""
    headways = [s.min_headway for s in summaries if not math.isinf(s.min_headway)]
    speeds = [s.avg_speed for s in summaries]
    pcts = [s.merging_pct for s in summaries if s.merging_pct is not None]
    hw_mean, hw_se = _mean_se(headways)
    sp_mean, sp_se = _mean_se(speeds)
    pct_mean, pct_se = _mean_se(pcts)
    merged = sum(s.merged_count for s in summaries)
    ramp = sum(s.ramp_count for s in summaries)
    return {
        "episodes": len(summaries),
        "min_headway_mean": hw_mean,
        "min_headway_se": hw_se,
        "min_headway_min": min(headways) if headways else None,
        "avg_speed_mean": sp_mean,
        "avg_speed_se": sp_se,
        "merging_pct_mean": pct_mean,
        "merging_pct_se": pct_se,
        "merging_pct_pooled": (100.0 * merged / ramp) if ramp else None,
        "collisions_total": sum(s.collisions for s in summaries),
    }


def write_summaries(summaries: list, path) -> None:
    import json
    import os

    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        for s in summaries:
            f.write(json.dumps(s.to_dict(), separators=(",", ":")) + "\n")
    os.replace(tmp, path)


def read_summaries(path) -> list:
    import json

    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                out.append(EpisodeSummary.from_dict(json.loads(line)))
    return out


AGGREGATE_COLUMNS = [
    "episodes",
    "min_headway_mean", "min_headway_se", "min_headway_min",
    "avg_speed_mean", "avg_speed_se",
    "merging_pct_mean", "merging_pct_se", "merging_pct_pooled",
    "collisions_total",
]


def write_aggregate_csv(aggregate: dict, path) -> None:
    import os

    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["schema", "mergeshield.aggregate/1"])
        writer.writerow(AGGREGATE_COLUMNS)
        writer.writerow([aggregate[c] for c in AGGREGATE_COLUMNS])
    os.replace(tmp, path)
