"""Episode loop: policy -> step -> rewards -> record, fully deterministic.

The record stores the initial snapshot plus one post-step snapshot per
step, each carrying the actions, shield outcomes and rewards that produced
it.  Per-agent rewards and done flags handed to the policy describe the
previous transition (lock-step protocol semantics).
"""

from __future__ import annotations

import numpy as np

from mergeshield.config import RunConfig, resolved_dict
from mergeshield.metrics import EpisodeSummary, summarize_episode
from mergeshield.policy import Policy, build_policy
from mergeshield.records import EpisodeRecord, snapshot_step, snapshot_vehicle
from mergeshield.reward import fleet_rewards
from mergeshield.world import World, observe, spawn, step_world

__all__ = ["build_world", "run_episode"]


def build_world(cfg: RunConfig, seed: int) -> World:
    cfg = cfg.resolved()
    rng = np.random.default_rng(seed)
    vehicles = spawn(cfg.scenario, cfg.road, rng, params=cfg.vehicle)
    return World(road=cfg.road, scenario=cfg.scenario, shield=cfg.shield,
                 vehicles=vehicles)


def run_episode(cfg: RunConfig, seed: int, policy: Policy | None = None) -> tuple:
    """Run one episode; returns (record, summary).

    ``policy`` defaults to a fresh instance built from the config spec; an
    externally supplied policy object is reused across episodes (protocol
    endpoints stay connected).
    """
    cfg = cfg.resolved()
    world = build_world(cfg, seed)
    own_policy = policy is None
    if own_policy:
        policy = build_policy(cfg.policy)
    policy.start_episode(world, seed)

    record = EpisodeRecord(
        seed=seed,
        config=resolved_dict(cfg),
        initial=tuple(
            snapshot_vehicle(world, v)
            for v in sorted(world.vehicles, key=lambda v: v.vid)
        ),
    )

    rewards = {v.vid: 0.0 for v in world.vehicles}
    dones = {v.vid: False for v in world.vehicles}
    try:
        for k in range(cfg.scenario.episode_steps):
            live = world.live_vehicles()
            if not live:
                break
            if policy.needs_observations:
                observations = {v.vid: observe(world, v) for v in live}
            else:
                observations = {}
            actions = policy.decide(k, world, observations, rewards, dones)
            step_world(world, actions)
            reward_pairs = fleet_rewards(world, cfg.reward, cfg.reward_kind)
            record.steps.append(
                snapshot_step(world, k, actions, world.last_outcomes, reward_pairs)
            )
            rewards = {vid: pair[1] for vid, pair in reward_pairs.items()}
            dones = {
                v.vid: v.crashed or k == cfg.scenario.episode_steps - 1
                for v in world.vehicles
            }
        summary = summarize_episode(record, cfg.shield.mode, cfg.policy.kind)
        record.summary = summary.to_dict()
        policy.end_episode(record.summary)
    finally:
        if own_policy:
            close = getattr(policy, "close", None)
            if close is not None:
                close()
    return record, summary


def is_violation(summary: EpisodeSummary, cfg: RunConfig) -> bool:
    """Safety violation: a collision or a headway dip below the documented
    threshold (tau minus the one-step integration slack)."""
    return summary.collisions > 0 or (
        summary.min_headway < cfg.headway_violation_threshold
    )
