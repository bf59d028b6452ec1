"""Interaction topology: who consumes whose resolved safe control.

Each vehicle is mapped to a parent set of at most two vehicles strictly
ahead of it in the common longitudinal coordinate.  A lane follower depends
on its leader; a vehicle cutting in between a follower and its leader takes
the leader's place; a lane-changing vehicle depends on both its current
leader and the target-lane leader.  Rear vehicles are never parents, which
keeps the graph acyclic, and the descending-position order is therefore
always a valid evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from mergeshield.world import Vehicle, World

__all__ = ["InteractionTopology", "build_topology", "evaluation_order"]


@dataclass(frozen=True)
class InteractionTopology:
    """Map vehicle id -> tuple of parent vehicle ids."""

    entries: dict

    def parents(self, vid: int) -> tuple:
        return self.entries.get(vid, ())


def _between(candidate, ego, leader) -> bool:
    """Candidate strictly ahead of ego and, when a leader exists, strictly
    behind that leader (in the common total order)."""
    from mergeshield.world import is_ahead

    if not is_ahead(candidate, ego):
        return False
    return leader is None or is_ahead(leader, candidate)


def build_topology(vehicles: list, world: "World") -> InteractionTopology:
    """Construct the parent map from the current world snapshot."""
    from mergeshield.world import neighbors

    entries: dict = {}
    for ego in vehicles:
        if ego.crashed:
            entries[ego.vid] = ()
            continue
        near = neighbors(world, ego)
        c_ol, c_oal = near.c_ol, near.c_oal

        parents = [c_ol] if c_ol is not None else []
        if (
            c_oal is not None
            and c_oal.lc_phase == "changing"
            and c_oal.target_lane == ego.lane
            and _between(c_oal, ego, c_ol)
        ):
            parents = [c_oal]
        if ego.lc_phase == "changing" and c_oal is not None:
            if all(p.vid != c_oal.vid for p in parents):
                parents.append(c_oal)
        entries[ego.vid] = tuple(p.vid for p in parents)
    return InteractionTopology(entries=entries)


def evaluation_order(topology: InteractionTopology, vehicles: list) -> list:
    """Vehicle ids sorted front to back (ties by id); parents come first.

    The parent-ahead invariant makes this a topological order; a violated
    edge means the invariant broke, which is an internal error.
    """
    ordered = sorted(vehicles, key=lambda v: (-v.state.x, v.vid))
    ids = [v.vid for v in ordered]
    index = {vid: i for i, vid in enumerate(ids)}
    for vid, parents in topology.entries.items():
        if vid not in index:
            continue
        for pid in parents:
            if index[pid] >= index[vid]:
                raise RuntimeError(
                    f"interaction topology violates the parent-ahead invariant: "
                    f"{pid} -> {vid}"
                )
    return ids
