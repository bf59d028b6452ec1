"""Safety layer: barrier constraints, tiny QP filtering, lane-change gating.

Constraints are affine halfspaces over the stacked decision variables (speed
commands plus one shared slack).  Per vehicle and step the filter builds

* a headway barrier row per constrained leader: the time-headway barrier
  ``h = gap - tau * v`` propagated one step with decay ``eta``, crediting the
  leader's next speed (its resolved safe command in ``mass`` mode, its
  worst-case braking in ``hss`` mode),
* a braking-feasibility guard per constrained leader: the largest command
  from which a joint worst-case braking run keeps the headway satisfied.
  The bare one-step barrier alone admits states where bounded deceleration
  can no longer prevent a violation (fast follower, slow leader), so the
  guard keeps the system inside the set where the barrier stays feasible,
* reachability box rows (one-step actuator envelope), and
* soft lateral rows during an ongoing lane change, relaxed by the slack.

The QP minimises ``||v - v_nominal||^2 + k_eps * slack`` by exact active-set
enumeration; hard infeasibility raises a fault that callers turn into full
braking.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from mergeshield.topology import InteractionTopology
    from mergeshield.world import Neighborhood, Vehicle, World

__all__ = [
    "AffineConstraint",
    "ShieldConfig",
    "ShieldOutcome",
    "ShieldFault",
    "QPSolution",
    "longitudinal_cbf",
    "brake_guard",
    "lateral_cbfs",
    "allow_lane_change",
    "solve_qp",
    "filter_hss",
    "filter_mass",
    "joint_safe_control",
]


class ShieldFault(RuntimeError):
    """Hard-infeasible constraint system; caller falls back to full braking."""


@dataclass(frozen=True)
class AffineConstraint:
    """Halfspace ``p[:-1] . v + p[-1] * slack <= q``.

    The last coefficient of ``p`` belongs to the shared slack variable:
    0 for hard rows, -1 for soft rows.  ``h_now`` is the barrier value at
    the current state, used by gate checks and audit records.
    """

    p: tuple
    q: float
    kind: str = "hard"
    label: str = ""
    h_now: float = 0.0

    def __post_init__(self):
        if self.kind not in ("hard", "soft"):
            raise ValueError(f"constraint kind must be hard or soft, got {self.kind!r}")
        if not all(math.isfinite(c) for c in self.p) or not math.isfinite(self.q):
            raise ValueError("constraint coefficients must be finite")
        if not any(c != 0.0 for c in self.p):
            raise ValueError("constraint coefficients must not be all zero")
        if self.kind == "soft" and self.p[-1] == 0.0:
            raise ValueError("soft constraints need a slack coefficient")
        if self.kind == "hard" and self.p[-1] != 0.0:
            raise ValueError("hard constraints must not touch the slack")


@dataclass(frozen=True)
class ShieldConfig:
    """Shield mode and constraint parameters.

    ``wc_brake`` / ``wc_accel`` default to the vehicle's own acceleration
    limits (most conservative admissible controls) when left as None;
    ``tau_lat`` defaults to ``tau``.  ``lag_margin`` tightens every hard
    longitudinal row to absorb the one-step position lag of the explicit
    Euler integrator (commands move positions only one step later).
    """

    mode: str = "mass"
    tau: float = 0.5
    eta: float = 0.5
    k_eps: float = 1e6
    wc_brake: float | None = None
    wc_accel: float | None = None
    tau_lat: float | None = None
    dt: float = 0.1
    lag_margin: float = 0.15

    def __post_init__(self):
        if self.mode not in ("none", "hss", "mass"):
            raise ValueError(f"shield mode must be none, hss or mass, got {self.mode!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError("eta must lie in (0, 1]")
        if not self.k_eps > 0:
            raise ValueError("k_eps must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def lateral_tau(self) -> float:
        return self.tau if self.tau_lat is None else self.tau_lat

    def brake_of(self, vehicle) -> float:
        wc = self.wc_brake if self.wc_brake is not None else vehicle.params.a_min
        return wc

    def accel_of(self, vehicle) -> float:
        wc = self.wc_accel if self.wc_accel is not None else vehicle.params.a_max
        return wc


@dataclass(frozen=True)
class ShieldOutcome:
    """Filtered longitudinal command and audit data for one vehicle-step.

    ``v_nominal`` is the reachability-clamped nominal command, so
    ``v_safe == v_nominal + v_cbf`` holds exactly and an untouched plan has
    ``v_cbf == 0``.
    """

    v_nominal: float
    v_safe: float
    v_cbf: float
    lane_change_allowed: bool = True
    slack_used: float = 0.0
    active_constraints: tuple = ()
    fault: bool = False


@dataclass(frozen=True)
class QPSolution:
    v_safe: tuple
    slack: float
    active: tuple
    duals: tuple
    objective: float


@dataclass(frozen=True)
class _SlackRow:
    """Internal non-negativity row for the shared slack variable."""

    p: tuple
    q: float
    label: str


def _gap(ego, leader) -> float:
    """Bumper-to-bumper longitudinal gap (front of ego to rear of leader)."""
    return (leader.state.x - 0.5 * leader.params.length) - (ego.state.x + 0.5 * ego.params.length)


def brake_margin(gap: float, v_follow: float, v_lead: float, brake: float,
                 tau: float, dt: float) -> float:
    """Worst value of ``gap_k - tau * v_follow_k`` while both vehicles brake
    at ``brake`` [m/s^2] from the given speeds (explicit-Euler travel).

    The sign is exact; when a cheap lower bound already proves the margin
    non-negative the bound is returned without evaluating the trajectory.
    The trajectory minimum itself is closed form: the margin is piecewise
    quadratic in the step count with breakpoints where either vehicle stops
    and where the follower decelerates through ``tau * brake``.
    """
    h0 = gap - tau * v_follow
    if v_lead >= v_follow:
        return h0
    lb = h0 - ((v_follow * v_follow - v_lead * v_lead) / (2.0 * brake) + (v_follow - v_lead) * dt)
    if lb >= 0.0:
        return lb

    dv = brake * dt
    m_f = math.ceil(v_follow / dv - 1e-12)
    m_l = math.ceil(v_lead / dv - 1e-12) if v_lead > 0.0 else 0

    def travel_steps(v0, m, k):
        kk = min(k, m)
        return kk * v0 - dv * kk * (kk - 1) * 0.5

    def h_at(k):
        s_l = travel_steps(v_lead, m_l, k)
        s_f = travel_steps(v_follow, m_f, k)
        return gap + dt * (s_l - s_f) - tau * max(0.0, v_follow - k * dv)

    k_star = int((v_follow - tau * brake) / dv) if v_follow > tau * brake else 0
    candidates = {0, m_l, m_l + 1, k_star, k_star + 1, m_f}
    margin = math.inf
    for k in candidates:
        if 0 <= k <= m_f:
            margin = min(margin, h_at(k))
    return margin


def brake_cap(gap: float, v_follow: float, v_lead: float, brake: float,
              tau: float, dt: float) -> float:
    """Largest follower speed with a non-negative :func:`brake_margin`."""
    if brake_margin(gap, v_follow, v_lead, brake, tau, dt) >= 0.0:
        return v_follow
    lo, hi = 0.0, v_follow
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if brake_margin(gap, mid, v_lead, brake, tau, dt) >= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def longitudinal_cbf(ego, leader, tau: float, config: ShieldConfig,
                     v_leader_next: float | None = None) -> AffineConstraint:
    """Headway barrier row for one leader, propagated one step.

    ``h = gap - tau * v_e`` must decay no faster than ``(1 - eta)`` per
    step.  The ego advance is credited at the commanded speed times
    ``cos(psi)``; the leader advance at ``v_leader_next`` (worst-case
    braking when not given).  The row is tightened by ``lag_margin``.
    """
    dt = config.dt
    gap = _gap(ego, leader)
    v_e = ego.state.speed
    h_now = gap - tau * v_e
    g_e = math.cos(ego.state.psi)
    g_o = math.cos(leader.state.psi)
    if v_leader_next is None:
        v_leader_next = max(0.0, leader.state.speed + config.brake_of(leader) * dt)
    p_v = g_e * dt + tau
    q = (
        config.eta * gap
        + (1.0 - config.eta) * tau * v_e
        + g_o * v_leader_next * dt
        - config.lag_margin
    )
    return AffineConstraint(
        p=(p_v, 0.0), q=q, kind="hard", label=f"headway:{leader.vid}", h_now=h_now
    )


def brake_guard(ego, leader, config: ShieldConfig,
                v_leader_next: float | None = None,
                v_hi: float | None = None) -> AffineConstraint | None:
    """Braking-feasibility row: cap the command so a joint worst-case
    braking run from the next state keeps the headway barrier satisfied.

    Returns None when even the largest reachable command is fine.
    """
    dt = config.dt
    tau = config.tau
    gap = _gap(ego, leader)
    v_e = ego.state.speed
    brake = -ego.params.a_min
    g_e = math.cos(ego.state.psi)
    g_o = math.cos(leader.state.psi)
    if v_leader_next is None:
        v_leader_next = max(0.0, leader.state.speed + config.brake_of(leader) * dt)
    if v_hi is None:
        v_hi = min(ego.params.v_cap, v_e + ego.params.a_max * dt)

    def margin_at(v_cmd: float) -> float:
        gap_next = gap + (g_o * v_leader_next - g_e * v_cmd) * dt - config.lag_margin
        return brake_margin(gap_next, v_cmd, v_leader_next, brake, tau, dt)

    if margin_at(v_hi) >= 0.0:
        return None
    lo, hi = 0.0, v_hi
    if margin_at(0.0) < 0.0:
        cap = 0.0
    else:
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if margin_at(mid) >= 0.0:
                lo = mid
            else:
                hi = mid
        cap = lo
    h_now = brake_margin(gap, v_e, leader.state.speed, brake, tau, dt)
    return AffineConstraint(
        p=(1.0, 0.0), q=cap, kind="hard", label=f"brake:{leader.vid}", h_now=h_now
    )


def lateral_cbfs(ego, c_oal, c_oar, config: ShieldConfig) -> list:
    """Lateral constraints toward the adjacent lane.

    One per existing neighbour: ``h_oal = gap - tau_lat * v_e`` with respect
    to the adjacent leader and ``h_oar = gap - tau_lat * v_oar_wc`` with
    respect to the adjacent rear vehicle under its worst-case acceleration.
    Both are returned as soft rows (propagated one step) so a squeezed
    lane-changer yields through the slack rather than faulting.
    """
    dt = config.dt
    tau_lat = config.lateral_tau()
    v_e = ego.state.speed
    g_e = math.cos(ego.state.psi)
    rows = []
    if c_oal is not None:
        gap = _gap(ego, c_oal)
        h_now = gap - tau_lat * v_e
        v_al_wc = max(0.0, c_oal.state.speed + config.brake_of(c_oal) * dt)
        g_al = math.cos(c_oal.state.psi)
        q = config.eta * gap + (1.0 - config.eta) * tau_lat * v_e + g_al * v_al_wc * dt
        rows.append(
            AffineConstraint(
                p=(g_e * dt + tau_lat, -1.0), q=q, kind="soft",
                label=f"lat_leader:{c_oal.vid}", h_now=h_now,
            )
        )
    if c_oar is not None:
        gap = _gap(c_oar, ego)
        v_ar_wc = min(c_oar.params.v_cap, c_oar.state.speed + config.accel_of(c_oar) * dt)
        h_now = gap - tau_lat * v_ar_wc
        q = config.eta * h_now - v_ar_wc * dt
        rows.append(
            AffineConstraint(
                p=(-g_e * dt, -1.0), q=q, kind="soft",
                label=f"lat_rear:{c_oar.vid}", h_now=h_now,
            )
        )
    return rows


def allow_lane_change(ego, c_oal, c_oar, config: ShieldConfig) -> bool:
    """True iff every lateral constraint holds at the current state."""
    return all(row.h_now >= 0.0 for row in lateral_cbfs(ego, c_oal, c_oar, config))


def lane_change_feasible(ego, c_oal, c_oar, config: ShieldConfig,
                         resolved: dict | None = None) -> bool:
    """Braking-feasibility extension of the lateral gate.

    Beyond the instantaneous gap test, committing to the maneuver must leave
    both new leader/follower pairs inside the braking-feasibility envelope
    after one worst-case step, otherwise the headway guarantee could not be
    honoured once the interaction topology hands the pair over.
    """
    dt = config.dt
    tau = config.lateral_tau()
    sigma = config.lag_margin
    v_e = ego.state.speed
    resolved = resolved or {}

    if c_oal is not None:
        gap1 = _gap(ego, c_oal) + (c_oal.state.speed - v_e) * dt
        v_e_hi = min(ego.params.v_cap, v_e + ego.params.a_max * dt)
        out = resolved.get(c_oal.vid)
        if out is not None and not c_oal.crashed:
            v_al_next = out.v_safe
        else:
            v_al_next = max(0.0, c_oal.state.speed + config.brake_of(c_oal) * dt)
        if brake_margin(gap1 - sigma, v_e_hi, v_al_next, -ego.params.a_min, tau, dt) < 0.0:
            return False
    if c_oar is not None:
        gap1 = _gap(c_oar, ego) + (v_e - c_oar.state.speed) * dt
        v_ar_hi = min(c_oar.params.v_cap, c_oar.state.speed + config.accel_of(c_oar) * dt)
        v_e_lo = max(0.0, v_e + ego.params.a_min * dt)
        if brake_margin(gap1 - sigma, v_ar_hi, v_e_lo, -c_oar.params.a_min, tau, dt) < 0.0:
            return False
    return True


def _fast_path_1d(v_nominal: float, rows: list) -> QPSolution | None:
    """Exact solution for one decision variable when the slack stays zero."""
    lo, hi = -math.inf, math.inf
    lo_label = hi_label = ""
    for row in rows:
        a = row.p[0]
        if a > 0.0:
            bound = row.q / a
            if bound < hi:
                hi, hi_label = bound, row.label
        elif a < 0.0:
            bound = row.q / a
            if bound > lo:
                lo, lo_label = bound, row.label
        else:
            if row.q < 0.0:
                return None
    if lo > hi:
        return None
    v = min(max(v_nominal, lo), hi)
    active = ()
    duals = ()
    if v != v_nominal:
        # exactly one bound binds; its multiplier restores stationarity
        # 2 (v - v_nom) + lambda * a = 0 for the binding row coefficient a
        if v == hi:
            label, coeff = hi_label, _coeff_of(rows, hi_label, upper=True)
        else:
            label, coeff = lo_label, _coeff_of(rows, lo_label, upper=False)
        lam = 2.0 * (v_nominal - v) / coeff
        active = (label,)
        duals = ((label, lam),)
    obj = (v - v_nominal) ** 2
    return QPSolution(v_safe=(v,), slack=0.0, active=active, duals=duals, objective=obj)


def _coeff_of(rows, label, upper):
    for row in rows:
        if row.label == label and (row.p[0] > 0.0) == upper:
            return row.p[0]
    raise RuntimeError(f"binding row {label!r} vanished")


def solve_qp(v_nominal_stack, constraints: list, k_eps: float) -> QPSolution:
    """Minimise ``||v - v_nominal||^2 + k_eps * slack`` subject to the rows.

    Exact active-set enumeration: every candidate active set is solved in
    closed form through its KKT system; the feasible candidate with the
    lowest objective wins.  The decision dimension is tiny by construction
    (at most three speed commands plus the shared slack).

    Raises :class:`ShieldFault` when the hard rows are infeasible even with
    unbounded slack.
    """
    v_nom = tuple(float(v) for v in v_nominal_stack)
    n = len(v_nom)
    for row in constraints:
        if len(row.p) != n + 1:
            raise ValueError(
                f"constraint {row.label!r} has {len(row.p)} coefficients, expected {n + 1}"
            )

    if n == 1 and all(row.p[-1] == 0.0 for row in constraints):
        sol = _fast_path_1d(v_nom[0], constraints)
        if sol is not None:
            return sol
        raise ShieldFault("hard rows infeasible")
    if n == 1:
        # slack-free interval first: optimal unless a binding soft row is
        # expensive enough that buying slack beats deviating
        sol = _fast_path_1d(v_nom[0], constraints)
        if sol is not None:
            kinds = {row.label: row.kind for row in constraints}
            soft_ok = all(
                lam <= k_eps + 1e-12 or kinds.get(label) != "soft"
                for label, lam in sol.duals
            )
            if soft_ok:
                return sol

    slack_row = _SlackRow(p=(0.0,) * n + (-1.0,), q=0.0, label="slack_nonneg")
    rows = list(constraints) + [slack_row]

    dim = n + 1
    H = np.zeros((dim, dim))
    for i in range(n):
        H[i, i] = 2.0
    c_lin = np.array([-2.0 * v for v in v_nom] + [k_eps])
    G = np.array([row.p for row in rows])
    h = np.array([row.q for row in rows])

    best = None
    hard_feasible_seen = False
    m = len(rows)
    for size in range(1, min(dim, m) + 1):
        for subset in itertools.combinations(range(m), size):
            G_a = G[list(subset)]
            kkt = np.zeros((dim + size, dim + size))
            kkt[:dim, :dim] = H
            kkt[:dim, dim:] = G_a.T
            kkt[dim:, :dim] = G_a
            rhs = np.concatenate([-c_lin, h[list(subset)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[:dim]
            lam = sol[dim:]
            if np.any(lam < -1e-9):
                continue
            if np.any(G @ z > h + 1e-9):
                continue
            hard_feasible_seen = True
            v = z[:n]
            eps = z[n]
            obj = float(np.sum((v - np.array(v_nom)) ** 2) + k_eps * eps)
            if best is None or obj < best[0] - 1e-12:
                active = tuple(rows[j].label for j in subset)
                duals = tuple((rows[j].label, float(l)) for j, l in zip(subset, lam))
                best = (obj, QPSolution(
                    v_safe=tuple(float(x) for x in v),
                    slack=float(eps),
                    active=active,
                    duals=duals,
                    objective=obj,
                ))
    if best is None:
        if hard_feasible_seen:
            raise ShieldFault("no optimal candidate found")
        raise ShieldFault("hard rows infeasible")
    return best[1]


def _reach_box(ego, config: ShieldConfig):
    dt = config.dt
    v = ego.state.speed
    lo = max(0.0, v + ego.params.a_min * dt)
    hi = min(ego.params.v_cap, v + ego.params.a_max * dt)
    rows = [
        AffineConstraint(p=(1.0, 0.0), q=hi, kind="hard", label="reach_hi", h_now=hi - v),
        AffineConstraint(p=(-1.0, 0.0), q=-lo, kind="hard", label="reach_lo", h_now=v - lo),
    ]
    return lo, hi, rows


def _filter_common(ego, leader_credits: list, soft_rows: list, v_nominal: float,
                   config: ShieldConfig) -> ShieldOutcome:
    """Shared HSS/MASS core: build rows, solve, fall back to full braking."""
    lo, hi, rows = _reach_box(ego, config)
    v_nom_step = min(max(v_nominal, lo), hi)
    for leader, v_next in leader_credits:
        rows.append(longitudinal_cbf(ego, leader, config.tau, config, v_leader_next=v_next))
        guard = brake_guard(ego, leader, config, v_leader_next=v_next, v_hi=hi)
        if guard is not None:
            rows.append(guard)
    rows.extend(soft_rows)
    try:
        sol = solve_qp((v_nom_step,), rows, config.k_eps)
    except ShieldFault:
        return ShieldOutcome(
            v_nominal=v_nom_step,
            v_safe=lo,
            v_cbf=lo - v_nom_step,
            slack_used=0.0,
            active_constraints=("fault",),
            fault=True,
        )
    v_safe = sol.v_safe[0]
    return ShieldOutcome(
        v_nominal=v_nom_step,
        v_safe=v_safe,
        v_cbf=v_safe - v_nom_step,
        slack_used=sol.slack,
        active_constraints=sol.active,
        fault=False,
    )


def _credit_hss(vehicle, config: ShieldConfig) -> float:
    if vehicle.crashed:
        return 0.0
    return max(0.0, vehicle.state.speed + config.brake_of(vehicle) * config.dt)


def cutting_in(ego, c_ol, c_oal) -> bool:
    """Adjacent leader mid-change into the ego's lane, inserting between the
    ego and its current leader (or with no current leader ahead)."""
    if c_oal is None or c_oal.lc_phase != "changing" or c_oal.target_lane != ego.lane:
        return False
    if not ((c_oal.state.x, -c_oal.vid) > (ego.state.x, -ego.vid)):
        return False
    return c_ol is None or ((c_ol.state.x, -c_ol.vid) > (c_oal.state.x, -c_oal.vid))


def filter_hss(ego, near: "Neighborhood", v_nominal: float,
               config: ShieldConfig) -> ShieldOutcome:
    """Worst-case shield: every observed vehicle is assumed to brake
    (leaders) or accelerate (rear vehicles) as hard as it can.

    Besides the own-lane leader, a vehicle cutting in from the adjacent
    lane constrains the ego as a second worst-case leader; its lane label
    only flips at maneuver completion, long after it physically matters.
    """
    leaders = []
    if near.c_ol is not None:
        leaders.append((near.c_ol, _credit_hss(near.c_ol, config)))
    if cutting_in(ego, near.c_ol, near.c_oal):
        leaders.append((near.c_oal, _credit_hss(near.c_oal, config)))
    soft_rows = []
    if ego.lc_phase == "changing":
        if near.c_oal is not None and all(l.vid != near.c_oal.vid for l, _ in leaders):
            leaders.append((near.c_oal, _credit_hss(near.c_oal, config)))
        soft_rows = [
            row for row in lateral_cbfs(ego, None, near.c_oar, config)
        ]
    return _filter_common(ego, leaders, soft_rows, v_nominal, config)


def filter_mass(ego, parents: list, other_neighbors: "Neighborhood", v_nominal: float,
                config: ShieldConfig) -> ShieldOutcome:
    """Cooperative shield: parent vehicles share their already-resolved safe
    commands; remaining neighbours keep worst-case treatment."""
    leaders = []
    for parent, outcome in parents:
        if parent.crashed or outcome is None:
            leaders.append((parent, 0.0 if parent.crashed else _credit_hss(parent, config)))
        else:
            leaders.append((parent, outcome.v_safe))
    soft_rows = []
    if ego.lc_phase == "changing" and other_neighbors.c_oar is not None:
        soft_rows = lateral_cbfs(ego, None, other_neighbors.c_oar, config)
    return _filter_common(ego, leaders, soft_rows, v_nominal, config)


def joint_safe_control(world: "World", topology: "InteractionTopology",
                       nominal_plans: dict) -> dict:
    """Resolve every vehicle in dependency order and gate lane requests.

    Parents are always ahead, so the front-to-back evaluation order hands
    each vehicle the resolved outcomes of everything it depends on.
    """
    from mergeshield.topology import evaluation_order
    from mergeshield.world import neighbors

    config = world.shield
    order = evaluation_order(topology, world.vehicles)
    outcomes: dict = {}
    by_id = {v.vid: v for v in world.vehicles}
    for vid in order:
        vehicle = by_id[vid]
        if vehicle.crashed or vid not in nominal_plans:
            continue
        plan = nominal_plans[vid]
        if config.mode == "none":
            out = ShieldOutcome(
                v_nominal=plan.v_target, v_safe=plan.v_target, v_cbf=0.0,
                lane_change_allowed=True,
            )
        else:
            near = neighbors(world, vehicle)
            if config.mode == "hss":
                out = filter_hss(vehicle, near, plan.v_target, config)
            else:
                parents = [(by_id[pid], outcomes.get(pid)) for pid in topology.parents(vid)]
                out = filter_mass(vehicle, parents, near, plan.v_target, config)
            if plan.lane_request:
                allowed = allow_lane_change(vehicle, near.c_oal, near.c_oar, config) and \
                    lane_change_feasible(vehicle, near.c_oal, near.c_oar, config, outcomes)
                out = replace(out, lane_change_allowed=allowed)
        outcomes[vid] = out
    return outcomes
