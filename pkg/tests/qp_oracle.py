"""Brute-force oracles for the shield QP, independent of the solver.

The oracle evaluates the slack-augmented objective pointwise: for a decision
point v the optimal shared slack is the largest soft-row violation, so the
objective is ``||v - v_nom||^2 + k_eps * max(0, violations)`` over the
hard-feasible set.  The search runs a dense grid over the decision box,
augmented with the analytic row boundaries (where kinks can sit), then
refines around the incumbent.
"""

import itertools

import numpy as np


def _split_rows(rows, n):
    hard, soft = [], []
    for r in rows:
        p = np.asarray(r.p[:n], dtype=float)
        if r.p[n] == 0.0:
            hard.append((p, r.q))
        else:
            soft.append((p / -r.p[n], r.q / -r.p[n]))
    return hard, soft


def oracle_objective_at(points, v_nom, hard, soft, k_eps):
    """Objective per point, +inf where hard rows fail."""
    pts = np.atleast_2d(points)
    obj = np.sum((pts - np.asarray(v_nom)) ** 2, axis=1)
    eps = np.zeros(len(pts))
    for p, q in soft:
        eps = np.maximum(eps, pts @ p - q)
    eps = np.maximum(eps, 0.0)
    obj = obj + k_eps * eps
    for p, q in hard:
        obj = np.where(pts @ p <= q + 1e-9, obj, np.inf)
    return obj


def grid_search_min(v_nom, rows, k_eps, box=(0.0, 40.0), resolution=1e-3):
    """Minimum objective over the decision box by dense grid search.

    1-D runs the full grid at ``resolution`` plus every row boundary; higher
    dimensions use a coarse grid refined around the incumbent.  Returns
    (objective, point) with objective == inf when no feasible point exists.
    """
    n = len(v_nom)
    hard, soft = _split_rows(rows, n)
    lo, hi = box

    if n == 1:
        pts = np.arange(lo, hi + resolution / 2, resolution)
        extra = [lo, hi, min(max(v_nom[0], lo), hi)]
        for p, q in hard + soft:
            if p[0] != 0.0:
                b = q / p[0]
                if lo <= b <= hi:
                    extra.append(b)
        pts = np.concatenate([pts, np.array(extra)])[:, None]
        obj = oracle_objective_at(pts, v_nom, hard, soft, k_eps)
        best = int(np.argmin(obj))
        best_obj, best_pt = float(obj[best]), pts[best]
        if not np.isfinite(best_obj):
            return best_obj, None
        # refine around the incumbent
        width = resolution
        for _ in range(8):
            local = np.linspace(best_pt[0] - width, best_pt[0] + width, 81)[:, None]
            local = np.clip(local, lo, hi)
            lobj = oracle_objective_at(local, v_nom, hard, soft, k_eps)
            i = int(np.argmin(lobj))
            if lobj[i] < best_obj:
                best_obj, best_pt = float(lobj[i]), local[i]
            width /= 20.0
        return best_obj, best_pt

    axis_pts = 41 if n == 3 else 201
    axes = [np.linspace(lo, hi, axis_pts) for _ in range(n)]
    grid = np.array(list(itertools.product(*axes)))
    obj = oracle_objective_at(grid, v_nom, hard, soft, k_eps)
    best = int(np.argmin(obj))
    best_obj, best_pt = float(obj[best]), grid[best]
    if not np.isfinite(best_obj):
        return best_obj, None
    width = (hi - lo) / (axis_pts - 1)
    for _ in range(10):
        # recentre repeatedly at this width: steep soft-row valleys need a
        # walk along the valley floor before the window shrinks
        for _ in range(60):
            axes = [
                np.clip(np.linspace(best_pt[d] - width, best_pt[d] + width, 13), lo, hi)
                for d in range(n)
            ]
            local = np.array(list(itertools.product(*axes)))
            lobj = oracle_objective_at(local, v_nom, hard, soft, k_eps)
            i = int(np.argmin(lobj))
            if lobj[i] < best_obj - 1e-12:
                best_obj, best_pt = float(lobj[i]), local[i]
            else:
                break
        width /= 4.0
    return best_obj, best_pt


def check_instance(v_nom, rows, k_eps, tol_obj=1e-6, tol_kkt=1e-8):
    """Verify one solver call against the oracle; returns 1 when a solve
    happened (0 for consistently-infeasible instances).

    For one decision variable the dense grid plus boundary candidates pins
    the optimum, so objectives must agree within ``tol_obj`` both ways.  In
    higher dimensions direct grid descent cannot certify the optimum to that
    precision (thin feasible valleys), so the solver must match or beat the
    grid within ``tol_obj`` and carry KKT residuals below ``tol_kkt``; the
    reported objective is also recomputed independently from the solution
    point.
    """
    from mergeshield.shield import ShieldFault, solve_qp

    n = len(v_nom)
    oracle_obj, _ = grid_search_min(v_nom, rows, k_eps)
    try:
        sol = solve_qp(v_nom, rows, k_eps)
    except ShieldFault:
        assert not np.isfinite(oracle_obj), "solver infeasible but oracle found a point"
        return 0
    assert np.isfinite(oracle_obj), "oracle infeasible but solver returned a point"
    hard, soft = _split_rows(rows, n)
    recomputed = oracle_objective_at(np.array([sol.v_safe]), v_nom, hard, soft, k_eps)[0]
    assert np.isfinite(recomputed), "solver point violates hard rows"
    assert abs(recomputed - sol.objective) <= 1e-7 * (1.0 + abs(sol.objective))
    scale = 1.0 + abs(sol.objective)
    assert sol.objective <= oracle_obj + tol_obj * scale
    if n == 1:
        assert oracle_obj <= sol.objective + tol_obj * scale
    assert kkt_residuals(v_nom, rows, k_eps, sol) < tol_kkt
    return 1


def kkt_residuals(v_nom, rows, k_eps, sol):
    """Max stationarity / complementary-slackness / dual-sign residual,
    scaled by the multiplier magnitude (relative KKT measure).

    Reconstructs the implicit slack-bound multiplier when the solver used
    the slack-free fast path.
    """
    n = len(v_nom)
    z = np.array(list(sol.v_safe) + [sol.slack])
    rows_by_label = {r.label: r for r in rows}
    grad = np.zeros(n + 1)
    grad[:n] = 2.0 * (np.array(sol.v_safe) - np.array(v_nom))
    grad[n] = k_eps

    scale = 1.0 + max((abs(l) for _, l in sol.duals), default=0.0)
    residual = 0.0
    saw_slack_row = False
    for label, lam in sol.duals:
        residual = max(residual, -lam / scale)
        if label == "slack_nonneg":
            saw_slack_row = True
            p = np.zeros(n + 1)
            p[n] = -1.0
            q = 0.0
        else:
            row = rows_by_label[label]
            p = np.asarray(row.p, dtype=float)
            q = row.q
        grad += lam * p
        residual = max(residual, abs(lam * (p @ z - q)) / scale)
    if not saw_slack_row:
        # fast path: treat the remaining epsilon gradient as the implicit
        # bound multiplier, which must be non-negative with slack == 0
        mu = grad[n]
        residual = max(residual, -mu / scale, abs(mu * sol.slack) / scale)
        grad[n] = 0.0
    residual = max(residual, float(np.max(np.abs(grad))) / scale)
    for r in rows:
        p = np.asarray(r.p, dtype=float)
        residual = max(residual, float(p @ z - r.q))
    residual = max(residual, -sol.slack)
    return residual
