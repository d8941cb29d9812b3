"""Guidance-path cost matrix and open-tour solver.

The tour starts at a pinned anchor (the newly expanded viewpoint), visits
every reachable unvisited viewpoint group once, and ends at the home
position. The matrix encodes the pinning with a zero-cost home->start edge
and infinite edges into the start / out of home, so solving the closed
tour and cutting that edge yields the wanted open path. We solve the open
path directly: exact Held-Karp up to a size cutoff, nearest-neighbor plus
2-opt beyond it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from bimodal_explorer.costs import PosedPoint, time_cost
from bimodal_explorer.geometry import Modality

EXACT_LIMIT = 12


class PlanningDeadEnd(RuntimeError):
    """No finite start -> groups -> home path exists."""


@dataclass
class GuidanceInstance:
    matrix: np.ndarray  # (m+2, m+2) seconds; row/col 0 start, last home
    group_ids: list[int]  # intermediate group ids, matrix rows 1..m
    anchor_uid: int = -1
    seed: int = 0


@dataclass
class TourResult:
    order: list[int]  # visited group ids, in order
    total_time: float
    skipped: list[int] = field(default_factory=list)  # unreachable group ids


def build_matrix(expanded_vp, groups, home, params, estimator) -> GuidanceInstance:
    """Cost matrix over {anchor} + unvisited groups + {home}.

    Group-to-group legs are priced between group average viewpoints at the
    average modality; legs out of the anchor are priced from the expanded
    viewpoint itself. Home legs ignore the yaw term.
    """
    m = len(groups)
    c = np.full((m + 2, m + 2), math.inf)
    home_i = m + 1
    avg = Modality.AVERAGE

    def home_point(other):
        return PosedPoint(home, other.yaw)  # zero yaw delta on home legs

    anchor = PosedPoint(expanded_vp.position, expanded_vp.yaw)
    for j, g in enumerate(groups):
        gp = PosedPoint(g.avg_position, g.avg_yaw)
        c[0, j + 1] = time_cost(anchor, gp, avg, params, estimator)
        c[j + 1, home_i] = time_cost(gp, home_point(gp), avg, params, estimator)
        for k, g2 in enumerate(groups):
            if k == j:
                continue
            gp2 = PosedPoint(g2.avg_position, g2.avg_yaw)
            c[j + 1, k + 1] = time_cost(gp, gp2, avg, params, estimator)
    c[0, home_i] = time_cost(anchor, home_point(anchor), avg, params, estimator)
    c[home_i, 0] = 0.0  # zero connection: the cycle must close through here
    return GuidanceInstance(matrix=c, group_ids=[g.cluster_id for g in groups])


def solve(inst: GuidanceInstance, exact_limit: int = EXACT_LIMIT) -> TourResult:
    """Open tour anchor -> each reachable group once -> home.

    Groups with no finite way in or out are skipped and reported. Raises
    PlanningDeadEnd when not even the direct anchor->home leg is finite.
    """
    c = inst.matrix
    m = len(inst.group_ids)
    home_i = m + 1

    keep = list(range(1, m + 1))
    while True:
        dropped = False
        for j in list(keep):
            ins = [c[0, j]] + [c[k, j] for k in keep if k != j]
            outs = [c[j, home_i]] + [c[j, k] for k in keep if k != j]
            if not any(math.isfinite(x) for x in ins) or not any(
                math.isfinite(x) for x in outs
            ):
                keep.remove(j)
                dropped = True
        if not dropped:
            break
    skipped = [inst.group_ids[j - 1] for j in range(1, m + 1) if j not in keep]

    if not keep:
        if not math.isfinite(c[0, home_i]):
            raise PlanningDeadEnd("no finite path from anchor to home")
        return TourResult(order=[], total_time=float(c[0, home_i]), skipped=skipped)

    if len(keep) <= exact_limit:
        order_idx, total = _held_karp_path(c, keep, home_i)
    else:
        order_idx, total = _nn_two_opt(c, keep, home_i)
    if order_idx is None or not math.isfinite(total):
        raise PlanningDeadEnd("no finite tour through reachable groups")
    return TourResult(
        order=[inst.group_ids[j - 1] for j in order_idx],
        total_time=float(total),
        skipped=skipped,
    )


def _held_karp_path(c, keep, home_i):
    """Exact open-path DP: min cost 0 -> (all of keep) -> home."""
    n = len(keep)
    full = (1 << n) - 1
    dp = [[math.inf] * n for _ in range(1 << n)]
    par = [[-1] * n for _ in range(1 << n)]
    for j in range(n):
        dp[1 << j][j] = c[0, keep[j]]
    for mask in range(1, full + 1):
        row = dp[mask]
        for j in range(n):
            if not (mask >> j) & 1:
                continue
            dj = row[j]
            if not math.isfinite(dj):
                continue
            rest = (~mask) & full
            k = rest
            while k:
                b = k & (-k)
                t = b.bit_length() - 1
                nd = dj + c[keep[j], keep[t]]
                nm = mask | b
                if nd < dp[nm][t]:
                    dp[nm][t] = nd
                    par[nm][t] = j
                k ^= b
    best = math.inf
    best_j = -1
    for j in range(n):
        total = dp[full][j] + c[keep[j], home_i]
        if total < best:
            best = total
            best_j = j
    if best_j < 0:
        return None, math.inf
    order = []
    mask, j = full, best_j
    while j >= 0:
        order.append(keep[j])
        pj = par[mask][j]
        mask ^= 1 << j
        j = pj
    order.reverse()
    return order, best


def _nn_two_opt(c, keep, home_i, max_passes: int = 60):
    """Nearest-neighbor construction then best-improvement 2-opt passes.

    When the intermediate block is symmetric (the usual case: travel times
    between group averages) the reversed-segment cost is unchanged and the
    move delta is O(1); otherwise the inner sums are recomputed.
    """
    remaining = list(keep)
    order = []
    cur = 0
    while remaining:
        best = min(remaining, key=lambda j: (c[cur, j], j))
        if not math.isfinite(c[cur, best]):
            return None, math.inf
        order.append(best)
        remaining.remove(best)
        cur = best

    block = c[np.ix_(keep, keep)]
    symmetric = np.array_equal(block, block.T)

    def tour_cost(seq):
        total = c[0, seq[0]]
        for a, b in zip(seq, seq[1:]):
            total += c[a, b]
        return total + c[seq[-1], home_i]

    cost = tour_cost(order)
    n = len(order)
    for _ in range(max_passes):
        best_delta = -1e-12
        best_ij = None
        for i in range(n - 1):
            prev_i = 0 if i == 0 else order[i - 1]
            for j in range(i + 1, n):
                nxt_j = home_i if j == n - 1 else order[j + 1]
                old = c[prev_i, order[i]] + c[order[j], nxt_j]
                new = c[prev_i, order[j]] + c[order[i], nxt_j]
                if not (math.isfinite(old) and math.isfinite(new)):
                    continue
                if symmetric:
                    delta = new - old
                else:
                    inner_old = sum(c[order[k], order[k + 1]] for k in range(i, j))
                    inner_new = sum(c[order[k + 1], order[k]] for k in range(i, j))
                    delta = (new + inner_new) - (old + inner_old)
                if delta < best_delta:
                    best_delta = delta
                    best_ij = (i, j)
        if best_ij is None:
            break
        i, j = best_ij
        order[i : j + 1] = reversed(order[i : j + 1])
        cost = tour_cost(order)
    return order, cost
