"""Budget-aware Monte Carlo tree search over bimodal viewpoints.

Nodes are viewpoints (plus a root at the robot pose and an always-available
return-home sentinel); a branch is a viewpoint traversal sequence with one
locked coverage strategy per touched cluster. Selection minimizes a UCB
score built from the discounted subtree information gain and exponential
penalties on the energy/time left after finishing a guidance tour through
the remaining groups and returning home.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from bimodal_explorer.costs import CostParams, PosedPoint, path_length, time_cost
from bimodal_explorer.geometry import Modality, dyaw, euclid
from bimodal_explorer.tsp import (
    GuidanceInstance,
    PlanningDeadEnd,
    TourResult,
    solve,
)
from bimodal_explorer.viewpoints import Viewpoint, ViewpointGroup

ROOT_UID = -1
HOME_UID = -2

# Guidance tours inside simulations: exact DP below, NN+2-opt above. The
# public grouped-TSP solver keeps its own, higher exact cutoff.
SIM_EXACT_LIMIT = 6


@dataclass
class PenaltyParams:
    a1: float = 10.0
    b1: float = 2.0
    a2: float = 4.0
    b2: float = 0.0

    def __post_init__(self):
        if not (self.a1 > self.a2 > 0):
            raise ValueError("require a1 > a2 > 0 (steeper energy penalty)")

    def kappa_energy(self, e_after: float, e_all: float) -> float:
        if e_all <= 0.0:
            return math.exp(self.b1) if e_after >= 0.0 else math.inf
        return math.exp(-self.a1 * e_after / e_all + self.b1)

    def kappa_time(self, t_after: float, t_all: float) -> float:
        if t_all <= 0.0:
            return math.exp(self.b2) if t_after >= 0.0 else math.inf
        return math.exp(-self.a2 * t_after / t_all + self.b2)

    @classmethod
    def from_header(cls, header: dict) -> "PenaltyParams":
        cfg = header.get("penalties", {})
        return cls(**{k: float(v) for k, v in cfg.items()})


@dataclass
class SearchConfig:
    iterations: int = 2000
    child_distance: float = 8.0
    gamma_ig: float = 0.8
    epsilon: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError("epsilon must be in (0, 1)")


class HomeSentinel:
    """Pseudo-viewpoint for returning to the departure station."""

    __slots__ = ("position", "yaw", "uid")

    def __init__(self, position):
        self.position = position
        self.yaw = 0.0
        self.uid = HOME_UID

    @property
    def ig(self) -> int:
        return 0


class TreeNode:
    __slots__ = (
        "viewpoint", "parent", "children", "depth",
        "n", "n_ig", "ig_acc", "own_ig",
        "e_rem", "t_rem", "e_after", "t_after",
        "kappa_e", "kappa_t", "ke_in_parent", "kt_in_parent",
        "ksum_e", "ksum_t", "kn", "home_ke", "home_kt", "own_ke", "own_kt",
        "pruned", "branch_uids", "strategy_lock", "untried", "uid",
    )

    def __init__(self, viewpoint, parent, e_rem, t_rem, uid):
        self.viewpoint = viewpoint
        self.parent = parent
        self.children: list[TreeNode] = []
        self.depth = 0 if parent is None else parent.depth + 1
        self.n = 0
        self.n_ig = 0.0
        self.ig_acc = 0.0
        self.own_ig = 0.0
        self.e_rem = e_rem
        self.t_rem = t_rem
        self.e_after = math.nan
        self.t_after = math.nan
        self.kappa_e = None
        self.kappa_t = None
        self.ke_in_parent = None
        self.kt_in_parent = None
        self.ksum_e = 0.0
        self.ksum_t = 0.0
        self.kn = 0
        self.home_ke = None
        self.home_kt = None
        self.own_ke = None
        self.own_kt = None
        self.pruned = False
        self.uid = uid
        if parent is None:
            self.branch_uids = frozenset()
            self.strategy_lock = {}
        else:
            vp = viewpoint
            if isinstance(vp, Viewpoint):
                self.branch_uids = parent.branch_uids | {vp.uid}
                lock = dict(parent.strategy_lock)
                lock[vp.cluster_id] = vp.strategy
                self.strategy_lock = lock
            else:  # home sentinel
                self.branch_uids = parent.branch_uids
                self.strategy_lock = parent.strategy_lock
        self.untried = None  # potential children, built lazily

    @property
    def is_home(self) -> bool:
        return isinstance(self.viewpoint, HomeSentinel)

    def simulated(self) -> bool:
        return self.kappa_e is not None


class PlannerModel:
    """Frozen per-replan-cycle view of groups, costs, and the path estimator.

    Caches edge costs, group-to-group times, and guidance tours so repeated
    tree operations in one search stay cheap.
    """

    def __init__(self, groups: list[ViewpointGroup], params: CostParams,
                 estimator, home, penalties: PenaltyParams,
                 e_all: float, t_all: float):
        self.groups = groups
        self.params = params
        self.estimator = estimator
        self.home = np.asarray(home, dtype=np.float64)
        self.penalties = penalties
        self.e_all = e_all
        self.t_all = t_all
        self.group_by_id = {g.cluster_id: g for g in groups}
        self.all_viewpoints: list[Viewpoint] = []
        uid = 0
        for g in groups:
            for vp in g.all_viewpoints():
                vp.uid = uid
                self.all_viewpoints.append(vp)
                uid += 1
        self._len_cache: dict[tuple[int, int], float] = {}
        self._gg_time: dict[tuple[int, int], float] = {}
        self._ghome_time: dict[int, float] = {}
        self._anchor_time: dict[tuple[int, int], float] = {}
        self._tour_cache: dict[tuple[int, frozenset], TourResult | None] = {}

    # ------------------------------------------------------------ lengths

    def _length(self, pose_a, pose_b, key) -> float:
        hit = self._len_cache.get(key)
        if hit is None:
            hit = path_length(pose_a.position, pose_b.position, self.estimator)
            self._len_cache[key] = hit
        return hit

    def edge_cost(self, pose_from, vp_to) -> tuple[float, float]:
        """(time, energy) from a pose to a child viewpoint, priced at the
        child's modality; legs to the home sentinel are priced at the
        average modality with no yaw term."""
        if isinstance(vp_to, HomeSentinel):
            m = Modality.AVERAGE
            length = self._length(pose_from, vp_to, (pose_from.uid, HOME_UID))
            if math.isinf(length):
                return math.inf, math.inf
            t = length / self.params.v(m)
        else:
            m = vp_to.modality
            length = self._length(pose_from, vp_to, (pose_from.uid, vp_to.uid))
            if math.isinf(length):
                return math.inf, math.inf
            t = max(length / self.params.v(m),
                    dyaw(pose_from.yaw, vp_to.yaw) / self.params.w(m))
        return t, self.params.p(m) * t

    def group_time(self, gid_a: int, gid_b: int) -> float:
        key = (gid_a, gid_b) if gid_a <= gid_b else (gid_b, gid_a)
        hit = self._gg_time.get(key)
        if hit is None:
            ga = self.group_by_id[key[0]]
            gb = self.group_by_id[key[1]]
            a = PosedPoint(ga.avg_position, ga.avg_yaw)
            b = PosedPoint(gb.avg_position, gb.avg_yaw)
            hit = time_cost(a, b, Modality.AVERAGE, self.params, self.estimator)
            self._gg_time[key] = hit
        return hit

    def group_home_time(self, gid: int) -> float:
        hit = self._ghome_time.get(gid)
        if hit is None:
            g = self.group_by_id[gid]
            a = PosedPoint(g.avg_position, g.avg_yaw)
            b = PosedPoint(self.home, g.avg_yaw)  # no yaw term on home legs
            hit = time_cost(a, b, Modality.AVERAGE, self.params, self.estimator)
            self._ghome_time[gid] = hit
        return hit

    def group_home_energy(self, gid: int | None) -> float:
        """Energy of the group -> home leg at average modality (prune check).
        The home sentinel itself has no group: its return cost is zero."""
        if gid is None:
            return 0.0
        t = self.group_home_time(gid)
        if math.isinf(t):
            return math.inf
        return self.params.p_average * t

    def anchor_group_time(self, anchor, gid: int) -> float:
        key = (anchor.uid, gid)
        hit = self._anchor_time.get(key)
        if hit is None:
            g = self.group_by_id[gid]
            b = PosedPoint(g.avg_position, g.avg_yaw)
            hit = time_cost(anchor, b, Modality.AVERAGE, self.params,
                            self.estimator)
            self._anchor_time[key] = hit
        return hit

    def anchor_home_time(self, anchor) -> float:
        length = self._length(anchor, PosedPoint(self.home), (anchor.uid, HOME_UID))
        if math.isinf(length):
            return math.inf
        return length / self.params.v_average

    # ------------------------------------------------------------ guidance

    def guidance_tour(self, anchor, remaining: frozenset) -> TourResult | None:
        """Open tour anchor -> remaining groups -> home; None on dead end."""
        key = (anchor.uid, remaining)
        if key in self._tour_cache:
            return self._tour_cache[key]
        gids = sorted(remaining)
        m = len(gids)
        c = np.full((m + 2, m + 2), math.inf)
        home_i = m + 1
        for j, gj in enumerate(gids):
            c[0, j + 1] = self.anchor_group_time(anchor, gj)
            c[j + 1, home_i] = self.group_home_time(gj)
            for k in range(j + 1, m):
                t = self.group_time(gj, gids[k])
                c[j + 1, k + 1] = t
                c[k + 1, j + 1] = t
        c[0, home_i] = self.anchor_home_time(anchor)
        c[home_i, 0] = 0.0
        inst = GuidanceInstance(matrix=c, group_ids=gids, anchor_uid=anchor.uid)
        try:
            result = solve(inst, exact_limit=SIM_EXACT_LIMIT)
        except PlanningDeadEnd:
            result = None
        self._tour_cache[key] = result
        return result


@dataclass
class RootChildStat:
    uid: int
    modality: str  # "T", "A", or "home"
    strategy: str
    cluster_id: int | None
    n: int
    g_score: float
    quality: float  # N(R_p) - R_t; larger is better
    r_p: float
    r_t: float


@dataclass
class SearchResult:
    goal: Viewpoint | HomeSentinel | None
    branch: list
    iterations: int
    tree_nodes: int
    root_stats: list[RootChildStat] = field(default_factory=list)
    ranked_goals: list = field(default_factory=list)  # root children, best first
    wall_time: float = 0.0


class Search:
    """One tree search over a frozen planner model."""

    def __init__(self, root_pose: PosedPoint, e_remaining: float,
                 t_remaining: float, model: PlannerModel, config: SearchConfig):
        self.model = model
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        root_pose.uid = ROOT_UID
        self.root = TreeNode(root_pose, None, e_remaining, t_remaining, ROOT_UID)
        self.n_nodes = 1
        self.all_gids = frozenset(g.cluster_id for g in model.groups)

    # ------------------------------------------------------------ pieces

    def potential_children(self, node: TreeNode) -> list:
        """Candidate viewpoints not on the branch, within the distance
        threshold (dropped if it filters everything out), respecting the
        branch's per-cluster strategy lock. The home sentinel is always a
        candidate; the home node itself is terminal."""
        if node.is_home:
            return []
        lock = node.strategy_lock
        on_branch = node.branch_uids
        pos = node.viewpoint.position
        limit = self.config.child_distance
        near = []
        far = []
        for vp in self.model.all_viewpoints:
            if vp.uid in on_branch:
                continue
            tag = lock.get(vp.cluster_id)
            if tag is not None and vp.strategy != tag:
                continue
            if euclid(pos, vp.position) <= limit:
                near.append(vp)
            else:
                far.append(vp)
        cands = near if near else far  # relaxation: drop the distance rule
        cands = list(cands)
        cands.append(HomeSentinel(self.model.home))
        return cands

    def _ensure_untried(self, node: TreeNode) -> None:
        if node.untried is None:
            node.untried = self.potential_children(node)

    def reward(self, node: TreeNode) -> tuple[float, float]:
        """(R_p, R_t). Fresh leaves (no backprop through them yet) report
        their own simulated values."""
        if node.n_ig > 0.0:
            r_p = node.ig_acc / node.n_ig
        else:
            r_p = node.own_ig
        return r_p, node.kappa_e + node.kappa_t

    @staticmethod
    def _normalizer(values: list[float], eps: float):
        lo = min(values)
        hi = max(values)
        if hi - lo <= 0.0:
            return lambda x: 1.0
        scale = (1.0 - eps) / (hi - lo)
        return lambda x: eps + (x - lo) * scale

    def best_child(self, node: TreeNode, explore: bool = True):
        """Minimum-U child per the UCB rule; unvisited children first
        (uniformly at random) during selection."""
        kids = [c for c in node.children if not c.pruned and c.simulated()]
        if not kids:
            return None
        if explore:
            unvisited = [c for c in kids if c.n == 0]
            if unvisited:
                pick = int(self.rng.integers(len(unvisited)))
                return unvisited[pick]
        rewards = [self.reward(c) for c in kids]
        norm = self._normalizer([r[0] for r in rewards], self.config.epsilon)
        n_s = sum(c.n for c in kids)
        best = None
        best_key = None
        for c, (r_p, r_t) in zip(kids, rewards):
            g = -norm(r_p) + r_t
            if explore and c.n > 0:
                u = g - math.sqrt(2.0 * math.log(n_s) / c.n)
            else:
                u = g
            key = (u, c.uid)
            if best_key is None or key < best_key:
                best = c
                best_key = key
        return best

    def select(self) -> tuple[TreeNode, bool]:
        """Descend via best_child until a node with untried candidates.
        Returns (node, is_terminal)."""
        v = self.root
        while True:
            self._ensure_untried(v)
            if v.untried:
                return v, False
            nxt = self.best_child(v, explore=True)
            if nxt is None:
                return v, True
            v = nxt

    def expand(self, node: TreeNode) -> tuple[bool, TreeNode]:
        """Attach a uniformly random untried child; price the edge at the
        child's modality and prune immediately if the child could not
        afford the trip home from its group."""
        pick = int(self.rng.integers(len(node.untried)))
        vp = node.untried.pop(pick)
        t_edge, e_edge = self.model.edge_cost(node.viewpoint, vp)
        child = TreeNode(vp, node, node.e_rem - e_edge, node.t_rem - t_edge,
                         vp.uid if not isinstance(vp, HomeSentinel) else HOME_UID)
        node.children.append(child)
        self.n_nodes += 1
        gid = None if isinstance(vp, HomeSentinel) else vp.cluster_id
        home_cost = self.model.group_home_energy(gid)
        if math.isinf(e_edge) or child.e_rem - home_cost < 0.0:
            child.pruned = True
            return False, child
        return True, child

    def simulate(self, node: TreeNode) -> bool:
        """Set the node's own gain and its post-tour budget penalties."""
        if node.is_home:
            node.own_ig = 0.0
            node.e_after = node.e_rem
            node.t_after = node.t_rem
        else:
            remaining = self.all_gids - set(node.strategy_lock.keys())
            tour = self.model.guidance_tour(node.viewpoint, frozenset(remaining))
            if tour is None:
                node.pruned = True
                return False
            node.own_ig = float(node.viewpoint.ig)
            node.e_after = node.e_rem - self.model.params.p_average * tour.total_time
            node.t_after = node.t_rem - tour.total_time
        pen = self.model.penalties
        node.kappa_e = pen.kappa_energy(node.e_after, self.model.e_all)
        node.kappa_t = pen.kappa_time(node.t_after, self.model.t_all)
        node.own_ke = node.kappa_e
        node.own_kt = node.kappa_t
        return True

    def backpropagate(self, leaf: TreeNode) -> None:
        """Observe the branch ending at `leaf` along every ancestor.

        Each ancestor v accumulates the discounted path gain below it,
        g(v) = own(v') seen through g = own + gamma * g walking upward, so
        its discounted average IG (ig_acc / n_ig) reflects its own gain
        plus the gains reachable beneath it even when the tree saturates
        and terminal leaves are re-observed. Penalty values are refreshed
        as children means along the same walk.
        """
        gamma = self.config.gamma_ig
        g = leaf.own_ig
        child = leaf
        v = leaf.parent
        while v is not None:
            v.n += 1
            v.n_ig += gamma
            g = v.own_ig + gamma * g
            v.ig_acc += g
            # children-mean penalties. The return-home child never joins the
            # mean (every leaf's tour already prices the trip home; averaging
            # the quit option in masks hopeless branches); it serves as the
            # fallback when no continuation child has been simulated.
            if child.is_home:
                v.home_ke = child.kappa_e
                v.home_kt = child.kappa_t
            else:
                if child.ke_in_parent is None:
                    v.ksum_e += child.kappa_e
                    v.ksum_t += child.kappa_t
                    v.kn += 1
                else:
                    v.ksum_e += child.kappa_e - child.ke_in_parent
                    v.ksum_t += child.kappa_t - child.kt_in_parent
                child.ke_in_parent = child.kappa_e
                child.kt_in_parent = child.kappa_t
            if v.kn > 0:
                v.kappa_e = v.ksum_e / v.kn
                v.kappa_t = v.ksum_t / v.kn
            elif v.home_ke is not None:
                v.kappa_e = v.home_ke
                v.kappa_t = v.home_kt
            child = v
            v = v.parent

    # ------------------------------------------------------------ driver

    def run(self) -> SearchResult:
        t0 = _time.perf_counter()
        for _ in range(self.config.iterations):
            node, terminal = self.select()
            if terminal:
                if node is self.root:
                    break  # everything pruned; nothing left to search
                # re-visiting a terminal node: count the selection (or the
                # unvisited-first rule would pick it forever) and re-observe
                # the branch value up to the root
                node.n += 1
                self.backpropagate(node)
                continue
            ok, child = self.expand(node)
            if not ok:
                continue
            if not self.simulate(child):
                continue
            self.backpropagate(child)
        return self._extract(_time.perf_counter() - t0)

    def _ranked_children(self, node: TreeNode) -> list[TreeNode]:
        kids = [c for c in node.children if not c.pruned and c.simulated()]
        if not kids:
            return []
        rewards = [self.reward(c) for c in kids]
        norm = self._normalizer([r[0] for r in rewards], self.config.epsilon)
        scored = [((-norm(r_p) + r_t), c.uid, c)
                  for c, (r_p, r_t) in zip(kids, rewards)]
        scored.sort(key=lambda t: (t[0], t[1]))
        return [c for _, _, c in scored]

    def _extract(self, wall: float) -> SearchResult:
        stats = self._root_stats()
        ranked = self._ranked_children(self.root)
        if not ranked:
            return SearchResult(goal=HomeSentinel(self.model.home), branch=[],
                                iterations=self.config.iterations,
                                tree_nodes=self.n_nodes, root_stats=stats,
                                wall_time=wall)
        best = ranked[0]
        branch = []
        node = best
        while node is not None:
            branch.append(node.viewpoint)
            node = self.best_child(node, explore=False)
        return SearchResult(goal=best.viewpoint, branch=branch,
                            iterations=self.config.iterations,
                            tree_nodes=self.n_nodes, root_stats=stats,
                            ranked_goals=[c.viewpoint for c in ranked],
                            wall_time=wall)

    def _root_stats(self) -> list[RootChildStat]:
        kids = [c for c in self.root.children if not c.pruned and c.simulated()]
        if not kids:
            return []
        rewards = [self.reward(c) for c in kids]
        norm = self._normalizer([r[0] for r in rewards], self.config.epsilon)
        out = []
        for c, (r_p, r_t) in zip(kids, rewards):
            if c.is_home:
                modality, strategy, cid = "home", "", None
            else:
                modality = c.viewpoint.modality.value
                strategy = c.viewpoint.strategy
                cid = c.viewpoint.cluster_id
            q = norm(r_p) - r_t
            out.append(RootChildStat(uid=c.uid, modality=modality,
                                     strategy=strategy, cluster_id=cid, n=c.n,
                                     g_score=-q, quality=q, r_p=r_p, r_t=r_t))
        return out


def search(root_pose: PosedPoint, e_remaining: float, t_remaining: float,
           model: PlannerModel, config: SearchConfig) -> SearchResult:
    """Run one full tree search and return the next goal plus the best branch."""
    return Search(root_pose, e_remaining, t_remaining, model, config).run()
