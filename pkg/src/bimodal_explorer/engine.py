"""Closed-loop exploration: sense, plan, move, deduct budget, repeat.

A kinematic point robot executes the planner's goals over the known grid.
Motion is waypoint-to-waypoint at each modality's top speed with yaw slew;
energy and time are deducted segment by segment (rounded to 1e-6 so logs
replay bit-identically), the map is updated by raycast sensing every half
meter of travel, and the topo-graph records the executed path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from bimodal_explorer.costs import CostParams, PosedPoint
from bimodal_explorer.geometry import FREE, UNKNOWN, Modality, dyaw, euclid
from bimodal_explorer.mcts import (
    HomeSentinel,
    PenaltyParams,
    PlannerModel,
    SearchConfig,
    search,
)
from bimodal_explorer.topo import TopoGraph
from bimodal_explorer.viewpoints import SamplingParams, Viewpoint, build_group
from bimodal_explorer import kernels
from bimodal_explorer.world import (
    Scenario,
    ScenarioError,
    SensorModel,
    cluster_frontiers,
    detect_frontiers,
    reachable_free_mask,
    sense,
    sensor_from_header,
    traversable_ground_voxels,
)

EXIT_SUCCESS = 0
EXIT_BUDGET_FAILURE = 2
EXIT_SCENARIO_ERROR = 3


@dataclass
class BudgetState:
    e_all: float
    t_all: float
    e_used: float = 0.0
    t_used: float = 0.0
    time_terrestrial: float = 0.0
    time_aerial: float = 0.0

    @property
    def e_remaining(self) -> float:
        return self.e_all - self.e_used

    @property
    def t_remaining(self) -> float:
        return self.t_all - self.t_used

    @property
    def modality_ratio(self) -> float:
        """Time rolling divided by time flying (inf when the robot never flew)."""
        if self.time_aerial <= 0.0:
            return math.inf
        return self.time_terrestrial / self.time_aerial


@dataclass
class RobotState:
    position: np.ndarray
    yaw: float
    modality: Modality
    standing_voxel: tuple | None = None  # set while terrestrial


@dataclass
class RunConfig:
    e_all: float = 1000.0
    t_all: float = 600.0
    cost: CostParams = field(default_factory=CostParams)
    penalties: PenaltyParams = field(default_factory=PenaltyParams)
    search: SearchConfig = field(default_factory=SearchConfig)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    sensor: SensorModel = field(default_factory=SensorModel)
    sense_interval: float = 0.5
    stale_fraction: float = 0.3
    ground_clearance: int = 2
    cluster_max_size: int = 30
    max_cycles: int = 400
    topo_interval: float = 0.5
    topo_radius: float = 1.5

    @classmethod
    def from_header(cls, header: dict, energy=None, time=None, iters=None,
                    seed=None) -> "RunConfig":
        budget = header.get("budget", {})
        cfg = cls(
            e_all=float(budget.get("energy", 1000.0)),
            t_all=float(budget.get("time", 600.0)),
            cost=CostParams.from_header(header),
            penalties=PenaltyParams.from_header(header),
            sampling=SamplingParams.from_header(header),
            sensor=sensor_from_header(header),
        )
        planner = header.get("planner", {})
        sc = SearchConfig(
            iterations=int(planner.get("iterations", 2000)),
            child_distance=float(planner.get("child_distance", 8.0)),
            seed=int(planner.get("seed", 0)),
        )
        cfg.search = sc
        sim = header.get("sim", {})
        for key in ("sense_interval", "stale_fraction", "ground_clearance",
                    "cluster_max_size", "max_cycles"):
            if key in sim:
                setattr(cfg, key, type(getattr(cfg, key))(sim[key]))
        if energy is not None:
            cfg.e_all = float(energy)
        if time is not None:
            cfg.t_all = float(time)
        if iters is not None:
            cfg.search = replace(cfg.search, iterations=int(iters))
        if seed is not None:
            cfg.search = replace(cfg.search, seed=int(seed))
        return cfg


@dataclass
class Waypoint:
    position: np.ndarray
    modality: Modality
    ground_voxel: tuple | None = None


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)  # per-cycle CSV rows
    planner: list = field(default_factory=list)  # per-cycle planner records
    summary: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    CSV_HEADER = "cycle,sim_time_s,coverage_ratio,E_remaining,T_remaining,modality,x,y,z"

    def add_row(self, cycle, sim_time, coverage, e_rem, t_rem, modality, pos):
        self.rows.append((cycle, sim_time, coverage, e_rem, t_rem, modality,
                          float(pos[0]), float(pos[1]), float(pos[2])))

    def csv_text(self) -> str:
        out = [self.CSV_HEADER]
        for (cycle, st, cov, er, tr, mod, x, y, z) in self.rows:
            out.append(
                f"{cycle},{st:.6f},{cov:.6f},{er:.6f},{tr:.6f},{mod},"
                f"{x:.6f},{y:.6f},{z:.6f}"
            )
        return "\n".join(out) + "\n"

    def write(self, out_dir) -> None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
            fh.write(self.csv_text())
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "timing.json"), "w") as fh:
            json.dump(self.timings, fh, indent=1, sort_keys=True)
            fh.write("\n")


@dataclass
class RunResult:
    metrics: MetricsLog
    exit_code: int
    status: str


class _ExecOutcome:
    ARRIVED = "arrived"
    ABORT_REPLAN = "abort_replan"
    FAILED_BUDGET = "failed_budget"


# ------------------------------------------------------------------ paths

def bimodal_path(grid, robot: RobotState, goal: Viewpoint, ground_mask,
                 cost_params: CostParams, terr_offset: float):
    """Waypoint path over the known grid, each waypoint tagged with the
    modality used to reach it.

    Aerial goals use a pure 26-connected free-space search. Terrestrial
    goals search the union of rolling moves (same-height ground steps) and
    flying moves weighted by the power ratio, so the path rolls where it
    can and flies where it must. Returns None when the goal is unreachable
    in known space.
    """
    if robot.modality is Modality.TERRESTRIAL and robot.standing_voxel is not None:
        start_voxel = robot.standing_voxel
    else:
        start_voxel = grid.voxel_of(robot.position)
    use_bimodal = goal.modality is Modality.TERRESTRIAL
    if use_bimodal:
        goal_voxel = goal.ground_voxel
    else:
        goal_voxel = grid.voxel_of(goal.position)
    if goal_voxel is None or not grid.in_bounds(goal_voxel):
        return None
    found, path_flat, flags = kernels.astar_grid(
        grid.known, np.ascontiguousarray(ground_mask, dtype=np.uint8),
        grid.flat(start_voxel), grid.flat(goal_voxel), grid.res,
        cost_params.p_aerial / cost_params.p_terrestrial, use_bimodal,
    )
    if not found:
        return None
    nx, ny, nz = grid.dims
    waypoints: list[Waypoint] = []
    for flat, ground_flag in zip(path_flat[1:], flags[1:]):
        flat = int(flat)
        iz = flat % nz
        iy = (flat // nz) % ny
        ix = flat // (ny * nz)
        center = np.array([(ix + 0.5) * grid.res, (iy + 0.5) * grid.res,
                           (iz + 0.5) * grid.res])
        if ground_flag:
            waypoints.append(Waypoint(center + np.array([0.0, 0.0, terr_offset]),
                                      Modality.TERRESTRIAL, (ix, iy, iz)))
        else:
            waypoints.append(Waypoint(center, Modality.AERIAL))
    # exact goal pose as the final waypoint
    last_pos = waypoints[-1].position if waypoints else robot.position
    if euclid(last_pos, goal.position) > 1e-9:
        waypoints.append(Waypoint(np.asarray(goal.position, dtype=np.float64),
                                  goal.modality, goal.ground_voxel))
    elif waypoints:
        waypoints[-1] = Waypoint(waypoints[-1].position, goal.modality,
                                 goal.ground_voxel)
    return waypoints


def _still_frontier_count(grid, flats) -> int:
    nx, ny, nz = grid.dims
    count = 0
    for f in flats:
        f = int(f)
        iz = f % nz
        iy = (f // nz) % ny
        ix = f // (ny * nz)
        if grid.known[ix, iy, iz] != FREE:
            continue
        for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                           (0, 0, 1), (0, 0, -1)):
            jx, jy, jz = ix + dx, iy + dy, iz + dz
            if 0 <= jx < nx and 0 <= jy < ny and 0 <= jz < nz:
                if grid.known[jx, jy, jz] == UNKNOWN:
                    count += 1
                    break
    return count


# ------------------------------------------------------------------ motion

def execute(path, robot: RobotState, budget: BudgetState, grid, sensor,
            topo: TopoGraph, cost_params: CostParams, cfg: RunConfig,
            goal_yaw: float | None = None, goal_ig_flats=None) -> str:
    """Advance the robot along the waypoint path, deducting budget.

    Halts with a budget failure if an upcoming segment's energy cannot be
    afforded. Aborts (for replanning) when a newly sensed obstacle blocks
    the remaining path or when most of the goal's expected gain has already
    been sensed en route.
    """
    dist_since_sense = 0.0
    expected_ig = len(goal_ig_flats) if goal_ig_flats is not None else 0

    def consume(length: float, yaw_delta: float, modality: Modality) -> bool:
        t = max(length / cost_params.v(modality),
                yaw_delta / cost_params.w(modality))
        t = round(t, 6)
        e = round(cost_params.p(modality) * t, 6)
        if budget.e_used + e > budget.e_all + 1e-9:
            return False
        budget.e_used = round(budget.e_used + e, 6)
        budget.t_used = round(budget.t_used + t, 6)
        if modality is Modality.TERRESTRIAL:
            budget.time_terrestrial = round(budget.time_terrestrial + t, 6)
        else:
            budget.time_aerial = round(budget.time_aerial + t, 6)
        return True

    for i, wp in enumerate(path):
        seg = wp.position - robot.position
        length = float(np.linalg.norm(seg))
        if math.hypot(seg[0], seg[1]) > 1e-9:
            new_yaw = math.atan2(seg[1], seg[0])
        else:
            new_yaw = robot.yaw
        if not consume(length, dyaw(robot.yaw, new_yaw), wp.modality):
            return _ExecOutcome.FAILED_BUDGET
        robot.position = wp.position.copy()
        robot.yaw = new_yaw
        robot.modality = wp.modality
        robot.standing_voxel = wp.ground_voxel
        topo.record_position(robot.position)
        dist_since_sense += length
        at_goal = i == len(path) - 1
        if dist_since_sense >= cfg.sense_interval - 1e-12 or at_goal:
            sense(grid, robot.position, robot.yaw, sensor)
            dist_since_sense = 0.0
            if not at_goal:
                if expected_ig > 0:
                    still = _still_frontier_count(grid, goal_ig_flats)
                    if (expected_ig - still) / expected_ig > cfg.stale_fraction:
                        return _ExecOutcome.ABORT_REPLAN
                for future in path[i + 1 :]:
                    v = grid.voxel_of(future.position)
                    if not grid.in_bounds(v) or grid.known[v] != FREE:
                        return _ExecOutcome.ABORT_REPLAN
    if goal_yaw is not None:
        d = dyaw(robot.yaw, goal_yaw)
        if d > 1e-12:
            if not consume(0.0, d, robot.modality):
                return _ExecOutcome.FAILED_BUDGET
            robot.yaw = goal_yaw
    return _ExecOutcome.ARRIVED


# ------------------------------------------------------------------ run

def _snap_pose(grid, pos, ground_mask, terr_offset: float):
    v = grid.voxel_of(pos)
    if ground_mask[v]:
        p = grid.center_of(v) + np.array([0.0, 0.0, terr_offset])
        return p, Modality.TERRESTRIAL, v
    return np.asarray(pos, dtype=np.float64).copy(), Modality.AERIAL, None


def run_exploration(scenario: Scenario, cfg: RunConfig) -> RunResult:
    """Explore until nothing remains, the planner opts to return, or the
    budget fails; then return home. Emits one metrics row per control cycle.
    """
    grid = scenario.grid
    reach = reachable_free_mask(grid, scenario.start)
    reach_total = int(np.count_nonzero(reach))
    hidx = grid.voxel_of(scenario.home)
    if not reach[hidx]:
        raise ScenarioError("home is not reachable from the start position")
    if grid.known[hidx] == UNKNOWN:
        raise ScenarioError("home must lie in the initially sensed region")

    ground0 = traversable_ground_voxels(grid, cfg.ground_clearance)
    start_pos, start_mod, start_voxel = _snap_pose(
        grid, scenario.start, ground0, cfg.sampling.terrestrial_offset
    )
    home_pos, home_mod, home_voxel = _snap_pose(
        grid, scenario.home, ground0, cfg.sampling.terrestrial_offset
    )
    home_goal = Viewpoint(position=home_pos, yaw=0.0, modality=home_mod,
                          cluster_id=-1, ground_voxel=home_voxel)

    robot = RobotState(position=start_pos, yaw=0.0, modality=start_mod,
                       standing_voxel=start_voxel)
    budget = BudgetState(e_all=cfg.e_all, t_all=cfg.t_all)
    topo = TopoGraph(grid, cfg.topo_interval, cfg.topo_radius)
    topo.record_position(robot.position)
    log = MetricsLog()
    master = np.random.default_rng(cfg.search.seed)

    def coverage() -> float:
        return float(np.count_nonzero((grid.known == FREE) & reach) / reach_total)

    def add_row(cycle):
        log.add_row(cycle, budget.t_used, coverage(), budget.e_remaining,
                    budget.t_remaining, robot.modality.value, robot.position)

    add_row(0)
    status = None
    ended_by = None
    cycle = 0
    while cycle < cfg.max_cycles:
        cycle += 1
        frontier = detect_frontiers(grid)
        clusters = cluster_frontiers(grid, frontier, cfg.cluster_max_size)
        ground = traversable_ground_voxels(grid, cfg.ground_clearance)
        groups = []
        for c in clusters:
            g = build_group(c, grid, cfg.sensor, cfg.sampling, ground)
            if g is not None and (g.as_set or g.hs_set):
                groups.append(g)
        if not groups:
            ended_by = "complete"
            break

        model = PlannerModel(groups, cfg.cost, topo.estimate_path_length,
                             home_pos, cfg.penalties, cfg.e_all, cfg.t_all)
        sc = replace(cfg.search, seed=int(master.integers(2**62)))
        root_pose = PosedPoint(robot.position.copy(), robot.yaw)
        result = search(root_pose, budget.e_remaining, budget.t_remaining,
                        model, sc)
        a_q = [s.quality for s in result.root_stats if s.modality == "A"]
        t_q = [s.quality for s in result.root_stats if s.modality == "T"]
        log.planner.append({
            "cycle": cycle,
            "n_groups": len(groups),
            "tree_nodes": result.tree_nodes,
            "e_frac": budget.e_remaining / cfg.e_all if cfg.e_all > 0 else 0.0,
            "t_frac": budget.t_remaining / cfg.t_all if cfg.t_all > 0 else 0.0,
            "robot_z": float(robot.position[2]),
            "robot_xy": [float(robot.position[0]), float(robot.position[1])],
            "mean_q_aerial": float(np.mean(a_q)) if a_q else None,
            "mean_q_terrestrial": float(np.mean(t_q)) if t_q else None,
        })
        log.timings.setdefault("planner_wall_s", []).append(result.wall_time)

        goal = None
        path = None
        for cand in result.ranked_goals:
            if isinstance(cand, HomeSentinel):
                break
            p = bimodal_path(grid, robot, cand, ground, cfg.cost,
                             cfg.sampling.terrestrial_offset)
            if p is not None:
                goal = cand
                path = p
                break
        if goal is None:
            ended_by = "planner_home"
            break

        outcome = execute(path, robot, budget, grid, cfg.sensor, topo,
                          cfg.cost, cfg, goal_yaw=goal.yaw,
                          goal_ig_flats=goal.visible_flats)
        add_row(cycle)
        if outcome == _ExecOutcome.FAILED_BUDGET:
            status = "budget_failure"
            ended_by = "budget"
            break
    else:
        ended_by = "stalled"

    if status is None:
        status = _return_home(grid, robot, budget, topo, home_goal, cfg, log)
        add_row(cycle + 1)

    at_home = euclid(robot.position, home_pos) <= grid.res
    success = status == "ok" and at_home and budget.e_remaining >= 0.0
    final_status = "success" if success else "budget_failure"

    log.summary = {
        "status": final_status,
        "ended_by": ended_by,
        "at_home": bool(at_home),
        "cycles": cycle,
        "coverage": coverage(),
        "e_all": cfg.e_all,
        "t_all": cfg.t_all,
        "e_used": budget.e_used,
        "t_used": budget.t_used,
        "e_remaining": budget.e_remaining,
        "t_remaining": budget.t_remaining,
        "time_terrestrial": budget.time_terrestrial,
        "time_aerial": budget.time_aerial,
        "modality_ratio": (budget.modality_ratio
                           if math.isfinite(budget.modality_ratio) else "inf"),
        "seed": cfg.search.seed,
        "iterations": cfg.search.iterations,
        "planner": log.planner,
    }
    return RunResult(metrics=log,
                     exit_code=EXIT_SUCCESS if success else EXIT_BUDGET_FAILURE,
                     status=final_status)


def _return_home(grid, robot, budget, topo, home_goal, cfg, log,
                 max_attempts: int = 20) -> str:
    for _ in range(max_attempts):
        if euclid(robot.position, home_goal.position) <= grid.res:
            return "ok"
        ground = traversable_ground_voxels(grid, cfg.ground_clearance)
        path = bimodal_path(grid, robot, home_goal, ground, cfg.cost,
                            cfg.sampling.terrestrial_offset)
        if path is None:
            return "stranded"
        outcome = execute(path, robot, budget, grid, cfg.sensor, topo,
                          cfg.cost, cfg, goal_yaw=None, goal_ig_flats=None)
        if outcome == _ExecOutcome.FAILED_BUDGET:
            return "budget_failure"
        if outcome == _ExecOutcome.ARRIVED:
            return "ok"
    return "stranded"
