"""Bimodal viewpoint generation and greedy coverage selection.

For each frontier cluster we sample raw aerial candidates on cylindrical
shells around the cluster and raw terrestrial candidates on nearby
traversable ground voxels, then pick two alternative covering sets:
an aerial-only set and a hybrid set that uses ground poses first and
tops up with aerial poses where the ground cannot see.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from bimodal_explorer import kernels
from bimodal_explorer.geometry import FREE, Modality, circular_mean, euclid

AS = "AS"
HS = "HS"


@dataclass
class Viewpoint:
    position: np.ndarray
    yaw: float
    modality: Modality
    cluster_id: int
    strategy: str = ""  # AS / HS once selected into a group
    ig: int = 0
    visible: np.ndarray | None = None  # bool mask over the cluster's members
    visible_flats: np.ndarray | None = None  # flat voxel indices of the above
    ground_voxel: tuple | None = None  # terrestrial only
    uid: int = -1


@dataclass
class SamplingParams:
    d_min: float = 1.0
    d_max: float = 4.0
    azimuth_span: float = math.radians(120.0)
    n_radii: int = 3
    n_azimuths: int = 7
    height_offsets: tuple = (0.0, 0.75, -0.75)
    terrestrial_offset: float = 0.3
    max_ground_candidates: int = 40

    def __post_init__(self):
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError("require 0 < d_min < d_max")

    @classmethod
    def from_header(cls, header: dict) -> "SamplingParams":
        cfg = dict(header.get("sampling", {}))
        if "height_offsets" in cfg:
            cfg["height_offsets"] = tuple(cfg["height_offsets"])
        return cls(**cfg)


@dataclass
class ViewpointGroup:
    cluster_id: int
    as_set: list[Viewpoint]
    hs_set: list[Viewpoint]
    avg_position: np.ndarray
    avg_yaw: float
    coverable: np.ndarray  # bool mask over cluster members
    hs_only: bool = False
    members: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def all_viewpoints(self) -> list[Viewpoint]:
        return self.as_set + self.hs_set


# ------------------------------------------------------------- sampling

def sample_raw_aerial(cluster, grid, params: SamplingParams) -> list[Viewpoint]:
    """Cylindrical-shell candidates around the cluster centroid.

    Azimuths span params.azimuth_span centered on the cluster normal's
    bearing (full circle if the normal is vertical); positions landing in
    non-FREE or out-of-bounds voxels are discarded. Yaw faces the centroid.
    """
    cx, cy, cz = cluster.centroid
    nxy = math.hypot(float(cluster.normal[0]), float(cluster.normal[1]))
    if nxy < 1e-9:
        azimuths = [k * 2.0 * math.pi / params.n_azimuths
                    for k in range(params.n_azimuths)]
    else:
        center_az = math.atan2(float(cluster.normal[1]), float(cluster.normal[0]))
        if params.n_azimuths == 1:
            azimuths = [center_az]
        else:
            half = params.azimuth_span / 2.0
            step = params.azimuth_span / (params.n_azimuths - 1)
            azimuths = [center_az - half + k * step for k in range(params.n_azimuths)]
    if params.n_radii == 1:
        radii = [params.d_min]
    else:
        rstep = (params.d_max - params.d_min) / (params.n_radii - 1)
        radii = [params.d_min + k * rstep for k in range(params.n_radii)]

    out = []
    for hoff in params.height_offsets:
        z = cz + hoff
        for r in radii:
            for az in azimuths:
                p = np.array([cx + r * math.cos(az), cy + r * math.sin(az), z])
                idx = grid.voxel_of(p)
                if not grid.in_bounds(idx) or grid.known[idx] != FREE:
                    continue
                yaw = math.atan2(cy - p[1], cx - p[0])
                out.append(Viewpoint(position=p, yaw=yaw, modality=Modality.AERIAL,
                                     cluster_id=cluster.id))
    return out


def sample_raw_terrestrial(cluster, grid, params: SamplingParams,
                           ground_mask: np.ndarray) -> list[Viewpoint]:
    """Ground candidates: traversable voxels within d_max (horizontal) of the
    cluster centroid, with the sensor lifted by the vertical offset.

    Large candidate pools are thinned deterministically (even strides over
    raster order) to max_ground_candidates.
    """
    flats = np.flatnonzero(ground_mask)
    if len(flats) == 0:
        return []
    centers = grid.centers_of_flat(flats)
    dx = centers[:, 0] - cluster.centroid[0]
    dy = centers[:, 1] - cluster.centroid[1]
    keep = (dx * dx + dy * dy) <= params.d_max * params.d_max
    flats = flats[keep]
    centers = centers[keep]
    if len(flats) > params.max_ground_candidates:
        pick = np.unique(
            np.linspace(0, len(flats) - 1, params.max_ground_candidates).astype(int)
        )
        flats = flats[pick]
        centers = centers[pick]

    nx, ny, nz = grid.dims
    out = []
    for f, c in zip(flats, centers):
        p = c.copy()
        p[2] += params.terrestrial_offset
        idx = grid.voxel_of(p)
        if not grid.in_bounds(idx) or grid.known[idx] != FREE:
            continue
        f = int(f)
        gv = (f // (ny * nz), (f // nz) % ny, f % nz)
        yaw = math.atan2(cluster.centroid[1] - p[1], cluster.centroid[0] - p[0])
        out.append(Viewpoint(position=p, yaw=yaw, modality=Modality.TERRESTRIAL,
                             cluster_id=cluster.id, ground_voxel=gv))
    return out


# ------------------------------------------------------------- visibility

def visible_frontier_count(vp: Viewpoint, cluster, grid, sensor) -> int:
    """Cluster members in range, inside the vertical FoV, and unoccluded."""
    count, mask = kernels.count_visible(
        grid.known, vp.position, grid.centers_of_flat(cluster.members),
        sensor.range_m, sensor.vfov_half, grid.res,
    )
    vp.visible = mask.astype(bool)
    vp.visible_flats = cluster.members[vp.visible]
    vp.ig = int(count)
    return int(count)


# ------------------------------------------------------------- selection

def greedy_cover(candidates: list[Viewpoint], cluster,
                 target: np.ndarray) -> list[Viewpoint]:
    """Greedy set cover of `target` (bool mask over cluster members).

    Repeatedly picks the candidate seeing the most still-uncovered target
    voxels; ties go to the candidate closer to the cluster centroid, then
    to the lower index. Stops when nothing adds coverage.
    """
    uncovered = target.copy()
    selected: list[Viewpoint] = []
    dists = [euclid(c.position, cluster.centroid) for c in candidates]
    while uncovered.any():
        best_i = -1
        best_gain = 0
        best_d = math.inf
        for i, c in enumerate(candidates):
            gain = int(np.count_nonzero(c.visible & uncovered))
            if gain > best_gain or (gain == best_gain and gain > 0
                                    and dists[i] < best_d):
                best_i = i
                best_gain = gain
                best_d = dists[i]
        if best_i < 0:
            break
        chosen = candidates[best_i]
        selected.append(chosen)
        uncovered &= ~chosen.visible
    return selected


def build_group(cluster, grid, sensor, params: SamplingParams,
                ground_mask: np.ndarray) -> ViewpointGroup | None:
    """Generate, score, and select the two covering strategy sets for a cluster.

    Returns None when the cluster is unreachable (no candidate of either
    modality sees any of it); such clusters are excluded from planning.
    """
    aerial = sample_raw_aerial(cluster, grid, params)
    terrestrial = sample_raw_terrestrial(cluster, grid, params, ground_mask)
    for vp in aerial + terrestrial:
        visible_frontier_count(vp, cluster, grid, sensor)
    aerial = [vp for vp in aerial if vp.ig > 0]
    terrestrial = [vp for vp in terrestrial if vp.ig > 0]
    if not aerial and not terrestrial:
        return None

    n = len(cluster.members)
    union_a = np.zeros(n, dtype=bool)
    for vp in aerial:
        union_a |= vp.visible
    union_t = np.zeros(n, dtype=bool)
    for vp in terrestrial:
        union_t |= vp.visible

    # The coverage target is what the aerial pool can see: both strategies
    # can always complete it (the hybrid set falls back to aerial poses).
    # Voxels seen by no aerial candidate are treated as uncoverable; when
    # there are no useful aerial candidates at all the group degrades to a
    # hybrid-only group covering the ground-visible voxels.
    hs_only = not union_a.any()
    coverable = union_t.copy() if hs_only else union_a

    as_sel = [] if hs_only else greedy_cover(aerial, cluster, coverable)
    hs_ground = greedy_cover(terrestrial, cluster, coverable)
    covered_t = np.zeros(n, dtype=bool)
    for vp in hs_ground:
        covered_t |= vp.visible
    residual = coverable & ~covered_t
    hs_air = greedy_cover(aerial, cluster, residual) if residual.any() else []

    as_set = [replace(vp, strategy=AS) for vp in as_sel]
    hs_set = [replace(vp, strategy=HS) for vp in hs_ground + hs_air]

    unique = {id(vp): vp for vp in as_sel + hs_ground + hs_air}
    vps = list(unique.values())
    avg_position = np.mean([vp.position for vp in vps], axis=0)
    avg_yaw = circular_mean([vp.yaw for vp in vps])
    return ViewpointGroup(
        cluster_id=cluster.id, as_set=as_set, hs_set=hs_set,
        avg_position=avg_position, avg_yaw=avg_yaw, coverable=coverable,
        hs_only=hs_only, members=cluster.members,
    )


def covered_mask(viewpoints: list[Viewpoint], n: int) -> np.ndarray:
    out = np.zeros(n, dtype=bool)
    for vp in viewpoints:
        out |= vp.visible
    return out


# ------------------------------------------------------------- debug dump

def group_to_dict(g: ViewpointGroup) -> dict:
    def vp_dict(vp: Viewpoint) -> dict:
        return {
            "position": [float(x) for x in vp.position],
            "yaw": float(vp.yaw),
            "modality": vp.modality.value,
            "strategy": vp.strategy,
            "ig": vp.ig,
            "visible": [int(b) for b in vp.visible],
        }

    return {
        "cluster_id": g.cluster_id,
        "as": [vp_dict(v) for v in g.as_set],
        "hs": [vp_dict(v) for v in g.hs_set],
        "avg_position": [float(x) for x in g.avg_position],
        "avg_yaw": float(g.avg_yaw),
        "coverable": [int(b) for b in g.coverable],
        "hs_only": g.hs_only,
    }


def dump_groups(groups: list[ViewpointGroup], path) -> None:
    with open(path, "w") as fh:
        json.dump([group_to_dict(g) for g in groups], fh, indent=1, sort_keys=True)
