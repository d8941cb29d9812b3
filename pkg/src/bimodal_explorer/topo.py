"""Incremental topological graph of visited positions.

Nodes are dropped along the executed path at a spacing interval and linked
to nearby nodes that pass a straight-line free-space check. Path lengths
between arbitrary points are estimated by attaching both endpoints to their
nearest visible nodes and running a shortest-path search over the graph.
The estimate is fast and conservative, not optimal.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from bimodal_explorer import kernels
from bimodal_explorer.geometry import euclid


class TopoGraph:
    def __init__(self, grid, insertion_interval: float = 0.5,
                 connection_radius: float = 1.5, attach_k: int = 5):
        self.grid = grid
        self.interval = insertion_interval
        self.radius = connection_radius
        self.attach_k = attach_k
        self._pos: list[np.ndarray] = []
        self._adj: list[list[tuple[int, float]]] = []
        self._pos_arr = np.zeros((0, 3), dtype=np.float64)
        self._last_node: int | None = None
        self.version = 0
        self._dij_cache: dict[int, np.ndarray] = {}
        self._cache_version = -1

    def __len__(self) -> int:
        return len(self._pos)

    @property
    def positions(self) -> np.ndarray:
        return self._pos_arr

    def edges(self):
        for i, nbrs in enumerate(self._adj):
            for j, w in nbrs:
                if i < j:
                    yield i, j, w

    # ---------------------------------------------------------- building

    def record_position(self, p) -> bool:
        """Drop a node at p if it is at least the insertion interval from
        every existing node; link it to in-radius nodes with line of sight.

        The previously recorded node is always linked (the robot physically
        traveled between the two), which keeps the graph connected.
        """
        p = np.asarray(p, dtype=np.float64)
        if self._pos:
            d = np.linalg.norm(self._pos_arr - p, axis=1)
            if float(d.min()) < self.interval:
                return False
        idx = len(self._pos)
        self._pos.append(p)
        self._adj.append([])
        self._pos_arr = np.vstack([self._pos_arr, p[None, :]])
        if idx > 0:
            near = np.flatnonzero(d <= self.radius)
            linked = set()
            for j in near:
                j = int(j)
                if kernels.segment_all_free(self.grid.known, p, self._pos[j],
                                            self.grid.res):
                    self._link(idx, j, float(d[j]))
                    linked.add(j)
            if self._last_node is not None and self._last_node not in linked:
                self._link(idx, self._last_node, float(d[self._last_node]))
        self._last_node = idx
        self.version += 1
        return True

    def _link(self, i: int, j: int, w: float) -> None:
        self._adj[i].append((j, w))
        self._adj[j].append((i, w))

    # ---------------------------------------------------------- queries

    def _attach(self, p) -> list[tuple[int, float]]:
        """Up to attach_k nearest nodes with line of sight to p."""
        if not self._pos:
            return []
        d = np.linalg.norm(self._pos_arr - np.asarray(p, dtype=np.float64), axis=1)
        order = np.argsort(d, kind="stable")
        out = []
        for j in order:
            j = int(j)
            if kernels.segment_all_free(self.grid.known, p, self._pos[j],
                                        self.grid.res):
                out.append((j, float(d[j])))
                if len(out) >= self.attach_k:
                    break
        return out

    def _dijkstra_from(self, src: int) -> np.ndarray:
        if self._cache_version != self.version:
            self._dij_cache.clear()
            self._cache_version = self.version
        hit = self._dij_cache.get(src)
        if hit is not None:
            return hit
        n = len(self._pos)
        dist = np.full(n, math.inf)
        dist[src] = 0.0
        heap = [(0.0, src)]
        done = [False] * n
        while heap:
            du, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for v, w in self._adj[u]:
                nd = du + w
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        self._dij_cache[src] = dist
        return dist

    def estimate_path_length(self, a, b) -> float:
        """Conservative length estimate: entry segment + graph path + exit
        segment, or the direct segment when the endpoints see each other.
        +inf when an endpoint cannot attach to the graph.
        """
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        direct = math.inf
        if kernels.segment_all_free(self.grid.known, a, b, self.grid.res):
            direct = euclid(a, b)
        if not self._pos:
            return direct
        att_a = self._attach(a)
        att_b = self._attach(b)
        if not att_a or not att_b:
            return direct
        best = direct
        for na, wa in att_a:
            dist = self._dijkstra_from(na)
            for nb, wb in att_b:
                total = wa + dist[nb] + wb
                if total < best:
                    best = total
        return best

    # ---------------------------------------------------------- export

    def to_dict(self) -> dict:
        return {
            "nodes": [p.tolist() for p in self._pos],
            "edges": [[i, j, w] for i, j, w in self.edges()],
        }
