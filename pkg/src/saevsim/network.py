"""Road graph, shortest paths and time-of-day travel times.

The congestion model is a global per-hour speed multiplier, so travel times
scale uniformly: the minimum-duration path is the same at every hour and the
all-pairs duration/distance matrices are computed once (scipy csgraph) and
rescaled per hour. A leg keeps the speeds of its departure hour for its whole
duration.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as csgraph_dijkstra

from .hexgrid import Rect


class NoRouteError(ValueError):
    """No path exists between the requested nodes."""


class NetworkFormatError(ValueError):
    """A network CSV failed validation; the message names the offending row."""


@dataclass(frozen=True)
class Edge:
    id: int
    a: int
    b: int
    length_km: float
    speed_kmh: float

    @property
    def base_minutes(self) -> float:
        return self.length_km / self.speed_kmh * 60.0


@dataclass(frozen=True)
class Route:
    edge_ids: tuple[int, ...]
    distance_km: float
    duration_min: float


def default_hour_multiplier(peak: float = 0.7) -> np.ndarray:
    """Speed multipliers per hour: slower in the 8-10 and 16-20 peaks."""
    mult = np.ones(24)
    mult[8:10] = peak
    mult[16:20] = peak
    return mult


class Network:
    """Directed road graph with per-hour speed multipliers, immutable."""

    def __init__(self, node_xy: np.ndarray, edges: list[Edge], hour_multiplier=None):
        self.node_xy = np.asarray(node_xy, dtype=float)
        self.edges = list(edges)
        if hour_multiplier is None:
            hour_multiplier = default_hour_multiplier()
        self.hour_multiplier = np.asarray(hour_multiplier, dtype=float)
        if self.hour_multiplier.shape != (24,):
            raise ValueError("hour multiplier must have 24 entries")
        if ((self.hour_multiplier <= 0) | (self.hour_multiplier > 1)).any():
            raise ValueError("hour multipliers must lie in (0, 1]")
        self._adj: dict[int, list[Edge]] = {}
        for e in self.edges:
            self._adj.setdefault(e.a, []).append(e)
        for lst in self._adj.values():
            lst.sort(key=lambda e: e.id)
        self._dur1: np.ndarray | None = None  # minutes at multiplier 1
        self._dist: np.ndarray | None = None  # km along the min-duration path

    @property
    def n_nodes(self) -> int:
        return len(self.node_xy)

    def multiplier(self, hour: int) -> float:
        return float(self.hour_multiplier[int(hour) % 24])

    def nearest_node(self, x: float, y: float) -> int:
        d2 = ((self.node_xy - (x, y)) ** 2).sum(axis=1)
        return int(np.argmin(d2))

    # -- all-pairs caches ---------------------------------------------------

    def _build_matrices(self) -> None:
        n = self.n_nodes
        best: dict[tuple[int, int], Edge] = {}
        for e in self.edges:
            key = (e.a, e.b)
            cur = best.get(key)
            if cur is None or (e.base_minutes, e.id) < (cur.base_minutes, cur.id):
                best[key] = e
        rows = [k[0] for k in best]
        cols = [k[1] for k in best]
        w = [best[k].base_minutes for k in best]
        graph = csr_matrix((w, (rows, cols)), shape=(n, n))
        dur, pred = csgraph_dijkstra(graph, return_predecessors=True)
        length = {k: e.length_km for k, e in best.items()}
        dist = np.full((n, n), math.inf)
        for i in range(n):
            dist[i, i] = 0.0
            # accumulate km along predecessor chains in ascending duration,
            # so each predecessor's distance is ready before its successors
            for j in np.argsort(dur[i], kind="stable"):
                p = pred[i, j]
                if p < 0 or int(j) == i:
                    continue
                dist[i, j] = dist[i, p] + length[(int(p), int(j))]
        self._dur1, self._dist = dur, dist

    def duration_min(self, a: int, b: int, hour: int) -> float:
        """Minimum travel time in minutes departing in the given hour."""
        if self._dur1 is None:
            self._build_matrices()
        d = self._dur1[a, b]
        if math.isinf(d):
            raise NoRouteError(f"no route from node {a} to {b}")
        return float(d) / self.multiplier(hour)

    def freeflow_min(self, a: int, b: int) -> float:
        """Travel time at multiplier 1: a lower bound for any departure hour."""
        if self._dur1 is None:
            self._build_matrices()
        return float(self._dur1[a, b])

    def distance_km(self, a: int, b: int) -> float:
        """Length of the minimum-duration path in km (hour independent)."""
        if self._dist is None:
            self._build_matrices()
        d = self._dist[a, b]
        if math.isinf(d):
            raise NoRouteError(f"no route from node {a} to {b}")
        return float(d)


def build_synthetic(seed: int, n_nodes: int, region: Rect) -> Network:
    """Random geometric road graph, repaired to a single connected component.

    Deterministic for (seed, n_nodes, region). All edges are bidirectional
    (one directed edge each way, equal length and speed).
    """
    if n_nodes < 2:
        raise ValueError(f"need at least 2 nodes, got {n_nodes}")
    rng = np.random.default_rng(seed)
    xy = np.column_stack(
        [
            rng.uniform(region.x_min, region.x_max, n_nodes),
            rng.uniform(region.y_min, region.y_max, n_nodes),
        ]
    )
    radius = 1.35 * math.sqrt(region.area / n_nodes)
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
    pairs = [
        (i, j)
        for i in range(n_nodes)
        for j in range(i + 1, n_nodes)
        if d2[i, j] <= radius * radius
    ]
    # repair connectivity: repeatedly bridge the closest cross-component pair
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in pairs:
        parent[find(i)] = find(j)
    while True:
        roots = {find(i) for i in range(n_nodes)}
        if len(roots) == 1:
            break
        main = find(0)
        bridge = min(
            (d2[i, j], i, j)
            for i in range(n_nodes)
            for j in range(n_nodes)
            if find(i) == main and find(j) != main
        )
        _, i, j = bridge
        pairs.append((min(i, j), max(i, j)))
        parent[find(i)] = find(j)
    pairs.sort()
    speeds = rng.choice([30.0, 40.0, 50.0], size=len(pairs))
    edges = []
    for k, (i, j) in enumerate(pairs):
        length = max(math.sqrt(d2[i, j]), 1e-6)
        edges.append(Edge(2 * k, i, j, length, float(speeds[k])))
        edges.append(Edge(2 * k + 1, j, i, length, float(speeds[k])))
    return Network(xy, edges)


def load_network(nodes_path, edges_path, hour_multiplier=None) -> Network:
    """Network from CSVs `node_id,x_km,y_km` and `edge_id,from,to,length_km,speed_kmh`."""
    nodes: dict[int, tuple[float, float]] = {}
    with open(nodes_path, newline="") as f:
        for lineno, row in enumerate(csv.DictReader(f), start=2):
            try:
                nodes[int(row["node_id"])] = (float(row["x_km"]), float(row["y_km"]))
            except (KeyError, ValueError) as exc:
                raise NetworkFormatError(f"{nodes_path} row {lineno}: {exc}") from exc
    if sorted(nodes) != list(range(len(nodes))):
        raise NetworkFormatError(f"{nodes_path}: node ids must be 0..n-1 without gaps")
    xy = np.array([nodes[i] for i in range(len(nodes))])
    edges = []
    with open(edges_path, newline="") as f:
        for lineno, row in enumerate(csv.DictReader(f), start=2):
            try:
                e = Edge(
                    int(row["edge_id"]),
                    int(row["from"]),
                    int(row["to"]),
                    float(row["length_km"]),
                    float(row["speed_kmh"]),
                )
            except (KeyError, ValueError) as exc:
                raise NetworkFormatError(f"{edges_path} row {lineno}: {exc}") from exc
            if e.length_km <= 0 or e.speed_kmh <= 0:
                raise NetworkFormatError(
                    f"{edges_path} row {lineno}: non-positive length or speed"
                )
            if not (0 <= e.a < len(nodes) and 0 <= e.b < len(nodes)):
                raise NetworkFormatError(f"{edges_path} row {lineno}: unknown node")
            edges.append(e)
    net = Network(xy, edges, hour_multiplier)
    stranded = _stranded_nodes(net)
    if stranded:
        raise NetworkFormatError(
            f"{edges_path}: nodes {stranded[:10]} are disconnected from the "
            "largest strongly connected component"
        )
    return net


def _stranded_nodes(net: Network) -> list[int]:
    from scipy.sparse.csgraph import connected_components

    rows = [e.a for e in net.edges]
    cols = [e.b for e in net.edges]
    w = np.ones(len(net.edges))
    graph = csr_matrix((w, (rows, cols)), shape=(net.n_nodes, net.n_nodes))
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    if n_comp == 1:
        return []
    counts = np.bincount(labels)
    main = int(np.argmax(counts))
    return [i for i in range(net.n_nodes) if labels[i] != main]


def shortest_path(net: Network, a: int, b: int, depart_hour: int) -> Route:
    """Minimum-duration route at the departure hour's speeds.

    Ties between equal-duration relaxations are broken by lower edge id, so
    the returned route is deterministic.
    """
    if not (0 <= a < net.n_nodes and 0 <= b < net.n_nodes):
        raise KeyError(f"unknown node in ({a}, {b})")
    if a == b:
        return Route((), 0.0, 0.0)
    mult = net.multiplier(depart_hour)
    dist = {a: 0.0}
    via: dict[int, Edge] = {}
    heap: list[tuple[float, int]] = [(0.0, a)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == b:
            break
        for e in net._adj.get(u, ()):
            nd = d + e.base_minutes / mult
            cur = dist.get(e.b)
            if cur is None or nd < cur - 1e-15 or (abs(nd - cur) <= 1e-15 and e.id < via[e.b].id):
                dist[e.b] = nd
                via[e.b] = e
                heapq.heappush(heap, (nd, e.b))
    if b not in done:
        raise NoRouteError(f"no route from node {a} to {b}")
    chain = []
    u = b
    while u != a:
        e = via[u]
        chain.append(e)
        u = e.a
    chain.reverse()
    return Route(
        tuple(e.id for e in chain),
        sum(e.length_km for e in chain),
        sum(e.base_minutes for e in chain) / mult,
    )
