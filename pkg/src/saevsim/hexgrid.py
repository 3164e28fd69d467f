"""Hexagonal tessellation of the service area and demand aggregation.

Pointy-top hexagons on an axial (q, r) lattice. The cell "diameter" is the
vertex-to-vertex distance (twice the circumradius), so a 1 km diameter gives
a cell area of 3*sqrt(3)/8 ~= 0.6495 km2 and an adjacent-centroid spacing of
sqrt(3)/2 ~= 0.866 km. The grid keeps every lattice cell whose centroid falls
inside the rectangular region; a point is assigned to the nearest kept
centroid, ties broken by lowest cell id. Cell ids are row-major in (r, q).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

SQRT3 = math.sqrt(3.0)

# axial neighbor offsets, pointy-top
_HEX_DIRS = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))

# squared-distance slack under which two centroids count as equidistant
_TIE_EPS = 1e-9


class OutOfRegionError(ValueError):
    """A point fell outside the grid's bounding region."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in km, the simulation's bounding region."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


class HexGrid:
    """Immutable hex tessellation: cell ids, centroids and adjacency."""

    def __init__(self, region: Rect, diameter: float, qr: list[tuple[int, int]]):
        self.region = region
        self.diameter = diameter
        self.size = diameter / 2.0  # circumradius
        self.qr = tuple(qr)
        self._index = {c: i for i, c in enumerate(self.qr)}
        dx = self.size * SQRT3
        dy = 1.5 * self.size
        cx0, cy0 = region.center
        self.centroids = np.array(
            [(cx0 + dx * (q + r / 2.0), cy0 + dy * r) for q, r in self.qr],
            dtype=float,
        )
        self._neighbors = tuple(
            tuple(
                sorted(
                    self._index[(q + dq, r + dr)]
                    for dq, dr in _HEX_DIRS
                    if (q + dq, r + dr) in self._index
                )
            )
            for q, r in self.qr
        )

    @property
    def n_cells(self) -> int:
        return len(self.qr)

    def centroid(self, cell: int) -> tuple[float, float]:
        x, y = self.centroids[cell]
        return (float(x), float(y))

    def neighbors(self, cell: int) -> tuple[int, ...]:
        return self._neighbors[cell]

    def adjacency(self) -> list[tuple[int, ...]]:
        return list(self._neighbors)


def tessellate(region: Rect, diameter: float = 1.0) -> HexGrid:
    """Tile `region` with hexagonal cells of the given vertex-to-vertex diameter.

    Keeps every lattice cell whose centroid lies in the (closed) region. The
    lattice is anchored so that cell (0, 0) sits at the region center, which
    makes the tiling symmetric and independent of absolute coordinates.
    """
    if diameter <= 0:
        raise ValueError(f"cell diameter must be positive, got {diameter}")
    if region.width <= 0 or region.height <= 0:
        raise ValueError(f"degenerate region {region}: zero area")
    s = diameter / 2.0
    dx = s * SQRT3
    dy = 1.5 * s
    cx0, cy0 = region.center
    r_span = int(math.ceil(region.height / dy)) + 2
    q_span = int(math.ceil(region.width / dx)) + 2 + r_span  # q shifts with r
    qr = []
    for r in range(-r_span, r_span + 1):
        for q in range(-q_span, q_span + 1):
            x = cx0 + dx * (q + r / 2.0)
            y = cy0 + dy * r
            if region.contains(x, y):
                qr.append((q, r))
    qr.sort(key=lambda c: (c[1], c[0]))  # row-major ids
    return HexGrid(region, diameter, qr)


def _axial_round(qf: float, rf: float) -> tuple[int, int]:
    # cube rounding of fractional axial coordinates
    sf = -qf - rf
    q, r, s_ = round(qf), round(rf), round(sf)
    dq, dr, ds = abs(q - qf), abs(r - rf), abs(s_ - sf)
    if dq > dr and dq > ds:
        q = -r - s_
    elif dr > ds:
        r = -q - s_
    return int(q), int(r)


def locate(grid: HexGrid, x: float, y: float) -> int:
    """Cell id containing (x, y): the nearest kept centroid, ties to lowest id.

    Raises OutOfRegionError for points outside the bounding region.
    """
    if not grid.region.contains(x, y):
        raise OutOfRegionError(f"point ({x}, {y}) outside region {grid.region}")
    s = grid.size
    cx0, cy0 = grid.region.center
    px, py = (x - cx0) / s, (y - cy0) / s
    qf = SQRT3 / 3.0 * px - py / 3.0
    rf = 2.0 * py / 3.0
    q0, r0 = _axial_round(qf, rf)
    # candidate = rounded cell plus its ring; boundary cells may be missing
    # from the grid, so fall back to a full scan if nothing is nearby
    cand = [
        grid._index[c]
        for c in [(q0, r0)] + [(q0 + dq, r0 + dr) for dq, dr in _HEX_DIRS]
        if c in grid._index
    ]
    if not cand:
        cand = range(grid.n_cells)
    best, best_d2 = -1, math.inf
    for i in cand:
        cx, cy = grid.centroids[i]
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        if d2 < best_d2 - _TIE_EPS or (abs(d2 - best_d2) <= _TIE_EPS and i < best):
            best, best_d2 = i, min(d2, best_d2)
    return best


@dataclass
class DemandField:
    """Per-cell counts of demand points (pick-up plus drop-off locations)."""

    grid: HexGrid
    counts: np.ndarray
    dropped: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def aggregate_demand(
    grid: HexGrid,
    points: list[tuple[float, float]],
    drop_outside: bool = False,
) -> DemandField:
    """Count points per cell. Outside points raise unless drop_outside is set."""
    counts = np.zeros(grid.n_cells, dtype=np.int64)
    dropped = 0
    for x, y in points:
        try:
            counts[locate(grid, x, y)] += 1
        except OutOfRegionError:
            if not drop_outside:
                raise
            dropped += 1
    return DemandField(grid, counts, dropped)


def centroid_distances(grid: HexGrid, cells=None, network=None) -> np.ndarray:
    """Pairwise centroid distances (km) for a cell subset (default: all).

    Euclidean by default; when a Network is given, shortest-path road distance
    between the nodes nearest each centroid (not necessarily symmetric).
    """
    if cells is None:
        cells = range(grid.n_cells)
    cells = list(cells)
    for c in cells:
        if not 0 <= c < grid.n_cells:
            raise KeyError(f"unknown cell id {c}")
    pts = grid.centroids[cells]
    if network is None:
        diff = pts[:, None, :] - pts[None, :, :]
        return np.sqrt((diff**2).sum(axis=2))
    nodes = [network.nearest_node(x, y) for x, y in pts]
    n = len(nodes)
    out = np.zeros((n, n))
    for i, a in enumerate(nodes):
        for j, b in enumerate(nodes):
            if i != j:
                out[i, j] = network.distance_km(a, b)
    return out


def read_points_csv(path) -> list[tuple[float, float]]:
    """Demand points from a CSV with columns x_km, y_km, kind."""
    pts = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            pts.append((float(row["x_km"]), float(row["y_km"])))
    return pts


def write_field_csv(field: DemandField, path) -> None:
    g = field.grid
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell_id", "q", "r", "cx_km", "cy_km", "count"])
        for i, (q, r) in enumerate(g.qr):
            cx, cy = g.centroid(i)
            w.writerow([i, q, r, repr(cx), repr(cy), int(field.counts[i])])
