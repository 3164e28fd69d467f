"""Exact station-placement solvers on an aggregated demand field.

Two models are supported, both solved to proven optimality at desk scale
(a few hundred cells, up to ~12 stations) by depth-first branch and bound:

* max-coverage: pick at most P cells maximizing the count-weighted coverage,
  where a cell is covered with weight w0 by its own station and w1 by a
  neighboring station, quantized to the levels {0, 0.5, 1}. An optional
  separation constraint additionally caps each cell's coverage load at 1,
  which forbids stations in adjacent cells (for w0=1).
* p-median: pick exactly P candidate cells minimizing the count-weighted
  distance from every cell to its nearest selected cell, with an optional
  forbidden set.

Ties between equally good selections are broken lexicographically by sorted
cell-id tuple (shorter prefixes first), everywhere, so results are fully
deterministic. `brute_force` provides an independent enumeration oracle.
"""

from __future__ import annotations

import itertools
import math
from bisect import insort
from dataclasses import dataclass, field as dc_field

import numpy as np

_LEVEL_TOL = 1e-9  # slack when mapping a coverage load onto {0, 0.5, 1}


class InstanceTooLargeError(ValueError):
    """Brute-force enumeration refused: too many subsets."""


class PlacementValidationError(ValueError):
    """A solution is structurally inconsistent with its spec."""


@dataclass
class McLpSpec:
    """Max-coverage instance: counts, adjacency and the budget P."""

    counts: np.ndarray
    neighbors: list[tuple[int, ...]]
    p: int
    w0: float = 1.0
    w1: float = 0.5
    enforce_separation: bool = False
    forbidden: frozenset[int] = dc_field(default_factory=frozenset)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        n = len(self.counts)
        if not 1 <= self.p <= n:
            raise ValueError(f"P must be in [1, {n}], got {self.p}")
        if not self.w0 >= self.w1 >= 0:
            raise ValueError(f"need w0 >= w1 >= 0, got {self.w0}, {self.w1}")
        if (self.counts < 0).any():
            raise ValueError("negative demand count")
        if len(self.neighbors) != n:
            raise ValueError("adjacency size mismatch")

    @classmethod
    def from_field(cls, field, p: int, **kw) -> "McLpSpec":
        return cls(field.counts.astype(float), field.grid.adjacency(), p, **kw)

    @property
    def n(self) -> int:
        return len(self.counts)


@dataclass
class PMedianSpec:
    """P-median instance: counts, distance matrix, candidate set and P."""

    counts: np.ndarray
    distances: np.ndarray
    p: int
    candidates: tuple[int, ...] | None = None
    forbidden: frozenset[int] = dc_field(default_factory=frozenset)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        self.distances = np.asarray(self.distances, dtype=float)
        n = len(self.counts)
        if self.p < 1:
            raise ValueError(f"P must be >= 1, got {self.p}")
        if self.distances.shape != (n, n):
            raise ValueError("distance matrix shape mismatch")
        if (self.distances < 0).any() or np.diag(self.distances).any():
            raise ValueError("distances must be >= 0 with zero diagonal")
        if (self.counts < 0).any():
            raise ValueError("negative demand count")
        if self.candidates is not None:
            self.candidates = tuple(sorted(set(self.candidates)))

    @classmethod
    def from_field(cls, field, p: int, network=None, **kw) -> "PMedianSpec":
        from .hexgrid import centroid_distances

        d = centroid_distances(field.grid, None, network)
        return cls(field.counts.astype(float), d, p, **kw)

    @property
    def n(self) -> int:
        return len(self.counts)

    def allowed(self) -> list[int]:
        cand = self.candidates if self.candidates is not None else range(self.n)
        return [j for j in cand if j not in self.forbidden]


@dataclass
class PlacementSolution:
    selected: tuple[int, ...]
    objective: float
    coverage: np.ndarray | None = None  # max-coverage x_i per cell
    assignment: np.ndarray | None = None  # p-median nearest selected cell per cell
    status: str = "optimal"


def _quantize(load: np.ndarray) -> np.ndarray:
    # largest level in {0, 0.5, 1} not exceeding the coverage load
    return np.where(load >= 1.0 - _LEVEL_TOL, 1.0, np.where(load >= 0.5 - _LEVEL_TOL, 0.5, 0.0))


def _coverage_load(spec: McLpSpec, selected) -> np.ndarray:
    load = np.zeros(spec.n)
    for j in selected:
        load[j] += spec.w0
        for i in spec.neighbors[j]:
            load[i] += spec.w1
    return load


def mclp_objective(spec: McLpSpec, selected) -> tuple[float, np.ndarray]:
    """Coverage objective and per-cell x for a given selection (closed form)."""
    x = _quantize(_coverage_load(spec, selected))
    return float(spec.counts @ x), x


def mclp_separation_ok(spec: McLpSpec, selected) -> bool:
    return bool((_coverage_load(spec, selected) <= 1.0 + _LEVEL_TOL).all())


def pmedian_assignment(spec: PMedianSpec, selected) -> tuple[float, np.ndarray]:
    """Cost and nearest-station assignment, ties to the lowest station id."""
    sel = np.array(sorted(selected), dtype=int)
    sub = spec.distances[:, sel]
    pick = sub.argmin(axis=1)  # first minimum = lowest station id
    dmin = sub[np.arange(spec.n), pick]
    return float(spec.counts @ dmin), sel[pick]


# ---------------------------------------------------------------------------
# max-coverage branch and bound
# ---------------------------------------------------------------------------


class _McLpSearch:
    def __init__(self, spec: McLpSpec):
        self.spec = spec
        self.allowed = [j for j in range(spec.n) if j not in spec.forbidden]
        self.c = spec.counts
        n = spec.n
        # affected-cell table: candidate j touches itself (w0) and its
        # neighbors (w1); padded with a sentinel cell of zero count
        self.aff = np.full((n, 7), n, dtype=np.int64)
        self.wei = np.zeros((n, 7))
        for j in range(n):
            self.aff[j, 0] = j
            self.wei[j, 0] = spec.w0
            for k, i in enumerate(spec.neighbors[j], start=1):
                self.aff[j, k] = i
                self.wei[j, k] = spec.w1
        self.c_ext = np.append(self.c, 0.0)
        # when every achievable load quantizes to min(1, load), coverage is
        # concave in the selection and the sorted-marginal bound is admissible
        loads = {a * spec.w0 + k * spec.w1 for a in (0, 1) for k in range(7)}
        self.submodular = all(
            abs(_quantize(np.array([t]))[0] - min(1.0, t)) <= _LEVEL_TOL for t in loads
        )

    def _prep_order(self, order):
        spec = self.spec
        pos = np.full(spec.n, -(10**9), dtype=np.int64)
        for t, j in enumerate(order):
            pos[j] = t
        nbr_pos = np.full((spec.n, 6), -(10**9), dtype=np.int64)
        for i, nbrs in enumerate(spec.neighbors):
            ps = [pos[j] for j in nbrs if pos[j] >= 0]
            nbr_pos[i, : len(ps)] = ps
        return pos, nbr_pos

    def _bound(self, load, pos, nbr_pos, t, m, pool, obj):
        # per-cell optimistic coverage: each cell may independently claim up
        # to m undecided stations from its own neighborhood (always admissible)
        und_nbrs = (nbr_pos >= t).sum(axis=1)
        spec = self.spec
        bound_a = load + spec.w1 * np.minimum(und_nbrs, m)
        best = _quantize(bound_a)
        if m >= 1:
            take_self = pos >= t
            bound_b = load + spec.w0 + spec.w1 * np.minimum(und_nbrs, m - 1)
            best = np.maximum(best, np.where(take_self, _quantize(bound_b), 0.0))
        ub = float(self.c @ best)
        if self.submodular and len(pool) > t:
            # sorted-marginal bound: current objective plus the m largest
            # single-candidate gains over the undecided pool
            cand = pool[t:]
            aff = self.aff[cand]
            lv = np.append(load, 0.0)[aff]
            gains = (self.c_ext[aff] * (_quantize(lv + self.wei[cand]) - _quantize(lv))).sum(axis=1)
            if m < len(gains):
                top = np.partition(gains, len(gains) - m)[len(gains) - m :]
            else:
                top = gains
            ub = min(ub, obj + float(np.maximum(top, 0.0).sum()))
        return ub

    def _greedy_value(self) -> float:
        spec = self.spec
        sel: list[int] = []
        best_obj = 0.0
        for _ in range(min(spec.p, len(self.allowed))):
            gain_best, j_best = 0.0, -1
            for j in self.allowed:
                if j in sel:
                    continue
                cand = sel + [j]
                if spec.enforce_separation and not mclp_separation_ok(spec, cand):
                    continue
                obj, _ = mclp_objective(spec, cand)
                if obj - best_obj > gain_best + 1e-15:
                    gain_best, j_best = obj - best_obj, j
            if j_best < 0:
                break
            sel.append(j_best)
            best_obj += gain_best
        return mclp_objective(spec, sel)[0] if sel else 0.0

    def _apply(self, load, j, sign):
        spec = self.spec
        load[j] += sign * spec.w0
        for i in spec.neighbors[j]:
            load[i] += sign * spec.w1

    def _search(self, order, target=None):
        """target=None: return best objective. Else: first selection hitting it."""
        spec = self.spec
        pos, nbr_pos = self._prep_order(order)
        pool = np.array(order, dtype=np.int64)
        load = np.zeros(spec.n)
        sel: list[int] = []
        best = -math.inf
        found: list[tuple[int, ...]] = []

        def node(t, m):
            nonlocal best
            obj = float(self.c @ _quantize(load))
            if target is None:
                if obj > best:
                    best = obj
            elif obj == target:
                found.append(tuple(sel))
                return True
            if m == 0 or t >= len(order):
                return False
            ub = self._bound(load, pos, nbr_pos, t, m, pool, obj)
            if target is None:
                if ub <= best:
                    return False
            elif ub < target:
                return False
            j = order[t]
            self._apply(load, j, +1)
            ok = not spec.enforce_separation or bool((load <= 1.0 + _LEVEL_TOL).all())
            if ok:
                sel.append(j)
                if node(t + 1, m - 1):
                    return True
                sel.pop()
            self._apply(load, j, -1)
            return node(t + 1, m)

        if target is None:
            best = self._greedy_value()
            node(0, spec.p)
            return best
        node(0, spec.p)
        return found[0]

    def solve(self) -> PlacementSolution:
        spec = self.spec
        # attractive candidates first while proving the optimal value
        gains = {j: mclp_objective(spec, [j])[0] for j in self.allowed}
        value_order = sorted(self.allowed, key=lambda j: (-gains[j], j))
        opt = self._search(value_order, target=None)
        # then the lexicographically smallest selection achieving it
        sel = self._search(sorted(self.allowed), target=opt)
        obj, x = mclp_objective(spec, sel)
        return PlacementSolution(tuple(sorted(sel)), obj, coverage=x)


def solve_mclp(spec: McLpSpec) -> PlacementSolution:
    """Globally optimal max-coverage selection (at most P stations)."""
    return _McLpSearch(spec).solve()


# ---------------------------------------------------------------------------
# p-median branch and bound
# ---------------------------------------------------------------------------


class _PMedianSearch:
    def __init__(self, spec: PMedianSpec):
        self.spec = spec
        self.allowed = spec.allowed()
        self.c = spec.counts
        self.D = spec.distances

    def _greedy(self) -> list[int]:
        sel: list[int] = []
        rest = list(self.allowed)
        dmin = np.full(self.spec.n, math.inf)
        for _ in range(self.spec.p):
            costs = [(float(self.c @ np.minimum(dmin, self.D[:, j])), j) for j in rest]
            _, j = min(costs)
            sel.append(j)
            rest.remove(j)
            dmin = np.minimum(dmin, self.D[:, j])
        return sel

    def _interchange(self, sel: list[int]) -> list[int]:
        # best-improvement single-swap descent to a local optimum
        sel = list(sel)
        cost = pmedian_assignment(self.spec, sel)[0]
        while True:
            best_swap = None
            for out_j in sel:
                for in_j in self.allowed:
                    if in_j in sel:
                        continue
                    cand = [j for j in sel if j != out_j] + [in_j]
                    c2 = pmedian_assignment(self.spec, cand)[0]
                    if c2 < cost - 1e-12 and (best_swap is None or c2 < best_swap[0]):
                        best_swap = (c2, out_j, in_j)
            if best_swap is None:
                break
            cost, out_j, in_j = best_swap
            sel = [j for j in sel if j != out_j] + [in_j]
        assert len(sel) == self.spec.p
        return sorted(sel)

    def _lagrangian(self, ub: float, iters: int = 300):
        """Subgradient ascent on the assignment-relaxed dual.

        Returns the best multipliers (for per-node bounds) and the best primal
        selection harvested from the per-iteration candidate sets.
        """
        c, D = self.c, self.D[:, self.allowed]
        w = c[:, None] * D
        lam = np.partition(w, 1, axis=1)[:, 1] if w.shape[1] > 1 else w[:, 0].copy()
        best_lam = lam.copy()
        best_val = -math.inf
        primal: list[int] | None = None
        primal_cost = math.inf
        theta = 2.0
        stall = 0
        for _ in range(iters):
            slack = w - lam[:, None]
            rho = np.minimum(slack, 0.0).sum(axis=0)
            order = np.argsort(rho, kind="stable")[: self.spec.p]
            val = lam.sum() + rho[order].sum()
            if val > best_val + 1e-12:
                best_val, best_lam, stall = val, lam.copy(), 0
            else:
                stall += 1
                if stall >= 12:
                    theta *= 0.6
                    stall = 0
            cand = sorted(self.allowed[k] for k in order)
            cand_cost = pmedian_assignment(self.spec, cand)[0]
            if cand_cost < primal_cost:
                primal, primal_cost = cand, cand_cost
            assigned = (slack[:, order] < 0).sum(axis=1)
            g = 1.0 - assigned
            gnorm = float(g @ g)
            if gnorm == 0 or theta < 1e-5:
                break
            lam = lam + theta * max(ub - val, 1e-9) / gnorm * g
        return best_lam, primal

    def _prep(self, order, lam):
        n, T = self.spec.n, len(order)
        suf = np.empty((T + 1, n))
        suf[T] = math.inf
        for t in range(T - 1, -1, -1):
            suf[t] = np.minimum(suf[t + 1], self.D[:, order[t]])
        slack = self.c[:, None] * self.D[:, order] - lam[:, None]
        rho = np.minimum(slack, 0.0).sum(axis=0)
        # smallest-k rho sums over each suffix, for the dual node bound
        kmax = self.spec.p
        sums = np.zeros((T + 1, kmax + 1))
        keep: list[float] = []
        for t in range(T - 1, -1, -1):
            insort(keep, float(rho[t]))
            if len(keep) > kmax:
                keep.pop()
            acc = 0.0
            for k in range(1, kmax + 1):
                acc += keep[k - 1] if k <= len(keep) else 0.0
                sums[t, k] = acc
        return suf, rho, sums, float(lam.sum())

    def _search(self, order, lam, target=None, ub=math.inf):
        spec = self.spec
        suf, rho, rho_suf, lam_sum = self._prep(order, lam)
        T = len(order)
        sel: list[int] = []
        sel_rho = [0.0]
        best = ub
        found: list[tuple[int, ...]] = []

        def node(t, m, dmin):
            nonlocal best
            if m == 0:
                cost = float(self.c @ dmin)
                if target is None:
                    if cost < best:
                        best = cost
                elif cost == target:
                    found.append(tuple(sel))
                    return True
                return False
            if T - t < m:
                return False
            # the dual bound is exact in real arithmetic but accumulates float
            # noise; shave a relative margin so tight nodes are never pruned
            dual = lam_sum + sel_rho[-1] + rho_suf[t, m]
            dual -= 1e-7 * (1.0 + abs(dual))
            lb = max(float(self.c @ np.minimum(dmin, suf[t])), dual)
            if target is None:
                if lb >= best:
                    return False
            elif lb > target:
                return False
            j = order[t]
            sel.append(j)
            sel_rho.append(sel_rho[-1] + float(rho[t]))
            if node(t + 1, m - 1, np.minimum(dmin, self.D[:, j])):
                return True
            sel.pop()
            sel_rho.pop()
            return node(t + 1, m, dmin)

        start = np.full(spec.n, math.inf)
        if target is None:
            node(0, spec.p, start)
            return best
        node(0, spec.p, start)
        return found[0]

    def solve(self) -> PlacementSolution:
        spec = self.spec
        if spec.p > len(self.allowed):
            return PlacementSolution((), math.nan, status="infeasible")
        incumbent = self._interchange(self._greedy())
        ub = pmedian_assignment(spec, incumbent)[0]
        lam, primal = self._lagrangian(ub)
        if primal is not None:
            primal = self._interchange(primal)
            if pmedian_assignment(spec, primal)[0] < ub:
                incumbent = primal
                ub = pmedian_assignment(spec, incumbent)[0]
        attract = {j: float(self.c @ self.D[:, j]) for j in self.allowed}
        value_order = [j for j in incumbent] + sorted(
            (j for j in self.allowed if j not in incumbent),
            key=lambda j: (attract[j], j),
        )
        opt = self._search(value_order, lam, target=None, ub=ub)
        sel = self._search(sorted(self.allowed), lam, target=opt)
        cost, assign = pmedian_assignment(spec, sel)
        return PlacementSolution(tuple(sorted(sel)), cost, assignment=assign)


def solve_pmedian(spec: PMedianSpec) -> PlacementSolution:
    """Globally optimal p-median selection (exactly P stations)."""
    return _PMedianSearch(spec).solve()


# ---------------------------------------------------------------------------
# oracle and re-evaluation
# ---------------------------------------------------------------------------


def brute_force(spec) -> PlacementSolution:
    """Exhaustive enumeration over candidate subsets; the testing oracle.

    Refuses instances with more than 1e6 subsets to enumerate.
    """
    if isinstance(spec, McLpSpec):
        allowed = [j for j in range(spec.n) if j not in spec.forbidden]
        sizes = range(0, min(spec.p, len(allowed)) + 1)
        total = sum(math.comb(len(allowed), k) for k in sizes)
        if total > 10**6:
            raise InstanceTooLargeError(f"{total} subsets to enumerate")
        best = None
        for k in sizes:
            for sel in itertools.combinations(allowed, k):
                if spec.enforce_separation and not mclp_separation_ok(spec, sel):
                    continue
                obj, _ = mclp_objective(spec, sel)
                key = (-obj, sel)
                if best is None or key < best[0]:
                    best = (key, sel, obj)
        assert best is not None  # empty selection is always feasible
        obj, x = mclp_objective(spec, best[1])
        return PlacementSolution(best[1], obj, coverage=x)

    if isinstance(spec, PMedianSpec):
        allowed = spec.allowed()
        if spec.p > len(allowed):
            return PlacementSolution((), math.nan, status="infeasible")
        total = math.comb(len(allowed), spec.p)
        if total > 10**6:
            raise InstanceTooLargeError(f"{total} subsets to enumerate")
        best = None
        for sel in itertools.combinations(allowed, spec.p):
            cost, _ = pmedian_assignment(spec, sel)
            key = (cost, sel)
            if best is None or key < best[0]:
                best = (key, sel)
        cost, assign = pmedian_assignment(spec, best[1])
        return PlacementSolution(best[1], cost, assignment=assign)

    raise TypeError(f"unknown spec type {type(spec)!r}")


def evaluate(solution: PlacementSolution, spec) -> float:
    """Recompute a solution's objective from first principles.

    Raises PlacementValidationError when the stored coverage/assignment is
    inconsistent with the selection (e.g. a cell assigned to an unselected
    station).
    """
    sel = set(solution.selected)
    if any(not 0 <= j < spec.n for j in sel):
        raise PlacementValidationError(f"cell id out of range in {sorted(sel)}")
    if isinstance(spec, McLpSpec):
        if sel & spec.forbidden:
            raise PlacementValidationError("selected cell is forbidden")
        if len(sel) > spec.p:
            raise PlacementValidationError("selection exceeds P")
        obj, x = mclp_objective(spec, solution.selected)
        if solution.coverage is not None and not np.allclose(
            solution.coverage, x, atol=1e-9
        ):
            raise PlacementValidationError("stored coverage mismatches selection")
        return obj
    if isinstance(spec, PMedianSpec):
        if sel - set(spec.allowed()):
            raise PlacementValidationError("selected cell not an allowed candidate")
        if solution.assignment is not None:
            assign = np.asarray(solution.assignment)
            if set(np.unique(assign)) - sel:
                raise PlacementValidationError("assignment to unselected station")
            dmin = spec.distances[np.arange(spec.n), assign]
            return float(spec.counts @ dmin)
        return pmedian_assignment(spec, solution.selected)[0]
    raise TypeError(f"unknown spec type {type(spec)!r}")
