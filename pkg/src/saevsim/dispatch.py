"""Request-to-vehicle assignment, ride sharing and charging decisions.

Rules, in order:
* a request goes to the candidate vehicle (idle, or en-route with spare
  capacity whose plan passes near the pickup) that can board it earliest,
  subject to seat capacity, every passenger's detour bound and a
  state-of-charge check covering the whole remaining plan plus the drive
  from its last stop to the nearest station;
* when only the state of charge disqualifies the best-positioned idle
  vehicle, that vehicle is sent to charge instead (it cannot serve the
  demand in front of it);
* unserved requests wait in FIFO order without any cap and are retried on
  every vehicle-freeing event;
* a vehicle below the SoC trigger after finishing its plan heads to the
  nearest station with free capacity, or queues at the nearest station
  overall when none has any.

All plan timing runs on the same integer deci-minute arithmetic the engine
uses to move vehicles, so insertion promises are exact, not estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .state import Stop, VehicleMode, VehicleState, hour_of, to_deci

DETOUR_ABS_MIN = 5.0
DETOUR_FRACTION = 0.4
RIDESHARE_RADIUS_MIN = 5.0


@dataclass
class DispatchContext:
    """Read-only environment dispatch decisions are made against."""

    net: object
    stations: list
    consumption: object
    nearest_station_km: dict[int, float] = field(default_factory=dict)
    detour_abs_min: float = DETOUR_ABS_MIN
    detour_fraction: float = DETOUR_FRACTION
    rideshare_radius_min: float = RIDESHARE_RADIUS_MIN
    soc_reserve_kwh: float = 0.0
    soc_trigger: float = 0.20
    unlimited_range: bool = False
    seats: int = 4
    # per-request promises: rid -> (origin, destination, base_deci, board_deci)
    promises: dict[int, dict] = field(default_factory=dict)

    def leg_deci(self, a: int, b: int, t: int) -> int:
        if a == b:
            return 0
        return to_deci(self.net.duration_min(a, b, hour_of(t)))

    def station_tail_km(self, node: int) -> float:
        if not self.stations:
            return 0.0
        return self.nearest_station_km[node]


@dataclass
class Insertion:
    vehicle: int
    new_plan: list[Stop]
    board_deci: int
    alight_deci: int
    base_deci: int
    cost_deci: int


def needs_charge(vehicle: VehicleState, threshold: float = 0.20) -> bool:
    """True strictly below the SoC trigger fraction (20% by default)."""
    return vehicle.soc_kwh / vehicle.capacity_kwh < threshold


def feasible_soc(
    vehicle: VehicleState,
    pickup_km: float,
    trip_km: float,
    dropoff_node: int,
    ctx: DispatchContext,
    hour: int,
) -> bool:
    """SoC covers pickup + trip + the drive to the nearest station afterwards.

    Boundary inclusive: exactly enough energy is feasible.
    """
    if ctx.unlimited_range:
        return True
    rate = ctx.consumption.rate(hour)
    need = rate * (pickup_km + trip_km + ctx.station_tail_km(dropoff_node))
    return vehicle.soc_kwh + 1e-9 >= need + ctx.soc_reserve_kwh


def _future_start(vehicle: VehicleState, t: int) -> tuple[int, int, list[Stop], list[int]]:
    """Where plan editing may begin: after the committed leg, if any."""
    if vehicle.leg is not None:
        first = vehicle.plan[0]
        onboard = [r for r in vehicle.onboard if r not in first.alights] + list(first.boards)
        return first.node, vehicle.leg.t1, vehicle.plan[1:], onboard
    return vehicle.node, t, list(vehicle.plan), list(vehicle.onboard)


def _timeline(ctx: DispatchContext, node: int, t: int, stops: list[Stop]) -> list[int]:
    times = []
    for s in stops:
        t = t + ctx.leg_deci(node, s.node, t)
        node = s.node
        times.append(t)
    return times


def _detour_ok(ctx: DispatchContext, base_deci: int, invehicle_deci: int) -> bool:
    allow = max(to_deci(ctx.detour_abs_min), int(ctx.detour_fraction * base_deci))
    return invehicle_deci - base_deci <= allow


def _plan_energy_kwh(ctx, vehicle, start_node, start_t, stops) -> float:
    """Energy for the committed leg, all planned legs and the station tail."""
    total = 0.0
    if vehicle.leg is not None:
        total += ctx.consumption.rate(hour_of(vehicle.leg.t0)) * vehicle.leg.km
    node, t = start_node, start_t
    for s in stops:
        if s.node != node:
            total += ctx.consumption.rate(hour_of(t)) * ctx.net.distance_km(node, s.node)
            t = t + ctx.leg_deci(node, s.node, t)
            node = s.node
    total += ctx.consumption.rate(hour_of(t)) * ctx.station_tail_km(node)
    return total


def insert_shared(vehicle: VehicleState, request, ctx: DispatchContext, t: int, rid: int):
    """Best-cost insertion of (pickup, dropoff) into the vehicle's remaining plan.

    Returns (Insertion, None) on success, (None, reason) otherwise, where
    reason is "soc" when a slot passed capacity and detour checks but failed
    the energy test, else "plan".
    """
    start_node, start_t, rest, onboard0 = _future_start(vehicle, t)
    old_end = _timeline(ctx, start_node, start_t, rest)[-1] if rest else start_t
    best: Insertion | None = None
    best_key = None
    soc_only = None
    for i in range(len(rest) + 1):
        for j in range(i, len(rest) + 1):
            cand = (
                rest[:i]
                + [Stop(request.origin, boards=[rid])]
                + rest[i:j]
                + [Stop(request.destination, alights=[rid])]
                + rest[j:]
            )
            times = _timeline(ctx, start_node, start_t, cand)
            occ = len(onboard0)
            ok = True
            for s in cand:
                occ += len(s.boards) - len(s.alights)
                if occ > ctx.seats:
                    ok = False
                    break
            if not ok:
                continue
            board_t = times[i]
            alight_t = times[j + 1]
            base = to_deci(
                ctx.net.duration_min(request.origin, request.destination, hour_of(board_t))
            )
            if not _detour_ok(ctx, base, alight_t - board_t):
                continue
            if not _promises_hold(ctx, cand, times, onboard0, rid):
                continue
            cost = times[-1] - old_end
            key = (cost, board_t, i, j)
            if best_key is not None and key >= best_key:
                continue
            if not ctx.unlimited_range:
                need = _plan_energy_kwh(ctx, vehicle, start_node, start_t, cand)
                if vehicle.soc_kwh + 1e-9 < need + ctx.soc_reserve_kwh:
                    if soc_only is None or board_t < soc_only:
                        soc_only = board_t
                    continue
            full_plan = ([vehicle.plan[0]] if vehicle.leg is not None else []) + cand
            best = Insertion(vehicle.id, full_plan, board_t, alight_t, base, cost)
            best_key = key
    if best is not None:
        return best, None
    return None, ("soc" if soc_only is not None else "plan")


def _promises_hold(ctx, cand, times, onboard0, new_rid) -> bool:
    """Every already-promised passenger still alights within their detour bound.

    A promise records the passenger's planned board time and direct-duration
    baseline; boards happening inside the candidate plan override the time.
    """
    for rid in sorted(set(onboard0) | {r for s in cand for r in s.boards + s.alights}):
        if rid == new_rid or rid not in ctx.promises:
            continue
        promise = ctx.promises[rid]
        board = promise["board_deci"]
        alight = None
        for s, st_time in zip(cand, times):
            if rid in s.boards:
                board = st_time
            if rid in s.alights:
                alight = st_time
        if alight is None:
            if rid in onboard0 or any(rid in s.boards for s in cand):
                return False  # dropoff fell out of the plan: not insertable here
            continue
        if not _detour_ok(ctx, promise["base_deci"], alight - board):
            return False
    return True


def refresh_promises(ctx: DispatchContext, vehicle: VehicleState, t: int) -> None:
    """Re-anchor planned board times after the vehicle's plan changed."""
    start_node, start_t, rest, _ = _future_start(vehicle, t)
    if vehicle.leg is not None and vehicle.plan:
        for rid in vehicle.plan[0].boards:
            if rid in ctx.promises:
                ctx.promises[rid]["board_deci"] = start_t
    for s, st_t in zip(rest, _timeline(ctx, start_node, start_t, rest)):
        for rid in s.boards:
            if rid in ctx.promises:
                ctx.promises[rid]["board_deci"] = st_t


def assign(request, vehicles: list[VehicleState], ctx: DispatchContext, t: int, rid: int):
    """Pick the feasible vehicle with the earliest boarding time.

    Returns (Insertion | None, charge_vehicle_id | None): when nothing is
    feasible and the best-positioned idle vehicle failed only on SoC, that
    vehicle id is returned so the engine can send it to charge.
    """
    best: Insertion | None = None
    soc_failures: list[tuple[int, int]] = []  # (would-be board time, vehicle)
    for v in vehicles:
        if v.mode == VehicleMode.IDLE and not v.pending_return:
            pass
        elif v.mode in (VehicleMode.PICKUP_DRIVE, VehicleMode.OCCUPIED_DRIVE):
            if not _passes_near(ctx, v, request.origin, t):
                continue
        else:
            continue
        ins, reason = insert_shared(v, request, ctx, t, rid)
        if ins is not None:
            key = (ins.board_deci, v.id)
            if best is None or key < (best.board_deci, best.vehicle):
                best = ins
        elif reason == "soc" and v.mode == VehicleMode.IDLE:
            eta = t + ctx.leg_deci(v.node, request.origin, t)
            soc_failures.append((eta, v.id))
    if best is not None:
        return best, None
    if soc_failures:
        _, vid = min(soc_failures)
        return None, vid
    return None, None


def _passes_near(ctx, vehicle, pickup_node, t: int) -> bool:
    radius = to_deci(ctx.rideshare_radius_min)
    for s in vehicle.plan:
        if ctx.leg_deci(s.node, pickup_node, t) <= radius:
            return True
    return False


def choose_charger(vehicle: VehicleState, stations: list, ctx: DispatchContext, t: int):
    """Nearest station (travel time) with free capacity, else nearest overall.

    Only stations reachable with the current SoC are considered.
    """
    rate = ctx.consumption.rate(hour_of(t))
    reachable = []
    for st in stations:
        km = 0.0 if st.node == vehicle.node else ctx.net.distance_km(vehicle.node, st.node)
        if ctx.unlimited_range or vehicle.soc_kwh + 1e-9 >= rate * km:
            reachable.append(st)
    if not reachable:
        from .energy import SimulationError

        raise SimulationError(
            f"vehicle {vehicle.id} at node {vehicle.node} cannot reach any station "
            f"with SoC {vehicle.soc_kwh:.3f} kWh"
        )
    free = [st for st in reachable if st.has_capacity()]
    pool = free if free else reachable
    return min(pool, key=lambda st: (ctx.leg_deci(vehicle.node, st.node, t), st.id))
