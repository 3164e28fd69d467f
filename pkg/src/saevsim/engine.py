"""Deterministic discrete-event core: one day loop and the day iteration.

One simulated day processes, in (time, sequence) order: request arrivals,
vehicle leg completions, charger plug/queue transitions and battery swaps.
Vehicles start fully charged at their depots, serve passenger plans leg by
leg (a leg is never interrupted), charge when their state of charge falls
below the trigger, and return to their depot once the last request of the
day has been served. The day keeps running past midnight until every chain
completes; metrics later clip to the 24 h window.

`run_iterations` wraps the day loop: each day's mode choices use the waiting
times experienced on previous days (successive averages), which is what lets
demand react to the charging infrastructure under test.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import dispatch as dsp
from . import metrics as metrics_mod
from .demand import ChoiceModel, choose_modes, update_expectations
from .energy import ChargingStation, SimulationError, SwapStation, charge_duration
from .state import (
    DayLog,
    EventKind,
    EventQueue,
    Leg,
    LegRecord,
    RequestRecord,
    VehicleMode,
    VehicleState,
    VehicleSummary,
    VisitRecord,
    hour_of,
    to_deci,
)

CHOICE_STREAM = 3


@dataclass
class StationSite:
    """One roster row: where a station sits and what it is."""

    id: int
    kind: str  # charge | swap
    cell: int
    node: int
    outlets_or_bays: int
    power_kw: float


def _build_stations(rt):
    stations = []
    for site in rt.roster:
        if site.kind == "swap":
            stations.append(
                SwapStation(
                    site.id,
                    site.node,
                    site.cell,
                    bays=site.outlets_or_bays,
                    swap_minutes=rt.swap_minutes,
                    charge_power_kw=rt.swap_charge_power_kw,
                    seed_stock=rt.swap_seed_stock,
                    seed_capacity_kwh=rt.battery_kwh,
                )
            )
        else:
            stations.append(
                ChargingStation(
                    site.id,
                    site.node,
                    site.cell,
                    outlets=site.outlets_or_bays,
                    power_kw=site.power_kw,
                    rapid=site.power_kw > rt.rapid_above_kw,
                )
            )
    return stations


class _DaySim:
    """State and event handlers for a single simulated day."""

    def __init__(self, rt, chosen: list[int]):
        self.rt = rt
        self.queue = EventQueue()
        self.stations = _build_stations(rt)
        self.vehicles = [
            VehicleState(
                i,
                depot=rt.depots[i % len(rt.depots)],
                node=rt.depots[i % len(rt.depots)],
                capacity_kwh=rt.battery_kwh,
                soc_kwh=rt.battery_kwh,
                seats=rt.seats,
                initial_soc_kwh=rt.battery_kwh,
            )
            for i in range(rt.fleet_size)
        ]
        self.ctx = dsp.DispatchContext(
            net=rt.net,
            stations=self.stations,
            consumption=rt.consumption,
            nearest_station_km=rt.nearest_station_km,
            detour_abs_min=rt.detour_abs_min,
            detour_fraction=rt.detour_fraction,
            rideshare_radius_min=rt.rideshare_radius_min,
            soc_reserve_kwh=rt.soc_reserve_kwh,
            soc_trigger=rt.soc_trigger,
            unlimited_range=rt.unlimited_range,
            seats=rt.seats,
        )
        self.records: dict[int, RequestRecord] = {}
        self.waiting: list[int] = []
        self.pending_events = len(chosen)
        self.outstanding = len(chosen)
        self.return_phase = False
        self.visit: dict[int, VisitRecord] = {}
        self.wait_start: dict[int, int] = {}
        self.log = DayLog(
            fleet_size=rt.fleet_size,
            n_stations=len(self.stations),
            n_agent_trips=len(rt.trips),
            n_saev_requests=len(chosen),
        )
        for rid in chosen:
            trip = rt.trips[rid]
            t_req = to_deci(trip.request_min)
            self.records[rid] = RequestRecord(
                rid,
                trip.agent_id,
                t_req / 10.0,  # the clock the engine actually runs on
                trip.origin,
                trip.destination,
                trip.origin_cell,
                trip.direct_km,
                trip.direct_min,
                direct_freeflow_min=rt.net.freeflow_min(trip.origin, trip.destination),
            )
            self.queue.push(t_req, EventKind.REQUEST, rid)

    # -- movement ---------------------------------------------------------

    def _start_drive(self, v: VehicleState, target: int, mode: VehicleMode, kind, t: int):
        dur = self.ctx.leg_deci(v.node, target, t)
        km = 0.0 if target == v.node else self.rt.net.distance_km(v.node, target)
        v.leg = Leg(v.node, target, t, t + dur, km, mode.value, len(v.onboard))
        v.mode = mode
        self.queue.push(t + dur, kind, v.id)

    def _start_next_leg(self, v: VehicleState, t: int):
        if not v.plan:
            self._after_plan(v, t)
            return
        stop = v.plan[0]
        mode = VehicleMode.OCCUPIED_DRIVE if v.onboard else VehicleMode.PICKUP_DRIVE
        kind = EventKind.ARRIVE_PICKUP if stop.boards else EventKind.ARRIVE_DROPOFF
        self._start_drive(v, stop.node, mode, kind, t)

    def _complete_leg(self, v: VehicleState, t: int):
        leg = v.leg
        assert leg is not None and leg.t1 == t
        energy = self.rt.consumption.rate(hour_of(leg.t0)) * leg.km
        if v.soc_kwh - energy < -1e-9:
            raise SimulationError(
                f"vehicle {v.id} SoC {v.soc_kwh:.6f} cannot cover leg of {leg.km:.3f} km"
            )
        v.soc_kwh -= energy
        v.consumed_kwh += energy
        v.odometer_km += leg.km
        v.km_by_mode[leg.mode] += leg.km
        self.log.legs.append(
            LegRecord(v.id, leg.t0 / 10.0, leg.t1 / 10.0, leg.km, leg.mode, leg.pax)
        )
        v.node = leg.target
        v.leg = None
        v.check()

    # -- request lifecycle --------------------------------------------------

    def _on_request(self, rid: int, t: int):
        if not self._servable(rid, t):
            rec = self.records[rid]
            rec.infeasible = True
            self.outstanding -= 1
            self._maybe_begin_return(t)
            return
        if not self._try_assign(rid, t, allow_charge_dispatch=True):
            self.waiting.append(rid)

    def _servable(self, rid: int, t: int) -> bool:
        # guard against trips no vehicle could serve even on a full battery
        if self.rt.unlimited_range:
            return True
        trip = self.rt.trips[rid]
        rate = self.rt.consumption.rate(hour_of(t))
        need = rate * (trip.direct_km + self.ctx.station_tail_km(trip.destination))
        return self.rt.battery_kwh + 1e-9 >= need + self.rt.soc_reserve_kwh

    def _try_assign(self, rid: int, t: int, allow_charge_dispatch: bool) -> bool:
        trip = self.rt.trips[rid]
        ins, charge_vid = dsp.assign(trip, self.vehicles, self.ctx, t, rid)
        if ins is None:
            if charge_vid is not None and allow_charge_dispatch:
                v = self.vehicles[charge_vid]
                if v.mode == VehicleMode.IDLE and self._charging_gains(v):
                    self._goto_charge(v, t)
            return False
        v = self.vehicles[ins.vehicle]
        rec = self.records[rid]
        rec.vehicle = v.id
        rec.direct_board_min = ins.base_deci / 10.0
        self.ctx.promises[rid] = {"base_deci": ins.base_deci, "board_deci": ins.board_deci}
        v.plan = ins.new_plan
        dsp.refresh_promises(self.ctx, v, t)
        if v.mode == VehicleMode.IDLE:
            self._start_next_leg(v, t)
        return True

    def _charging_gains(self, v: VehicleState) -> bool:
        targets = []
        for st in self.stations:
            if st.kind == "swap":
                targets.append(v.capacity_kwh)
            else:
                targets.append(st.target_fraction * v.capacity_kwh)
        return bool(targets) and v.soc_kwh + 1e-9 < max(targets)

    def _retry_waiting(self, t: int):
        progressed = True
        while progressed:
            progressed = False
            for rid in list(self.waiting):
                if self._try_assign(rid, t, allow_charge_dispatch=True):
                    self.waiting.remove(rid)
                    progressed = True

    def _on_arrive_stop(self, v: VehicleState, t: int):
        self._complete_leg(v, t)
        if v.mode == VehicleMode.RETURNING_DEPOT:
            v.mode = VehicleMode.IDLE
            v.returned = True
            return
        stop = v.plan.pop(0)
        for rid in stop.alights:
            v.onboard.remove(rid)
            rec = self.records[rid]
            rec.alight_min = t / 10.0
            rec.invehicle_min = rec.alight_min - rec.board_min
            rec.detour_min = rec.invehicle_min - rec.direct_board_min
            rec.served = True
            self.ctx.promises.pop(rid, None)
            self.outstanding -= 1
        for rid in stop.boards:
            v.onboard.append(rid)
            if len(v.onboard) > v.seats:
                raise SimulationError(f"vehicle {v.id}: seat capacity exceeded")
            rec = self.records[rid]
            rec.board_min = t / 10.0
            rec.wait_min = rec.board_min - rec.request_min
            if rid in self.ctx.promises:
                self.ctx.promises[rid]["board_deci"] = t
        v.check()
        self._maybe_begin_return(t)
        if v.plan:
            self._start_next_leg(v, t)
        else:
            self._after_plan(v, t)

    def _after_plan(self, v: VehicleState, t: int):
        if not self.rt.unlimited_range and dsp.needs_charge(v, self.rt.soc_trigger):
            self._goto_charge(v, t)
            return
        if self.return_phase:
            self._send_home(v, t)
            return
        v.mode = VehicleMode.IDLE
        v.station = None
        self._retry_waiting(t)

    # -- charging and swapping ----------------------------------------------

    def _goto_charge(self, v: VehicleState, t: int):
        st = dsp.choose_charger(v, self.stations, self.ctx, t)
        v.station = st.id
        self._start_drive(v, st.node, VehicleMode.GOTO_CHARGE, EventKind.ARRIVE_CHARGER, t)

    def _on_arrive_charger(self, v: VehicleState, t: int):
        self._complete_leg(v, t)
        st = self.stations[v.station]
        visit = VisitRecord(st.id, v.id, st.kind, t / 10.0)
        self.visit[v.id] = visit
        self.wait_start[v.id] = t
        if st.kind == "swap":
            v.mode = VehicleMode.QUEUED
            visit.soc_at_start_kwh = v.soc_kwh
            st.arrive(v.id, v.capacity_kwh, v.soc_kwh, t)
            self._advance_swaps(st, t)
        else:
            if st.arrive(v.id):
                self._plug(v, st, t)
            else:
                v.mode = VehicleMode.QUEUED

    def _plug(self, v: VehicleState, st: ChargingStation, t: int):
        v.mode = VehicleMode.PLUGGED
        visit = self.visit[v.id]
        visit.t_start_min = t / 10.0
        visit.queued_min += (t - self.wait_start[v.id]) / 10.0
        visit.soc_at_start_kwh = v.soc_kwh
        minutes = charge_duration(v, st.target_fraction, st.power_kw)
        visit.busy_min = minutes
        self.queue.push(t + to_deci(minutes), EventKind.CHARGE_DONE, ("vehicle", v.id))

    def _on_charge_done(self, payload, t: int):
        what, ident = payload
        if what == "battery":
            st = self.stations[ident]
            self._advance_swaps(st, t)
            return
        v = self.vehicles[ident]
        st = self.stations[v.station]
        # a dispatch-sent vehicle can arrive above a rapid charger's 80% target
        target_kwh = max(st.target_fraction * v.capacity_kwh, v.soc_kwh)
        added = target_kwh - v.soc_kwh
        v.charged_kwh += added
        v.soc_kwh = target_kwh
        visit = self.visit.pop(v.id)
        visit.t_done_min = t / 10.0
        visit.kwh = added
        self.log.visits.append(visit)
        st.unplug(v.id)
        self.queue.push(t, EventKind.OUTLET_FREED, st.id)
        self._after_charge(v, t)

    def _on_outlet_freed(self, station_id: int, t: int):
        st = self.stations[station_id]
        nxt = st.admit_next()
        if nxt is not None:
            self._plug(self.vehicles[nxt], st, t)

    def _advance_swaps(self, st: SwapStation, t: int):
        for op in st.advance(t):
            v = self.vehicles[op.vehicle]
            v.mode = VehicleMode.SWAPPING
            visit = self.visit[v.id]
            if visit.t_start_min < 0:
                visit.t_start_min = t / 10.0
            visit.queued_min += (t - self.wait_start[v.id]) / 10.0
            visit.busy_min += st.swap_minutes
            self.queue.push(
                t + to_deci(st.swap_minutes), EventKind.SWAP_DONE, (st.id, op)
            )

    def _on_swap_done(self, payload, t: int):
        station_id, op = payload
        st = self.stations[station_id]
        ready = st.complete(op, t)
        if ready is not None:
            self.queue.push(ready, EventKind.CHARGE_DONE, ("battery", st.id))
        v = self.vehicles[op.vehicle]
        if op.kind == "detach":
            v.swap_delta_kwh -= v.soc_kwh
            v.soc_kwh = 0.0
            v.mode = VehicleMode.QUEUED
            self.wait_start[v.id] = t
        else:
            if op.kind == "atomic":
                v.swap_delta_kwh += v.capacity_kwh - v.soc_kwh
            else:  # install onto an empty tray
                v.swap_delta_kwh += v.capacity_kwh
            v.soc_kwh = v.capacity_kwh
            v.swap_count += 1
            visit = self.visit.pop(v.id)
            visit.t_done_min = t / 10.0
            visit.kwh = v.capacity_kwh - visit.soc_at_start_kwh
            self.log.visits.append(visit)
            self._after_charge(v, t)
        self._advance_swaps(st, t)

    def _after_charge(self, v: VehicleState, t: int):
        v.station = None
        if self.return_phase or v.pending_return:
            self._send_home(v, t)
            return
        v.mode = VehicleMode.IDLE
        self._retry_waiting(t)

    # -- end of day -----------------------------------------------------------

    def _maybe_begin_return(self, t: int):
        if self.return_phase or self.outstanding > 0 or self.pending_events > 0:
            return
        self.return_phase = True
        self.log.end_of_day_min = t / 10.0
        self.queue.push(t, EventKind.END_OF_DAY, None)

    def _on_end_of_day(self, t: int):
        for v in self.vehicles:
            v.pending_return = True
            if v.mode == VehicleMode.IDLE and not v.returned:
                self._send_home(v, t)

    def _send_home(self, v: VehicleState, t: int):
        if v.node == v.depot:
            v.mode = VehicleMode.IDLE
            v.returned = True
            return
        if not self.rt.unlimited_range and self.stations:
            km = self.rt.net.distance_km(v.node, v.depot)
            need = self.rt.consumption.rate(hour_of(t)) * km
            if v.soc_kwh + 1e-9 < need:
                self._goto_charge(v, t)  # charge-before-return rule
                return
        self._start_drive(
            v, v.depot, VehicleMode.RETURNING_DEPOT, EventKind.ARRIVE_DROPOFF, t
        )

    # -- main loop ------------------------------------------------------------

    def run(self) -> DayLog:
        self._maybe_begin_return(0)
        while len(self.queue):
            t, kind, payload = self.queue.pop()
            if kind == EventKind.REQUEST:
                self.pending_events -= 1
                self._on_request(payload, t)
            elif kind in (EventKind.ARRIVE_PICKUP, EventKind.ARRIVE_DROPOFF):
                self._on_arrive_stop(self.vehicles[payload], t)
            elif kind == EventKind.ARRIVE_CHARGER:
                self._on_arrive_charger(self.vehicles[payload], t)
            elif kind == EventKind.CHARGE_DONE:
                self._on_charge_done(payload, t)
            elif kind == EventKind.OUTLET_FREED:
                self._on_outlet_freed(payload, t)
            elif kind == EventKind.SWAP_DONE:
                self._on_swap_done(payload, t)
            elif kind == EventKind.END_OF_DAY:
                self._on_end_of_day(t)
            if not len(self.queue) and self.outstanding > 0:
                # every vehicle idles yet nobody can serve what is left
                # (e.g. the pickup leg alone would exhaust a full battery):
                # drop the starved requests so the day can close
                if self.outstanding != len(self.waiting):
                    raise SimulationError(
                        f"{self.outstanding} open requests but {len(self.waiting)} waiting"
                    )
                self.outstanding = 0
                self.waiting.clear()
                self._maybe_begin_return(t)
        if self.waiting:
            raise SimulationError(f"{len(self.waiting)} requests left waiting at day end")
        for v in self.vehicles:
            if not (v.returned and v.mode == VehicleMode.IDLE):
                raise SimulationError(f"vehicle {v.id} did not return to its depot")
        self.log.requests = [self.records[rid] for rid in sorted(self.records)]
        self.log.batteries = [
            rec for st in self.stations if st.kind == "swap" for rec in st.battery_records()
        ]
        self.log.vehicles = [
            VehicleSummary(
                v.id,
                v.depot,
                v.initial_soc_kwh,
                v.soc_kwh,
                v.consumed_kwh,
                v.charged_kwh,
                v.swap_delta_kwh,
                v.km_by_mode["pickup_drive"]
                + v.km_by_mode["occupied_drive"]
                + v.km_by_mode["goto_charge"]
                + v.km_by_mode["returning_depot"],
                v.km_by_mode["pickup_drive"],
                v.km_by_mode["occupied_drive"],
                v.km_by_mode["goto_charge"],
                v.km_by_mode["returning_depot"],
                v.swap_count,
            )
            for v in self.vehicles
        ]
        return self.log


def run_day(rt, chosen: list[int]) -> DayLog:
    """Simulate one day for the given chosen-request ids (indices into rt.trips)."""
    return _DaySim(rt, chosen).run()


@dataclass
class DayTrace:
    day: int
    n_saev: int
    n_served: int
    share_pct: float
    mean_wait_min: float


@dataclass
class IterationResult:
    final_log: DayLog
    report: object
    trace: list[DayTrace]
    expectations: np.ndarray


def run_iterations(rt, n_days: int) -> IterationResult:
    """Iterate days: choose modes, run the day, update wait expectations."""
    if n_days < 1:
        raise ValueError("need at least one day")
    table = np.zeros((rt.grid.n_cells, 24))
    trace: list[DayTrace] = []
    log = None
    for day in range(n_days):
        model = replace(rt.choice, expected_wait=table)
        rng = np.random.default_rng(
            np.random.SeedSequence((rt.master_seed, CHOICE_STREAM, day))
        )
        mask = choose_modes(rt.trips, model, rt.tastes, rng)
        chosen = [i for i in range(len(rt.trips)) if mask[i]]
        log = run_day(rt, chosen)
        table = update_expectations(table, log, day)
        served = [r for r in log.requests if r.served]
        trace.append(
            DayTrace(
                day,
                len(chosen),
                len(served),
                100.0 * len(served) / max(1, len(rt.trips)),
                float(np.mean([r.wait_min for r in served])) if served else 0.0,
            )
        )
    report = metrics_mod.compute(log, rt)
    return IterationResult(log, report, trace, table)
