"""Shared state types for the event engine: events, vehicles, day logs.

Simulation time is kept in integer deci-minutes so that event ordering is
exact; the (time, sequence) pair totally orders the event queue. Kilometre
and kWh quantities stay in floats.
"""

from __future__ import annotations

import csv
import enum
import heapq
import os
from dataclasses import dataclass, field


def to_deci(minutes: float) -> int:
    """Round minutes to the internal integer deci-minute clock."""
    return int(minutes * 10.0 + 0.5)


def to_min(deci: int) -> float:
    return deci / 10.0


def hour_of(deci: int) -> int:
    return (deci // 600) % 24


class EventKind(enum.Enum):
    REQUEST = "request"
    ARRIVE_PICKUP = "arrive_pickup"
    ARRIVE_DROPOFF = "arrive_dropoff"
    ARRIVE_CHARGER = "arrive_charger"
    PLUG = "plug"
    CHARGE_DONE = "charge_done"
    SWAP_DONE = "swap_done"
    OUTLET_FREED = "outlet_freed"
    END_OF_DAY = "end_of_day"


class EventQueue:
    """Heap of (time, sequence, kind, payload); sequence fixes total order."""

    def __init__(self):
        self._heap: list[tuple[int, int, EventKind, object]] = []
        self._seq = 0
        self.last_popped = -1

    def push(self, time_deci: int, kind: EventKind, payload=None) -> None:
        heapq.heappush(self._heap, (time_deci, self._seq, kind, payload))
        self._seq += 1

    def pop(self) -> tuple[int, EventKind, object]:
        t, _, kind, payload = heapq.heappop(self._heap)
        if t < self.last_popped:
            raise AssertionError("event order violated: clock ran backwards")
        self.last_popped = t
        return t, kind, payload

    def __len__(self) -> int:
        return len(self._heap)


class VehicleMode(enum.Enum):
    IDLE = "idle"
    PICKUP_DRIVE = "pickup_drive"
    OCCUPIED_DRIVE = "occupied_drive"
    GOTO_CHARGE = "goto_charge"
    QUEUED = "queued"
    PLUGGED = "plugged"
    SWAPPING = "swapping"
    RETURNING_DEPOT = "returning_depot"


# drive purposes whose km count as empty distance
EMPTY_MODES = ("pickup_drive", "goto_charge", "returning_depot")


@dataclass
class Stop:
    node: int
    boards: list[int] = field(default_factory=list)
    alights: list[int] = field(default_factory=list)


@dataclass
class Leg:
    origin: int
    target: int
    t0: int
    t1: int
    km: float
    mode: str
    pax: int


@dataclass
class VehicleState:
    id: int
    depot: int
    node: int
    capacity_kwh: float
    soc_kwh: float
    seats: int = 4
    mode: VehicleMode = VehicleMode.IDLE
    plan: list[Stop] = field(default_factory=list)
    onboard: list[int] = field(default_factory=list)
    leg: Leg | None = None
    station: int | None = None
    pending_return: bool = False
    returned: bool = False
    odometer_km: float = 0.0
    km_by_mode: dict[str, float] = field(
        default_factory=lambda: {
            "pickup_drive": 0.0,
            "occupied_drive": 0.0,
            "goto_charge": 0.0,
            "returning_depot": 0.0,
        }
    )
    initial_soc_kwh: float = 0.0
    consumed_kwh: float = 0.0
    charged_kwh: float = 0.0
    swap_delta_kwh: float = 0.0
    swap_count: int = 0

    def check(self) -> None:
        if not -1e-9 <= self.soc_kwh <= self.capacity_kwh + 1e-9:
            raise AssertionError(f"vehicle {self.id}: SoC {self.soc_kwh} out of range")
        if len(self.onboard) > self.seats:
            raise AssertionError(f"vehicle {self.id}: seat capacity exceeded")


@dataclass
class RequestRecord:
    request_id: int
    agent_id: int
    request_min: float
    origin: int
    destination: int
    origin_cell: int
    direct_km: float
    direct_min: float  # at the request hour
    direct_board_min: float = 0.0  # at the boarding hour; detour baseline
    direct_freeflow_min: float = 0.0  # multiplier-1 lower bound
    vehicle: int = -1
    board_min: float = -1.0
    alight_min: float = -1.0
    wait_min: float = -1.0
    invehicle_min: float = -1.0
    detour_min: float = 0.0
    served: bool = False
    infeasible: bool = False


@dataclass
class LegRecord:
    vehicle: int
    t0_min: float
    t1_min: float
    km: float
    mode: str
    pax: int


@dataclass
class VisitRecord:
    station: int
    vehicle: int
    kind: str  # charge | swap
    t_arrive_min: float
    t_start_min: float = -1.0
    t_done_min: float = -1.0
    queued_min: float = 0.0
    busy_min: float = 0.0  # exact plugged (or in-bay) duration
    kwh: float = 0.0
    soc_at_start_kwh: float = 0.0


@dataclass
class BatteryRecord:
    station: int
    capacity_kwh: float
    t_detach_min: float | None  # None for seed stock present from t=0
    t_ready_min: float = 0.0
    t_issue_min: float | None = None


@dataclass
class VehicleSummary:
    vehicle: int
    depot: int
    initial_soc_kwh: float
    final_soc_kwh: float
    consumed_kwh: float
    charged_kwh: float
    swap_delta_kwh: float
    odometer_km: float
    pickup_km: float
    occupied_km: float
    goto_charge_km: float
    depot_return_km: float
    swap_count: int


@dataclass
class DayLog:
    """Everything one simulated day produced, in flat record lists."""

    fleet_size: int
    n_stations: int
    n_agent_trips: int
    n_saev_requests: int
    requests: list[RequestRecord] = field(default_factory=list)
    legs: list[LegRecord] = field(default_factory=list)
    visits: list[VisitRecord] = field(default_factory=list)
    batteries: list[BatteryRecord] = field(default_factory=list)
    vehicles: list[VehicleSummary] = field(default_factory=list)
    end_of_day_min: float = 0.0

    def to_csv_bundle(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        _write(
            os.path.join(out_dir, "requests.csv"),
            [
                "request_id", "agent_id", "request_min", "origin", "destination",
                "origin_cell", "direct_km", "direct_min", "direct_board_min",
                "direct_freeflow_min", "vehicle", "board_min", "alight_min",
                "wait_min", "invehicle_min", "detour_min", "served", "infeasible",
            ],
            [
                [
                    r.request_id, r.agent_id, repr(r.request_min), r.origin,
                    r.destination, r.origin_cell, repr(r.direct_km),
                    repr(r.direct_min), repr(r.direct_board_min),
                    repr(r.direct_freeflow_min), r.vehicle, repr(r.board_min),
                    repr(r.alight_min), repr(r.wait_min), repr(r.invehicle_min),
                    repr(r.detour_min), int(r.served), int(r.infeasible),
                ]
                for r in self.requests
            ],
        )
        _write(
            os.path.join(out_dir, "legs.csv"),
            ["vehicle", "t0_min", "t1_min", "km", "mode", "pax"],
            [
                [l.vehicle, repr(l.t0_min), repr(l.t1_min), repr(l.km), l.mode, l.pax]
                for l in self.legs
            ],
        )
        _write(
            os.path.join(out_dir, "station_visits.csv"),
            [
                "station", "vehicle", "kind", "t_arrive_min", "t_start_min",
                "t_done_min", "queued_min", "busy_min", "kwh",
            ],
            [
                [
                    v.station, v.vehicle, v.kind, repr(v.t_arrive_min),
                    repr(v.t_start_min), repr(v.t_done_min), repr(v.queued_min),
                    repr(v.busy_min), repr(v.kwh),
                ]
                for v in self.visits
            ],
        )
        _write(
            os.path.join(out_dir, "batteries.csv"),
            ["station", "capacity_kwh", "t_detach_min", "t_ready_min", "t_issue_min"],
            [
                [
                    b.station, repr(b.capacity_kwh),
                    "" if b.t_detach_min is None else repr(b.t_detach_min),
                    repr(b.t_ready_min),
                    "" if b.t_issue_min is None else repr(b.t_issue_min),
                ]
                for b in self.batteries
            ],
        )
        _write(
            os.path.join(out_dir, "vehicles.csv"),
            [
                "vehicle", "depot", "initial_soc_kwh", "final_soc_kwh",
                "consumed_kwh", "charged_kwh", "swap_delta_kwh", "odometer_km",
                "pickup_km", "occupied_km", "goto_charge_km", "depot_return_km",
                "swap_count",
            ],
            [
                [
                    v.vehicle, v.depot, repr(v.initial_soc_kwh),
                    repr(v.final_soc_kwh), repr(v.consumed_kwh),
                    repr(v.charged_kwh), repr(v.swap_delta_kwh),
                    repr(v.odometer_km), repr(v.pickup_km), repr(v.occupied_km),
                    repr(v.goto_charge_km), repr(v.depot_return_km), v.swap_count,
                ]
                for v in self.vehicles
            ],
        )


def _write(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
