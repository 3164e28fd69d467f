"""Battery consumption, charging outlets and battery-swap stations.

Charging is linear in time: minutes = 60 * missing_kWh / power_kW. Normal
chargers fill to 100%, rapid chargers release the vehicle at 80%. A swap
station exchanges a depleted battery for a full one in a fixed-length bay
operation; detached batteries are plugged at 22 kW immediately and re-enter
the station-local inventory once full. When no full battery is in stock a
vehicle's battery is detached anyway (so it can start charging) and the
vehicle waits, keeping its queue position, for the next full battery.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .state import BatteryRecord, to_deci


class SimulationError(AssertionError):
    """Internal inconsistency (negative SoC, capacity overflow): a bug."""


@dataclass
class Battery:
    capacity_kwh: float
    soc_kwh: float

    def __post_init__(self):
        if not 0.0 <= self.soc_kwh <= self.capacity_kwh:
            raise ValueError("SoC outside [0, capacity]")


@dataclass
class ConsumptionModel:
    rate_kwh_km: float = 0.164
    hour_multiplier: np.ndarray | None = None  # optional 24 values

    def __post_init__(self):
        if self.rate_kwh_km <= 0:
            raise ValueError("consumption rate must be positive")

    def rate(self, hour: int) -> float:
        if self.hour_multiplier is None:
            return self.rate_kwh_km
        return self.rate_kwh_km * float(self.hour_multiplier[int(hour) % 24])


def consume(battery, distance_km: float, model: ConsumptionModel, hour: int):
    """Drain the battery for a driven leg; going negative is a simulation bug."""
    need = model.rate(hour) * distance_km
    soc = battery.soc_kwh - need
    if soc < -1e-9:
        raise SimulationError(
            f"SoC would go negative: {battery.soc_kwh:.6f} kWh minus {need:.6f} kWh"
        )
    battery.soc_kwh = max(soc, 0.0)
    return battery


def charge_duration(battery, target_soc_fraction: float, power_kw: float) -> float:
    """Minutes to charge linearly up to the target fraction (0 if already there)."""
    missing = target_soc_fraction * battery.capacity_kwh - battery.soc_kwh
    return max(0.0, 60.0 * missing / power_kw)


class ChargingStation:
    """Fixed number of outlets of one power; FIFO queue when all are busy."""

    def __init__(self, id: int, node: int, cell: int, outlets: int = 60,
                 power_kw: float = 22.0, rapid: bool = False):
        self.id = id
        self.node = node
        self.cell = cell
        self.outlets = outlets
        self.power_kw = power_kw
        self.rapid = rapid
        self.plugged: set[int] = set()
        self.queue: deque[int] = deque()

    @property
    def kind(self) -> str:
        return "charge"

    @property
    def target_fraction(self) -> float:
        return 0.8 if self.rapid else 1.0

    def has_capacity(self) -> bool:
        return len(self.plugged) < self.outlets

    def arrive(self, vehicle_id: int) -> bool:
        """True if an outlet is free and the vehicle plugs immediately."""
        if self.has_capacity():
            self.plugged.add(vehicle_id)
            if len(self.plugged) > self.outlets:
                raise SimulationError(f"station {self.id}: outlet capacity exceeded")
            return True
        self.queue.append(vehicle_id)
        return False

    def unplug(self, vehicle_id: int) -> None:
        self.plugged.remove(vehicle_id)

    def admit_next(self) -> int | None:
        """Plug the queue head if an outlet is free; returns its vehicle id."""
        if self.queue and self.has_capacity():
            nxt = self.queue.popleft()
            self.plugged.add(nxt)
            return nxt
        return None


@dataclass
class _BatteryUnit:
    serial: int
    capacity_kwh: float
    ready_deci: int
    issued: bool = False
    record: BatteryRecord = None


@dataclass
class _SwapEntry:
    vehicle: int
    arrive_deci: int
    capacity_kwh: float
    soc_kwh: float
    has_battery: bool = True
    in_op: bool = False


@dataclass
class SwapOp:
    kind: str  # atomic | detach | install
    vehicle: int
    battery: _BatteryUnit | None = None


class SwapStation:
    """Battery-swap station: bays, a FIFO vehicle queue and a battery stock.

    `advance` greedily starts every operation the current resources permit,
    scanning the queue in arrival order so battery hand-outs stay FIFO within
    each capacity class.
    """

    def __init__(self, id: int, node: int, cell: int, bays: int = 20,
                 swap_minutes: float = 5.0, charge_power_kw: float = 22.0,
                 seed_stock: int = 0, seed_capacity_kwh: float = 41.0):
        self.id = id
        self.node = node
        self.cell = cell
        self.bays = bays
        self.swap_minutes = swap_minutes
        self.charge_power_kw = charge_power_kw
        self.busy_bays = 0
        self.queue: list[_SwapEntry] = []
        self.units: list[_BatteryUnit] = []
        self.inventory = 0
        self.peak_inventory = 0
        for _ in range(seed_stock):
            rec = BatteryRecord(id, seed_capacity_kwh, None, 0.0, None)
            self.units.append(_BatteryUnit(len(self.units), seed_capacity_kwh, 0, record=rec))
            self._bump(+1)

    @property
    def kind(self) -> str:
        return "swap"

    def _bump(self, delta: int) -> None:
        self.inventory += delta
        self.peak_inventory = max(self.peak_inventory, self.inventory)

    def has_capacity(self) -> bool:
        # a vehicle arriving now would start an operation immediately
        return self.busy_bays < self.bays and not self.queue

    def battery_records(self) -> list[BatteryRecord]:
        return [u.record for u in self.units]

    def arrive(self, vehicle_id: int, capacity_kwh: float, soc_kwh: float, t: int) -> None:
        self.queue.append(_SwapEntry(vehicle_id, t, capacity_kwh, soc_kwh))

    def _take_ready(self, capacity: float, t: int, blocked: set) -> _BatteryUnit | None:
        if capacity in blocked:
            return None
        avail = [
            u for u in self.units
            if not u.issued and u.ready_deci <= t and u.capacity_kwh == capacity
        ]
        if not avail:
            blocked.add(capacity)
            return None
        return min(avail, key=lambda u: (u.ready_deci, u.serial))

    def advance(self, t: int) -> list[SwapOp]:
        """Start every operation possible at time t; returns the started ops."""
        ops: list[SwapOp] = []
        blocked: set = set()
        for entry in list(self.queue):
            if self.busy_bays >= self.bays:
                break
            if entry.in_op:
                continue
            unit = self._take_ready(entry.capacity_kwh, t, blocked)
            if unit is not None:
                unit.issued = True
                unit.record.t_issue_min = t / 10.0
                self._bump(-1)
                self.busy_bays += 1
                entry.in_op = True
                kind = "atomic" if entry.has_battery else "install"
                ops.append(SwapOp(kind, entry.vehicle, unit))
            elif entry.has_battery:
                self.busy_bays += 1
                entry.in_op = True
                ops.append(SwapOp("detach", entry.vehicle))
        return ops

    def plug_detached(self, capacity_kwh: float, soc_kwh: float, t: int) -> int:
        """Detached battery enters the charging pool; returns its ready time."""
        minutes = charge_duration(Battery(capacity_kwh, soc_kwh), 1.0, self.charge_power_kw)
        ready = t + to_deci(minutes)
        rec = BatteryRecord(self.id, capacity_kwh, t / 10.0, ready / 10.0, None)
        self.units.append(_BatteryUnit(len(self.units), capacity_kwh, ready, record=rec))
        self._bump(+1)
        return ready

    def complete(self, op: SwapOp, t: int) -> int | None:
        """Finish an operation at time t; returns a battery-ready time for detaches."""
        self.busy_bays -= 1
        entry = next(e for e in self.queue if e.vehicle == op.vehicle)
        if op.kind == "detach":
            ready = self.plug_detached(entry.capacity_kwh, entry.soc_kwh, t)
            entry.has_battery = False
            entry.in_op = False
            entry.soc_kwh = 0.0
            return ready
        self.queue.remove(entry)
        if op.kind == "atomic":
            return self.plug_detached(entry.capacity_kwh, entry.soc_kwh, t)
        return None


def required_extra_batteries(day_log) -> int:
    """Peak simultaneous not-in-vehicle batteries, per station and capacity.

    A battery sits at a station from detach (or from t=0 for seed stock)
    until it is issued into a vehicle again; the operator must own the peak
    of that count. Summed over stations and capacity classes.
    """
    groups: dict[tuple[int, float], list[tuple[float, int]]] = {}
    for rec in day_log.batteries:
        start = 0.0 if rec.t_detach_min is None else rec.t_detach_min
        events = groups.setdefault((rec.station, rec.capacity_kwh), [])
        events.append((start, +1))
        if rec.t_issue_min is not None:
            events.append((rec.t_issue_min, -1))
    total = 0
    for events in groups.values():
        events.sort(key=lambda e: (e[0], -e[1]))  # +1 before -1 at equal times
        cur = peak = 0
        for _, delta in events:
            cur += delta
            peak = max(peak, cur)
        total += peak
    return total
