"""Service KPIs computed from a day log.

Conventions:
* kilometre accumulators cover the whole log, including trips spilling past
  midnight and the end-of-day depot returns (their km count as empty
  distance); time-based metrics (fleet usage, hourly profiles, plugged and
  queue totals) are clipped to the 24 h window;
* empty km = pickup + go-to-charge + depot-return km, and total km is formed
  as empty + loaded so the ratio identity is exact in floats;
* the hourly plugged series is built piecewise per visit with the last piece
  taking the remainder, so the series sums to the plugged total exactly;
* "in use" means pickup or occupied driving; charging, queueing and swapping
  are unavailability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import required_extra_batteries
from .state import DayLog

WINDOW_MIN = 1440.0
EMPTY_MODES = ("pickup_drive", "goto_charge", "returning_depot")


@dataclass
class MetricsReport:
    modal_share_pct: float = 0.0
    avg_wait_min: float = 0.0
    avg_invehicle_min: float = 0.0
    avg_detour_min: float = 0.0
    fleet_usage_pct: float = 0.0
    empty_ratio_pct: float = 0.0
    invehicle_pkt_km: float = 0.0
    direct_pkt_km: float = 0.0
    total_vkt_km: float = 0.0
    pax_ratio_pct: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    avg_driven_km: float = 0.0
    max_driven_km: float = 0.0
    total_plugged_min: float = 0.0
    total_queue_min: float = 0.0
    extra_batteries: int = 0
    hourly_inservice_pct: tuple = tuple([0.0] * 24)
    hourly_plugged_min: tuple = tuple([0.0] * 24)
    station_charged_counts: dict[int, int] = field(default_factory=dict)
    n_agent_trips: int = 0
    n_saev_requests: int = 0
    n_served: int = 0
    empty_log: bool = False

    def scalar_fields(self) -> dict[str, float]:
        d = {
            "modal_share_pct": self.modal_share_pct,
            "avg_wait_min": self.avg_wait_min,
            "avg_invehicle_min": self.avg_invehicle_min,
            "avg_detour_min": self.avg_detour_min,
            "fleet_usage_pct": self.fleet_usage_pct,
            "empty_ratio_pct": self.empty_ratio_pct,
            "invehicle_pkt_km": self.invehicle_pkt_km,
            "direct_pkt_km": self.direct_pkt_km,
            "total_vkt_km": self.total_vkt_km,
            "pax1_ratio_pct": self.pax_ratio_pct[0],
            "pax2_ratio_pct": self.pax_ratio_pct[1],
            "pax3_ratio_pct": self.pax_ratio_pct[2],
            "pax4_ratio_pct": self.pax_ratio_pct[3],
            "avg_driven_km": self.avg_driven_km,
            "max_driven_km": self.max_driven_km,
            "total_plugged_min": self.total_plugged_min,
            "total_queue_min": self.total_queue_min,
            "extra_batteries": self.extra_batteries,
            "n_agent_trips": self.n_agent_trips,
            "n_saev_requests": self.n_saev_requests,
            "n_served": self.n_served,
        }
        return d

    def to_text(self) -> str:
        rows = [
            ("SAEV modal share (%)", f"{self.modal_share_pct:.1f}"),
            ("Average waiting time (min)", f"{self.avg_wait_min:.1f}"),
            ("Average in-vehicle time (min)", f"{self.avg_invehicle_min:.1f}"),
            ("Average detour time (min)", f"{self.avg_detour_min:.1f}"),
            ("Fleet usage ratio (%)", f"{self.fleet_usage_pct:.1f}"),
            ("Empty distance ratio (%)", f"{self.empty_ratio_pct:.1f}"),
            ("In-vehicle PKT (km)", f"{self.invehicle_pkt_km:.0f}"),
            ("Direct-distance PKT (km)", f"{self.direct_pkt_km:.0f}"),
            ("Total VKT (km)", f"{self.total_vkt_km:.0f}"),
            ("1 PAX ratio (%)", f"{self.pax_ratio_pct[0]:.0f}"),
            ("2 PAX ratio (%)", f"{self.pax_ratio_pct[1]:.0f}"),
            ("3 PAX ratio (%)", f"{self.pax_ratio_pct[2]:.0f}"),
            ("4 PAX ratio (%)", f"{self.pax_ratio_pct[3]:.0f}"),
            ("Average driven distance (km)", f"{self.avg_driven_km:.0f}"),
            ("Max. driven distance (km)", f"{self.max_driven_km:.0f}"),
            ("Total plugged time (min)", f"{self.total_plugged_min:.0f}"),
            ("Total queue time (min)", f"{self.total_queue_min:.0f}"),
            ("Extra battery (unit)", f"{self.extra_batteries}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>12}" for k, v in rows)


def _overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def _hour_pieces(t0: float, dur: float) -> list[tuple[int, float]]:
    """Split [t0, t0+dur) over the window's hour buckets; pieces sum to the
    clipped duration exactly (the last piece takes the remainder)."""
    end = t0 + dur
    lo, hi = max(t0, 0.0), min(end, WINDOW_MIN)
    if hi <= lo:
        return []
    clipped = hi - lo
    pieces = []
    h = int(lo // 60.0)
    acc = 0.0
    while True:
        nxt = (h + 1) * 60.0
        if nxt >= hi or h >= 23:
            pieces.append((h, clipped - acc))
            break
        pieces.append((h, nxt - max(lo, h * 60.0)))
        acc += pieces[-1][1]
        h += 1
    return pieces


def _queue_segments(v) -> list[tuple[float, float]]:
    segs = [(v.t_arrive_min, v.t_start_min)]
    elapsed = v.t_done_min - v.t_start_min
    if v.kind == "swap" and elapsed > v.busy_min + 1e-9:
        # two-phase swap: the wait between detach end and install start
        op = v.busy_min / 2.0
        segs.append((v.t_start_min + op, v.t_done_min - op))
    return segs


def hourly_profiles(day_log: DayLog) -> tuple[list[float], list[float]]:
    """24-bucket in-service rate (% of fleet) and plugged minutes."""
    inservice = [0.0] * 24
    for leg in day_log.legs:
        if leg.mode in ("pickup_drive", "occupied_drive"):
            for h in range(24):
                inservice[h] += _overlap(leg.t0_min, leg.t1_min, h * 60.0, (h + 1) * 60.0)
    denom = 60.0 * max(1, day_log.fleet_size)
    inservice = [100.0 * m / denom for m in inservice]
    plugged = [0.0] * 24
    for v in day_log.visits:
        if v.kind != "charge" or v.t_start_min < 0:
            continue
        for h, piece in _hour_pieces(v.t_start_min, v.busy_min):
            plugged[h] += piece
    return inservice, plugged


def station_occupancy(day_log: DayLog) -> dict[int, int]:
    """Completed charge or swap visits per station."""
    counts: dict[int, int] = {s: 0 for s in range(day_log.n_stations)}
    for v in day_log.visits:
        if v.t_done_min >= 0:
            counts[v.station] = counts.get(v.station, 0) + 1
    return counts


def compute(day_log: DayLog, scenario=None) -> MetricsReport:
    served = [r for r in day_log.requests if r.served]
    report = MetricsReport(
        n_agent_trips=day_log.n_agent_trips,
        n_saev_requests=day_log.n_saev_requests,
        n_served=len(served),
        station_charged_counts=station_occupancy(day_log),
    )
    if not served and not day_log.legs:
        report.empty_log = True
        return report

    if served:
        report.modal_share_pct = 100.0 * len(served) / max(1, day_log.n_agent_trips)
        report.avg_wait_min = float(np.mean([r.wait_min for r in served]))
        report.avg_invehicle_min = float(np.mean([r.invehicle_min for r in served]))
        report.avg_detour_min = float(np.mean([r.detour_min for r in served]))
        report.direct_pkt_km = float(sum(r.direct_km for r in served))

    mode_km = {m: 0.0 for m in EMPTY_MODES}
    loaded_km = 0.0
    pax_km = [0.0] * 5
    pkt = 0.0
    inuse_min = 0.0
    for leg in day_log.legs:
        if leg.mode == "occupied_drive":
            loaded_km += leg.km
            pax_km[min(leg.pax, 4)] += leg.km
            pkt += leg.km * leg.pax
        else:
            mode_km[leg.mode] += leg.km
        if leg.mode in ("pickup_drive", "occupied_drive"):
            inuse_min += _overlap(leg.t0_min, leg.t1_min, 0.0, WINDOW_MIN)
    empty_km = mode_km["pickup_drive"] + mode_km["goto_charge"] + mode_km["returning_depot"]
    total_km = empty_km + loaded_km
    report.invehicle_pkt_km = pkt
    report.total_vkt_km = total_km
    if total_km > 0:
        report.empty_ratio_pct = 100.0 * empty_km / total_km
    if loaded_km > 0:
        report.pax_ratio_pct = tuple(100.0 * pax_km[k] / loaded_km for k in (1, 2, 3, 4))
    report.fleet_usage_pct = 100.0 * inuse_min / (WINDOW_MIN * max(1, day_log.fleet_size))

    driven = [v.odometer_km for v in day_log.vehicles]
    if driven:
        report.avg_driven_km = float(np.mean(driven))
        report.max_driven_km = float(max(driven))

    inservice, plugged = hourly_profiles(day_log)
    report.hourly_inservice_pct = tuple(inservice)
    report.hourly_plugged_min = tuple(plugged)
    report.total_plugged_min = float(sum(plugged))
    queue = 0.0
    for v in day_log.visits:
        if v.t_start_min < 0:
            continue
        for s0, s1 in _queue_segments(v):
            queue += _overlap(s0, s1, 0.0, WINDOW_MIN)
    report.total_queue_min = queue
    report.extra_batteries = required_extra_batteries(day_log)
    return report


def compare(named_reports: list[tuple[str, MetricsReport]], baseline: str) -> list[dict]:
    """Relative-change rows against a named baseline report."""
    base = dict(named_reports)[baseline].scalar_fields()
    rows = []
    for name, rep in named_reports:
        row: dict = {"scenario": name}
        for key, val in rep.scalar_fields().items():
            row[key] = val
            b = base[key]
            row[key + "_change_pct"] = 100.0 * (val - b) / b if b else 0.0
        rows.append(row)
    return rows
