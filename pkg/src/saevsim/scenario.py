"""Scenario configuration, validation and the place/run/sweep/compare flows.

A scenario is one YAML file (strict keys, `schema_version` checked). The
master seed feeds three independent streams (population, network, choices)
so changing one axis never reshuffles the others. The same config plus seed
always produces a byte-identical output bundle.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import metrics as metrics_mod
from .demand import ChoiceModel, build_requests, generate_agents
from .energy import ConsumptionModel
from .engine import IterationResult, StationSite, run_iterations
from .hexgrid import (
    DemandField,
    Rect,
    aggregate_demand,
    locate,
    tessellate,
    write_field_csv,
)
from .network import Network, build_synthetic, default_hour_multiplier, load_network
from .placement import McLpSpec, PMedianSpec, solve_mclp, solve_pmedian

SCHEMA_VERSION = 1
POPULATION_STREAM = 1
NETWORK_STREAM = 2

NORMAL_KW = 22.0
RAPID_KW = 43.0
RAPID_ABOVE_KW = 30.0  # outlets above this power charge to 80% and release

STRATEGIES = ("mclp", "pmedian", "pmedian_constrained", "roster", "none")
STATION_KINDS = ("normal", "rapid", "swap")


class ConfigError(ValueError):
    """Scenario config failed validation; message lists field paths."""


@dataclass
class RegionConfig:
    width_km: float = 15.0
    height_km: float = 15.0


@dataclass
class NetworkConfig:
    n_nodes: int = 600
    nodes_csv: str | None = None
    edges_csv: str | None = None
    peak_multiplier: float = 0.7


@dataclass
class ChoiceConfig:
    beta_cost: float = -0.25
    beta_wait: float = -0.10
    beta_ivt: float = -0.05
    asc_saev: float = 0.0
    fare_eur_km: float = 0.4
    other_cost_eur_km: float = 0.3
    other_time_factor: float = 1.3


@dataclass
class PopulationConfig:
    n_agents: int = 8000
    choice: ChoiceConfig = field(default_factory=ChoiceConfig)


@dataclass
class FleetConfig:
    size: int = 200
    seats: int = 4
    battery_kwh: float = 41.0
    consumption_kwh_km: float = 1.0
    soc_trigger: float = 0.20
    soc_reserve_kwh: float = 0.0
    unlimited_range: bool = False


@dataclass
class StationsConfig:
    strategy: str = "pmedian"
    p: int = 6
    kind: str = "normal"
    outlets: int = 8
    power_kw: float | None = None  # derived from kind when omitted
    swap_bays: int = 20
    swap_minutes: float = 5.0
    swap_seed_stock: int = 8
    swap_charge_power_kw: float = 22.0
    forbidden_cells_csv: str | None = None
    roster_csv: str | None = None
    mclp_w0: float = 1.0
    mclp_w1: float = 0.5
    mclp_separation: bool = False


@dataclass
class DispatchConfig:
    detour_abs_min: float = 5.0
    detour_fraction: float = 0.4
    rideshare_radius_min: float = 5.0


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 42
    hex_diameter_km: float = 1.0
    days: int = 2
    depots: object = "quadrants"  # or list of [x_km, y_km]
    region: RegionConfig = field(default_factory=RegionConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    stations: StationsConfig = field(default_factory=StationsConfig)
    dispatch: DispatchConfig = field(default_factory=DispatchConfig)


_SUBCONFIGS = {
    "region": RegionConfig,
    "network": NetworkConfig,
    "population": PopulationConfig,
    "choice": ChoiceConfig,
    "fleet": FleetConfig,
    "stations": StationsConfig,
    "dispatch": DispatchConfig,
}


def _from_dict(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, val in data.items():
        if name in _SUBCONFIGS:
            kwargs[name] = _from_dict(_SUBCONFIGS[name], val, f"{path}{name}.")
        else:
            kwargs[name] = val
    return cls(**kwargs)


def load_config(path) -> ScenarioConfig:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    cfg = _from_dict(ScenarioConfig, data)
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version: expected {SCHEMA_VERSION}, got {cfg.schema_version}"
        )
    errors, _ = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def validate(cfg: ScenarioConfig) -> tuple[list[str], list[str]]:
    """Normalize in place; returns (errors, warnings) with field paths."""
    errors: list[str] = []
    warnings: list[str] = []

    def positive(value, path):
        if value is None or value <= 0:
            errors.append(f"{path}: must be positive, got {value}")

    positive(cfg.region.width_km, "region.width_km")
    positive(cfg.region.height_km, "region.height_km")
    positive(cfg.hex_diameter_km, "hex_diameter_km")
    positive(cfg.population.n_agents, "population.n_agents")
    positive(cfg.fleet.size, "fleet.size")
    positive(cfg.fleet.seats, "fleet.seats")
    positive(cfg.fleet.battery_kwh, "fleet.battery_kwh")
    positive(cfg.fleet.consumption_kwh_km, "fleet.consumption_kwh_km")
    positive(cfg.days, "days")
    if not 0.0 < cfg.fleet.soc_trigger < 1.0:
        errors.append(f"fleet.soc_trigger: must lie in (0, 1), got {cfg.fleet.soc_trigger}")
    if cfg.network.nodes_csv is None and cfg.network.n_nodes < 2:
        errors.append(f"network.n_nodes: need at least 2, got {cfg.network.n_nodes}")
    if not 0.0 < cfg.network.peak_multiplier <= 1.0:
        errors.append("network.peak_multiplier: must lie in (0, 1]")
    ch = cfg.population.choice
    for name in ("beta_cost", "beta_wait", "beta_ivt"):
        if getattr(ch, name) > 0:
            errors.append(f"population.choice.{name}: must be <= 0")
    st = cfg.stations
    if st.strategy not in STRATEGIES:
        errors.append(f"stations.strategy: unknown {st.strategy!r}, pick from {STRATEGIES}")
    if st.kind not in STATION_KINDS:
        errors.append(f"stations.kind: unknown {st.kind!r}, pick from {STATION_KINDS}")
    if st.strategy == "pmedian_constrained" and not st.forbidden_cells_csv:
        errors.append("stations.forbidden_cells_csv: required for pmedian_constrained")
    if st.strategy == "roster" and not st.roster_csv:
        errors.append("stations.roster_csv: required for the roster strategy")
    if st.strategy == "none" and not cfg.fleet.unlimited_range:
        errors.append("stations.strategy: 'none' needs fleet.unlimited_range")
    positive(st.p, "stations.p")
    positive(st.outlets, "stations.outlets")
    positive(st.swap_bays, "stations.swap_bays")
    positive(st.swap_minutes, "stations.swap_minutes")
    if st.p > 12:
        warnings.append(f"stations.p: {st.p} exceeds the default cap of 12")
    if st.power_kw is None:
        st.power_kw = RAPID_KW if st.kind == "rapid" else NORMAL_KW
    if isinstance(cfg.depots, str) and cfg.depots != "quadrants":
        errors.append(f"depots: expected 'quadrants' or a coordinate list, got {cfg.depots!r}")
    if not errors:
        ratio = evse_ratio(cfg)
        if ratio is not None:
            warnings.append(f"vehicle/EVSE outlet ratio: {ratio:.2f}")
    return errors, warnings


def evse_ratio(cfg: ScenarioConfig) -> float | None:
    if cfg.stations.strategy == "none" or cfg.stations.kind == "swap":
        return None
    return cfg.fleet.size / (cfg.stations.p * cfg.stations.outlets)


def station_power(st: StationsConfig) -> float:
    if st.power_kw is not None:
        return st.power_kw
    return RAPID_KW if st.kind == "rapid" else NORMAL_KW


# ---------------------------------------------------------------------------
# runtime assembly
# ---------------------------------------------------------------------------


@dataclass
class Runtime:
    """Everything the engine needs, built once per scenario."""

    cfg: ScenarioConfig
    master_seed: int
    region: Rect
    grid: object
    net: Network
    agents: list
    trips: list
    tastes: np.ndarray
    depots: list[int]
    roster: list[StationSite]
    nearest_station_km: np.ndarray
    consumption: ConsumptionModel
    choice: ChoiceModel
    fleet_size: int
    seats: int
    battery_kwh: float
    soc_trigger: float
    soc_reserve_kwh: float
    unlimited_range: bool
    detour_abs_min: float
    detour_fraction: float
    rideshare_radius_min: float
    swap_minutes: float
    swap_charge_power_kw: float
    swap_seed_stock: int
    rapid_above_kw: float = RAPID_ABOVE_KW


def depot_nodes(cfg: ScenarioConfig, region: Rect, net: Network) -> list[int]:
    if isinstance(cfg.depots, str):
        pts = [
            (region.x_min + fx * region.width, region.y_min + fy * region.height)
            for fx, fy in ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))
        ]
    else:
        pts = [(float(x), float(y)) for x, y in cfg.depots]
    return [net.nearest_node(x, y) for x, y in pts]


def build_runtime(cfg: ScenarioConfig, roster_rows=None) -> Runtime:
    errors, _ = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    region = Rect(0.0, 0.0, cfg.region.width_km, cfg.region.height_km)
    grid = tessellate(region, cfg.hex_diameter_km)
    mult = default_hour_multiplier(cfg.network.peak_multiplier)
    if cfg.network.nodes_csv:
        net = load_network(cfg.network.nodes_csv, cfg.network.edges_csv, mult)
    else:
        net = build_synthetic(
            np.random.SeedSequence((cfg.seed, NETWORK_STREAM)), cfg.network.n_nodes, region
        )
        net.hour_multiplier[:] = mult
    agents = generate_agents(
        np.random.SeedSequence((cfg.seed, POPULATION_STREAM)),
        cfg.population.n_agents,
        grid,
        net,
    )
    trips = build_requests(agents, net, grid)
    tastes = np.array([a.taste for a in agents])
    depots = depot_nodes(cfg, region, net)
    if roster_rows is None:
        roster_rows = []
        if cfg.stations.strategy == "roster":
            roster_rows = read_roster(cfg.stations.roster_csv)
    roster = [
        StationSite(
            i,
            row["kind"],
            row["cell_id"],
            net.nearest_node(*grid.centroid(row["cell_id"])),
            row["outlets_or_bays"],
            row["power_kw"],
        )
        for i, row in enumerate(roster_rows)
    ]
    if roster:
        nearest = np.full(net.n_nodes, np.inf)
        for site in roster:
            for node in range(net.n_nodes):
                nearest[node] = min(nearest[node], net.distance_km(node, site.node))
    else:
        nearest = np.zeros(net.n_nodes)
    ch = cfg.population.choice
    choice = ChoiceModel(
        beta_cost=ch.beta_cost,
        beta_wait=ch.beta_wait,
        beta_ivt=ch.beta_ivt,
        asc_saev=ch.asc_saev,
        fare_eur_km=ch.fare_eur_km,
        other_cost_eur_km=ch.other_cost_eur_km,
        other_time_factor=ch.other_time_factor,
    )
    if not cfg.fleet.unlimited_range and not roster:
        raise ConfigError("stations: a range-limited fleet needs a station roster")
    # unlimited range rides the same accounting with a battery that never binds
    battery_kwh = 1e9 if cfg.fleet.unlimited_range else cfg.fleet.battery_kwh
    return Runtime(
        cfg=cfg,
        master_seed=cfg.seed,
        region=region,
        grid=grid,
        net=net,
        agents=agents,
        trips=trips,
        tastes=tastes,
        depots=depots,
        roster=roster,
        nearest_station_km=nearest,
        consumption=ConsumptionModel(cfg.fleet.consumption_kwh_km),
        choice=choice,
        fleet_size=cfg.fleet.size,
        seats=cfg.fleet.seats,
        battery_kwh=battery_kwh,
        soc_trigger=cfg.fleet.soc_trigger,
        soc_reserve_kwh=cfg.fleet.soc_reserve_kwh,
        unlimited_range=cfg.fleet.unlimited_range,
        detour_abs_min=cfg.dispatch.detour_abs_min,
        detour_fraction=cfg.dispatch.detour_fraction,
        rideshare_radius_min=cfg.dispatch.rideshare_radius_min,
        swap_minutes=cfg.stations.swap_minutes,
        swap_charge_power_kw=cfg.stations.swap_charge_power_kw,
        swap_seed_stock=cfg.stations.swap_seed_stock,
    )


# ---------------------------------------------------------------------------
# roster and forbidden-cell files
# ---------------------------------------------------------------------------


def write_roster(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["station_id", "kind", "cell_id", "outlets_or_bays", "power_kw"])
        for i, row in enumerate(rows):
            w.writerow([i, row["kind"], row["cell_id"], row["outlets_or_bays"], repr(row["power_kw"])])


def read_roster(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(
                {
                    "kind": row["kind"],
                    "cell_id": int(row["cell_id"]),
                    "outlets_or_bays": int(row["outlets_or_bays"]),
                    "power_kw": float(row["power_kw"]),
                }
            )
    return rows


def read_forbidden(path) -> frozenset[int]:
    cells = set()
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            cells.add(int(row["cell_id"]))
    return frozenset(cells)


# ---------------------------------------------------------------------------
# the four CLI flows
# ---------------------------------------------------------------------------


def base_case_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """The unlimited-range variant used to harvest pick-up/drop-off points."""
    return replace(
        cfg,
        fleet=replace(cfg.fleet, unlimited_range=True),
        stations=replace(cfg.stations, strategy="none"),
    )


def demand_field_from_log(rt: Runtime, day_log) -> DemandField:
    pts = []
    for rec in day_log.requests:
        if rec.served:
            for node in (rec.origin, rec.destination):
                x, y = rt.net.node_xy[node]
                pts.append((float(x), float(y)))
    return aggregate_demand(rt.grid, pts, drop_outside=True)


def place_stations(cfg: ScenarioConfig, out_dir) -> list[dict]:
    """Run the base case, aggregate demand, solve the chosen placement model.

    Writes the demand field, the station roster and a solution summary;
    returns the roster rows.
    """
    os.makedirs(out_dir, exist_ok=True)
    base_rt = build_runtime(base_case_config(cfg))
    result = run_iterations(base_rt, 1)
    fieldd = demand_field_from_log(base_rt, result.final_log)
    write_field_csv(fieldd, os.path.join(out_dir, "demand_field.csv"))

    st = cfg.stations
    forbidden = set()
    if st.forbidden_cells_csv:
        forbidden |= read_forbidden(st.forbidden_cells_csv)
    for node in base_rt.depots:  # depot cells never host stations
        x, y = base_rt.net.node_xy[node]
        forbidden.add(locate(base_rt.grid, float(x), float(y)))
    forbidden = frozenset(forbidden)

    if st.strategy == "mclp":
        spec = McLpSpec.from_field(
            fieldd,
            st.p,
            w0=st.mclp_w0,
            w1=st.mclp_w1,
            enforce_separation=st.mclp_separation,
            forbidden=forbidden,
        )
        sol = solve_mclp(spec)
    elif st.strategy in ("pmedian", "pmedian_constrained"):
        spec = PMedianSpec.from_field(fieldd, st.p, forbidden=forbidden)
        sol = solve_pmedian(spec)
    else:
        raise ConfigError(f"stations.strategy: {st.strategy!r} does not place stations")
    if sol.status != "optimal":
        raise ConfigError(f"placement infeasible for P={st.p} with {len(forbidden)} forbidden cells")

    kind = "swap" if st.kind == "swap" else "charge"
    size = st.swap_bays if kind == "swap" else st.outlets
    power = st.swap_charge_power_kw if kind == "swap" else station_power(st)
    rows = [
        {"kind": kind, "cell_id": c, "outlets_or_bays": size, "power_kw": power}
        for c in sol.selected
    ]
    write_roster(os.path.join(out_dir, "roster.csv"), rows)
    with open(os.path.join(out_dir, "solution.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["station_id", "cell_id", "cx_km", "cy_km"])
        for i, c in enumerate(sol.selected):
            cx, cy = base_rt.grid.centroid(c)
            w.writerow([i, c, repr(cx), repr(cy)])
    with open(os.path.join(out_dir, "solution_summary.txt"), "w") as f:
        f.write(
            f"strategy {st.strategy}\nP {st.p}\nobjective {sol.objective!r}\n"
            f"selected {','.join(str(c) for c in sol.selected)}\n"
            f"forbidden {','.join(str(c) for c in sorted(forbidden))}\n"
        )
    return rows


def run_scenario(cfg: ScenarioConfig, roster_rows, out_dir=None) -> IterationResult:
    rt = build_runtime(cfg, roster_rows)
    result = run_iterations(rt, cfg.days)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: IterationResult, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    result.final_log.to_csv_bundle(out_dir)
    rep = result.report
    fieldsd = rep.scalar_fields()
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(fieldsd))
        w.writerow([repr(v) for v in fieldsd.values()])
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(rep.to_text() + "\n")
    with open(os.path.join(out_dir, "hourly.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["hour", "inservice_pct", "plugged_min"])
        for h in range(24):
            w.writerow([h, repr(rep.hourly_inservice_pct[h]), repr(rep.hourly_plugged_min[h])])
    with open(os.path.join(out_dir, "stations_summary.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["station", "charged_vehicles"])
        for s in sorted(rep.station_charged_counts):
            w.writerow([s, rep.station_charged_counts[s]])
    with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["day", "n_saev", "n_served", "share_pct", "mean_wait_min"])
        for tr in result.trace:
            w.writerow([tr.day, tr.n_saev, tr.n_served, repr(tr.share_pct), repr(tr.mean_wait_min)])


# -- sweep --------------------------------------------------------------------

SWEEP_AXES = ("outlets", "power_kw", "battery_kwh", "fleet_size", "swap_seed_stock")


def parse_grid(spec: str) -> tuple[str, list[float]]:
    """Grid specs like `outlets=40:120:10` (range) or `battery_kwh=41,50`."""
    axis, _, rhs = spec.partition("=")
    axis = axis.strip()
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis {axis!r} not in {SWEEP_AXES}")
    rhs = rhs.strip()
    if ":" in rhs:
        parts = [float(x) for x in rhs.split(":")]
        if len(parts) != 3:
            raise ConfigError(f"range spec needs start:stop:step, got {rhs!r}")
        start, stop, step = parts
        values = list(np.arange(start, stop + step / 2, step))
    else:
        values = [float(x) for x in rhs.split(",") if x.strip()]
    if not values:
        raise ConfigError(f"empty sweep grid {spec!r}")
    return axis, values


def apply_axis(cfg: ScenarioConfig, roster_rows, axis: str, value: float):
    cfg2 = replace(cfg)
    rows2 = [dict(r) for r in roster_rows]
    if axis == "outlets":
        cfg2 = replace(cfg2, stations=replace(cfg.stations, outlets=int(value)))
        for r in rows2:
            if r["kind"] == "charge":
                r["outlets_or_bays"] = int(value)
    elif axis == "power_kw":
        cfg2 = replace(cfg2, stations=replace(cfg.stations, power_kw=float(value)))
        for r in rows2:
            if r["kind"] == "charge":
                r["power_kw"] = float(value)
    elif axis == "battery_kwh":
        cfg2 = replace(cfg2, fleet=replace(cfg.fleet, battery_kwh=float(value)))
    elif axis == "fleet_size":
        cfg2 = replace(cfg2, fleet=replace(cfg.fleet, size=int(value)))
    elif axis == "swap_seed_stock":
        cfg2 = replace(cfg2, stations=replace(cfg.stations, swap_seed_stock=int(value)))
    return cfg2, rows2


def _sweep_point(args):
    cfg, rows, axis, value = args
    cfg2, rows2 = apply_axis(cfg, rows, axis, value)
    result = run_scenario(cfg2, rows2)
    rep = result.report
    return {
        "value": value,
        "invehicle_pkt_km": rep.invehicle_pkt_km,
        "total_queue_min": rep.total_queue_min,
        "total_plugged_min": rep.total_plugged_min,
        "modal_share_pct": rep.modal_share_pct,
        "avg_wait_min": rep.avg_wait_min,
    }


def sweep(cfg: ScenarioConfig, roster_rows, grid_spec: str, out_path, jobs: int = 1) -> list[dict]:
    axis, values = parse_grid(grid_spec)
    args = [(cfg, roster_rows, axis, v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, args))
    else:
        rows = [_sweep_point(a) for a in args]
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([axis] + [k for k in rows[0] if k != "value"])
        for row in rows:
            w.writerow([repr(row["value"])] + [repr(row[k]) for k in row if k != "value"])
    return rows


# -- compare --------------------------------------------------------------------


def read_report_csv(path) -> tuple[str, dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    name = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
    return name, {k: float(v) for k, v in rows[0].items()}


def compare_reports(paths: list[str], baseline_path: str, out_path) -> list[dict]:
    from .metrics import MetricsReport

    named = []
    base_name = None
    for p in [baseline_path] + [p for p in paths if p != baseline_path]:
        name, vals = read_report_csv(p)
        if base_name is None:
            base_name = name
        rep = MetricsReport()
        for k, v in vals.items():
            if k.startswith("pax"):
                continue
            if hasattr(rep, k):
                setattr(rep, k, v)
        rep.pax_ratio_pct = tuple(
            vals.get(f"pax{i}_ratio_pct", 0.0) for i in (1, 2, 3, 4)
        )
        named.append((name, rep))
    rows = metrics_mod.compare(named, base_name)
    keys = list(rows[0].keys())
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(keys)
        for row in rows:
            w.writerow([row[k] if isinstance(row[k], str) else repr(row[k]) for k in keys])
    return rows
