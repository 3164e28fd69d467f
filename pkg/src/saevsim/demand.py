"""Synthetic travel demand and mode choice.

Agents get home/work/other anchors drawn from a three-hub spatial mixture and
a daily chain of 2-5 trips whose departure times cluster in the 8-10 and
16-20 peaks. Each trip is offered to the SAEV service through a binary logit
against a composite "other" mode; the SAEV utility includes the expected
waiting time at the trip's origin cell and hour, learned across simulated
days by successive averages. Everything is driven by seeded generators, so a
(seed, scenario) pair fixes the full request stream and every mode choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .hexgrid import HexGrid, locate

HUB_FRACTIONS = ((0.30, 0.30), (0.72, 0.62), (0.45, 0.80))
HUB_WEIGHTS = {"home": (0.45, 0.35, 0.20), "work": (0.15, 0.55, 0.30), "other": (0.25, 0.35, 0.40)}
TRIP_COUNT_P = ((2, 0.35), (3, 0.35), (4, 0.20), (5, 0.10))
MIN_GAP_MIN = 30.0


@dataclass(frozen=True)
class Agent:
    id: int
    home: int
    work: int
    other: int
    # ordered (activity, end-of-activity minute); each end time starts a trip
    chain: tuple[tuple[str, float], ...]
    taste: float


@dataclass(frozen=True)
class TripRequest:
    agent_id: int
    request_min: float
    origin: int
    destination: int
    direct_km: float
    direct_min: float
    origin_cell: int


@dataclass
class ChoiceModel:
    """Binary logit between the SAEV service and a composite other mode."""

    beta_cost: float = -0.25  # 1/EUR
    beta_wait: float = -0.10  # 1/min
    beta_ivt: float = -0.05  # 1/min
    asc_saev: float = 0.0
    fare_eur_km: float = 0.4
    other_cost_eur_km: float = 0.3
    other_time_factor: float = 1.3
    asc_other: float = 0.0
    expected_wait: np.ndarray | None = None  # (n_cells, 24) minutes

    def __post_init__(self):
        if self.beta_cost > 0 or self.beta_wait > 0 or self.beta_ivt > 0:
            raise ValueError("utility coefficients must be <= 0")
        if self.expected_wait is not None and (self.expected_wait < 0).any():
            raise ValueError("expected waits must be >= 0")


def saev_utility(request: TripRequest, model: ChoiceModel, taste: float, wait_min: float) -> float:
    fare = model.fare_eur_km * request.direct_km
    return (
        model.asc_saev
        + model.beta_cost * fare
        + model.beta_wait * taste * wait_min
        + model.beta_ivt * request.direct_min
    )


def other_utility(request: TripRequest, model: ChoiceModel) -> float:
    return (
        model.asc_other
        + model.beta_cost * model.other_cost_eur_km * request.direct_km
        + model.beta_ivt * model.other_time_factor * request.direct_min
    )


def saev_probability(request: TripRequest, model: ChoiceModel, taste: float, wait_min: float) -> float:
    du = other_utility(request, model) - saev_utility(request, model, taste, wait_min)
    return float(1.0 / (1.0 + np.exp(np.clip(du, -500.0, 500.0))))


def choose_mode(request: TripRequest, model: ChoiceModel, taste: float, rng) -> bool:
    """Sample the SAEV-vs-other choice for one request (True = SAEV)."""
    wait = expected_wait_for(model, request)
    return bool(rng.random() < saev_probability(request, model, taste, wait))


def expected_wait_for(model: ChoiceModel, request: TripRequest) -> float:
    if model.expected_wait is None:
        return 0.0
    hour = int(request.request_min // 60) % 24
    return float(model.expected_wait[request.origin_cell, hour])


def choose_modes(requests, model: ChoiceModel, tastes: np.ndarray, rng) -> np.ndarray:
    """Vectorized daily draw over all trips; returns a boolean SAEV mask."""
    if not requests:
        return np.zeros(0, dtype=bool)
    km = np.array([r.direct_km for r in requests])
    ivt = np.array([r.direct_min for r in requests])
    waits = np.array([expected_wait_for(model, r) for r in requests])
    taste = np.array([tastes[r.agent_id] for r in requests])
    u_saev = (
        model.asc_saev
        + model.beta_cost * model.fare_eur_km * km
        + model.beta_wait * taste * waits
        + model.beta_ivt * ivt
    )
    u_other = (
        model.asc_other
        + model.beta_cost * model.other_cost_eur_km * km
        + model.beta_ivt * model.other_time_factor * ivt
    )
    p = 1.0 / (1.0 + np.exp(np.clip(u_other - u_saev, -500.0, 500.0)))
    return rng.random(len(requests)) < p


# ---------------------------------------------------------------------------
# population synthesis
# ---------------------------------------------------------------------------


def _draw_anchor(rng, tree, hubs, sigma, weights, region, exclude) -> int:
    for _ in range(64):
        hub = hubs[rng.choice(len(hubs), p=weights)]
        x = float(np.clip(rng.normal(hub[0], sigma), region.x_min, region.x_max))
        y = float(np.clip(rng.normal(hub[1], sigma), region.y_min, region.y_max))
        node = int(tree.query((x, y))[1])
        if node not in exclude:
            return node
    # dense fallback: nearest unused node
    _, order = tree.query((x, y), k=min(16, tree.n))
    for node in np.atleast_1d(order):
        if int(node) not in exclude:
            return int(node)
    raise RuntimeError("could not draw a distinct anchor node")


def _draw_chain_times(rng, n_trips: int) -> list[float]:
    times = [float(np.clip(rng.normal(8.6, 0.8), 5.0, 11.5)) * 60.0]
    for _ in range(n_trips - 2):
        times.append(float(rng.uniform(10.5, 15.5)) * 60.0)
    if n_trips >= 2:
        times.append(float(np.clip(rng.normal(17.8, 1.2), 13.0, 23.0)) * 60.0)
    times.sort()
    for i in range(1, len(times)):
        if times[i] - times[i - 1] < MIN_GAP_MIN:
            times[i] = times[i - 1] + MIN_GAP_MIN
    return [min(t, 1438.0 + i * 1e-3) for i, t in enumerate(times)]


def generate_agents(seed: int, n_agents: int, grid: HexGrid, network) -> list[Agent]:
    """Deterministic synthetic population on the network's nodes."""
    if n_agents < 1:
        raise ValueError("need at least one agent")
    rng = np.random.default_rng(seed)
    region = grid.region
    hubs = [
        (region.x_min + fx * region.width, region.y_min + fy * region.height)
        for fx, fy in HUB_FRACTIONS
    ]
    sigma = 0.08 * min(region.width, region.height)
    tree = cKDTree(network.node_xy)
    counts = np.array([k for k, _ in TRIP_COUNT_P])
    probs = np.array([p for _, p in TRIP_COUNT_P])
    agents = []
    for aid in range(n_agents):
        home = _draw_anchor(rng, tree, hubs, sigma, HUB_WEIGHTS["home"], region, set())
        work = _draw_anchor(rng, tree, hubs, sigma, HUB_WEIGHTS["work"], region, {home})
        other = _draw_anchor(rng, tree, hubs, sigma, HUB_WEIGHTS["other"], region, {home, work})
        n_trips = int(rng.choice(counts, p=probs))
        times = _draw_chain_times(rng, n_trips)
        acts = _activity_sequence(n_trips)
        chain = tuple((acts[i], times[i]) for i in range(n_trips))
        taste = float(rng.lognormal(0.0, 0.3))
        agents.append(Agent(aid, home, work, other, chain, taste))
    return agents


def _activity_sequence(n_trips: int) -> list[str]:
    # activity being LEFT at each departure: home, then alternating work/other
    acts = ["home"]
    for i in range(n_trips - 1):
        acts.append("work" if i % 2 == 0 else "other")
    return acts


def _anchor_node(agent: Agent, activity: str) -> int:
    return {"home": agent.home, "work": agent.work, "other": agent.other}[activity]


def build_requests(agents, network, grid: HexGrid) -> list[TripRequest]:
    """Expand agent chains into the fixed daily trip stream, sorted by time."""
    trips = []
    for agent in agents:
        acts = [a for a, _ in agent.chain]
        dests = acts[1:] + ["home"]
        for i, (act, depart) in enumerate(agent.chain):
            o = _anchor_node(agent, act)
            d = _anchor_node(agent, dests[i])
            hour = int(depart // 60) % 24
            km = network.distance_km(o, d)
            mn = network.duration_min(o, d, hour)
            x, y = network.node_xy[o]
            cell = locate(grid, float(x), float(y))
            trips.append(TripRequest(agent.id, depart, o, d, km, mn, cell))
    trips.sort(key=lambda t: (t.request_min, t.agent_id))
    return trips


# ---------------------------------------------------------------------------
# day-over-day learning
# ---------------------------------------------------------------------------


def update_expectations(table: np.ndarray, day_log, day_index: int) -> np.ndarray:
    """Blend realized waits into the per-(cell, hour) table (successive averages).

    Cells/hours with no observation this day decay toward the day's global
    mean wait; with no served requests at all the table is unchanged.
    """
    table = np.array(table, dtype=float, copy=True)
    obs_sum = np.zeros_like(table)
    obs_cnt = np.zeros_like(table)
    waits = []
    for rec in day_log.requests:
        if not rec.served:
            continue
        hour = int(rec.request_min // 60) % 24
        obs_sum[rec.origin_cell, hour] += rec.wait_min
        obs_cnt[rec.origin_cell, hour] += 1
        waits.append(rec.wait_min)
    if not waits:
        return table
    weight = 1.0 / (day_index + 1.0)
    global_mean = float(np.mean(waits))
    target = np.where(obs_cnt > 0, obs_sum / np.maximum(obs_cnt, 1), global_mean)
    return table + weight * (target - table)
