"""Iterative global re-routing driven by simulated traffic conditions.

Iteration 0 is selfish routing: every query gets its free-flow shortest
path. Each later iteration freezes the simulated state, selects a fraction
of queries by the configured strategy, plans each one's best path against
that frozen snapshot (with the query's own route excluded so it cannot
block itself), then commits all re-routes as one batch. Re-routes are
applied unconditionally; the best-so-far route set is tracked separately,
so the trace exposes both the raw iteration dynamics and the monotone
envelope.
"""

from __future__ import annotations

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import MacroflowError, OptimizeAborted
from .flowstore import KIND_SHIFT, TIME_SHIFT, RouteStore
from .latency import LatencyModel
from .network import RoadNetwork
from .routing import Query, StaticPathCache, shortest_path_traffic
from .simulation import UpdateReport, reroute, reroute_batch, simulate_full

STRATEGIES = ("random", "latency", "path", "congestion")


@dataclass(slots=True)
class OptimizerConfig:
    strategy: str = "congestion"
    fraction: float = 0.10
    iterations: int = 10
    seed: int = 0
    congestion_threshold: float = 0.9  # occupancy ratio f/phi counted as congested
    horizon_ms: int | None = None
    commit_mode: str = "batch"  # "batch": plan all against one snapshot; "sequential": commit one by one
    workers: int = 1

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.commit_mode not in ("batch", "sequential"):
            raise ValueError(f"unknown commit mode {self.commit_mode!r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass(slots=True)
class IterationMetrics:
    iteration: int
    total_ms: int
    reroutes: int
    improved: int
    affected_edges: int
    wall_ms: float


@dataclass(slots=True)
class OptimizeResult:
    final_routes: dict[int, tuple[list[int], int]]  # rid -> (path, departure)
    best_routes: dict[int, tuple[list[int], int]]
    best_total_ms: int
    best_iteration: int
    final_total_ms: int
    metrics: list[IterationMetrics] = field(default_factory=list)


def initial_assignment(
    network: RoadNetwork, latency: LatencyModel, queries: list[Query]
) -> list[tuple[int, list[int], int]]:
    """Selfish assignment: one static shortest path per query.

    The latency model is accepted for interface symmetry with later
    iterations but plays no role at zero flow.
    """
    cache = StaticPathCache(network)
    paths = []
    for q in queries:
        paths.append((q.query_id, cache.path(q), q.depart_ms))
    return paths


def congested_edges(
    store: RouteStore,
    network: RoadNetwork,
    threshold: float,
    horizon_ms: int | None = None,
) -> list[tuple[tuple[int, int], float, int]]:
    """Edges whose peak occupancy f/phi within the horizon exceeds threshold.

    Returns (edge, peak ratio, earliest peak time) descending by ratio,
    ties broken by edge id ascending.
    """
    ranked = []
    for edge in store.occupied_edges():
        phi = network.edges[edge].capacity_phi
        running = 0
        peak = 0
        peak_time = 0
        for key in store.edge_state(edge).timeline.events:
            t = key >> TIME_SHIFT
            if horizon_ms is not None and t > horizon_ms:
                break
            running += 1 if (key >> KIND_SHIFT) & 1 else -1
            if running > peak:
                peak = running
                peak_time = t
        ratio = peak / phi
        if ratio > threshold:
            ranked.append((edge, ratio, peak_time))
    ranked.sort(key=lambda item: (-item[1], network.edges[item[0]].edge_id))
    return ranked


def _reroute_quota(p: float, population: int) -> int:
    return min(population, math.ceil(p * population))


def select_for_reroute(
    store: RouteStore,
    network: RoadNetwork,
    config: OptimizerConfig,
    rng: np.random.Generator,
) -> list[int]:
    """Pick ceil(fraction * |routes|) route ids to re-route, by strategy.

    random:     uniform sample without replacement.
    latency:    highest simulated / free-flow travel ratio first.
    path:       most congested edges on the route first.
    congestion: riders of the top congested edges, in congestion rank order,
                padded by route id if the quota is not filled.
    Deterministic given the seed; ties always fall back to route id.
    """
    ids = sorted(store.routes)
    if not ids:
        return []
    quota = _reroute_quota(config.fraction, len(ids))
    if config.strategy == "random":
        picked = rng.choice(len(ids), size=quota, replace=False)
        return sorted(ids[i] for i in picked)
    if config.strategy == "latency":
        edges = network.edges
        scored = []
        for rid in ids:
            route = store.routes[rid]
            free = sum(edges[route.hop_edge(h)].free_flow_ms for h in range(len(route.vertices) - 1))
            scored.append((-(route.travel_ms / free), rid))
        scored.sort()
        return sorted(rid for _, rid in scored[:quota])
    congested = congested_edges(store, network, config.congestion_threshold, config.horizon_ms)
    if config.strategy == "path":
        hot = {edge for edge, _, _ in congested}
        scored = []
        for rid in ids:
            route = store.routes[rid]
            count = sum(route.hop_edge(h) in hot for h in range(len(route.vertices) - 1))
            scored.append((-count, rid))
        scored.sort()
        return sorted(rid for _, rid in scored[:quota])
    # congestion: take riders of the hottest edges until the quota fills
    chosen: list[int] = []
    in_set: set[int] = set()
    for edge, _, _ in congested:
        for rid in store.edge_route_ids(edge):
            if rid not in in_set:
                in_set.add(rid)
                chosen.append(rid)
                if len(chosen) == quota:
                    return sorted(chosen)
    for rid in ids:  # pad deterministically when congestion coverage is short
        if rid not in in_set:
            chosen.append(rid)
            if len(chosen) == quota:
                break
    return sorted(chosen)


def _snapshot(store: RouteStore) -> dict[int, tuple[list[int], int]]:
    return {rid: (list(r.vertices), r.departure_ms) for rid, r in store.routes.items()}


def optimize(
    network: RoadNetwork,
    latency: LatencyModel,
    queries: list[Query],
    config: OptimizerConfig,
) -> tuple[OptimizeResult, RouteStore]:
    """Run the full optimization loop and return the trace and final store."""
    config.validate()
    rng = np.random.default_rng(config.seed)

    t0 = _time.perf_counter()
    paths = initial_assignment(network, latency, queries)
    store, _ = simulate_full(network, latency, paths)
    wall0 = (_time.perf_counter() - t0) * 1000.0
    metrics = [IterationMetrics(0, store.total_travel_ms, 0, 0, 0, wall0)]

    best_total = store.total_travel_ms
    best_iteration = 0
    best_routes = _snapshot(store)

    for iteration in range(1, config.iterations + 1):
        t0 = _time.perf_counter()
        try:
            selected = select_for_reroute(store, network, config, rng)
            plans, report = _plan_and_commit(store, network, latency, selected, config)
        except MacroflowError as exc:
            raise OptimizeAborted(f"iteration {iteration}: {exc}", metrics) from exc
        wall = (_time.perf_counter() - t0) * 1000.0
        improved = sum(
            1 for rid, old_travel in plans if store.routes[rid].travel_ms < old_travel
        )
        metrics.append(
            IterationMetrics(
                iteration,
                store.total_travel_ms,
                len(selected),
                improved,
                len(report.affected_edges),
                wall,
            )
        )
        if store.total_travel_ms < best_total:
            best_total = store.total_travel_ms
            best_iteration = iteration
            best_routes = _snapshot(store)

    result = OptimizeResult(
        final_routes=_snapshot(store),
        best_routes=best_routes,
        best_total_ms=best_total,
        best_iteration=best_iteration,
        final_total_ms=store.total_travel_ms,
        metrics=metrics,
    )
    return result, store


def _plan_and_commit(
    store: RouteStore,
    network: RoadNetwork,
    latency: LatencyModel,
    selected: list[int],
    config: OptimizerConfig,
) -> tuple[list[tuple[int, int]], UpdateReport]:
    """Plan new paths for the selected routes and commit them.

    Returns ((rid, pre-commit travel time) per selected route, batch report).
    """
    pre_travel = [(rid, store.routes[rid].travel_ms) for rid in selected]

    if config.commit_mode == "sequential":
        last = UpdateReport()
        merged_edges: set[tuple[int, int]] = set()
        for rid in selected:
            route = store.routes[rid]
            q = Query(rid, route.vertices[0], route.vertices[-1], route.departure_ms)
            path = shortest_path_traffic(network, store, latency, q, exclude_route_id=rid)
            last = reroute(store, network, latency, rid, path, q.depart_ms)
            merged_edges.update(last.affected_edges)
        last.affected_edges = sorted(merged_edges)
        return pre_travel, last

    def plan(rid: int) -> tuple[int, list[int], int]:
        route = store.routes[rid]
        q = Query(rid, route.vertices[0], route.vertices[-1], route.departure_ms)
        return (rid, shortest_path_traffic(network, store, latency, q, exclude_route_id=rid), q.depart_ms)

    if config.workers > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            plans = list(pool.map(plan, selected))
    else:
        plans = [plan(rid) for rid in selected]
    report = reroute_batch(store, network, latency, plans)
    return pre_travel, report


def metrics_csv(metrics: list[IterationMetrics]) -> str:
    """Deterministic per-iteration trace (wall times live in the timing file)."""
    lines = ["iter,total_ms,reroutes,improved,affected_edges"]
    for m in metrics:
        lines.append(f"{m.iteration},{m.total_ms},{m.reroutes},{m.improved},{m.affected_edges}")
    return "\n".join(lines) + "\n"


def metrics_timing_csv(metrics: list[IterationMetrics]) -> str:
    lines = ["iter,wall_ms"]
    for m in metrics:
        lines.append(f"{m.iteration},{m.wall_ms:.3f}")
    return "\n".join(lines) + "\n"
