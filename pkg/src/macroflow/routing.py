"""Pathfinding: static free-flow shortest paths and traffic-aware search.

Searches read a frozen store snapshot and never mutate flow; the optimizer
separates proposing paths (here) from committing them (simulation module).
No hierarchical path index is used: the store changes far too often between
queries for preprocessing to pay off, so this is plain binary-heap Dijkstra.
"""

from __future__ import annotations

from dataclasses import dataclass
from heapq import heappop, heappush

from .errors import RoutingError, SimulationError
from .flowstore import Route, RouteStore
from .latency import LatencyModel
from .network import RoadNetwork


@dataclass(frozen=True, slots=True)
class Query:
    """One trip request: origin to destination departing at depart_ms."""

    query_id: int
    origin: int
    destination: int
    depart_ms: int

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError(f"query {self.query_id}: origin equals destination ({self.origin})")
        if self.depart_ms < 0:
            raise ValueError(f"query {self.query_id}: departure must be >= 0")


def free_flow_distances_to(network: RoadNetwork, destination: int) -> dict[int, int]:
    """Free-flow shortest distance from every vertex TO `destination`.

    Reverse Dijkstra; vertices that cannot reach the destination are absent.
    """
    if destination not in network.vertices:
        raise RoutingError(f"unknown vertex {destination}")
    dist: dict[int, int] = {destination: 0}
    heap: list[tuple[int, int]] = [(0, destination)]
    edges = network.edges
    while heap:
        d, v = heappop(heap)
        if d > dist.get(v, d):
            continue
        for (a, _) in network.in_edges(v):
            nd = d + edges[(a, v)].free_flow_ms
            if nd < dist.get(a, nd + 1):
                dist[a] = nd
                heappush(heap, (nd, a))
    return dist


def _lex_walk(network: RoadNetwork, dist_to_dest: dict[int, int], origin: int, destination: int) -> list[int]:
    """Lexicographically-smallest shortest path, given distances to dest.

    From each vertex every tight edge (dist[u] == weight + dist[v]) starts a
    minimal-cost completion, so greedily taking the smallest tight successor
    yields the lexicographically smallest among all shortest vertex
    sequences.
    """
    path = [origin]
    u = origin
    edges = network.edges
    while u != destination:
        du = dist_to_dest[u]
        nxt = None
        for (_, v) in network.out_edges(u):
            dv = dist_to_dest.get(v)
            if dv is not None and edges[(u, v)].free_flow_ms + dv == du:
                nxt = v
                break  # out_edges ascend by target id, first tight wins
        if nxt is None:
            raise RoutingError(f"no tight successor from {u}; distance map inconsistent")
        path.append(nxt)
        u = nxt
    return path


def shortest_path_static(network: RoadNetwork, query: Query) -> list[int]:
    """Minimum free-flow-time path, ties broken by lexicographic sequence."""
    if query.origin not in network.vertices:
        raise RoutingError(f"unknown vertex {query.origin}")
    dist = free_flow_distances_to(network, query.destination)
    if query.origin not in dist:
        raise RoutingError(f"destination {query.destination} unreachable from {query.origin}")
    return _lex_walk(network, dist, query.origin, query.destination)


class StaticPathCache:
    """Per-destination distance maps for bulk static routing."""

    def __init__(self, network: RoadNetwork):
        self.network = network
        self._dist: dict[int, dict[int, int]] = {}

    def path(self, query: Query) -> list[int]:
        dist = self._dist.get(query.destination)
        if dist is None:
            dist = free_flow_distances_to(self.network, query.destination)
            self._dist[query.destination] = dist
        if query.origin not in self.network.vertices:
            raise RoutingError(f"unknown vertex {query.origin}")
        if query.origin not in dist:
            raise RoutingError(
                f"query {query.query_id}: destination {query.destination} unreachable from {query.origin}"
            )
        return _lex_walk(self.network, dist, query.origin, query.destination)


class _FlowView:
    """flow_at with one route's own occupancy subtracted (self-exclusion)."""

    __slots__ = ("store", "intervals")

    def __init__(self, store: RouteStore, exclude_route: Route | None):
        self.store = store
        intervals: dict[tuple[int, int], list[tuple[int, int]]] = {}
        if exclude_route is not None:
            for hop in range(len(exclude_route.vertices) - 1):
                intervals.setdefault(exclude_route.hop_edge(hop), []).append(
                    (exclude_route.times[hop], exclude_route.times[hop + 1])
                )
        self.intervals = intervals

    def flow_at(self, edge: tuple[int, int], t: int) -> int:
        f = self.store.flow_at(edge, t)
        own = self.intervals.get(edge)
        if own:
            for entry, exit_ in own:
                if entry <= t < exit_:
                    f -= 1
        return f


def shortest_path_traffic(
    network: RoadNetwork,
    store: RouteStore,
    latency: LatencyModel,
    query: Query,
    exclude_route_id: int | None = None,
) -> list[int]:
    """Earliest-arrival path against the store's current flow profile.

    Label-setting search on arrival times: relaxing (a, b) from arrival t
    costs latency(attrs, flow_at((a, b), t), t). Under FIFO latencies the
    result is the optimal earliest arrival; the flow-at-entry model is not
    guaranteed FIFO, in which case this is the standard deterministic
    heuristic (waiting at vertices is not modeled).

    exclude_route_id removes that route's own occupancy from every flow
    query, so a re-routed vehicle never blocks itself.
    """
    for v in (query.origin, query.destination):
        if v not in network.vertices:
            raise RoutingError(f"unknown vertex {v}")
    view = _FlowView(store, store.routes.get(exclude_route_id) if exclude_route_id is not None else None)
    edges = network.edges
    latency_ms = latency.travel_time_ms
    best: dict[int, int] = {query.origin: query.depart_ms}
    pred: dict[int, int] = {}
    settled: set[int] = set()
    heap: list[tuple[int, int]] = [(query.depart_ms, query.origin)]
    while heap:
        t, u = heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        if u == query.destination:
            break
        for edge in network.out_edges(u):
            v = edge[1]
            if v in settled:
                continue
            arrival = t + latency_ms(edges[edge], view.flow_at(edge, t), t)
            if arrival < best.get(v, arrival + 1):
                best[v] = arrival
                pred[v] = u
                heappush(heap, (arrival, v))
    if query.destination not in settled:
        raise RoutingError(
            f"query {query.query_id}: destination {query.destination} unreachable from {query.origin}"
        )
    path = [query.destination]
    while path[-1] != query.origin:
        path.append(pred[path[-1]])
    path.reverse()
    return path


def route_travel_time(
    network: RoadNetwork,
    store: RouteStore,
    latency: LatencyModel,
    path: list[int],
    depart_ms: int,
    exclude_route_id: int | None = None,
) -> int:
    """What-if travel time of a path against current flows, no mutation."""
    if len(path) < 2:
        raise SimulationError("path needs at least 2 vertices")
    for a, b in zip(path, path[1:]):
        if (a, b) not in network.edges:
            raise SimulationError(f"consecutive pair ({a}, {b}) is not an edge")
    view = _FlowView(store, store.routes.get(exclude_route_id) if exclude_route_id is not None else None)
    latency_ms = latency.travel_time_ms
    t = depart_ms
    for a, b in zip(path, path[1:]):
        edge = (a, b)
        t += latency_ms(network.edges[edge], view.flow_at(edge, t), t)
    return t - depart_ms
