"""Macroscopic simulation: full event-loop runs and incremental updates.

Full simulation processes (time, route, hop) labels from a priority queue.
Popping a label at time t moves the vehicle off its previous edge and onto
the next one; its exit is t plus the latency of the flow it observes, where
the observed flow counts exactly the traversals keyed before it in event
order (exits at t have already freed their slot, vehicles entering behind it
do not count). That makes every exit time a well-founded function of
earlier-keyed entries, which is what lets inserts, deletes and re-routes be
replayed incrementally: a change confined to a time window on one edge can
only influence entries inside the window on that edge plus downstream edges
at strictly later times.

The central contract is oracle equivalence: after any sequence of updates
the store is integer-for-integer equal to a full simulation of the final
route set.
"""

from __future__ import annotations

import json
import math
import time as _time
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from heapq import heapify, heappop, heappush

from .errors import (
    DuplicateRouteError,
    InternalInvariantError,
    SimulationError,
    UnknownEdgeError,
    UnknownRouteError,
)
from .flowstore import (
    ENTRY,
    EXIT,
    HOP_BITS,
    HOP_MASK,
    MAX_HOPS,
    ROUTE_MASK,
    TIME_SHIFT,
    Route,
    RouteStore,
    check_route_id,
    pack_event,
    unregister_route,
)
from .latency import LatencyModel
from .network import RoadNetwork

LABEL_ROUTE_SHIFT = HOP_BITS
LABEL_TIME_SHIFT = HOP_BITS + 24

# Generous ceiling on traversal replays per update batch; tripping it means
# influence propagation is cycling, which the event-order model rules out.
REPLAY_LIMIT_FACTOR = 1000


@dataclass(slots=True)
class SimulationResult:
    """Outcome of one full simulation run."""

    travel_ms: dict[int, int]
    total_ms: int


@dataclass(slots=True)
class UpdateReport:
    """What one update batch did to the store."""

    changed: dict[int, tuple[int, int]] = field(default_factory=dict)  # rid -> (old, new) travel
    inserted: list[int] = field(default_factory=list)
    deleted: list[int] = field(default_factory=list)
    affected_edges: list[tuple[int, int]] = field(default_factory=list)
    recomputed_traversals: int = 0
    recompute_log: list[tuple[tuple[int, int], int]] = field(default_factory=list)  # (edge, from_ms)
    wall_ms: float = 0.0

    @property
    def changed_route_count(self) -> int:
        return len(self.changed)

    def to_json(self) -> str:
        payload = {
            "changed_route_count": len(self.changed),
            "changed": {str(k): list(v) for k, v in sorted(self.changed.items())},
            "inserted": sorted(self.inserted),
            "deleted": sorted(self.deleted),
            "affected_edges": [list(e) for e in self.affected_edges],
            "recomputed_traversals": self.recomputed_traversals,
            "wall_ms": round(self.wall_ms, 3),
        }
        return json.dumps(payload, sort_keys=True)


def _validate_path(network: RoadNetwork, route_id: int, vertices: list[int], depart_ms: int) -> None:
    check_route_id(route_id)
    if len(vertices) < 2:
        raise SimulationError(f"route {route_id}: path needs at least 2 vertices")
    if len(vertices) - 1 > MAX_HOPS:
        raise SimulationError(f"route {route_id}: path exceeds {MAX_HOPS} hops")
    if depart_ms < 0:
        raise SimulationError(f"route {route_id}: departure must be >= 0, got {depart_ms}")
    for v in vertices:
        if v not in network.vertices:
            raise SimulationError(f"route {route_id}: unknown vertex {v}")
    for a, b in zip(vertices, vertices[1:]):
        if (a, b) not in network.edges:
            raise SimulationError(f"route {route_id}: consecutive pair ({a}, {b}) is not an edge")


def simulate_full(
    network: RoadNetwork,
    latency: LatencyModel,
    paths: list[tuple[int, list[int], int]],
    checkpoint_block: int | None = None,
) -> tuple[RouteStore, SimulationResult]:
    """Simulate a route set from scratch.

    paths is a list of (route_id, vertex sequence, departure_ms). Labels are
    processed in (time, route_id, hop) order; at each pop the vehicle's exit
    from the new edge is fixed from the flow it observes at entry.
    """
    store = RouteStore(network) if checkpoint_block is None else RouteStore(network, checkpoint_block)
    seen: set[int] = set()
    heap: list[int] = []
    routes: dict[int, Route] = {}
    for route_id, vertices, depart_ms in paths:
        _validate_path(network, route_id, vertices, depart_ms)
        if route_id in seen:
            raise DuplicateRouteError(f"duplicate route id {route_id}")
        seen.add(route_id)
        routes[route_id] = Route(route_id, list(vertices), [depart_ms])
        heap.append(((depart_ms << 24) | route_id) << HOP_BITS)
    heapify(heap)

    edges = network.edges
    flow: dict[tuple[int, int], int] = {}
    pending: dict[tuple[int, int], list[int]] = {}
    acc_entries: dict[tuple[int, int], list[int]] = {}
    acc_exits: dict[tuple[int, int], list[int]] = {}
    acc_events: dict[tuple[int, int], list[int]] = {}
    travel: dict[int, int] = {}
    total = 0
    latency_ms = latency.travel_time_ms

    while heap:
        label = heappop(heap)
        hop = label & HOP_MASK
        route_id = (label >> LABEL_ROUTE_SHIFT) & ROUTE_MASK
        t = label >> LABEL_TIME_SHIFT
        route = routes[route_id]
        vertices = route.vertices
        if hop == len(vertices) - 1:
            dt = t - route.times[0]
            travel[route_id] = dt
            total += dt
            continue
        edge = (vertices[hop], vertices[hop + 1])
        ph = pending.get(edge)
        if ph is None:
            flow[edge] = 0
            pending[edge] = ph = []
            acc_entries[edge] = []
            acc_exits[edge] = []
            acc_events[edge] = []
        f = flow[edge]
        while ph and ph[0] <= t:
            heappop(ph)
            f -= 1
        exit_ms = t + latency_ms(edges[edge], f, t)
        flow[edge] = f + 1
        heappush(ph, exit_ms)
        entry_key = pack_event(t, ENTRY, route_id, hop)
        acc_entries[edge].append(entry_key)
        acc_exits[edge].append(exit_ms)
        ev = acc_events[edge]
        ev.append(entry_key)
        ev.append(pack_event(exit_ms, EXIT, route_id, hop))
        route.times.append(exit_ms)
        heappush(heap, ((exit_ms << 24) | route_id) << HOP_BITS | (hop + 1))

    store.routes = routes
    store.total_travel_ms = total
    for edge, entry_list in acc_entries.items():
        state = store.edge_state(edge)
        state.entries = entry_list
        state.exits = acc_exits[edge]
        events = acc_events[edge]
        events.sort()
        state.timeline.events = events
        state.timeline.rebuild_checkpoints()
    return store, SimulationResult(travel, total)


class _Propagation:
    """Workspace for one update batch: dirty change slivers, scans, accounting.

    Every structural edit is recorded as a closed time interval ("sliver")
    on the edge whose flow profile it altered: an inserted or removed
    traversal dirties its whole occupancy interval, but a traversal that
    merely SHIFTED dirties only the two slivers between old and new entry
    and old and new exit, because in between its +1 coverage is unchanged.
    Only entries inside dirty slivers can have a stale exit, so scans skip
    the (typically vast) unchanged gaps. Slivers are drained in global
    earliest-start order, which keeps rework bounded: a scan can only spawn
    slivers that start strictly after its own cursor.
    """

    __slots__ = (
        "store",
        "network",
        "latency",
        "pending",
        "heap",
        "affected",
        "old_state",
        "inserted",
        "deleted",
        "replays",
        "replay_limit",
        "log",
    )

    def __init__(self, store: RouteStore, network: RoadNetwork, latency: LatencyModel):
        self.store = store
        self.network = network
        self.latency = latency
        # edge -> [earliest sliver start, list of (lo, hi) slivers]
        self.pending: dict[tuple[int, int], list] = {}
        self.heap: list[tuple[int, int, int]] = []  # (start_ms, u, v)
        self.affected: set[tuple[int, int]] = set()
        self.old_state: dict[int, tuple[int, list[int]]] = {}  # rid -> (old travel, old times)
        self.inserted: list[int] = []
        self.deleted: list[int] = []
        self.replays = 0
        self.replay_limit = REPLAY_LIMIT_FACTOR * (store.traversal_count + 1)
        self.log: list[tuple[tuple[int, int], int]] = []

    def snapshot_route(self, route: Route) -> None:
        if route.route_id not in self.old_state:
            self.old_state[route.route_id] = (route.travel_ms, list(route.times))

    def mark(self, edge: tuple[int, int], lo: int, hi: float) -> None:
        """Record a dirty sliver [lo, hi] on an edge (hi may be math.inf)."""
        self.affected.add(edge)
        entry = self.pending.get(edge)
        if entry is None:
            self.pending[edge] = [lo, [(lo, hi)]]
            heappush(self.heap, (lo, edge[0], edge[1]))
            return
        entry[1].append((lo, hi))
        if lo < entry[0]:
            entry[0] = lo
            heappush(self.heap, (lo, edge[0], edge[1]))

    def drain(self) -> None:
        while self.heap:
            lo, u, v = heappop(self.heap)
            edge = (u, v)
            entry = self.pending.get(edge)
            if entry is None or entry[0] != lo:
                continue  # superseded by a lower re-mark
            del self.pending[edge]
            self.scan(edge, entry[1])

    def scan(
        self, edge: tuple[int, int], slivers: list[tuple[int, float]]
    ) -> list[tuple[int, int, int, int]]:
        """Replay the traversals of `edge` that enter inside dirty slivers.

        Entries are replayed in (entry, route, hop) order against the live
        timeline; everything keyed earlier is final by the time an entry is
        reached, so one ascending pass settles the edge. An unchanged exit
        does not stop the pass -- later entries may still sit inside a
        sliver -- but entries outside every sliver observe an unchanged event
        prefix and are provably already settled, so gaps are skipped.

        A changed exit extends the work ahead: the exit movement dirties
        this edge between old and new exit, and the route's downstream
        timestamps shift rigidly, dirtying later edges via mark().

        Returns (route_id, hop, old_exit, new_exit) per changed traversal.
        """
        self.log.append((edge, min(s[0] for s in slivers) if slivers else 0))
        store = self.store
        state = store._edges.get(edge)
        if state is None:
            return []
        attrs = self.network.edges[edge]
        latency_ms = self.latency.travel_time_ms
        entries = state.entries
        exits = state.exits
        timeline = state.timeline
        events = timeline.events
        block = timeline.block
        routes = store.routes
        changed: list[tuple[int, int, int, int]] = []
        limit = self.replay_limit
        replays = self.replays

        work = list(slivers)
        heapify(work)
        cur_hi: float = -1
        active = False
        pos_key = 0

        while True:
            if not active:
                if not work:
                    break
                lo, cur_hi = heappop(work)
                active = True
                pk = pack_event(lo, ENTRY, 0, 0)
                if pk > pos_key:
                    pos_key = pk
            while work and work[0][0] <= cur_hi:
                lo2, hi2 = heappop(work)
                if hi2 > cur_hi:
                    cur_hi = hi2
            i = bisect_left(entries, pos_key)
            if i >= len(entries):
                break  # no entries at or past the cursor; later slivers are emptier still
            key = entries[i]
            t = key >> TIME_SHIFT
            if t > cur_hi:
                active = False
                continue
            replays += 1
            if replays > limit:
                raise InternalInvariantError(
                    f"replay limit exceeded on edge {edge}: propagation is not settling"
                )
            route_id = (key >> HOP_BITS) & ROUTE_MASK
            hop = key & HOP_MASK
            old_exit = exits[i]
            # observed flow = entries before this key minus exits up to its
            # instant, i.e. 2 * (#entries < key) - (#events < key)
            observed = 2 * i - bisect_left(events, key)
            new_exit = t + latency_ms(attrs, observed, t)
            if new_exit != old_exit:
                route = routes.get(route_id)
                if route is None:
                    raise InternalInvariantError(
                        f"edge {edge}: traversal of unknown route {route_id} during propagation"
                    )
                self.snapshot_route(route)
                exits[i] = new_exit
                i3 = bisect_left(events, pack_event(old_exit, EXIT, route_id, hop))
                del events[i3]
                nxkey = pack_event(new_exit, EXIT, route_id, hop)
                i4 = bisect_left(events, nxkey)
                events.insert(i4, nxkey)
                first = (i3 if i3 < i4 else i4) // block + 1
                if first < timeline._clean:
                    timeline._clean = first
                if old_exit < new_exit:
                    heappush(work, (old_exit, new_exit))
                else:
                    heappush(work, (new_exit, old_exit))
                changed.append((route_id, hop, old_exit, new_exit))
                for medge, mlo, mhi in self._shift_chain(route, hop, new_exit - old_exit):
                    if medge == edge:
                        heappush(work, (mlo, mhi))
                    else:
                        self.mark(medge, mlo, mhi)
            pos_key = key + 1
        self.replays = replays
        return changed

    def _shift_chain(
        self, route: Route, hop: int, delta: int
    ) -> list[tuple[tuple[int, int], int, int]]:
        """Shift every timestamp after `hop`'s entry by delta.

        The changed exit is hop's exit == hop+1's entry, so all downstream
        traversals move rigidly (durations preserved); their durations are
        re-settled when their own edges are scanned. Keeping the whole chain
        mirrored is what lets any edge scan trust its entry index.

        Returns the dirty slivers the shift creates: per moved traversal,
        one between the old and new entry and one between the old and new
        exit -- in between, its occupancy is unchanged.
        """
        store = self.store
        times = route.times
        vertices = route.vertices
        rid = route.route_id
        last_hop = len(vertices) - 2
        marks: list[tuple[tuple[int, int], int, int]] = []
        prev_old = times[hop + 1]
        times[hop + 1] += delta
        for j in range(hop + 1, last_hop + 1):
            old_entry = prev_old
            old_exit = times[j + 1]
            prev_old = old_exit
            new_entry = old_entry + delta
            new_exit = old_exit + delta
            times[j + 1] = new_exit
            edge = (vertices[j], vertices[j + 1])
            store._edges[edge].shift_traversal(rid, j, old_entry, new_entry, old_exit, new_exit)
            if delta > 0:
                marks.append((edge, old_entry, new_entry))
                marks.append((edge, old_exit, new_exit))
            else:
                marks.append((edge, new_entry, old_entry))
                marks.append((edge, new_exit, old_exit))
        store.total_travel_ms += delta
        return marks

    def place_route(self, route_id: int, vertices: list[int], depart_ms: int) -> None:
        """Insert a new route hop by hop against the current flow state."""
        store = self.store
        latency_ms = self.latency.travel_time_ms
        edges = self.network.edges
        times = [depart_ms]
        t = depart_ms
        route = Route(route_id, list(vertices), times)
        store.routes[route_id] = route
        for hop in range(len(vertices) - 1):
            edge = (vertices[hop], vertices[hop + 1])
            state = store.edge_state(edge)
            key = pack_event(t, ENTRY, route_id, hop)
            entries = state.entries
            timeline = state.timeline
            events = timeline.events
            i = bisect_left(entries, key)
            i2 = bisect_left(events, key)
            observed = 2 * i - i2
            exit_ms = t + latency_ms(edges[edge], observed, t)
            entries.insert(i, key)
            state.exits.insert(i, exit_ms)
            events.insert(i2, key)
            xkey = pack_event(exit_ms, EXIT, route_id, hop)
            events.insert(bisect_left(events, xkey), xkey)
            clean = i2 // timeline.block + 1
            if clean < timeline._clean:
                timeline._clean = clean
            self.mark(edge, t, exit_ms)
            times.append(exit_ms)
            t = exit_ms
        store.total_travel_ms += times[-1] - times[0]
        self.inserted.append(route_id)

    def remove_route(self, route_id: int) -> None:
        route = self.store.routes.get(route_id)
        if route is None:
            raise UnknownRouteError(f"no route {route_id}")
        self.snapshot_route(route)
        unregister_route(self.store, route_id)
        for hop in range(len(route.vertices) - 1):
            self.mark(route.hop_edge(hop), route.times[hop], route.times[hop + 1])
        self.deleted.append(route_id)

    def report(self, wall_ms: float) -> UpdateReport:
        store = self.store
        inserted_set = set(self.inserted)
        deleted_set = set(self.deleted)
        rerouted = inserted_set & deleted_set
        changed: dict[int, tuple[int, int]] = {}
        for rid, (old_travel, old_times) in self.old_state.items():
            route = store.routes.get(rid)
            if route is None:
                continue  # truly deleted; listed separately
            if rid in inserted_set and rid not in rerouted:
                continue  # fresh insert, no prior schedule
            if rid in rerouted or route.times != old_times:
                changed[rid] = (old_travel, route.travel_ms)
        return UpdateReport(
            changed=changed,
            inserted=sorted(inserted_set - rerouted),
            deleted=sorted(deleted_set - rerouted),
            affected_edges=sorted(self.affected),
            recomputed_traversals=self.replays,
            recompute_log=self.log,
            wall_ms=wall_ms,
        )


def update_batch(
    store: RouteStore,
    network: RoadNetwork,
    latency: LatencyModel,
    *,
    insert: list[tuple[int, list[int], int]] = (),
    delete: list[int] = (),
) -> UpdateReport:
    """Apply deletions then insertions as one batch and propagate influence.

    The resulting store equals a full simulation of the final route set.
    """
    start = _time.perf_counter()
    for route_id in delete:
        if route_id not in store.routes:
            raise UnknownRouteError(f"no route {route_id}")
    fresh: set[int] = set()
    deleting = set(delete)
    for route_id, vertices, depart_ms in insert:
        _validate_path(network, route_id, vertices, depart_ms)
        if route_id in fresh or (route_id in store.routes and route_id not in deleting):
            raise DuplicateRouteError(f"duplicate route id {route_id}")
        fresh.add(route_id)

    prop = _Propagation(store, network, latency)
    for route_id in sorted(deleting):
        prop.remove_route(route_id)
    for route_id, vertices, depart_ms in sorted(insert):
        prop.place_route(route_id, vertices, depart_ms)
    prop.drain()
    return prop.report((_time.perf_counter() - start) * 1000.0)


def insert_routes(
    store: RouteStore,
    network: RoadNetwork,
    latency: LatencyModel,
    new_paths: list[tuple[int, list[int], int]],
) -> UpdateReport:
    """Insert routes and propagate their influence."""
    return update_batch(store, network, latency, insert=new_paths)


def delete_routes(
    store: RouteStore,
    network: RoadNetwork,
    latency: LatencyModel,
    route_ids: list[int],
) -> UpdateReport:
    """Delete routes and propagate the freed capacity."""
    return update_batch(store, network, latency, delete=route_ids)


def reroute(
    store: RouteStore,
    network: RoadNetwork,
    latency: LatencyModel,
    route_id: int,
    new_path: list[int],
    new_departure_ms: int,
) -> UpdateReport:
    """Atomically replace one route's path/departure.

    Rerouting to the identical plan is a no-op and reports zero changes.
    """
    route = store.routes.get(route_id)
    if route is None:
        raise UnknownRouteError(f"no route {route_id}")
    _validate_path(network, route_id, list(new_path), new_departure_ms)
    if route.vertices == list(new_path) and route.departure_ms == new_departure_ms:
        return UpdateReport()
    return update_batch(
        store, network, latency, insert=[(route_id, list(new_path), new_departure_ms)], delete=[route_id]
    )


def reroute_batch(
    store: RouteStore,
    network: RoadNetwork,
    latency: LatencyModel,
    reroutes: list[tuple[int, list[int], int]],
) -> UpdateReport:
    """Apply many re-routes as one batch (identical-plan entries skipped)."""
    effective = []
    for route_id, path, depart_ms in reroutes:
        route = store.routes.get(route_id)
        if route is None:
            raise UnknownRouteError(f"no route {route_id}")
        if route.vertices != list(path) or route.departure_ms != depart_ms:
            effective.append((route_id, list(path), depart_ms))
    if not effective:
        return UpdateReport()
    return update_batch(
        store,
        network,
        latency,
        insert=effective,
        delete=[rid for rid, _, _ in effective],
    )


def recompute_edge(
    store: RouteStore,
    latency: LatencyModel,
    edge: tuple[int, int],
    from_ms: int,
) -> list[tuple[int, int, int, int]]:
    """Replay one edge's traversals entering at or after from_ms.

    Returns (route_id, hop, old_exit, new_exit) per changed traversal.
    Downstream influence is recorded on the routes (timestamps shift) but
    other edges are not re-settled; use propagate() to drain a change fully.
    """
    if edge not in store.network.edges:
        raise UnknownEdgeError(f"no edge {edge}")
    prop = _Propagation(store, store.network, latency)
    return prop.scan(edge, [(from_ms, math.inf)])


def propagate(
    store: RouteStore,
    latency: LatencyModel,
    dirty: list[tuple[tuple[int, int], int]],
) -> UpdateReport:
    """Drain a dirty queue of (edge, earliest change ms) to a fixed point."""
    start = _time.perf_counter()
    prop = _Propagation(store, store.network, latency)
    for edge, from_ms in dirty:
        if edge not in store.network.edges:
            raise UnknownEdgeError(f"no edge {edge}")
        prop.mark(edge, from_ms, math.inf)
    prop.drain()
    return prop.report((_time.perf_counter() - start) * 1000.0)


def insert_routes_batch_parallel(
    store: RouteStore,
    network: RoadNetwork,
    latency: LatencyModel,
    new_paths: list[tuple[int, list[int], int]],
    worker_count: int = 1,
) -> UpdateReport:
    """Insert a batch with parallel planning and a sequential commit.

    Workers pre-compute tentative hop times against the pre-batch store
    (read-only, so safe to share); the commit walks routes in id order and
    reuses a tentative time whenever the hop's edge is still untouched by
    this batch, recomputing otherwise. The result is identical to
    insert_routes for every worker count.
    """
    if worker_count < 1:
        raise ValueError(f"worker_count must be >= 1, got {worker_count}")
    start = _time.perf_counter()
    fresh: set[int] = set()
    for route_id, vertices, depart_ms in new_paths:
        _validate_path(network, route_id, vertices, depart_ms)
        if route_id in fresh or route_id in store.routes:
            raise DuplicateRouteError(f"duplicate route id {route_id}")
        fresh.add(route_id)

    ordered = sorted(new_paths)
    edges = network.edges
    latency_ms = latency.travel_time_ms

    def plan(path: tuple[int, list[int], int]) -> list[int]:
        route_id, vertices, depart_ms = path
        times = [depart_ms]
        t = depart_ms
        for hop in range(len(vertices) - 1):
            edge = (vertices[hop], vertices[hop + 1])
            observed = store.flow_before(edge, t, route_id, hop)
            t += latency_ms(edges[edge], observed, t)
            times.append(t)
        return times

    if worker_count == 1 or len(ordered) < 2:
        tentative = [plan(p) for p in ordered]
    else:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            tentative = list(pool.map(plan, ordered))

    prop = _Propagation(store, network, latency)
    touched: set[tuple[int, int]] = set()
    for (route_id, vertices, depart_ms), plan_times in zip(ordered, tentative):
        times = [depart_ms]
        t = depart_ms
        route = Route(route_id, list(vertices), times)
        store.routes[route_id] = route
        clean = True
        for hop in range(len(vertices) - 1):
            edge = (vertices[hop], vertices[hop + 1])
            state = store.edge_state(edge)
            key = pack_event(t, ENTRY, route_id, hop)
            if clean and t == plan_times[hop] and edge not in touched:
                exit_ms = plan_times[hop + 1]
            else:
                clean = False
                observed = state.timeline.prefix_sum_before(key)
                exit_ms = t + latency_ms(edges[edge], observed, t)
            state.add(key, exit_ms)
            prop.mark(edge, t, exit_ms)
            touched.add(edge)
            times.append(exit_ms)
            t = exit_ms
        store.total_travel_ms += times[-1] - times[0]
        prop.inserted.append(route_id)
    prop.drain()
    return prop.report((_time.perf_counter() - start) * 1000.0)
