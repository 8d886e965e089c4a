"""Planned-route state: per-edge inverted traversal lists and flow timelines.

Every traversal of an edge contributes two flow-change events: +1 at entry
and -1 at exit. Events carry a total order (time, kind, route_id, hop_index)
with exits sorting before entries at the same millisecond, so a vehicle
leaving at t and another entering at t never co-occupy (half-open occupancy
intervals [entry, exit)). Both the full simulator and the incremental update
engine replay simultaneous events in exactly this order.

Events are packed into single integers so per-edge sequences are flat int
lists: cheap to bisect, cheap to hash, cheap to keep sorted.

Concurrency: single writer; any number of readers between mutations.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterator

from .errors import (
    DuplicateRouteError,
    DuplicateTraversalError,
    InternalInvariantError,
    TraversalNotFoundError,
    UnknownEdgeError,
    UnknownRouteError,
)
from .network import RoadNetwork

# Packed event key layout, low to high: hop_index (16 bits), route_id
# (24 bits), kind (1 bit, exit=0 < entry=1), time_ms (the rest).
HOP_BITS = 16
ROUTE_BITS = 24
HOP_MASK = (1 << HOP_BITS) - 1
ROUTE_MASK = (1 << ROUTE_BITS) - 1
KIND_SHIFT = HOP_BITS + ROUTE_BITS
TIME_SHIFT = KIND_SHIFT + 1

MAX_ROUTE_ID = ROUTE_MASK
MAX_HOPS = HOP_MASK

ENTRY = 1
EXIT = 0

DEFAULT_CHECKPOINT_BLOCK = 256


def pack_event(time_ms: int, kind: int, route_id: int, hop_index: int) -> int:
    return (((time_ms << 1) | kind) << KIND_SHIFT) | (route_id << HOP_BITS) | hop_index


def event_time(key: int) -> int:
    return key >> TIME_SHIFT


def event_kind(key: int) -> int:
    return (key >> KIND_SHIFT) & 1


def event_route(key: int) -> int:
    return (key >> HOP_BITS) & ROUTE_MASK


def event_hop(key: int) -> int:
    return key & HOP_MASK


def check_route_id(route_id: int) -> int:
    if not 0 <= route_id <= MAX_ROUTE_ID:
        raise ValueError(f"route id {route_id} outside supported range 0..{MAX_ROUTE_ID}")
    return route_id


@dataclass(frozen=True, slots=True)
class Traversal:
    """One route's occupancy of one edge: [entry_ms, exit_ms)."""

    route_id: int
    hop_index: int
    entry_ms: int
    exit_ms: int

    def __post_init__(self):
        if self.exit_ms <= self.entry_ms:
            raise ValueError(f"exit {self.exit_ms} must be after entry {self.entry_ms}")


@dataclass(slots=True)
class Route:
    """Planned route: vertex sequence plus the simulated arrival times.

    times[i] is the arrival at vertices[i]; hop i occupies edge
    (vertices[i], vertices[i+1]) during [times[i], times[i+1]).
    """

    route_id: int
    vertices: list[int]
    times: list[int]

    @property
    def departure_ms(self) -> int:
        return self.times[0]

    @property
    def arrival_ms(self) -> int:
        return self.times[-1]

    @property
    def travel_ms(self) -> int:
        return self.times[-1] - self.times[0]

    def hop_edge(self, hop: int) -> tuple[int, int]:
        return (self.vertices[hop], self.vertices[hop + 1])


class FlowTimeline:
    """Time-ordered flow-change events of one edge with count checkpoints.

    Keeps the packed event keys sorted plus cumulative delta sums at every
    `block` events, rebuilt lazily from the first edited block, so
    prefix-sum queries cost O(log n + block) and edits cost one list
    splice. Concurrent reads between mutations are safe under CPython even
    though queries repair checkpoints lazily: with the event list frozen,
    racing repairs write identical values.
    """

    __slots__ = ("events", "block", "_sums", "_clean")

    def __init__(self, block: int = DEFAULT_CHECKPOINT_BLOCK):
        if block < 1:
            raise ValueError(f"checkpoint block must be >= 1, got {block}")
        self.events: list[int] = []
        self.block = block
        # _sums[j] == sum of deltas of events[: j * block]; valid for j < _clean
        self._sums: list[int] = [0]
        self._clean = 1

    def __len__(self) -> int:
        return len(self.events)

    def insert(self, key: int) -> None:
        idx = bisect_left(self.events, key)
        if idx < len(self.events) and self.events[idx] == key:
            raise DuplicateTraversalError(f"duplicate flow event {key}")
        self.events.insert(idx, key)
        clean = idx // self.block + 1
        if clean < self._clean:
            self._clean = clean

    def remove(self, key: int) -> None:
        idx = bisect_left(self.events, key)
        if idx >= len(self.events) or self.events[idx] != key:
            raise TraversalNotFoundError(f"flow event {key} not present")
        del self.events[idx]
        clean = idx // self.block + 1
        if clean < self._clean:
            self._clean = clean

    def move(self, old_key: int, new_key: int) -> None:
        self.remove(old_key)
        self.insert(new_key)

    def _sum_to(self, idx: int) -> int:
        """Sum of event deltas over events[:idx]."""
        block = self.block
        events = self.events
        j = idx // block
        sums = self._sums
        if self._clean <= j:
            if len(sums) <= j:
                sums.extend([0] * (j + 1 - len(sums)))
            k = self._clean
            total = sums[k - 1]
            pos = (k - 1) * block
            while k <= j:
                end = k * block
                for key in events[pos:end]:
                    total += 1 if (key >> KIND_SHIFT) & 1 else -1
                sums[k] = total
                pos = end
                k += 1
            self._clean = j + 1
        total = sums[j]
        entries = 0
        seg = events[j * block : idx]
        for key in seg:
            entries += (key >> KIND_SHIFT) & 1
        return total + 2 * entries - len(seg)

    def prefix_sum_before(self, key: int) -> int:
        """Flow implied by all events strictly before `key` in event order.

        For an entry event key this is exactly the flow the entering vehicle
        observes: earlier-keyed entries minus all exits up to and including
        its entry instant.
        """
        return self._sum_to(bisect_left(self.events, key))

    def flow_at(self, time_ms: int) -> int:
        """Occupancy at an instant: entries at <= t count, exits at <= t do not."""
        return self._sum_to(bisect_left(self.events, (time_ms + 1) << TIME_SHIFT))

    def rebuild_checkpoints(self, block: int | None = None) -> None:
        """Recompact checkpoints, optionally with a new block size."""
        if block is not None:
            if block < 1:
                raise ValueError(f"checkpoint block must be >= 1, got {block}")
            self.block = block
        self._sums = [0]
        self._clean = 1


class _EdgeState:
    """Per-edge indexes: entry-ordered traversal list plus flow timeline.

    entries[i] is the packed entry-event key of a traversal and exits[i]
    its exit time; both lists stay aligned and sorted by entry key.
    """

    __slots__ = ("entries", "exits", "timeline")

    def __init__(self, block: int):
        self.entries: list[int] = []
        self.exits: list[int] = []
        self.timeline = FlowTimeline(block)

    def locate(self, entry_key: int) -> int:
        idx = bisect_left(self.entries, entry_key)
        if idx >= len(self.entries) or self.entries[idx] != entry_key:
            raise TraversalNotFoundError(f"traversal with entry key {entry_key} not indexed")
        return idx

    def add(self, entry_key: int, exit_ms: int) -> None:
        idx = bisect_left(self.entries, entry_key)
        if idx < len(self.entries) and self.entries[idx] == entry_key:
            raise DuplicateTraversalError(f"traversal with entry key {entry_key} already indexed")
        self.entries.insert(idx, entry_key)
        self.exits.insert(idx, exit_ms)
        self.timeline.insert(entry_key)
        self.timeline.insert(
            pack_event(exit_ms, EXIT, event_route(entry_key), event_hop(entry_key))
        )

    def drop(self, entry_key: int) -> int:
        idx = self.locate(entry_key)
        exit_ms = self.exits[idx]
        del self.entries[idx]
        del self.exits[idx]
        self.timeline.remove(entry_key)
        self.timeline.remove(
            pack_event(exit_ms, EXIT, event_route(entry_key), event_hop(entry_key))
        )
        return exit_ms

    def shift_traversal(
        self, route_id: int, hop: int, old_entry: int, new_entry: int, old_exit: int, new_exit: int
    ) -> None:
        """Relocate one traversal's entry and exit. Internal: no validity checks."""
        okey = pack_event(old_entry, ENTRY, route_id, hop)
        nkey = pack_event(new_entry, ENTRY, route_id, hop)
        entries = self.entries
        exits = self.exits
        i = bisect_left(entries, okey)
        del entries[i]
        del exits[i]
        k = bisect_left(entries, nkey)
        entries.insert(k, nkey)
        exits.insert(k, new_exit)
        tl = self.timeline
        ev = tl.events
        i1 = bisect_left(ev, okey)
        del ev[i1]
        i2 = bisect_left(ev, nkey)
        ev.insert(i2, nkey)
        i3 = bisect_left(ev, pack_event(old_exit, EXIT, route_id, hop))
        del ev[i3]
        i4 = bisect_left(ev, pack_event(new_exit, EXIT, route_id, hop))
        ev.insert(i4, pack_event(new_exit, EXIT, route_id, hop))
        first = min(i1, i2, i3, i4)
        clean = first // tl.block + 1
        if clean < tl._clean:
            tl._clean = clean


class RouteStore:
    """Routes by id plus the per-edge traversal and flow-change indexes.

    The authoritative record is `routes`: every indexed traversal of a
    route-backed hop mirrors route.times. Traversals recorded directly via
    record_traversal (without a backing route) are tracked on the side so
    the flow-store primitives work standalone.
    """

    def __init__(self, network: RoadNetwork, checkpoint_block: int = DEFAULT_CHECKPOINT_BLOCK):
        self.network = network
        self.checkpoint_block = checkpoint_block
        self.routes: dict[int, Route] = {}
        self.total_travel_ms = 0
        self._edges: dict[tuple[int, int], _EdgeState] = {}
        self._loose: dict[tuple[int, int], tuple[tuple[int, int], int]] = {}
        # (route_id, hop) -> (edge, entry_ms) for traversals with no backing route

    # -- plumbing ---------------------------------------------------------

    def edge_state(self, edge: tuple[int, int]) -> _EdgeState:
        state = self._edges.get(edge)
        if state is None:
            if edge not in self.network.edges:
                raise UnknownEdgeError(f"no edge {edge}")
            state = _EdgeState(self.checkpoint_block)
            self._edges[edge] = state
        return state

    def _require_edge(self, edge: tuple[int, int]) -> None:
        if edge not in self.network.edges:
            raise UnknownEdgeError(f"no edge {edge}")

    @property
    def route_count(self) -> int:
        return len(self.routes)

    @property
    def traversal_count(self) -> int:
        return sum(len(s.entries) for s in self._edges.values())

    # -- queries ----------------------------------------------------------

    def flow_at(self, edge: tuple[int, int], time_ms: int) -> int:
        """Vehicles on `edge` at an instant (entries at t count, exits do not)."""
        self._require_edge(edge)
        state = self._edges.get(edge)
        return state.timeline.flow_at(time_ms) if state is not None else 0

    def flow_before(self, edge: tuple[int, int], time_ms: int, route_id: int, hop_index: int) -> int:
        """Flow observed by a vehicle entering at (time, route, hop) event order.

        Counts exactly the traversals keyed before the entry event that are
        still on the edge, which is the quantity the latency model is fed.
        """
        self._require_edge(edge)
        state = self._edges.get(edge)
        if state is None:
            return 0
        return state.timeline.prefix_sum_before(pack_event(time_ms, ENTRY, route_id, hop_index))

    def traversals_from(self, edge: tuple[int, int], time_ms: int) -> Iterator[Traversal]:
        """Traversals with entry_ms >= time_ms, ascending (entry, route, hop).

        Snapshot iterator: safe against store mutation while consuming.
        """
        self._require_edge(edge)
        state = self._edges.get(edge)
        if state is None:
            return iter(())
        lo = bisect_left(state.entries, pack_event(time_ms, ENTRY, 0, 0))
        pairs = list(zip(state.entries[lo:], state.exits[lo:]))
        return (
            Traversal(event_route(k), event_hop(k), event_time(k), x) for k, x in pairs
        )

    def edge_route_ids(self, edge: tuple[int, int]) -> list[int]:
        """Distinct route ids traversing an edge, ascending."""
        self._require_edge(edge)
        state = self._edges.get(edge)
        if state is None:
            return []
        return sorted({event_route(k) for k in state.entries})

    def occupied_edges(self) -> list[tuple[int, int]]:
        return sorted(e for e, s in self._edges.items() if s.entries)

    # -- traversal-level mutation ------------------------------------------

    def _entry_of(self, edge: tuple[int, int], route_id: int, hop_index: int) -> int | None:
        route = self.routes.get(route_id)
        if route is not None and hop_index < len(route.vertices) - 1 and route.hop_edge(hop_index) == edge:
            return route.times[hop_index]
        loose = self._loose.get((route_id, hop_index))
        if loose is not None and loose[0] == edge:
            return loose[1]
        return None

    def record_traversal(self, edge: tuple[int, int], traversal: Traversal) -> None:
        """Index one traversal; (route_id, hop_index) must be fresh."""
        self._require_edge(edge)
        check_route_id(traversal.route_id)
        if not 0 <= traversal.hop_index <= MAX_HOPS:
            raise ValueError(f"hop index {traversal.hop_index} outside supported range")
        backing = self.routes.get(traversal.route_id)
        if (
            (backing is not None and traversal.hop_index < len(backing.vertices) - 1)
            or (traversal.route_id, traversal.hop_index) in self._loose
        ):
            raise DuplicateTraversalError(
                f"traversal ({traversal.route_id}, {traversal.hop_index}) already recorded"
            )
        key = pack_event(traversal.entry_ms, ENTRY, traversal.route_id, traversal.hop_index)
        self.edge_state(edge).add(key, traversal.exit_ms)
        if traversal.route_id not in self.routes:
            self._loose[(traversal.route_id, traversal.hop_index)] = (edge, traversal.entry_ms)

    def remove_traversal(self, edge: tuple[int, int], route_id: int, hop_index: int) -> Traversal:
        """Unindex one traversal and return the removed record."""
        self._require_edge(edge)
        entry = self._entry_of(edge, route_id, hop_index)
        if entry is None:
            raise TraversalNotFoundError(f"no traversal ({route_id}, {hop_index}) on edge {edge}")
        state = self._edges.get(edge)
        if state is None:
            raise TraversalNotFoundError(f"no traversal ({route_id}, {hop_index}) on edge {edge}")
        exit_ms = state.drop(pack_event(entry, ENTRY, route_id, hop_index))
        self._loose.pop((route_id, hop_index), None)
        return Traversal(route_id, hop_index, entry, exit_ms)

    # -- serialization and verification ------------------------------------

    def iter_traversals(self) -> Iterator[tuple[tuple[int, int], Traversal]]:
        for edge in sorted(self._edges):
            state = self._edges[edge]
            for key, exit_ms in zip(state.entries, state.exits):
                yield edge, Traversal(event_route(key), event_hop(key), event_time(key), exit_ms)

    def dump_csv(self) -> str:
        """Debug dump: route_id,hop_index,u,v,entry_ms,exit_ms sorted by route/hop."""
        rows = []
        for (u, v), t in self.iter_traversals():
            rows.append((t.route_id, t.hop_index, u, v, t.entry_ms, t.exit_ms))
        rows.sort()
        lines = ["route_id,hop_index,u,v,entry_ms,exit_ms"]
        lines.extend(",".join(str(x) for x in row) for row in rows)
        return "\n".join(lines) + "\n"

    def state_signature(self) -> str:
        """Hash of the complete schedule state; equal iff stores are equal."""
        h = hashlib.sha256()
        for rid in sorted(self.routes):
            route = self.routes[rid]
            h.update(b"r%d:" % rid)
            h.update(",".join(map(str, route.vertices)).encode())
            h.update(b"|")
            h.update(",".join(map(str, route.times)).encode())
            h.update(b";")
        for (rid, hop), (edge, entry) in sorted(self._loose.items()):
            state = self._edges.get(edge)
            exit_ms = state.exits[state.locate(pack_event(entry, ENTRY, rid, hop))]
            h.update(b"l%d,%d,%d,%d,%d,%d;" % (rid, hop, edge[0], edge[1], entry, exit_ms))
        return h.hexdigest()

    def verify_integrity(self) -> None:
        """Assert index structures exactly mirror the routes; raise if not."""
        expected: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for route in self.routes.values():
            if len(route.times) != len(route.vertices):
                raise InternalInvariantError(f"route {route.route_id}: times/vertices length mismatch")
            for hop in range(len(route.vertices) - 1):
                if route.times[hop + 1] <= route.times[hop]:
                    raise InternalInvariantError(f"route {route.route_id}: non-increasing times at hop {hop}")
                key = pack_event(route.times[hop], ENTRY, route.route_id, hop)
                expected.setdefault(route.hop_edge(hop), []).append((key, route.times[hop + 1]))
        for (rid, hop), (edge, entry) in self._loose.items():
            state = self._edges.get(edge)
            key = pack_event(entry, ENTRY, rid, hop)
            exit_ms = state.exits[state.locate(key)]
            expected.setdefault(edge, []).append((key, exit_ms))
        for edge, pairs in expected.items():
            pairs.sort()
            state = self._edges.get(edge)
            got = list(zip(state.entries, state.exits)) if state is not None else []
            if got != pairs:
                raise InternalInvariantError(f"edge {edge}: inverted list does not mirror routes")
        for edge, state in self._edges.items():
            if edge not in expected and state.entries:
                raise InternalInvariantError(f"edge {edge}: stray traversals")
            events = []
            for key, exit_ms in zip(state.entries, state.exits):
                events.append(key)
                events.append(pack_event(exit_ms, EXIT, event_route(key), event_hop(key)))
            events.sort()
            if events != state.timeline.events:
                raise InternalInvariantError(f"edge {edge}: timeline does not mirror inverted list")
            running = 0
            for key in state.timeline.events:
                running += 1 if (key >> KIND_SHIFT) & 1 else -1
                if running < 0:
                    raise InternalInvariantError(f"edge {edge}: negative running flow")
        total = sum(r.travel_ms for r in self.routes.values())
        if total != self.total_travel_ms:
            raise InternalInvariantError(
                f"total travel {self.total_travel_ms} != sum of route travels {total}"
            )


def register_route(store: RouteStore, route: Route) -> None:
    """Add a fully-timed route and index all its traversals. Internal helper."""
    check_route_id(route.route_id)
    if route.route_id in store.routes:
        raise DuplicateRouteError(f"route {route.route_id} already stored")
    store.routes[route.route_id] = route
    for hop in range(len(route.vertices) - 1):
        key = pack_event(route.times[hop], ENTRY, route.route_id, hop)
        store.edge_state(route.hop_edge(hop)).add(key, route.times[hop + 1])
    store.total_travel_ms += route.travel_ms


def unregister_route(store: RouteStore, route_id: int) -> Route:
    """Remove a route and all its traversals. Internal helper."""
    route = store.routes.pop(route_id, None)
    if route is None:
        raise UnknownRouteError(f"no route {route_id}")
    for hop in range(len(route.vertices) - 1):
        key = pack_event(route.times[hop], ENTRY, route.route_id, hop)
        store.edge_state(route.hop_edge(hop)).drop(key)
    store.total_travel_ms -= route.travel_ms
    return route
