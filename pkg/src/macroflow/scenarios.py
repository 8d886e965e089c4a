"""Deterministic synthetic scenarios: networks, workloads, regression shapes.

Every generator is a pure function of its spec: the RNG is a seeded numpy
PCG64 (the algorithm and seed are pinned in the output headers), edge
iteration orders are sorted, and float attributes are integer-valued, so
identical specs produce byte-identical files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .errors import QueryFormatError, ScenarioError
from .network import EdgeAttributes, RoadNetwork, load_network, network_to_csv
from .routing import Query, StaticPathCache
from .version import __version__

SCENARIO_KINDS = ("grid", "bottleneck_grid", "two_corridor", "fig3_pattern")
RNG_PIN = "numpy-pcg64"

QUERIES_CSV_HEADER = "query_id,origin,destination,depart_ms"


@dataclass(frozen=True, slots=True)
class ScenarioSpec:
    kind: str
    rows: int = 8
    cols: int = 8
    query_count: int = 100
    od: str = "uniform"  # or "hotspot"
    depart_window_ms: int = 300_000
    seed: int = 0
    length_range_m: tuple[int, int] = (300, 300)
    speed_mps: float = 15.0
    capacity_range: tuple[int, int] = (40, 40)
    sigma: float = 0.15
    beta: float = 4.0
    corridor_hops: int = 3
    bottleneck_capacity: int = 8

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}, expected one of {SCENARIO_KINDS}")
        if self.kind in ("grid", "bottleneck_grid") and (self.rows < 2 or self.cols < 2):
            raise ScenarioError(f"grid needs rows, cols >= 2, got {self.rows}x{self.cols}")
        if self.kind == "bottleneck_grid" and (self.rows < 3 or self.cols < 4):
            raise ScenarioError(f"bottleneck grid needs rows >= 3 and cols >= 4, got {self.rows}x{self.cols}")
        if self.query_count < 0:
            raise ScenarioError(f"query count must be >= 0, got {self.query_count}")
        if self.depart_window_ms < 1:
            raise ScenarioError(f"departure window must be >= 1 ms, got {self.depart_window_ms}")
        if self.od not in ("uniform", "hotspot"):
            raise ScenarioError(f"unknown OD distribution {self.od!r}")
        if self.length_range_m[0] < 1 or self.length_range_m[0] > self.length_range_m[1]:
            raise ScenarioError(f"bad length range {self.length_range_m}")
        if self.capacity_range[0] < 1 or self.capacity_range[0] > self.capacity_range[1]:
            raise ScenarioError(f"bad capacity range {self.capacity_range}")
        if self.corridor_hops < 1:
            raise ScenarioError(f"corridor hops must be >= 1, got {self.corridor_hops}")
        if self.bottleneck_capacity < 1:
            raise ScenarioError(f"bottleneck capacity must be >= 1, got {self.bottleneck_capacity}")


def _draw_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    if lo == hi:
        return lo
    return int(rng.integers(lo, hi + 1))


def _grid_vertex(spec: ScenarioSpec, r: int, c: int) -> int:
    return r * spec.cols + c


def _grid_edges(spec: ScenarioSpec, crossing_rows: list[int] | None) -> list[tuple[int, int]]:
    """4-neighbor bidirectional grid; if crossing_rows is given, horizontal
    edges across the middle-column cut exist only at those rows."""
    mid = spec.cols // 2
    pairs = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            if c + 1 < spec.cols:
                if crossing_rows is None or c + 1 != mid or r in crossing_rows:
                    a, b = _grid_vertex(spec, r, c), _grid_vertex(spec, r, c + 1)
                    pairs.append((a, b))
                    pairs.append((b, a))
            if r + 1 < spec.rows:
                a, b = _grid_vertex(spec, r, c), _grid_vertex(spec, r + 1, c)
                pairs.append((a, b))
                pairs.append((b, a))
    return sorted(pairs)


def _bridge_rows(spec: ScenarioSpec) -> tuple[int, list[int]]:
    center = spec.rows // 2
    rows = sorted({0, center, spec.rows - 1})
    return center, rows


def _center_bridge(spec: ScenarioSpec) -> tuple[int, int]:
    center, _ = _bridge_rows(spec)
    mid = spec.cols // 2
    return (_grid_vertex(spec, center, mid - 1), _grid_vertex(spec, center, mid))


def _build_network(spec: ScenarioSpec, rng: np.random.Generator) -> RoadNetwork:
    lo, hi = spec.length_range_m
    clo, chi = spec.capacity_range
    edges: dict[tuple[int, int], EdgeAttributes] = {}

    def std_attrs(edge_id: int, length: int | None = None, capacity: int | None = None,
                  sigma: float | None = None, beta: float | None = None) -> EdgeAttributes:
        return EdgeAttributes.build(
            edge_id,
            length if length is not None else _draw_int(rng, lo, hi),
            spec.speed_mps,
            capacity if capacity is not None else _draw_int(rng, clo, chi),
            spec.sigma if sigma is None else sigma,
            spec.beta if beta is None else beta,
        )

    if spec.kind in ("grid", "bottleneck_grid"):
        center, bridge_rows = _bridge_rows(spec) if spec.kind == "bottleneck_grid" else (0, [])
        pairs = _grid_edges(spec, bridge_rows if spec.kind == "bottleneck_grid" else None)
        mid = spec.cols // 2
        base_len = (lo + hi) // 2
        for eid, (u, v) in enumerate(pairs):
            if spec.kind == "bottleneck_grid":
                ur, uc = divmod(u, spec.cols)
                vr, vc = divmod(v, spec.cols)
                crossing = ur == vr and {uc, vc} == {mid - 1, mid}
                if crossing and ur == center:
                    # the designated low-capacity center bridge: short and cheap
                    edges[(u, v)] = std_attrs(eid, length=max(1, base_len // 2),
                                              capacity=spec.bottleneck_capacity)
                    continue
                if crossing:
                    # side bridges: ample capacity but a longer detour
                    edges[(u, v)] = std_attrs(eid, length=2 * base_len)
                    continue
            edges[(u, v)] = std_attrs(eid)
    elif spec.kind == "two_corridor":
        k = spec.corridor_hops
        a_ids = [2 + i for i in range(k)]
        b_ids = [2 + k + i for i in range(k)]
        chain_a = [0, *a_ids, 1]
        chain_b = [0, *b_ids, 1]
        lengths = [_draw_int(rng, lo, hi) for _ in range(k + 1)]
        eid = 0
        for chain in (chain_a, chain_b):  # mirrored lengths: equal free-flow totals
            for (u, v), length in zip(zip(chain, chain[1:]), lengths):
                edges[(u, v)] = std_attrs(eid, length=length, capacity=spec.bottleneck_capacity)
                eid += 1
    elif spec.kind == "fig3_pattern":
        # A=0 B=1 C=2 D=3 E=4; the single-road scenario lives on (A, B)
        edges[(0, 1)] = std_attrs(0, length=300, capacity=1, sigma=1.0, beta=1.0)
        for eid, (u, v) in enumerate([(0, 2), (1, 3), (1, 4), (2, 4), (3, 4)], start=1):
            edges[(u, v)] = std_attrs(eid, length=300, capacity=40)
    return RoadNetwork(edges)


def _hotspot_band(spec: ScenarioSpec, center: int) -> list[int]:
    return [r for r in (center - 1, center, center + 1) if 0 <= r < spec.rows]


def _draw_queries(spec: ScenarioSpec, network: RoadNetwork, rng: np.random.Generator) -> list[Query]:
    queries: list[Query] = []
    if spec.kind == "two_corridor":
        for qid in range(spec.query_count):
            depart = int(rng.integers(0, spec.depart_window_ms))
            queries.append(Query(qid, 0, 1, depart))
        return queries
    if spec.kind == "fig3_pattern":
        return []
    if spec.od == "hotspot":
        center = spec.rows // 2
        band = _hotspot_band(spec, center)
        mid = spec.cols // 2
        for qid in range(spec.query_count):
            o = _grid_vertex(spec, band[int(rng.integers(0, len(band)))], int(rng.integers(0, mid)))
            d = _grid_vertex(spec, band[int(rng.integers(0, len(band)))], int(rng.integers(mid, spec.cols)))
            depart = int(rng.integers(0, spec.depart_window_ms))
            queries.append(Query(qid, o, d, depart))
        return queries
    n = spec.rows * spec.cols
    for qid in range(spec.query_count):
        o = int(rng.integers(0, n))
        d = int(rng.integers(0, n - 1))
        if d >= o:
            d += 1
        depart = int(rng.integers(0, spec.depart_window_ms))
        queries.append(Query(qid, o, d, depart))
    return queries


def _assert_hotspot_funnel(spec: ScenarioSpec, network: RoadNetwork, queries: list[Query]) -> None:
    """At least 80% of hotspot OD pairs must route through the hotspot region."""
    if not queries:
        return
    cache = StaticPathCache(network)
    if spec.kind == "bottleneck_grid":
        bu, bv = _center_bridge(spec)
        hits = 0
        for q in queries:
            path = cache.path(q)
            if any(a == bu and b == bv for a, b in zip(path, path[1:])):
                hits += 1
    else:
        center = spec.rows // 2
        mid = spec.cols // 2
        region = {_grid_vertex(spec, r, mid) for r in _hotspot_band(spec, center)}
        hits = sum(1 for q in queries if region.intersection(cache.path(q)))
    share = hits / len(queries)
    if share < 0.8:
        raise ScenarioError(
            f"hotspot workload funnels only {share:.0%} of queries through the designated region"
        )


def queries_to_csv(queries: list[Query], header_comments: list[str]) -> str:
    lines = [f"# {c}" for c in header_comments]
    lines.append(QUERIES_CSV_HEADER)
    for q in queries:
        lines.append(f"{q.query_id},{q.origin},{q.destination},{q.depart_ms}")
    return "\n".join(lines) + "\n"


def load_queries(source: str | TextIO) -> list[Query]:
    """Parse the queries CSV (query_id,origin,destination,depart_ms)."""
    stream = io.StringIO(source) if isinstance(source, str) else source
    queries: list[Query] = []
    seen: set[int] = set()
    header_done = False
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_done:
            if line != QUERIES_CSV_HEADER:
                raise QueryFormatError(f"bad header {line!r}, expected {QUERIES_CSV_HEADER!r}", line_no)
            header_done = True
            continue
        fields = line.split(",")
        if len(fields) != 4:
            raise QueryFormatError(f"expected 4 fields, got {len(fields)}", line_no)
        try:
            qid, o, d, t = (int(f) for f in fields)
        except ValueError:
            raise QueryFormatError(f"non-integer field in {line!r}", line_no) from None
        if qid in seen:
            raise QueryFormatError(f"duplicate query id {qid}", line_no)
        seen.add(qid)
        try:
            queries.append(Query(qid, o, d, t))
        except ValueError as exc:
            raise QueryFormatError(str(exc), line_no) from None
    if not header_done:
        raise QueryFormatError("empty input: header row required")
    return queries


def generate(spec: ScenarioSpec) -> tuple[str, str]:
    """Produce (network CSV, queries CSV) for a scenario spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    network = _build_network(spec, rng)
    queries = _draw_queries(spec, network, rng)
    if spec.od == "hotspot" and spec.kind in ("grid", "bottleneck_grid"):
        _assert_hotspot_funnel(spec, network, queries)
    meta = [
        f"generator: macroflow {__version__}",
        f"rng: {RNG_PIN}",
        f"seed: {spec.seed}",
        f"scenario: kind={spec.kind} rows={spec.rows} cols={spec.cols} queries={spec.query_count} "
        f"od={spec.od} window_ms={spec.depart_window_ms}",
    ]
    network_csv = network_to_csv(network, meta)
    load_network(network_csv)  # generated networks must round-trip validation
    return network_csv, queries_to_csv(queries, meta)
